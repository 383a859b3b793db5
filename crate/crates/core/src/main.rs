use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use omni_core::codec::{read_tokens, tone_dataset, write_tokens, Codec, CodecConfig};
use omni_core::datapipe::{audify_quarter, toy_corpus, write_manifest, VoiceBank};
use omni_core::flowmatch::{token_condition, CfmConfig, FlowTrainer, Refiner, VectorFieldNet};
use omni_core::interleave::{InterleaveConfig, OmniModel};
use omni_core::orchestrator::{find_stage, normalize_score, run_stage_synthetic, KvConfig, Preset};
use omni_core::signal::{griffin_lim, wav_read, wav_write};
use omni_core::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "omni", version, about = "Audio tokenizer, flow refiner, data synthesis and stage runner")]
struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Flat key = value config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// desk or paper.
    #[arg(long, global = true)]
    preset: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the codec on synthetic tones; optionally train the flow refiner too.
    TrainCodec {
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        tones: Option<usize>,
        /// Flow refiner steps after codec training (0 skips it).
        #[arg(long)]
        flow_steps: Option<usize>,
    },
    /// Waveform to token file.
    Encode {
        input: PathBuf,
        output: PathBuf,
        #[arg(long)]
        codec: Option<PathBuf>,
    },
    /// Token file to waveform through the codec decoder and Griffin-Lim.
    Decode {
        input: PathBuf,
        output: PathBuf,
        #[arg(long)]
        codec: Option<PathBuf>,
    },
    /// Token file to waveform through the flow refiner.
    TtsFlow {
        input: PathBuf,
        output: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        euler_steps: Option<usize>,
    },
    /// Write audified toy documents and a JSONL manifest.
    SynthData {
        out: PathBuf,
        #[arg(long)]
        docs: Option<usize>,
    },
    /// Run one built-in training stage on synthetic data.
    RunStage {
        name: String,
        #[arg(long)]
        steps: Option<usize>,
        /// Write the JSONL run log here.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Normalized Mel L1 of decode(encode(wav)).
    EvalRoundtrip {
        input: PathBuf,
        #[arg(long)]
        codec: Option<PathBuf>,
    },
    /// (x - min + 10) / (max - min + 10).
    Normalize {
        #[arg(allow_negative_numbers = true)]
        x: f64,
        #[arg(allow_negative_numbers = true)]
        min: f64,
        #[arg(allow_negative_numbers = true)]
        max: f64,
    },
}

struct Settings {
    kv: KvConfig,
    seed: u64,
    preset: Preset,
}

fn settings(cli: &Cli) -> Result<Settings> {
    let mut kv = match &cli.config {
        Some(p) => KvConfig::load(p)?,
        None => KvConfig::default(),
    };
    kv.check_known()?;
    if let Some(s) = cli.seed {
        kv.set("seed", s.to_string());
    }
    if let Some(p) = &cli.preset {
        kv.set("preset", p.clone());
    }
    Ok(Settings {
        seed: kv.get("seed")?,
        preset: kv.get("preset")?,
        kv,
    })
}

fn load_codec(path: Option<&Path>, seed: u64) -> Result<Codec> {
    match path {
        Some(p) => Codec::load(p),
        None => Codec::new(CodecConfig::default(), seed),
    }
}

fn flow_config(preset: Preset) -> CfmConfig {
    match preset {
        Preset::Desk => CfmConfig::default(),
        Preset::Paper => CfmConfig::full(),
    }
}

fn run(cli: Cli) -> Result<()> {
    let s = settings(&cli)?;
    match cli.command {
        Command::TrainCodec {
            out,
            steps,
            tones,
            flow_steps,
        } => {
            let steps = steps.map_or_else(|| s.kv.get("codec.steps"), Ok)?;
            let tones = tones.map_or_else(|| s.kv.get("codec.tones"), Ok)?;
            let flow_steps = flow_steps.map_or_else(|| s.kv.get("flow.steps"), Ok)?;
            let config = CodecConfig {
                lr: s.kv.get("codec.lr")?,
                ..CodecConfig::default()
            };
            let mut codec = Codec::new(config, s.seed)?;
            let data = tone_dataset(tones, 1.0)?;
            let first = codec.evaluate(&data)?;
            println!("initial total {:.6}", first.total);
            for k in 0..steps {
                let l = codec.train_step(&data)?;
                if (k + 1) % 20 == 0 || k + 1 == steps {
                    println!(
                        "step {:>4} total {:.6} mel {:.6} commit {:.6} ce {:.6}",
                        k + 1,
                        l.total,
                        l.mel_recon,
                        l.commitment,
                        l.transcript_ce
                    );
                }
            }
            if flow_steps == 0 {
                codec.save(&out)?;
            } else {
                let pairs = data
                    .iter()
                    .map(|(w, _)| Ok((codec.input_mel(w)?, token_condition(&codec, &codec.encode(w)?)?)))
                    .collect::<Result<Vec<_>>>()?;
                let c = codec.config();
                let net = VectorFieldNet::new(flow_config(s.preset), c.mel.n_mels, c.dim, s.seed)?;
                let mut trainer = FlowTrainer::new(net, s.kv.get("flow.lr")?, s.seed);
                let losses = trainer.train(&pairs, flow_steps, s.kv.get("flow.draws")?, s.kv.get("flow.lr")?)?;
                if let Some(l) = losses.last() {
                    println!("flow final loss {l:.6}");
                }
                Refiner::new(codec, trainer.net)?.save(&out)?;
            }
            println!("wrote {}", out.display());
        }
        Command::Encode { input, output, codec } => {
            let codec = load_codec(codec.as_deref(), s.seed)?;
            let tokens = codec.encode(&wav_read(&input)?)?;
            write_tokens(&output, &tokens)?;
            println!("{} frames", tokens.len());
        }
        Command::Decode { input, output, codec } => {
            let codec = load_codec(codec.as_deref(), s.seed)?;
            let mel = codec.decode_mel(&read_tokens(&input)?)?;
            wav_write(&output, &griffin_lim(&mel, s.kv.get("gl.iters")?)?)?;
        }
        Command::TtsFlow {
            input,
            output,
            model,
            euler_steps,
        } => {
            let mut refiner = Refiner::load(&model)?;
            refiner.gl_iters = s.kv.get("gl.iters")?;
            let steps = euler_steps.map_or_else(|| s.kv.get("flow.euler_steps"), Ok)?;
            let w = refiner.refine(&read_tokens(&input)?, steps, s.seed)?;
            wav_write(&output, &w)?;
        }
        Command::SynthData { out, docs } => {
            let docs = docs.map_or_else(|| s.kv.get("synth.docs"), Ok)?;
            let bank = VoiceBank::new();
            let samples = toy_corpus(docs, s.seed)
                .iter()
                .enumerate()
                .map(|(i, d)| audify_quarter(d, &bank, s.seed.wrapping_add(i as u64)))
                .collect::<Result<Vec<_>>>()?;
            let entries = write_manifest(&out, &samples)?;
            println!("{} samples in {}", entries.len(), out.join("manifest.jsonl").display());
        }
        Command::RunStage { name, steps, log } => {
            let mut spec = find_stage(&name, s.preset)?;
            let kv_steps: usize = s.kv.get("stage.steps")?;
            if let Some(n) = steps.or((kv_steps > 0).then_some(kv_steps)) {
                spec.steps = n;
            }
            let size: String = s.kv.get("model.size")?;
            let config = match size.as_str() {
                "default" => InterleaveConfig::default(),
                "tiny" => InterleaveConfig::tiny(),
                other => return Err(Error::Config(format!("unknown model.size {other:?}"))),
            };
            let mut model = OmniModel::new(config, s.seed);
            let run = run_stage_synthetic(&mut model, &spec, s.seed)?;
            if let Some(path) = log {
                std::fs::write(path, run.to_jsonl()?)?;
            }
            if let Some(last) = run.steps.last() {
                println!("final loss {:.6}", last.losses["total"]);
            }
            let frozen = run.frozen_violations();
            if !frozen.is_empty() {
                return Err(Error::Freeze(format!("frozen groups changed: {frozen:?}")));
            }
            println!("digest {:016x}", run.digest()?);
        }
        Command::EvalRoundtrip { input, codec } => {
            let codec = load_codec(codec.as_deref(), s.seed)?;
            println!("{:.6}", codec.roundtrip_mel_l1(&wav_read(&input)?)?);
        }
        Command::Normalize { x, min, max } => {
            println!("{:.5}", normalize_score(x, min, max)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
