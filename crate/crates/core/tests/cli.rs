use std::process::{Command, Output};

use omni_core::codec::read_tokens;
use omni_core::signal::{wav_write, Waveform};

fn omni(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_omni"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn normalize_prints_five_decimals() {
    let o = omni(&["normalize", "50", "40", "90"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).trim(), "0.33333");
}

#[test]
fn usage_errors_exit_one() {
    let o = omni(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!o.stderr.is_empty());
    assert_eq!(omni(&["normalize", "1"]).status.code(), Some(1));
}

#[test]
fn runtime_errors_exit_two() {
    assert_eq!(omni(&["normalize", "1", "5", "5"]).status.code(), Some(2));
    assert_eq!(omni(&["encode", "/nonexistent/in.wav", "/tmp/never.tok"]).status.code(), Some(2));
    assert_eq!(omni(&["run-stage", "stage-9"]).status.code(), Some(2));
    assert_eq!(omni(&["--preset", "huge", "normalize", "1", "0", "2"]).status.code(), Some(2));
}

#[test]
fn encode_two_seconds_gives_25_frames_and_decodes() {
    let dir = tempfile::tempdir().unwrap();
    let wav = dir.path().join("in.wav");
    let tok = dir.path().join("out.tok");
    let back = dir.path().join("back.wav");
    wav_write(&wav, &Waveform::sine(16_000, 330.0, 2.0, 0.5).unwrap()).unwrap();
    let o = omni(&["encode", wav.to_str().unwrap(), tok.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read_tokens(&tok).unwrap().len(), 25);
    let o = omni(&["decode", tok.to_str().unwrap(), back.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(back.exists());
}

#[test]
fn run_stage_digest_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# small model\nmodel.size = tiny\n").unwrap();
    let log = dir.path().join("log.jsonl");
    let args = [
        "--config",
        cfg.to_str().unwrap(),
        "run-stage",
        "audio-I",
        "--steps",
        "10",
        "--seed",
        "7",
        "--log",
        log.to_str().unwrap(),
    ];
    let (a, b) = (omni(&args), omni(&args));
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    let digest = |o: &Output| stdout(o).lines().find(|l| l.starts_with("digest")).map(str::to_string);
    assert!(digest(&a).is_some());
    assert_eq!(digest(&a), digest(&b));
    assert_eq!(std::fs::read_to_string(&log).unwrap().lines().count(), 12);
}

#[test]
fn synth_data_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = omni(&["synth-data", dir.path().to_str().unwrap(), "--docs", "3", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = std::fs::read_to_string(dir.path().join("manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 3);
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "learning_rate = 3\n").unwrap();
    let o = omni(&["--config", cfg.to_str().unwrap(), "normalize", "1", "0", "2"]);
    assert_eq!(o.status.code(), Some(2));
}
