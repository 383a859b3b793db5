use omni_core::codec::{
    encode_tokens, parse_tokens, read_tokens, tone_dataset, write_tokens, AudioTokenSeq, Codec,
    CodecConfig,
};
use omni_core::rvq::CodeFrame;
use omni_core::signal::Waveform;
use proptest::prelude::*;

fn small() -> Codec {
    Codec::new(
        CodecConfig {
            channels: 16,
            dim: 16,
            codebook_size: 16,
            ..CodecConfig::default()
        },
        3,
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn token_bytes_round_trip(frames in proptest::collection::vec(proptest::collection::vec(0usize..1024, 8), 1..20)) {
        let seq = AudioTokenSeq::from_frames(frames.into_iter().map(CodeFrame::new).collect());
        let bytes = encode_tokens(&seq).unwrap();
        prop_assert_eq!(parse_tokens(&bytes).unwrap(), seq);
        prop_assert!(parse_tokens(&bytes[..bytes.len() - 1]).is_err());
    }
}

#[test]
fn frame_count_follows_duration() {
    let c = small();
    for (secs, frames) in [(0.64, 8), (0.7, 8), (1.0, 12), (1.5, 18), (3.0, 37)] {
        let w = Waveform::sine(16_000, 440.0, secs, 0.3).unwrap();
        assert_eq!(c.encode(&w).unwrap().len(), frames, "{secs} s");
    }
    let short = Waveform::sine(16_000, 440.0, 0.5, 0.3).unwrap();
    assert!(c.encode(&short).is_err());
}

#[test]
fn tokens_survive_files_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let c = small();
    let w = Waveform::sine(16_000, 300.0, 1.0, 0.4).unwrap();
    let t = c.encode(&w).unwrap();
    write_tokens(dir.path().join("a.tok"), &t).unwrap();
    assert_eq!(read_tokens(dir.path().join("a.tok")).unwrap().frames, t.frames);
    c.save(dir.path().join("c.ckpt")).unwrap();
    let back = Codec::load(dir.path().join("c.ckpt")).unwrap();
    assert_eq!(back.encode(&w).unwrap(), t);
    assert_eq!(back.decode_normalized(&t).unwrap(), c.decode_normalized(&t).unwrap());
}

#[test]
fn a_few_steps_reduce_loss_and_keep_lm_frozen() {
    let mut c = small();
    let data = tone_dataset(3, 0.64).unwrap();
    let lm_before = c.params().group_checksum("codec.lm");
    let first = c.evaluate(&data).unwrap().total;
    for _ in 0..15 {
        c.train_step(&data).unwrap();
    }
    assert!(c.evaluate(&data).unwrap().total < first);
    assert_eq!(c.params().group_checksum("codec.lm"), lm_before);
}
