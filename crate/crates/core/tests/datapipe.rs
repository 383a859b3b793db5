use omni_core::datapipe::{
    audify_quarter, document, frame_resize, quarter_count, segment_sentences, video_frame_sample,
    MixtureSampler, MixtureSpec, SampleItem, VoiceBank, MAX_FRAMES,
};
use proptest::prelude::*;

fn text_strategy() -> impl Strategy<Value = String> {
    proptest::collection::vec(
        prop_oneof![
            Just("a".to_string()),
            Just("Zed".to_string()),
            Just(" ".to_string()),
            Just("\n".to_string()),
            Just(".".to_string()),
            Just("!".to_string()),
            Just("?".to_string()),
            Just("。".to_string()),
            Just("？".to_string()),
            Just("3.14".to_string()),
            "[a-z]{1,5}",
        ],
        1..30,
    )
    .prop_map(|v| v.concat())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn segmentation_partitions_text(text in text_strategy()) {
        let s = segment_sentences(&text).unwrap();
        prop_assert!(!s.is_empty());
        prop_assert_eq!(s.concat(), text);
        prop_assert!(s.iter().all(|p| !p.is_empty()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn audification_count_and_transcripts(n in 1usize..40, seed in any::<u64>()) {
        let text: String = (0..n).map(|i| format!("S{i}. ")).collect();
        let doc = document("d", "t", text.trim_end()).unwrap();
        prop_assert_eq!(doc.len(), n);
        let bank = VoiceBank::new();
        let s = audify_quarter(&doc, &bank, seed).unwrap();
        prop_assert_eq!(s.audio_count(), quarter_count(n));
        for (item, sent) in s.items.iter().zip(&doc.sentences) {
            match item {
                SampleItem::Text(t) => prop_assert_eq!(t, sent),
                SampleItem::Audio { transcript, voice, .. } => {
                    prop_assert_eq!(transcript, sent);
                    prop_assert!(*voice < 44);
                }
            }
        }
    }

    #[test]
    fn frame_sampler_caps_and_never_upscales(d in 0.01f64..500.0, w in 1u32..5000, h in 1u32..5000) {
        let t = video_frame_sample(d, 1.0, MAX_FRAMES).unwrap();
        prop_assert!(!t.is_empty() && t.len() <= 32);
        prop_assert!(t.iter().all(|&x| x >= 0.0 && x < d));
        let (w2, h2) = frame_resize(w, h).unwrap();
        prop_assert!(w2 <= w && h2 <= h);
        prop_assert!(w2.max(h2) <= 1120 && w2.min(h2) <= 560);
    }
}

#[test]
fn mixture_frequencies_match_weights() {
    let spec = MixtureSpec::new([("audio", 0.2), ("image", 0.4), ("text", 0.4)]).unwrap();
    let mut s = MixtureSampler::new(&spec, &["audio", "image", "text"], 17).unwrap();
    let mut counts = [0usize; 3];
    for _ in 0..100_000 {
        counts[s.draw()] += 1;
    }
    for (c, w) in counts.iter().zip([0.2, 0.4, 0.4]) {
        assert!((*c as f64 / 1e5 - w).abs() < 0.01, "{counts:?}");
    }
    let a: Vec<usize> = MixtureSampler::new(&spec, &["audio", "image", "text"], 5).unwrap().take(50).collect();
    let b: Vec<usize> = MixtureSampler::new(&spec, &["audio", "image", "text"], 5).unwrap().take(50).collect();
    assert_eq!(a, b);
}
