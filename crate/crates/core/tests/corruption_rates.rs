//! Statistical checks of the synthetic corruption and the text preprocessing.

use proptest::prelude::*;
use signkd::metrics::wer;
use signkd::textcorr::{corrupt, gloss_corpus, preprocess, CorruptionSpec, GrammarConfig};

#[test]
fn substitution_rate_shows_up_as_wer() {
    let g = GrammarConfig::default();
    let vocab = g.vocabulary();
    let candidates: Vec<usize> = vocab.gloss_ids().collect();
    let corpus: Vec<Vec<usize>> = gloss_corpus(&g, 200, 3).unwrap().iter().map(|s| vocab.encode(s).0).collect();
    let spec = CorruptionSpec {
        substitution: 0.1,
        ..CorruptionSpec::none()
    };
    let n = 10_000;
    let total: f64 = (0..n)
        .map(|i| {
            let clean = &corpus[i % corpus.len()];
            let p = corrupt(clean, &spec, &candidates, i as u64).unwrap();
            wer(clean, &p.corrupted).unwrap().wer()
        })
        .sum();
    let mean = total / n as f64;
    assert!((mean - 0.1).abs() <= 0.01, "mean WER {mean}");
}

proptest! {
    #[test]
    fn preprocess_is_idempotent(words in prop::collection::vec("[a-cA-C]{1,2}", 0..12), seps in prop::collection::vec("[ \t\n]{1,3}", 12)) {
        let text: String = words.iter().zip(&seps).map(|(w, s)| format!("{w}{s}")).collect();
        let once = preprocess(&text);
        prop_assert_eq!(preprocess(&once), once.clone());
        prop_assert!(!once.contains("  "));
        let toks: Vec<&str> = once.split(' ').collect();
        prop_assert!(toks.windows(2).all(|w| w[0] != w[1]));
    }
}
