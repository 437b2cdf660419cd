//! Edit counts checked against the recursive definition of edit distance.

use proptest::prelude::*;
use signkd::metrics::wer;

fn edit_distance(a: &[u8], b: &[u8]) -> usize {
    match (a.split_first(), b.split_first()) {
        (None, _) => b.len(),
        (_, None) => a.len(),
        (Some((x, ra)), Some((y, rb))) => {
            let sub = edit_distance(ra, rb) + usize::from(x != y);
            sub.min(edit_distance(ra, b) + 1).min(edit_distance(a, rb) + 1)
        }
    }
}

proptest! {
    #[test]
    fn total_matches_recursive_edit_distance(
        r in prop::collection::vec(0u8..4, 1..=8),
        h in prop::collection::vec(0u8..4, 0..=8),
    ) {
        let b = wer(&r, &h).unwrap();
        prop_assert_eq!(b.errors(), edit_distance(&r, &h));
        prop_assert!(b.substitutions + b.deletions <= r.len());
        prop_assert_eq!(b.substitutions + b.insertions + r.len() - b.deletions - b.substitutions, h.len());
    }
}
