use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::rng_from_seed;

/// Per-token corruption rates. `window` bounds how far a shuffled token may
/// move.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorruptionSpec {
    pub shuffle: f64,
    pub substitution: f64,
    pub deletion: f64,
    pub insertion: f64,
    pub window: usize,
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        Self::with_total(0.2)
    }
}

impl CorruptionSpec {
    pub fn none() -> Self {
        Self::with_total(0.0)
    }

    /// Splits `total` evenly across substitution, deletion, insertion and
    /// shuffling.
    pub fn with_total(total: f64) -> Self {
        let r = total / 4.0;
        Self {
            shuffle: r,
            substitution: r,
            deletion: r,
            insertion: r,
            window: 3,
        }
    }

    pub fn total(&self) -> f64 {
        self.shuffle + self.substitution + self.deletion + self.insertion
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        for (name, r) in [
            ("shuffle", self.shuffle),
            ("substitution", self.substitution),
            ("deletion", self.deletion),
            ("insertion", self.insertion),
        ] {
            if !(0.0..=1.0).contains(&r) {
                errs.push(format!("corruption.{name} must be in [0, 1], got {r}"));
            }
        }
        if self.window < 2 {
            errs.push(format!("corruption.window must be at least 2, got {}", self.window));
        }
        if !(self.total() < 1.0) {
            errs.push(format!("total corruption rate must be below 1, got {}", self.total()));
        }
        errs
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorrectionPair {
    pub corrupted: Vec<usize>,
    pub clean: Vec<usize>,
    pub seed: u64,
}

/// Applies, in order: local shuffling, substitution, deletion (never below
/// one token) and insertion. Replacement and inserted tokens are drawn from
/// `candidates`.
pub fn corrupt(clean: &[usize], spec: &CorruptionSpec, candidates: &[usize], seed: u64) -> Result<CorrectionPair> {
    if clean.is_empty() {
        return invalid("cannot corrupt an empty sequence");
    }
    let errs = spec.validate();
    if !errs.is_empty() {
        return invalid(errs.join("; "));
    }
    if candidates.is_empty() && (spec.substitution > 0.0 || spec.insertion > 0.0) {
        return invalid("substitution and insertion need candidate tokens");
    }
    let mut rng = rng_from_seed(seed);
    let mut seq = clean.to_vec();

    for i in 0..seq.len() {
        if rng.random::<f64>() < spec.shuffle && i + 1 < seq.len() {
            let hi = (i + spec.window - 1).min(seq.len() - 1);
            let j = rng.random_range(i + 1..=hi);
            seq.swap(i, j);
        }
    }
    for tok in seq.iter_mut() {
        if rng.random::<f64>() < spec.substitution {
            let others: Vec<usize> = candidates.iter().copied().filter(|&c| c != *tok).collect();
            if !others.is_empty() {
                *tok = others[rng.random_range(0..others.len())];
            }
        }
    }
    let mut kept = Vec::with_capacity(seq.len());
    for (i, &tok) in seq.iter().enumerate() {
        let remaining = seq.len() - i - 1;
        let drop = rng.random::<f64>() < spec.deletion;
        if !drop || (kept.is_empty() && remaining == 0) {
            kept.push(tok);
        }
    }
    let mut out = kept.clone();
    for _ in 0..kept.len() {
        if rng.random::<f64>() < spec.insertion {
            let tok = candidates[rng.random_range(0..candidates.len())];
            let at = rng.random_range(0..=out.len());
            out.insert(at, tok);
        }
    }
    Ok(CorrectionPair {
        corrupted: out,
        clean: clean.to_vec(),
        seed,
    })
}

/// Case folding, whitespace normalization and collapsing of immediately
/// repeated tokens.
pub fn preprocess(text: &str) -> String {
    let mut out: Vec<String> = Vec::new();
    for tok in text.split_whitespace().map(str::to_lowercase) {
        if out.last() != Some(&tok) {
            out.push(tok);
        }
    }
    out.join(" ")
}

/// The repeat-collapsing part of [`preprocess`] on ids.
pub fn preprocess_ids(ids: &[usize]) -> Vec<usize> {
    let mut out = ids.to_vec();
    out.dedup();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_rates_are_identity() {
        let clean = [5, 6, 7, 8];
        let p = corrupt(&clean, &CorruptionSpec::none(), &[5, 6, 7, 8, 9], 3).unwrap();
        assert_eq!(p.corrupted, clean);
    }

    #[test]
    fn seeded_and_never_empty() {
        let spec = CorruptionSpec {
            deletion: 0.9,
            ..CorruptionSpec::none()
        };
        for seed in 0..200 {
            let a = corrupt(&[5, 6, 7], &spec, &[5, 6, 7], seed).unwrap();
            assert!(!a.corrupted.is_empty());
            assert_eq!(a, corrupt(&[5, 6, 7], &spec, &[5, 6, 7], seed).unwrap());
        }
        assert!(corrupt(&[], &spec, &[5], 0).is_err());
    }

    #[test]
    fn shuffle_is_a_permutation_within_window() {
        let spec = CorruptionSpec {
            shuffle: 0.5,
            window: 2,
            ..CorruptionSpec::none()
        };
        let clean: Vec<usize> = (5..15).collect();
        for seed in 0..50 {
            let c = corrupt(&clean, &spec, &[], seed).unwrap().corrupted;
            let mut sorted = c.clone();
            sorted.sort();
            assert_eq!(sorted, clean);
        }
    }

    #[test]
    fn preprocess_rules() {
        assert_eq!(preprocess("A a  a B"), "a b");
        assert_eq!(preprocess("a b c"), "a b c");
        assert_eq!(preprocess("  X\tY  y "), "x y");
        assert_eq!(preprocess_ids(&[5, 5, 6, 5]), vec![5, 6, 5]);
    }

    #[test]
    fn spec_validation() {
        assert!(CorruptionSpec::default().validate().is_empty());
        assert_eq!(
            CorruptionSpec {
                window: 1,
                substitution: 1.5,
                ..Default::default()
            }
            .validate()
            .len(),
            3
        );
    }
}
