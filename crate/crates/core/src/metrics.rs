//! Word error rate with a substitution / insertion / deletion breakdown.

use std::fmt;
use std::ops::AddAssign;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct WerBreakdown {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub reference_len: usize,
}

impl WerBreakdown {
    pub fn errors(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }

    /// `(S + I + D) / N`; may exceed 1.
    pub fn wer(&self) -> f64 {
        self.errors() as f64 / self.reference_len as f64
    }
}

impl AddAssign for WerBreakdown {
    fn add_assign(&mut self, o: Self) {
        self.substitutions += o.substitutions;
        self.insertions += o.insertions;
        self.deletions += o.deletions;
        self.reference_len += o.reference_len;
    }
}

impl fmt::Display for WerBreakdown {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "S={} I={} D={} ref={} wer={:.4}",
            self.substitutions,
            self.insertions,
            self.deletions,
            self.reference_len,
            self.wer()
        )
    }
}

/// Unit-cost Levenshtein alignment. Among optimal alignments the backtrace
/// prefers a diagonal step (match or substitution), then an insertion, then
/// a deletion.
pub fn wer<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> Result<WerBreakdown> {
    if reference.is_empty() {
        return Err(Error::EmptyReference);
    }
    let (n, m) = (reference.len(), hypothesis.len());
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        d[i * w] = i;
    }
    for j in 0..=m {
        d[j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[(i - 1) * w + j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            d[i * w + j] = sub.min(d[i * w + j - 1] + 1).min(d[(i - 1) * w + j] + 1);
        }
    }
    let mut out = WerBreakdown {
        reference_len: n,
        ..Default::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let mismatch = reference[i - 1] != hypothesis[j - 1];
            if d[(i - 1) * w + j - 1] + usize::from(mismatch) == here {
                out.substitutions += usize::from(mismatch);
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if j > 0 && d[i * w + j - 1] + 1 == here {
            out.insertions += 1;
            j -= 1;
        } else {
            out.deletions += 1;
            i -= 1;
        }
    }
    Ok(out)
}

/// Sums counts over the corpus before dividing.
pub fn corpus_wer<T: PartialEq, R: AsRef<[T]>, H: AsRef<[T]>>(pairs: &[(R, H)]) -> Result<WerBreakdown> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("corpus WER needs at least one pair".into()));
    }
    let mut total = WerBreakdown::default();
    for (r, h) in pairs {
        total += wer(r.as_ref(), h.as_ref())?;
    }
    Ok(total)
}

/// Line-oriented evaluation report: one `sample` line per id, then a
/// `corpus` line.
pub fn report<'a>(samples: impl IntoIterator<Item = (&'a str, WerBreakdown)>) -> String {
    let mut total = WerBreakdown::default();
    let mut out = String::new();
    for (id, b) in samples {
        out.push_str(&format!("sample id={id} {b}\n"));
        total += b;
    }
    if total.reference_len > 0 {
        out.push_str(&format!("corpus {total}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn identical_is_zero() {
        let b = wer(&toks("a b c"), &toks("a b c")).unwrap();
        assert_eq!(b.errors(), 0);
        assert_eq!(b.wer(), 0.0);
    }

    #[test]
    fn substitution_and_deletion() {
        let b = wer(&toks("a b c d"), &toks("a x c")).unwrap();
        assert_eq!((b.substitutions, b.deletions, b.insertions), (1, 1, 0));
        assert_eq!(b.wer(), 0.5);
    }

    #[test]
    fn empty_hypothesis_and_insertions() {
        let b = wer(&toks("a b"), &toks("")).unwrap();
        assert_eq!((b.deletions, b.wer()), (2, 1.0));
        let b = wer(&toks("a"), &toks("x y z")).unwrap();
        assert_eq!((b.substitutions, b.insertions), (1, 2));
        assert!(b.wer() > 1.0);
        assert!(matches!(wer::<&str>(&[], &["a"]), Err(Error::EmptyReference)));
    }

    #[test]
    fn tie_break_prefers_substitution() {
        // "a b" vs "b a": two substitutions or one insertion and one deletion.
        let b = wer(&toks("a b"), &toks("b a")).unwrap();
        assert_eq!((b.substitutions, b.insertions, b.deletions), (2, 0, 0));
    }

    #[test]
    fn corpus_sums_before_dividing() {
        let pairs = [(toks("a b c d"), toks("a b c x")), (toks("a b c d e f"), toks("a x y d f"))];
        let c = corpus_wer(&pairs).unwrap();
        assert_eq!((c.errors(), c.reference_len), (4, 10));
        assert!((c.wer() - 0.4).abs() < 1e-15);
        let doubled: Vec<_> = pairs.iter().chain(pairs.iter()).cloned().collect();
        assert_eq!(corpus_wer(&doubled).unwrap().wer(), c.wer());
        assert_eq!(corpus_wer(&pairs[..1]).unwrap(), wer(&pairs[0].0, &pairs[0].1).unwrap());
    }

    #[test]
    fn report_format() {
        let b = wer(&toks("a b"), &toks("a")).unwrap();
        let r = report([("s1", b)]);
        assert_eq!(r, "sample id=s1 S=0 I=0 D=1 ref=2 wer=0.5000\ncorpus S=0 I=0 D=1 ref=2 wer=0.5000\n");
    }
}
