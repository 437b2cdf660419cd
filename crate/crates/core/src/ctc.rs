//! Connectionist temporal classification: exact loss by forward–backward
//! over the blank-interleaved label sequence, plus greedy and prefix beam
//! decoding. Blank is id 0; all inputs are `[T × V]` log-probabilities.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use crate::autodiff::kernels::log_add;
use crate::autodiff::{Graph, Var};
use crate::data::{GlossSequence, BLANK};
use crate::error::{invalid, shape_err, Error, Result};
use crate::tensor::Tensor;

/// Fails unless `target` can be emitted in `frames` steps.
pub fn check_feasible(frames: usize, target: &[usize]) -> Result<()> {
    if target.contains(&BLANK) {
        return invalid("ctc target contains the blank id");
    }
    let repeats = target.windows(2).filter(|w| w[0] == w[1]).count();
    if frames < target.len() + repeats {
        return Err(Error::InfeasibleCtc {
            frames,
            target_len: target.len(),
            repeats,
        });
    }
    Ok(())
}

fn extended(target: &[usize]) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * target.len() + 1);
    ext.push(BLANK);
    for &l in target {
        ext.push(l);
        ext.push(BLANK);
    }
    ext
}

fn validate_stream(logp: &Tensor, target: &[usize]) -> Result<(usize, usize)> {
    if logp.rank() != 2 || logp.rows() == 0 {
        return shape_err("ctc", format!("expected non-empty [T x V] log-probs, got {:?}", logp.shape()));
    }
    let (t, v) = (logp.rows(), logp.cols());
    if let Some(bad) = target.iter().find(|&&l| l >= v) {
        return shape_err("ctc", format!("target id {bad} outside vocabulary of {v}"));
    }
    check_feasible(t, target)?;
    Ok((t, v))
}

/// Forward variables over the extended labels and the total log-likelihood.
fn forward(logp: &Tensor, ext: &[usize]) -> (Vec<f64>, f64) {
    let (t_len, s_len) = (logp.rows(), ext.len());
    let ninf = f64::NEG_INFINITY;
    let mut alpha = vec![ninf; t_len * s_len];
    alpha[0] = logp.at(0, ext[0]);
    if s_len > 1 {
        alpha[1] = logp.at(0, ext[1]);
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let prev = &alpha[(t - 1) * s_len..t * s_len];
            let mut a = prev[s];
            if s >= 1 {
                a = log_add(a, prev[s - 1]);
            }
            if skip_allowed(ext, s) {
                a = log_add(a, prev[s - 2]);
            }
            alpha[t * s_len + s] = if a == ninf { ninf } else { a + logp.at(t, ext[s]) };
        }
    }
    let last = &alpha[(t_len - 1) * s_len..];
    let ll = if s_len > 1 {
        log_add(last[s_len - 1], last[s_len - 2])
    } else {
        last[0]
    };
    (alpha, ll)
}

fn skip_allowed(ext: &[usize], s: usize) -> bool {
    s >= 2 && ext[s] != BLANK && ext[s] != ext[s - 2]
}

/// Loss `-log p(target | logp)` and its gradient with respect to every
/// entry of `logp` (treated as free inputs).
pub fn ctc_loss_and_grad(logp: &Tensor, target: &[usize]) -> Result<(f64, Tensor)> {
    let (t_len, v) = validate_stream(logp, target)?;
    let ext = extended(target);
    let s_len = ext.len();
    let ninf = f64::NEG_INFINITY;
    let skip_ok = |s: usize| skip_allowed(&ext, s);
    let (alpha, log_likelihood) = forward(logp, &ext);
    if log_likelihood == ninf {
        return Err(Error::InfeasibleCtc {
            frames: t_len,
            target_len: target.len(),
            repeats: target.windows(2).filter(|w| w[0] == w[1]).count(),
        });
    }

    // beta excludes the emission at its own frame.
    let mut beta = vec![ninf; t_len * s_len];
    beta[(t_len - 1) * s_len + s_len - 1] = 0.0;
    if s_len > 1 {
        beta[(t_len - 1) * s_len + s_len - 2] = 0.0;
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let next = |s2: usize| beta[(t + 1) * s_len + s2] + logp.at(t + 1, ext[s2]);
            let mut b = next(s);
            if s + 1 < s_len {
                b = log_add(b, next(s + 1));
            }
            if s + 2 < s_len && skip_ok(s + 2) {
                b = log_add(b, next(s + 2));
            }
            beta[t * s_len + s] = b;
        }
    }

    let mut grad = vec![0.0; t_len * v];
    for t in 0..t_len {
        for s in 0..s_len {
            let ab = alpha[t * s_len + s] + beta[t * s_len + s];
            if ab > ninf {
                grad[t * v + ext[s]] -= (ab - log_likelihood).exp();
            }
        }
    }
    Ok((-log_likelihood, Tensor::matrix(t_len, v, grad)?))
}

pub fn ctc_loss(logp: &Tensor, target: &[usize]) -> Result<f64> {
    ctc_loss_and_grad(logp, target).map(|(l, _)| l)
}

/// Log-probability of a labeling; `-inf` when it cannot be emitted.
pub fn labeling_log_prob(logp: &Tensor, labeling: &[usize]) -> f64 {
    match validate_stream(logp, labeling) {
        Ok(_) => forward(logp, &extended(labeling)).1,
        Err(_) => f64::NEG_INFINITY,
    }
}

/// CTC loss as a graph node over log-probabilities.
pub fn ctc_loss_node(g: &Graph, logp: Var, target: &[usize]) -> Result<Var> {
    let (loss, grad) = ctc_loss_and_grad(&g.value(logp), target)?;
    g.push(
        "ctc_loss",
        Tensor::scalar(loss),
        Some(Box::new(move |up, grads| {
            let scaled: Vec<f64> = grad.data().iter().map(|v| v * up[0]).collect();
            grads.accumulate(logp, &scaled);
        })),
    )
}

/// Merges adjacent repeats, then drops blanks.
pub fn collapse(path: &[usize]) -> GlossSequence {
    let mut out = Vec::new();
    let mut prev = None;
    for &p in path {
        if Some(p) != prev && p != BLANK {
            out.push(p);
        }
        prev = Some(p);
    }
    GlossSequence(out)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Per-frame argmax (ties to the lowest id), then [`collapse`]. Accepts
/// probabilities or log-probabilities.
pub fn greedy_decode(stream: &Tensor) -> GlossSequence {
    let path: Vec<usize> = (0..stream.rows()).map(|t| argmax(stream.row(t))).collect();
    collapse(&path)
}

/// Frame-level argmax path, before collapsing.
pub fn argmax_path(stream: &Tensor) -> Vec<usize> {
    (0..stream.rows()).map(|t| argmax(stream.row(t))).collect()
}

#[derive(Clone, Copy)]
struct PrefixScore {
    blank: f64,
    non_blank: f64,
}

impl PrefixScore {
    fn total(self) -> f64 {
        log_add(self.blank, self.non_blank)
    }
}

const EMPTY: PrefixScore = PrefixScore {
    blank: f64::NEG_INFINITY,
    non_blank: f64::NEG_INFINITY,
};

fn rank(a: &(Vec<usize>, f64), b: &(Vec<usize>, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

fn prefix_beam(logp: &Tensor, width: usize) -> Vec<Vec<usize>> {
    let v = logp.cols();
    let mut beam: Vec<(Vec<usize>, PrefixScore)> = vec![(
        Vec::new(),
        PrefixScore {
            blank: 0.0,
            non_blank: f64::NEG_INFINITY,
        },
    )];
    for t in 0..logp.rows() {
        let row = logp.row(t);
        let mut next: BTreeMap<Vec<usize>, PrefixScore> = BTreeMap::new();
        for (prefix, score) in &beam {
            let total = score.total();
            let e = next.entry(prefix.clone()).or_insert(EMPTY);
            e.blank = log_add(e.blank, total + row[BLANK]);
            let last = prefix.last().copied();
            for c in (0..v).filter(|&c| c != BLANK) {
                let mut extended = prefix.clone();
                extended.push(c);
                if Some(c) == last {
                    let e = next.entry(extended).or_insert(EMPTY);
                    e.non_blank = log_add(e.non_blank, score.blank + row[c]);
                    let same = next.entry(prefix.clone()).or_insert(EMPTY);
                    same.non_blank = log_add(same.non_blank, score.non_blank + row[c]);
                } else {
                    let e = next.entry(extended).or_insert(EMPTY);
                    e.non_blank = log_add(e.non_blank, total + row[c]);
                }
            }
        }
        let mut ranked: Vec<(Vec<usize>, f64)> = next.iter().map(|(p, s)| (p.clone(), s.total())).collect();
        ranked.sort_by(rank);
        ranked.truncate(width);
        beam = ranked
            .into_iter()
            .map(|(p, _)| {
                let s = next[&p];
                (p, s)
            })
            .collect();
    }
    beam.into_iter().map(|(p, _)| p).collect()
}

/// CTC prefix beam search over log-probabilities.
///
/// Candidates are the final beams of every width from 1 to `width`, ranked
/// by exact labeling probability, then lexicographically smallest prefix.
/// Pruned search alone is not monotone in the width; pooling the narrower
/// runs makes a wider beam never return a less probable labeling. A width of
/// 1 may still differ from [`greedy_decode`]. With a width at least the
/// number of reachable prefixes the search is exact.
pub fn beam_decode(logp: &Tensor, width: usize) -> Result<GlossSequence> {
    Ok(beam_sweep(logp, width)?.pop().expect("width >= 1"))
}

/// [`beam_decode`] results for every width `1..=max_width`, in one pass.
pub fn beam_sweep(logp: &Tensor, max_width: usize) -> Result<Vec<GlossSequence>> {
    if max_width == 0 {
        return invalid("beam width must be at least 1");
    }
    let mut pool: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut out = Vec::with_capacity(max_width);
    let mut saturated = false;
    for w in 1..=max_width {
        if !saturated {
            let finals = prefix_beam(logp, w);
            // Nothing was pruned at any step, so wider beams add nothing.
            saturated = finals.len() < w;
            for p in finals {
                if pool.contains_key(&p) {
                    continue;
                }
                let lp = labeling_log_prob(logp, &p);
                pool.insert(p.clone(), lp);
                let cand = (p, lp);
                if best.as_ref().is_none_or(|b| rank(&cand, b) == Ordering::Less) {
                    best = Some(cand);
                }
            }
        }
        out.push(GlossSequence(best.as_ref().expect("non-empty beam").0.clone()));
    }
    Ok(out)
}

/// Mean CTC loss over a batch of `(log-probs, target)` pairs.
pub fn mean_ctc_loss(batch: &[(Tensor, GlossSequence)]) -> Result<f64> {
    if batch.is_empty() {
        return invalid("empty batch");
    }
    let total = batch.iter().map(|(lp, y)| ctc_loss(lp, y)).sum::<Result<f64>>()?;
    Ok(total / batch.len() as f64)
}
