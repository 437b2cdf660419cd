//! Central finite-difference checks for graph kernels.
//!
//! The numeric side only evaluates forward values; it never reads the
//! backward closures it is checking.

use rand::Rng as _;

use super::{Graph, Var};
use crate::error::{shape_err, Result};
use crate::rng::rng_from_seed;
use crate::tensor::Tensor;

/// Perturbation used for central differences.
pub const FD_STEP: f64 = 1e-5;

/// Gradient magnitudes below this are compared on an absolute scale.
pub const REL_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Compares reverse-mode gradients of a scalar function of `inputs` with
/// central finite differences at step [`FD_STEP`].
pub fn check<F>(inputs: &[Tensor], f: F) -> Result<GradCheckReport>
where
    F: Fn(&Graph, &[Var]) -> Result<Var>,
{
    let g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect::<Result<_>>()?;
    let out = f(&g, &vars)?;
    let grads = g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars.iter().zip(inputs).map(|(&v, t)| grads.get_or_zeros(v, t.len())).collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let g = Graph::inference();
        let vars: Vec<Var> = perturbed.iter().map(|t| g.leaf(t.clone())).collect::<Result<_>>()?;
        let out = f(&g, &vars)?;
        Ok(g.scalar_value(out))
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        input: 0,
        index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let mut work = inputs.to_vec();
    for i in 0..inputs.len() {
        for j in 0..inputs[i].len() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + FD_STEP;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - FD_STEP;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = analytic[i][j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.checked += 1;
            if rel > report.max_rel_err {
                report = GradCheckReport {
                    max_rel_err: rel,
                    input: i,
                    index: j,
                    analytic: a,
                    numeric,
                    checked: report.checked,
                };
            }
        }
    }
    Ok(report)
}

/// Scalar `Σ wᵢ xᵢ` with fixed weights; reduces a tensor-valued kernel to a
/// scalar so that every output element contributes to the check.
pub fn weighted_sum(g: &Graph, x: Var, weights: &[f64]) -> Result<Var> {
    let xv = g.value(x);
    if xv.len() != weights.len() {
        return shape_err("weighted_sum", format!("{} values, {} weights", xv.len(), weights.len()));
    }
    let total = xv.data().iter().zip(weights).map(|(a, b)| a * b).sum();
    let w = weights.to_vec();
    g.push(
        "weighted_sum",
        Tensor::scalar(total),
        Some(Box::new(move |gr, grads| {
            let scaled: Vec<f64> = w.iter().map(|v| v * gr[0]).collect();
            grads.accumulate(x, &scaled);
        })),
    )
}

/// Uniform random tensor in `[-scale, scale)`.
pub fn random_tensor(shape: &[usize], scale: f64, seed: u64) -> Tensor {
    let mut rng = rng_from_seed(seed);
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape and data agree")
}
