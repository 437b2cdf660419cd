//! Distillation objective: teacher-to-student KL terms for both heads, the
//! BiLSTM-to-conv self-distillation term and CTC, plus the teacher stream
//! file format.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::ctc::ctc_loss_node;
use crate::error::{invalid, shape_err, Error, Result};
use crate::mslr::{MslrOutputs, MslrVars};
use crate::tensor::Tensor;

pub const TCH_MAGIC: &[u8; 4] = b"TCH1";

const ROW_TOLERANCE: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KdWeights {
    /// Multiplier inside each KL term.
    pub alpha: f64,
    /// KD weight relative to a CTC weight of 1.
    pub kd_ratio: f64,
    /// Extra softening applied to both sides of the KD terms only.
    pub temperature: f64,
    pub use_conv: bool,
    pub use_bilstm: bool,
    pub use_self: bool,
}

impl Default for KdWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            kd_ratio: 25.0,
            temperature: 1.0,
            use_conv: true,
            use_bilstm: true,
            use_self: true,
        }
    }
}

impl KdWeights {
    /// Pure CTC training.
    pub fn off() -> Self {
        Self {
            use_conv: false,
            use_bilstm: false,
            use_self: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            errs.push(format!("kd.alpha must be a non-negative number, got {}", self.alpha));
        }
        if !(self.kd_ratio >= 0.0) || !self.kd_ratio.is_finite() {
            errs.push(format!("kd.kd_ratio must be a non-negative number, got {}", self.kd_ratio));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            errs.push(format!("kd.temperature must be positive, got {}", self.temperature));
        }
        errs
    }

    fn scale(&self) -> f64 {
        self.alpha * self.kd_ratio
    }
}

/// Teacher distributions for both heads, held as log-probabilities so a
/// teacher copied from a student reproduces it bit for bit.
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherStreams {
    pub id: String,
    conv_logp: Tensor,
    bilstm_logp: Tensor,
}

fn check_rows(logp: &Tensor, what: &str) -> Result<()> {
    if logp.rank() != 2 || logp.rows() == 0 || logp.cols() < 2 {
        return shape_err("teacher", format!("{what} stream must be [T x V] with T >= 1, V >= 2, got {:?}", logp.shape()));
    }
    for t in 0..logp.rows() {
        let s: f64 = logp.row(t).iter().map(|v| v.exp()).sum();
        if !s.is_finite() || (s - 1.0).abs() > ROW_TOLERANCE {
            return invalid(format!("{what} teacher row {t} sums to {s}, not 1"));
        }
        if logp.row(t).iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return invalid(format!("{what} teacher row {t} is not a distribution"));
        }
    }
    Ok(())
}

impl TeacherStreams {
    pub fn from_log_probs(id: impl Into<String>, conv_logp: Tensor, bilstm_logp: Tensor) -> Result<Self> {
        if conv_logp.shape() != bilstm_logp.shape() {
            return shape_err("teacher", format!("head shapes differ: {:?} vs {:?}", conv_logp.shape(), bilstm_logp.shape()));
        }
        check_rows(&conv_logp, "conv")?;
        check_rows(&bilstm_logp, "bilstm")?;
        Ok(Self {
            id: id.into(),
            conv_logp,
            bilstm_logp,
        })
    }

    pub fn from_probs(id: impl Into<String>, conv: &Tensor, bilstm: &Tensor) -> Result<Self> {
        if conv.data().iter().chain(bilstm.data()).any(|&p| !(p >= 0.0)) {
            return invalid("teacher probabilities must be non-negative");
        }
        Self::from_log_probs(id, conv.map(f64::ln), bilstm.map(f64::ln))
    }

    /// Uses a trained model's two heads as the teacher.
    pub fn from_outputs(id: impl Into<String>, out: &MslrOutputs) -> Result<Self> {
        Self::from_log_probs(id, out.conv_logp.clone(), out.bilstm_logp.clone())
    }

    pub fn frames(&self) -> usize {
        self.conv_logp.rows()
    }

    pub fn vocab_size(&self) -> usize {
        self.conv_logp.cols()
    }

    pub fn conv_logp(&self) -> &Tensor {
        &self.conv_logp
    }

    pub fn bilstm_logp(&self) -> &Tensor {
        &self.bilstm_logp
    }

    /// Encodes as `TCH1`: magic, `T_t` and `V` as u32, then the conv and
    /// BiLSTM probability blocks as f32.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 8 * self.conv_logp.len());
        out.extend_from_slice(TCH_MAGIC);
        out.extend_from_slice(&(self.frames() as u32).to_le_bytes());
        out.extend_from_slice(&(self.vocab_size() as u32).to_le_bytes());
        for block in [&self.conv_logp, &self.bilstm_logp] {
            for &lp in block.data() {
                out.extend_from_slice(&(lp.exp() as f32).to_le_bytes());
            }
        }
        out
    }

    /// Decodes `TCH1`, renormalizing rows to undo single-precision rounding.
    pub fn from_bytes(id: impl Into<String>, bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != TCH_MAGIC {
            return Err(Error::Format("bad teacher magic, expected TCH1".into()));
        }
        let t = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let v = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let want = 12 + 2 * t * v * 4;
        if t == 0 || v < 2 || bytes.len() != want {
            return Err(Error::Format(format!(
                "teacher header T={t} V={v} needs {want} bytes, file has {}",
                bytes.len()
            )));
        }
        let vals: Vec<f64> = bytes[12..]
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect();
        let (conv, bilstm) = vals.split_at(t * v);
        let conv = Tensor::matrix(t, v, conv.to_vec())?;
        let bilstm = Tensor::matrix(t, v, bilstm.to_vec())?;
        for (name, m) in [("conv", &conv), ("bilstm", &bilstm)] {
            for r in 0..t {
                let s: f64 = m.row(r).iter().sum();
                if !s.is_finite() || (s - 1.0).abs() > 1e-4 || m.row(r).iter().any(|&p| p < 0.0) {
                    return Err(Error::Format(format!("{name} teacher row {r} is not a distribution (sum {s})")));
                }
            }
        }
        Self::from_probs(id, &renormalize(conv), &renormalize(bilstm))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        Self::from_bytes(id, &fs::read(path)?)
    }

    /// Sharpens or softens both heads: `p^(1/τ)`, renormalized.
    pub fn tempered(&self, temperature: f64) -> Result<Self> {
        if temperature == 1.0 {
            return Ok(self.clone());
        }
        let f = |lp: &Tensor| log_normalize(&lp.map(|v| v / temperature));
        Self::from_log_probs(self.id.clone(), f(&self.conv_logp), f(&self.bilstm_logp))
    }
}

fn renormalize(p: Tensor) -> Tensor {
    let (t, v) = (p.rows(), p.cols());
    let mut data = p.into_data();
    for row in data.chunks_exact_mut(v) {
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x /= s);
    }
    Tensor::matrix(t, v, data).expect("same shape")
}

fn log_normalize(x: &Tensor) -> Tensor {
    let v = x.cols();
    let mut data = x.data().to_vec();
    for row in data.chunks_exact_mut(v) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|r| (r - m).exp()).sum::<f64>().ln();
        row.iter_mut().for_each(|r| *r -= lse);
    }
    Tensor::matrix(x.rows(), v, data).expect("same shape")
}

/// Resamples both heads to `frames` rows by endpoint-aligned linear
/// interpolation over time, then renormalizes each row.
pub fn align_teacher(streams: &TeacherStreams, frames: usize) -> Result<TeacherStreams> {
    if frames == 0 {
        return invalid("cannot align a teacher to zero frames");
    }
    if frames == streams.frames() {
        return Ok(streams.clone());
    }
    let resample = |lp: &Tensor| -> Tensor {
        let (t, v) = (lp.rows(), lp.cols());
        let mut data = Vec::with_capacity(frames * v);
        for j in 0..frames {
            let u = if frames == 1 {
                0.0
            } else {
                j as f64 * (t - 1) as f64 / (frames - 1) as f64
            };
            let i0 = (u.floor() as usize).min(t - 1);
            let i1 = (i0 + 1).min(t - 1);
            let a = u - i0 as f64;
            for k in 0..v {
                let (p0, p1) = (lp.at(i0, k).exp(), lp.at(i1, k).exp());
                data.push(if a == 0.0 { p0 } else { p0 + a * (p1 - p0) });
            }
        }
        renormalize(Tensor::matrix(frames, v, data).expect("sized"))
    };
    TeacherStreams::from_probs(
        streams.id.clone(),
        &resample(&streams.conv_logp),
        &resample(&streams.bilstm_logp),
    )
}

/// `alpha · Σ_t Σ_v p_T (log p_T − log p_S)` with the teacher held constant.
/// Entries where the teacher assigns zero probability contribute nothing.
pub fn kd_kl(g: &Graph, teacher_logp: &Tensor, student_logp: Var, alpha: f64) -> Result<Var> {
    let s = g.value(student_logp);
    if s.shape() != teacher_logp.shape() {
        return shape_err("kd_kl", format!("teacher {:?} vs student {:?}", teacher_logp.shape(), s.shape()));
    }
    let mut value = 0.0;
    let mut grad = vec![0.0; s.len()];
    for (i, (&lt, &ls)) in teacher_logp.data().iter().zip(s.data()).enumerate() {
        if lt == f64::NEG_INFINITY {
            continue;
        }
        let p = lt.exp();
        value += p * (lt - ls);
        grad[i] = -alpha * p;
    }
    g.push(
        "kd_kl",
        Tensor::scalar(alpha * value),
        Some(Box::new(move |up, grads| {
            grads.accumulate_with(student_logp, grad.len(), |acc| {
                for (a, gv) in acc.iter_mut().zip(&grad) {
                    *a += up[0] * gv;
                }
            })
        })),
    )
}

/// Self-distillation from the BiLSTM head into the conv head; no gradient
/// reaches the BiLSTM head through this term.
pub fn kd_self(g: &Graph, bilstm_logp: Var, conv_logp: Var, alpha: f64) -> Result<Var> {
    let teacher = (*g.value(bilstm_logp)).clone();
    kd_kl(g, &teacher, conv_logp, alpha)
}

/// Weighted loss components; `total` is their sum.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub conv: f64,
    pub bilstm: f64,
    pub self_kd: f64,
    pub ctc: f64,
}

impl LossBreakdown {
    pub fn component_sum(&self) -> f64 {
        self.conv + self.bilstm + self.self_kd + self.ctc
    }
}

/// Student-side log-probs for the KD terms: the head itself, or re-softened.
fn kd_view(g: &Graph, logp: Var, temperature: f64) -> Result<Var> {
    if temperature == 1.0 {
        Ok(logp)
    } else {
        g.log_softmax(logp, temperature)
    }
}

/// Builds the full objective on `g`. CTC is taken on the BiLSTM head; each
/// KD term is `kd_ratio · alpha · Σ KL`. Disabled or zero-weighted terms are
/// left out of the graph and reported as exactly 0. A teacher whose length
/// differs from the student's is aligned first.
pub fn total_loss(
    g: &Graph,
    out: &MslrVars,
    teacher: Option<&TeacherStreams>,
    target: &[usize],
    weights: &KdWeights,
) -> Result<(Var, LossBreakdown)> {
    let errs = weights.validate();
    if !errs.is_empty() {
        return invalid(errs.join("; "));
    }
    let (t_out, v) = {
        let s = g.shape(out.bilstm_logp);
        (s[0], s[1])
    };
    let ctc = ctc_loss_node(g, out.bilstm_logp, target)?;
    let mut terms = vec![ctc];
    let mut b = LossBreakdown {
        ctc: g.scalar_value(ctc),
        ..Default::default()
    };
    let scale = weights.scale();
    let tau = weights.temperature;
    if scale != 0.0 {
        if let Some(teacher) = teacher.filter(|_| weights.use_conv || weights.use_bilstm) {
            if teacher.vocab_size() != v {
                return shape_err("total_loss", format!("teacher vocabulary {} vs student {v}", teacher.vocab_size()));
            }
            let aligned = align_teacher(teacher, t_out)?.tempered(tau)?;
            if weights.use_conv {
                let term = kd_kl(g, aligned.conv_logp(), kd_view(g, out.conv_logp, tau)?, scale)?;
                b.conv = g.scalar_value(term);
                terms.push(term);
            }
            if weights.use_bilstm {
                let term = kd_kl(g, aligned.bilstm_logp(), kd_view(g, out.bilstm_logp, tau)?, scale)?;
                b.bilstm = g.scalar_value(term);
                terms.push(term);
            }
        }
        if weights.use_self {
            let term = kd_self(g, kd_view(g, out.bilstm_logp, tau)?, kd_view(g, out.conv_logp, tau)?, scale)?;
            b.self_kd = g.scalar_value(term);
            terms.push(term);
        }
    }
    let total = g.add_scalars(&terms)?;
    b.total = g.scalar_value(total);
    Ok((total, b))
}
