//! Post-training INT8 quantization of the recognition network: symmetric
//! per-tensor weights, affine per-tensor activations, float biases and LSTM
//! gate nonlinearities.

use std::collections::BTreeMap;
use std::path::Path;

use crate::archive::{Archive, Payload};
use crate::autodiff::Padding;
use crate::error::{invalid, shape_err, Error, Result};
use crate::mslr::{MslrConfig, MslrOutputs};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Smallest scale used for a tensor or activation whose range is (near) zero.
pub const MIN_SCALE: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedTensor {
    pub values: Vec<i8>,
    pub scale: f64,
    pub zero_point: i32,
    pub shape: Vec<usize>,
}

impl QuantizedTensor {
    /// Symmetric quantization to `[-127, 127]` with zero point 0.
    pub fn symmetric(t: &Tensor) -> Self {
        let max = t.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let scale = (max / 127.0).max(MIN_SCALE);
        let values = t
            .data()
            .iter()
            .map(|&v| (v / scale).round().clamp(-127.0, 127.0) as i8)
            .collect();
        Self {
            values,
            scale,
            zero_point: 0,
            shape: t.shape().to_vec(),
        }
    }

    /// Affine quantization with the parameters of `range`.
    pub fn affine(t: &Tensor, range: ActivationRange) -> Self {
        let q = QParams::from_range(range);
        Self {
            values: t.data().iter().map(|&v| q.quantize(v).0).collect(),
            scale: q.scale,
            zero_point: q.zero_point,
            shape: t.shape().to_vec(),
        }
    }

    pub fn dequantize(&self) -> Tensor {
        let data = self
            .values
            .iter()
            .map(|&q| (i32::from(q) - self.zero_point) as f64 * self.scale)
            .collect();
        Tensor::new(self.shape.clone(), data).expect("shape matches payload")
    }
}

/// Observed extremes of one activation tensor; always contains 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActivationRange {
    pub min: f64,
    pub max: f64,
}

impl ActivationRange {
    fn empty() -> Self {
        Self { min: 0.0, max: 0.0 }
    }

    fn observe(&mut self, values: &[f64]) {
        for &v in values {
            self.min = self.min.min(v);
            self.max = self.max.max(v);
        }
    }
}

/// Affine int8 parameters: `real = (q - zero_point) * scale`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QParams {
    pub scale: f64,
    pub zero_point: i32,
}

impl QParams {
    pub fn from_range(r: ActivationRange) -> Self {
        let (min, max) = (r.min.min(0.0), r.max.max(0.0));
        let scale = ((max - min) / 255.0).max(MIN_SCALE);
        let zero_point = (-128.0 - min / scale).round().clamp(-128.0, 127.0) as i32;
        Self { scale, zero_point }
    }

    /// Quantized value and whether it had to be clamped.
    pub fn quantize(self, v: f64) -> (i8, bool) {
        let q = (v / self.scale).round() + f64::from(self.zero_point);
        let clamped = q.clamp(-128.0, 127.0);
        (clamped as i8, clamped != q)
    }
}

pub type Ranges = BTreeMap<String, ActivationRange>;

/// Float forward pass that exposes the intermediate activations quantized
/// by the int8 path.
struct Trace {
    /// Input then each conv output (after ReLU).
    convs: Vec<Tensor>,
    /// Hidden states fed back into each LSTM direction.
    hidden: [Vec<f64>; 2],
    bilstm: Tensor,
    outputs: MslrOutputs,
}

fn conv_f64(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, padding: Padding) -> Result<Tensor> {
    let (t, din) = (x.rows(), x.cols());
    let (k, dout) = (w.shape()[0], w.shape()[2]);
    let Some((t_out, pad)) = padding.output_len(t, k, stride) else {
        return shape_err("conv1d", format!("valid convolution needs T >= K ({t} < {k})"));
    };
    let mut out = Vec::with_capacity(t_out * dout);
    for to in 0..t_out {
        let mut acc = b.data().to_vec();
        for kk in 0..k {
            let Some(src) = (to * stride + kk).checked_sub(pad).filter(|&s| s < t) else {
                continue;
            };
            let wk = &w.data()[kk * din * dout..(kk + 1) * din * dout];
            for (i, &xv) in x.row(src).iter().enumerate() {
                acc.iter_mut().zip(&wk[i * dout..(i + 1) * dout]).for_each(|(a, w)| *a += xv * w);
            }
        }
        out.extend(acc.into_iter().map(|v| v.max(0.0)));
    }
    Tensor::matrix(t_out, dout, out)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Applies the LSTM cell given gate pre-activations `z`.
fn lstm_cell(z: &[f64], c: &mut [f64], h: &mut [f64]) {
    let n = h.len();
    for j in 0..n {
        let (ig, fg, gg, og) = (sigmoid(z[j]), sigmoid(z[n + j]), z[2 * n + j].tanh(), sigmoid(z[3 * n + j]));
        c[j] = fg * c[j] + ig * gg;
        h[j] = og * c[j].tanh();
    }
}

fn log_softmax_rows(logits: Vec<f64>, rows: usize, cols: usize, temperature: f64) -> Result<Tensor> {
    let mut out = logits;
    for r in 0..rows {
        let row = &mut out[r * cols..(r + 1) * cols];
        row.iter_mut().for_each(|v| *v /= temperature);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.iter_mut().for_each(|v| *v -= lse);
    }
    Tensor::matrix(rows, cols, out)
}

fn linear_f64(x: &Tensor, w: &Tensor, b: &Tensor) -> Vec<f64> {
    let (rows, dout) = (x.rows(), w.cols());
    let mut out = Vec::with_capacity(rows * dout);
    for r in 0..rows {
        let mut acc = b.data().to_vec();
        for (i, &xv) in x.row(r).iter().enumerate() {
            acc.iter_mut().zip(&w.data()[i * dout..(i + 1) * dout]).for_each(|(a, w)| *a += xv * w);
        }
        out.extend(acc);
    }
    out
}

fn reference_trace(x: &Tensor, p: &ParamStore, cfg: &MslrConfig) -> Result<Trace> {
    let mut convs = vec![x.clone()];
    for (i, &s) in cfg.strides.iter().enumerate() {
        let next = conv_f64(convs.last().expect("non-empty"), p.get(&format!("conv{i}.w"))?, p.get(&format!("conv{i}.b"))?, s, cfg.padding)?;
        convs.push(next);
    }
    let feats = convs.last().expect("non-empty").clone();
    let (t, h) = (feats.rows(), cfg.hidden);
    let mut bilstm = vec![0.0; t * 2 * h];
    let mut hidden: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for (d, dir) in ["fwd", "bwd"].into_iter().enumerate() {
        let w_ih = p.get(&format!("lstm.{dir}.w_ih"))?;
        let w_hh = p.get(&format!("lstm.{dir}.w_hh"))?;
        let bias = p.get(&format!("lstm.{dir}.bias"))?;
        let zx = linear_f64(&feats, w_ih, bias);
        let (mut hs, mut cs) = (vec![0.0; h], vec![0.0; h]);
        let order: Vec<usize> = if d == 0 { (0..t).collect() } else { (0..t).rev().collect() };
        for ti in order {
            hidden[d].extend_from_slice(&hs);
            let mut z = zx[ti * 4 * h..(ti + 1) * 4 * h].to_vec();
            for (i, &hv) in hs.iter().enumerate() {
                z.iter_mut().zip(&w_hh.data()[i * 4 * h..(i + 1) * 4 * h]).for_each(|(a, w)| *a += hv * w);
            }
            lstm_cell(&z, &mut cs, &mut hs);
            bilstm[ti * 2 * h + d * h..ti * 2 * h + (d + 1) * h].copy_from_slice(&hs);
        }
    }
    let bilstm = Tensor::matrix(t, 2 * h, bilstm)?;
    let (cw, cb) = (p.get("cls.w")?, p.get("cls.b")?);
    let v = cfg.vocab_size;
    let outputs = MslrOutputs {
        conv_logp: log_softmax_rows(linear_f64(&feats, cw, cb), t, v, cfg.temperature)?,
        bilstm_logp: log_softmax_rows(linear_f64(&bilstm, cw, cb), t, v, cfg.temperature)?,
    };
    Ok(Trace {
        convs,
        hidden,
        bilstm,
        outputs,
    })
}

fn check_input(x: &Tensor, cfg: &MslrConfig) -> Result<()> {
    let errs = cfg.validate();
    if !errs.is_empty() {
        return invalid(errs.join("; "));
    }
    if x.rank() != 2 || x.cols() != cfg.input_dim {
        return shape_err("mslr", format!("expected [T x {}] input, got {:?}", cfg.input_dim, x.shape()));
    }
    cfg.output_len(x.rows()).map(|_| ())
}

/// Plain float forward pass with no autodiff bookkeeping; the baseline the
/// int8 path is compared and benchmarked against.
pub fn reference_forward(x: &Tensor, params: &ParamStore, cfg: &MslrConfig) -> Result<MslrOutputs> {
    check_input(x, cfg)?;
    Ok(reference_trace(x, params, cfg)?.outputs)
}

/// Activation names in forward order.
fn activation_names(cfg: &MslrConfig) -> Vec<String> {
    let mut names = vec!["input".to_string()];
    names.extend((0..cfg.channels.len()).map(|i| format!("conv{i}")));
    names.extend(["lstm.fwd.h".into(), "lstm.bwd.h".into(), "bilstm".into()]);
    names
}

/// Min/max of every quantized activation over the calibration inputs.
pub fn calibrate(params: &ParamStore, cfg: &MslrConfig, inputs: &[Tensor]) -> Result<Ranges> {
    if inputs.is_empty() {
        return invalid("calibration needs at least one input");
    }
    let names = activation_names(cfg);
    let mut ranges: Ranges = names.iter().map(|n| (n.clone(), ActivationRange::empty())).collect();
    for x in inputs {
        check_input(x, cfg)?;
        let tr = reference_trace(x, params, cfg)?;
        let mut tensors: Vec<&[f64]> = tr.convs.iter().map(|t| t.data()).collect();
        tensors.extend([&tr.hidden[0][..], &tr.hidden[1][..], tr.bilstm.data()]);
        for (name, data) in names.iter().zip(tensors) {
            ranges.get_mut(name).expect("named above").observe(data);
        }
    }
    Ok(ranges)
}

/// Int8 weights widened to i16 and stored output-major (each `[in x out]`
/// block transposed) so every output is a contiguous dot product.
#[derive(Clone, Debug)]
struct IntWeight {
    q: QuantizedTensor,
    wide: Vec<i16>,
}

impl IntWeight {
    fn new(t: &Tensor) -> Self {
        Self::from_quantized(QuantizedTensor::symmetric(t))
    }

    fn from_quantized(q: QuantizedTensor) -> Self {
        let r = q.shape.len();
        let (din, dout) = (q.shape[r - 2], q.shape[r - 1]);
        let mut wide = Vec::with_capacity(q.values.len());
        for block in q.values.chunks(din * dout) {
            for o in 0..dout {
                wide.extend((0..din).map(|i| i16::from(block[i * dout + o])));
            }
        }
        Self { q, wide }
    }
}

#[derive(Clone, Debug)]
pub struct QuantizedMslr {
    pub config: MslrConfig,
    weights: BTreeMap<String, IntWeight>,
    biases: BTreeMap<String, Vec<f32>>,
    activations: BTreeMap<String, QParams>,
}

/// Count of values clamped while requantizing activations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SaturationStats {
    pub saturated: usize,
    pub total: usize,
}

fn weight_names(cfg: &MslrConfig) -> Vec<String> {
    let mut names: Vec<String> = (0..cfg.channels.len()).map(|i| format!("conv{i}.w")).collect();
    for dir in ["fwd", "bwd"] {
        names.push(format!("lstm.{dir}.w_ih"));
        names.push(format!("lstm.{dir}.w_hh"));
    }
    names.push("cls.w".into());
    names
}

fn bias_names(cfg: &MslrConfig) -> Vec<String> {
    let mut names: Vec<String> = (0..cfg.channels.len()).map(|i| format!("conv{i}.b")).collect();
    names.extend(["lstm.fwd.bias".into(), "lstm.bwd.bias".into(), "cls.b".into()]);
    names
}

struct Quantizer {
    stats: SaturationStats,
}

impl Quantizer {
    /// Quantizes `values` and returns them zero-point corrected.
    fn centered(&mut self, values: &[f64], q: QParams) -> Vec<i16> {
        self.stats.total += values.len();
        values
            .iter()
            .map(|&v| {
                let (qv, sat) = q.quantize(v);
                self.stats.saturated += usize::from(sat);
                (i32::from(qv) - q.zero_point) as i16
            })
            .collect()
    }
}

/// `out[o] += Σ_i x[i] * w[o][i]` with 32-bit accumulation; `w` is
/// output-major. With |x| ≤ 255 and |w| ≤ 127 the sum cannot overflow for
/// any realistic width, so wrapping ops are exact and keep the loop
/// vectorizable when overflow checks are on.
fn int_gemv(x: &[i16], w: &[i16], out: &mut [i32]) {
    let n = x.len();
    for (o, a) in out.iter_mut().enumerate() {
        let dot = x
            .iter()
            .zip(&w[o * n..(o + 1) * n])
            .fold(0i32, |s, (&x, &w)| s.wrapping_add(i32::from(x).wrapping_mul(i32::from(w))));
        *a = a.wrapping_add(dot);
    }
}

impl QuantizedMslr {
    pub fn new(params: &ParamStore, cfg: &MslrConfig, ranges: &Ranges) -> Result<Self> {
        let errs = cfg.validate();
        if !errs.is_empty() {
            return invalid(errs.join("; "));
        }
        let mut activations = BTreeMap::new();
        for name in activation_names(cfg) {
            let r = ranges
                .get(&name)
                .ok_or_else(|| Error::InvalidArgument(format!("no calibrated range for {name}")))?;
            activations.insert(name, QParams::from_range(*r));
        }
        let weights = weight_names(cfg)
            .into_iter()
            .map(|n| Ok((n.clone(), IntWeight::new(params.get(&n)?))))
            .collect::<Result<_>>()?;
        let biases = bias_names(cfg)
            .into_iter()
            .map(|n| Ok((n.clone(), params.get(&n)?.data().iter().map(|&v| v as f32).collect())))
            .collect::<Result<_>>()?;
        Ok(Self {
            config: cfg.clone(),
            weights,
            biases,
            activations,
        })
    }

    fn w(&self, name: &str) -> &IntWeight {
        &self.weights[name]
    }

    fn b(&self, name: &str) -> &[f32] {
        &self.biases[name]
    }

    fn act(&self, name: &str) -> QParams {
        self.activations[name]
    }

    pub fn weight(&self, name: &str) -> Option<&QuantizedTensor> {
        self.weights.get(name).map(|w| &w.q)
    }

    pub fn activation(&self, name: &str) -> Option<QParams> {
        self.activations.get(name).copied()
    }

    /// Integer forward pass with float requantization between layers.
    pub fn forward(&self, x: &Tensor) -> Result<(MslrOutputs, SaturationStats)> {
        let cfg = &self.config;
        check_input(x, cfg)?;
        let mut qz = Quantizer {
            stats: SaturationStats::default(),
        };
        let (mut t, mut din) = (x.rows(), x.cols());
        let mut q_in = self.act("input");
        let mut cur = qz.centered(x.data(), q_in);
        for (i, &stride) in cfg.strides.iter().enumerate() {
            let w = self.w(&format!("conv{i}.w"));
            let b = self.b(&format!("conv{i}.b"));
            let (k, dout) = (w.q.shape[0], w.q.shape[2]);
            let (t_out, pad) = cfg
                .padding
                .output_len(t, k, stride)
                .ok_or_else(|| Error::InvalidArgument("input shorter than the kernel".into()))?;
            let m = q_in.scale * w.q.scale;
            let mut real = Vec::with_capacity(t_out * dout);
            let mut acc = vec![0i32; dout];
            for to in 0..t_out {
                acc.iter_mut().for_each(|a| *a = 0);
                for kk in 0..k {
                    let Some(src) = (to * stride + kk).checked_sub(pad).filter(|&s| s < t) else {
                        continue;
                    };
                    let wk = &w.wide[kk * din * dout..(kk + 1) * din * dout];
                    int_gemv(&cur[src * din..(src + 1) * din], wk, &mut acc);
                }
                real.extend(acc.iter().zip(b).map(|(&a, &b)| (f64::from(a) * m + f64::from(b)).max(0.0)));
            }
            let q_out = self.act(&format!("conv{i}"));
            cur = qz.centered(&real, q_out);
            (t, din, q_in) = (t_out, dout, q_out);
        }
        let h = cfg.hidden;
        let feats_q = cur;
        let mut bilstm = vec![0.0; t * 2 * h];
        for (d, dir) in ["fwd", "bwd"].into_iter().enumerate() {
            let w_ih = self.w(&format!("lstm.{dir}.w_ih"));
            let w_hh = self.w(&format!("lstm.{dir}.w_hh"));
            let bias = self.b(&format!("lstm.{dir}.bias"));
            let q_h = self.act(&format!("lstm.{dir}.h"));
            let (mx, mh) = (q_in.scale * w_ih.q.scale, q_h.scale * w_hh.q.scale);
            let (mut hs, mut cs) = (vec![0.0; h], vec![0.0; h]);
            let mut ax = vec![0i32; 4 * h];
            let mut ah = vec![0i32; 4 * h];
            let mut z = vec![0.0; 4 * h];
            let order: Vec<usize> = if d == 0 { (0..t).collect() } else { (0..t).rev().collect() };
            for ti in order {
                ax.iter_mut().for_each(|a| *a = 0);
                ah.iter_mut().for_each(|a| *a = 0);
                int_gemv(&feats_q[ti * din..(ti + 1) * din], &w_ih.wide, &mut ax);
                int_gemv(&qz.centered(&hs, q_h), &w_hh.wide, &mut ah);
                for j in 0..4 * h {
                    z[j] = f64::from(ax[j]) * mx + f64::from(ah[j]) * mh + f64::from(bias[j]);
                }
                lstm_cell(&z, &mut cs, &mut hs);
                bilstm[ti * 2 * h + d * h..ti * 2 * h + (d + 1) * h].copy_from_slice(&hs);
            }
        }
        let q_b = self.act("bilstm");
        let bilstm_q = qz.centered(&bilstm, q_b);
        let cw = self.w("cls.w");
        let cb = self.b("cls.b");
        let v = cfg.vocab_size;
        let head = |xq: &[i16], m: f64| {
            let mut out = Vec::with_capacity(t * v);
            let mut acc = vec![0i32; v];
            for r in 0..t {
                acc.iter_mut().for_each(|a| *a = 0);
                int_gemv(&xq[r * din..(r + 1) * din], &cw.wide, &mut acc);
                out.extend(acc.iter().zip(cb).map(|(&a, &b)| f64::from(a) * m + f64::from(b)));
            }
            out
        };
        let conv_logits = head(&feats_q, q_in.scale * cw.q.scale);
        let lstm_logits = head(&bilstm_q, q_b.scale * cw.q.scale);
        Ok((
            MslrOutputs {
                conv_logp: log_softmax_rows(conv_logits, t, v, cfg.temperature)?,
                bilstm_logp: log_softmax_rows(lstm_logits, t, v, cfg.temperature)?,
            },
            qz.stats,
        ))
    }

    /// Packed artifact: i8 weight records, f32 biases, scale/zero-point
    /// records for activations and the model config as JSON.
    pub fn to_archive(&self) -> Result<Archive> {
        let mut a = Archive::new();
        let cfg = serde_json::to_vec(&self.config).map_err(|e| Error::Format(e.to_string()))?;
        a.push_bytes("meta.mslr_config", cfg)?;
        for (name, w) in &self.weights {
            a.push(
                name.clone(),
                w.q.shape.clone(),
                Payload::I8 {
                    values: w.q.values.clone(),
                    scale: w.q.scale,
                    zero_point: w.q.zero_point,
                },
            )?;
        }
        for (name, b) in &self.biases {
            a.push(name.clone(), vec![b.len()], Payload::F32(b.clone()))?;
        }
        for (name, q) in &self.activations {
            a.push(
                format!("act.{name}"),
                vec![0],
                Payload::I8 {
                    values: Vec::new(),
                    scale: q.scale,
                    zero_point: q.zero_point,
                },
            )?;
        }
        Ok(a)
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        let cfg_bytes = match a.get("meta.mslr_config").map(|e| &e.payload) {
            Some(Payload::Bytes(b)) => b,
            _ => return Err(Error::Format("quantized archive lacks its model config".into())),
        };
        let config: MslrConfig = serde_json::from_slice(cfg_bytes).map_err(|e| Error::Format(e.to_string()))?;
        let mut weights = BTreeMap::new();
        let mut biases = BTreeMap::new();
        let mut activations = BTreeMap::new();
        for e in &a.entries {
            match (&e.payload, e.name.strip_prefix("act.")) {
                (Payload::I8 { scale, zero_point, .. }, Some(act)) => {
                    activations.insert(
                        act.to_string(),
                        QParams {
                            scale: *scale,
                            zero_point: *zero_point,
                        },
                    );
                }
                (Payload::I8 { values, scale, zero_point }, None) => {
                    let q = QuantizedTensor {
                        values: values.clone(),
                        scale: *scale,
                        zero_point: *zero_point,
                        shape: e.shape.clone(),
                    };
                    weights.insert(e.name.clone(), IntWeight::from_quantized(q));
                }
                (Payload::F32(v), None) => {
                    biases.insert(e.name.clone(), v.clone());
                }
                _ => {}
            }
        }
        let missing: Vec<String> = weight_names(&config)
            .into_iter()
            .filter(|n| !weights.contains_key(n))
            .chain(bias_names(&config).into_iter().filter(|n| !biases.contains_key(n)))
            .chain(activation_names(&config).into_iter().filter(|n| !activations.contains_key(n)))
            .collect();
        if !missing.is_empty() {
            return Err(Error::Format(format!("quantized archive is missing {}", missing.join(", "))));
        }
        Ok(Self {
            config,
            weights,
            biases,
            activations,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_archive()?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_archive(&Archive::load(path)?)
    }

    pub fn packed_size(&self) -> Result<usize> {
        Ok(self.to_archive()?.to_bytes().len())
    }
}

/// Byte size of the single-precision checkpoint of `params`.
pub fn f32_checkpoint_size(params: &ParamStore) -> Result<usize> {
    Ok(params.to_f32_archive()?.to_bytes().len())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchReport {
    /// Input frames processed per second.
    pub fp32_fps: f64,
    pub int8_fps: f64,
    pub sequences: usize,
}

impl BenchReport {
    pub fn speedup(&self) -> f64 {
        self.int8_fps / self.fp32_fps
    }
}

/// Times `repeats` passes of the float reference and the int8 path over
/// `inputs`, single-threaded, alternating to share cache and clock effects.
pub fn bench(
    params: &ParamStore,
    q: &QuantizedMslr,
    inputs: &[Tensor],
    repeats: usize,
) -> Result<BenchReport> {
    if inputs.is_empty() || repeats == 0 {
        return invalid("bench needs inputs and at least one repeat");
    }
    let frames: usize = inputs.iter().map(Tensor::rows).sum::<usize>() * repeats;
    let (mut t_f, mut t_q) = (0.0, 0.0);
    for _ in 0..repeats {
        for x in inputs {
            let start = std::time::Instant::now();
            std::hint::black_box(reference_forward(x, params, &q.config)?);
            t_f += start.elapsed().as_secs_f64();
            let start = std::time::Instant::now();
            std::hint::black_box(q.forward(x)?);
            t_q += start.elapsed().as_secs_f64();
        }
    }
    Ok(BenchReport {
        fp32_fps: frames as f64 / t_f,
        int8_fps: frames as f64 / t_q,
        sequences: inputs.len() * repeats,
    })
}

/// Fraction of frames whose argmax (BiLSTM head) agrees between two outputs.
pub fn frame_agreement(a: &MslrOutputs, b: &MslrOutputs) -> f64 {
    let (x, y) = (&a.bilstm_logp, &b.bilstm_logp);
    let argmax = |t: &Tensor, r: usize| {
        t.row(r)
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
            .0
    };
    let same = (0..x.rows()).filter(|&r| argmax(x, r) == argmax(y, r)).count();
    same as f64 / x.rows() as f64
}
