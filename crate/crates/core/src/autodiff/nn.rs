use super::kernels::{gemm_a_bt_acc, gemm_acc, gemm_at_b_acc, sigmoid};
use super::{Graph, Var};
use crate::error::{invalid, shape_err, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Same,
    Valid,
}

impl Padding {
    /// Output length and left padding for a temporal convolution.
    pub fn output_len(self, t: usize, kernel: usize, stride: usize) -> Option<(usize, usize)> {
        match self {
            Padding::Same => Some((t.div_ceil(stride), kernel / 2)),
            Padding::Valid if t >= kernel => Some(((t - kernel) / stride + 1, 0)),
            Padding::Valid => None,
        }
    }
}

/// Gate weights of one LSTM direction; gates are packed as `[i, f, g, o]`.
#[derive(Clone, Copy, Debug)]
pub struct LstmWeights {
    /// `[D × 4H]`
    pub w_ih: Var,
    /// `[H × 4H]`
    pub w_hh: Var,
    /// `[4H]`
    pub bias: Var,
}

struct LstmStep {
    gates: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
}

impl Graph {
    /// Temporal convolution of `x [T × Din]` with `w [K × Din × Dout]`.
    pub fn conv1d(&self, x: Var, w: Var, b: Var, stride: usize, padding: Padding) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if xv.rank() != 2 || xv.is_empty() {
            return shape_err("conv1d", format!("input must be a non-empty [T x D] matrix, got {:?}", xv.shape()));
        }
        if wv.rank() != 3 {
            return shape_err("conv1d", format!("kernel must be [K x Din x Dout], got {:?}", wv.shape()));
        }
        let (t, din) = (xv.shape()[0], xv.shape()[1]);
        let (k, win, dout) = (wv.shape()[0], wv.shape()[1], wv.shape()[2]);
        if k % 2 == 0 {
            return invalid(format!("conv1d kernel size must be odd, got {k}"));
        }
        if stride == 0 {
            return invalid("conv1d stride must be at least 1");
        }
        if win != din || bv.len() != dout {
            return shape_err("conv1d", format!("input width {din}, kernel {:?}, bias {}", wv.shape(), bv.len()));
        }
        let Some((t_out, pad)) = padding.output_len(t, k, stride) else {
            return shape_err("conv1d", format!("valid convolution needs T >= K ({t} < {k})"));
        };
        let tap = move |to: usize, kk: usize| -> Option<usize> {
            (to * stride + kk).checked_sub(pad).filter(|&s| s < t)
        };
        let mut out = Vec::with_capacity(t_out * dout);
        for to in 0..t_out {
            out.extend_from_slice(bv.data());
            let orow = &mut out[to * dout..];
            for kk in 0..k {
                if let Some(src) = tap(to, kk) {
                    let wk = &wv.data()[kk * din * dout..(kk + 1) * din * dout];
                    gemm_acc(xv.row(src), wk, orow, 1, din, dout);
                }
            }
        }
        self.push(
            "conv1d",
            Tensor::matrix(t_out, dout, out)?,
            Some(Box::new(move |g, grads| {
                let mut gx = vec![0.0; t * din];
                let mut gw = vec![0.0; k * din * dout];
                let mut gb = vec![0.0; dout];
                for to in 0..t_out {
                    let grow = &g[to * dout..(to + 1) * dout];
                    gb.iter_mut().zip(grow).for_each(|(a, b)| *a += b);
                    for kk in 0..k {
                        if let Some(src) = tap(to, kk) {
                            let off = kk * din * dout;
                            let wk = &wv.data()[off..off + din * dout];
                            gemm_a_bt_acc(grow, wk, &mut gx[src * din..(src + 1) * din], 1, din, dout);
                            gemm_at_b_acc(xv.row(src), grow, &mut gw[off..off + din * dout], 1, din, dout);
                        }
                    }
                }
                grads.accumulate(x, &gx);
                grads.accumulate(w, &gw);
                grads.accumulate(b, &gb);
            })),
        )
    }

    /// One LSTM direction over `x [T × D]`; returns hidden states `[T × H]`
    /// aligned with the input time axis. With `reverse` the recurrence runs
    /// from the last frame to the first.
    pub fn lstm(&self, x: Var, weights: LstmWeights, reverse: bool) -> Result<Var> {
        let xv = self.value(x);
        let (wi, wh, bv) = (self.value(weights.w_ih), self.value(weights.w_hh), self.value(weights.bias));
        if xv.rank() != 2 || xv.shape()[0] == 0 {
            return shape_err("lstm", format!("input must be [T x D] with T >= 1, got {:?}", xv.shape()));
        }
        let (t, d) = (xv.shape()[0], xv.shape()[1]);
        if wh.rank() != 2 || wh.shape()[1] != 4 * wh.shape()[0] {
            return shape_err("lstm", format!("recurrent weights must be [H x 4H], got {:?}", wh.shape()));
        }
        let h = wh.shape()[0];
        if wi.shape() != [d, 4 * h] || bv.len() != 4 * h {
            return shape_err("lstm", format!("input weights {:?} / bias {} for D={d}, H={h}", wi.shape(), bv.len()));
        }
        let order: Vec<usize> = if reverse { (0..t).rev().collect() } else { (0..t).collect() };
        let mut out = vec![0.0; t * h];
        let mut steps = Vec::with_capacity(t);
        let mut h_prev = vec![0.0; h];
        let mut c_prev = vec![0.0; h];
        for &ti in &order {
            let mut z = bv.data().to_vec();
            gemm_acc(xv.row(ti), wi.data(), &mut z, 1, d, 4 * h);
            gemm_acc(&h_prev, wh.data(), &mut z, 1, h, 4 * h);
            let mut gates = vec![0.0; 4 * h];
            let mut c = vec![0.0; h];
            let mut tanh_c = vec![0.0; h];
            let mut h_new = vec![0.0; h];
            for j in 0..h {
                let ig = sigmoid(z[j]);
                let fg = sigmoid(z[h + j]);
                let gg = z[2 * h + j].tanh();
                let og = sigmoid(z[3 * h + j]);
                gates[j] = ig;
                gates[h + j] = fg;
                gates[2 * h + j] = gg;
                gates[3 * h + j] = og;
                c[j] = fg * c_prev[j] + ig * gg;
                tanh_c[j] = c[j].tanh();
                h_new[j] = og * tanh_c[j];
            }
            out[ti * h..(ti + 1) * h].copy_from_slice(&h_new);
            steps.push(LstmStep {
                gates,
                c: c.clone(),
                tanh_c,
                h_prev: std::mem::replace(&mut h_prev, h_new),
                c_prev: std::mem::replace(&mut c_prev, c),
            });
        }
        let LstmWeights { w_ih, w_hh, bias } = weights;
        self.push(
            "lstm",
            Tensor::matrix(t, h, out)?,
            Some(Box::new(move |g, grads| {
                let mut gx = vec![0.0; t * d];
                let mut gwi = vec![0.0; d * 4 * h];
                let mut gwh = vec![0.0; h * 4 * h];
                let mut gb = vec![0.0; 4 * h];
                let mut dh_next = vec![0.0; h];
                let mut dc_next = vec![0.0; h];
                let mut dz = vec![0.0; 4 * h];
                for (step, &ti) in steps.iter().zip(&order).rev() {
                    let gs = &step.gates;
                    for j in 0..h {
                        let dh = g[ti * h + j] + dh_next[j];
                        let (ig, fg, gg, og) = (gs[j], gs[h + j], gs[2 * h + j], gs[3 * h + j]);
                        let tc = step.tanh_c[j];
                        let dc = dh * og * (1.0 - tc * tc) + dc_next[j];
                        dz[j] = dc * gg * ig * (1.0 - ig);
                        dz[h + j] = dc * step.c_prev[j] * fg * (1.0 - fg);
                        dz[2 * h + j] = dc * ig * (1.0 - gg * gg);
                        dz[3 * h + j] = dh * tc * og * (1.0 - og);
                        dc_next[j] = dc * fg;
                    }
                    debug_assert_eq!(step.c.len(), h);
                    gb.iter_mut().zip(&dz).for_each(|(a, b)| *a += b);
                    gemm_a_bt_acc(&dz, wi.data(), &mut gx[ti * d..(ti + 1) * d], 1, d, 4 * h);
                    gemm_at_b_acc(xv.row(ti), &dz, &mut gwi, 1, d, 4 * h);
                    gemm_at_b_acc(&step.h_prev, &dz, &mut gwh, 1, h, 4 * h);
                    dh_next.iter_mut().for_each(|v| *v = 0.0);
                    gemm_a_bt_acc(&dz, wh.data(), &mut dh_next, 1, h, 4 * h);
                }
                grads.accumulate(x, &gx);
                grads.accumulate(w_ih, &gwi);
                grads.accumulate(w_hh, &gwh);
                grads.accumulate(bias, &gb);
            })),
        )
    }

    /// Bidirectional LSTM: per frame, forward hidden state followed by the
    /// backward hidden state, giving `[T × 2H]`.
    pub fn bilstm(&self, x: Var, forward: LstmWeights, backward: LstmWeights) -> Result<Var> {
        let hf = self.lstm(x, forward, false)?;
        let hb = self.lstm(x, backward, true)?;
        self.concat_cols(hf, hb)
    }

    /// Layer normalization over the feature axis.
    pub fn layernorm(&self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        if xv.rank() != 2 {
            return shape_err("layernorm", format!("expected a matrix, got {:?}", xv.shape()));
        }
        let (rows, cols) = (xv.shape()[0], xv.shape()[1]);
        if gv.len() != cols || bv.len() != cols {
            return shape_err("layernorm", format!("gain {} / bias {} for width {cols}", gv.len(), bv.len()));
        }
        let mut xhat = vec![0.0; rows * cols];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for c in 0..cols {
                let xh = (row[c] - mean) * is;
                xhat[r * cols + c] = xh;
                out[r * cols + c] = xh * gv.data()[c] + bv.data()[c];
            }
        }
        self.push(
            "layernorm",
            Tensor::matrix(rows, cols, out)?,
            Some(Box::new(move |g, grads| {
                let mut gx = vec![0.0; rows * cols];
                let mut gg = vec![0.0; cols];
                let mut gb = vec![0.0; cols];
                for r in 0..rows {
                    let gr = &g[r * cols..(r + 1) * cols];
                    let xh = &xhat[r * cols..(r + 1) * cols];
                    let mut mean_d = 0.0;
                    let mut mean_dx = 0.0;
                    for c in 0..cols {
                        let d = gr[c] * gv.data()[c];
                        mean_d += d;
                        mean_dx += d * xh[c];
                        gg[c] += gr[c] * xh[c];
                        gb[c] += gr[c];
                    }
                    mean_d /= cols as f64;
                    mean_dx /= cols as f64;
                    for c in 0..cols {
                        let d = gr[c] * gv.data()[c];
                        gx[r * cols + c] = inv_std[r] * (d - mean_d - xh[c] * mean_dx);
                    }
                }
                grads.accumulate(x, &gx);
                grads.accumulate(gamma, &gg);
                grads.accumulate(beta, &gb);
            })),
        )
    }

    /// Multi-head scaled dot-product attention over already-projected
    /// queries `[Tq × d]`, keys `[Tk × d]` and values `[Tk × dv]`. The causal
    /// mask requires `Tq == Tk` and hides keys after each query position.
    pub fn attention(&self, q: Var, k: Var, v: Var, heads: usize, causal: bool) -> Result<Var> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        if qv.rank() != 2 || kv.rank() != 2 || vv.rank() != 2 {
            return shape_err("attention", "q, k, v must be matrices");
        }
        let (tq, d) = (qv.shape()[0], qv.shape()[1]);
        let (tk, dk) = (kv.shape()[0], kv.shape()[1]);
        let (tv, dv) = (vv.shape()[0], vv.shape()[1]);
        if d != dk || tk != tv || tk == 0 || tq == 0 {
            return shape_err("attention", format!("q {:?}, k {:?}, v {:?}", qv.shape(), kv.shape(), vv.shape()));
        }
        if heads == 0 || d % heads != 0 || dv % heads != 0 {
            return shape_err("attention", format!("{heads} heads do not divide widths {d}/{dv}"));
        }
        if causal && tq != tk {
            return shape_err("attention", format!("causal mask needs square scores, got {tq}x{tk}"));
        }
        let (dh, dvh) = (d / heads, dv / heads);
        let scale = 1.0 / (dh as f64).sqrt();
        let visible = move |i: usize, j: usize| !causal || j <= i;
        // probs[h][i][j]
        let mut probs = vec![0.0; heads * tq * tk];
        let mut out = vec![0.0; tq * dv];
        for hd in 0..heads {
            for i in 0..tq {
                let qi = &qv.row(i)[hd * dh..(hd + 1) * dh];
                let p = &mut probs[(hd * tq + i) * tk..(hd * tq + i + 1) * tk];
                let mut max = f64::NEG_INFINITY;
                for j in 0..tk {
                    if visible(i, j) {
                        let kj = &kv.row(j)[hd * dh..(hd + 1) * dh];
                        p[j] = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                        max = max.max(p[j]);
                    }
                }
                let mut total = 0.0;
                for j in 0..tk {
                    p[j] = if visible(i, j) { (p[j] - max).exp() } else { 0.0 };
                    total += p[j];
                }
                let orow = &mut out[i * dv + hd * dvh..i * dv + (hd + 1) * dvh];
                for j in 0..tk {
                    p[j] /= total;
                    let vj = &vv.row(j)[hd * dvh..(hd + 1) * dvh];
                    orow.iter_mut().zip(vj).for_each(|(o, x)| *o += p[j] * x);
                }
            }
        }
        self.push(
            "attention",
            Tensor::matrix(tq, dv, out)?,
            Some(Box::new(move |g, grads| {
                let mut gq = vec![0.0; tq * d];
                let mut gk = vec![0.0; tk * d];
                let mut gv = vec![0.0; tk * dv];
                let mut dp = vec![0.0; tk];
                for hd in 0..heads {
                    for i in 0..tq {
                        let p = &probs[(hd * tq + i) * tk..(hd * tq + i + 1) * tk];
                        let go = &g[i * dv + hd * dvh..i * dv + (hd + 1) * dvh];
                        let mut dot = 0.0;
                        for j in 0..tk {
                            let vj = &vv.row(j)[hd * dvh..(hd + 1) * dvh];
                            dp[j] = go.iter().zip(vj).map(|(a, b)| a * b).sum();
                            dot += dp[j] * p[j];
                            let gvj = &mut gv[j * dv + hd * dvh..j * dv + (hd + 1) * dvh];
                            gvj.iter_mut().zip(go).for_each(|(o, x)| *o += p[j] * x);
                        }
                        let qi = &qv.row(i)[hd * dh..(hd + 1) * dh];
                        for j in 0..tk {
                            let ds = p[j] * (dp[j] - dot) * scale;
                            if ds == 0.0 {
                                continue;
                            }
                            let kj = &kv.row(j)[hd * dh..(hd + 1) * dh];
                            let gqi = &mut gq[i * d + hd * dh..i * d + (hd + 1) * dh];
                            gqi.iter_mut().zip(kj).for_each(|(o, x)| *o += ds * x);
                            let gkj = &mut gk[j * d + hd * dh..j * d + (hd + 1) * dh];
                            gkj.iter_mut().zip(qi).for_each(|(o, x)| *o += ds * x);
                        }
                    }
                }
                grads.accumulate(q, &gq);
                grads.accumulate(k, &gk);
                grads.accumulate(v, &gv);
            })),
        )
    }
}
