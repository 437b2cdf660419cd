use std::rc::Rc;

use super::kernels::{gemm_a_bt_acc, gemm_acc, gemm_at_b_acc, log_sum_exp};
use super::{Graph, Grads, Var};
use crate::error::{invalid, shape_err, Result};
use crate::tensor::Tensor;

fn require_matrix(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    if t.rank() != 2 {
        return shape_err(op, format!("expected a matrix, got shape {:?}", t.shape()));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

impl Graph {
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = require_matrix("matmul", &av)?;
        let (k2, n) = require_matrix("matmul", &bv)?;
        if k != k2 {
            return shape_err("matmul", format!("[{m}x{k}] x [{k2}x{n}]"));
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(av.data(), bv.data(), &mut out, m, k, n);
        self.push(
            "matmul",
            Tensor::matrix(m, n, out)?,
            Some(Box::new(move |g, grads| {
                grads.accumulate_with(a, m * k, |ga| gemm_a_bt_acc(g, bv.data(), ga, m, k, n));
                grads.accumulate_with(b, k * n, |gb| gemm_at_b_acc(av.data(), g, gb, m, k, n));
            })),
        )
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return shape_err("add", format!("{:?} + {:?}", av.shape(), bv.shape()));
        }
        let out: Vec<f64> = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        self.push(
            "add",
            Tensor::new(av.shape().to_vec(), out)?,
            Some(Box::new(move |g, grads| {
                grads.accumulate(a, g);
                grads.accumulate(b, g);
            })),
        )
    }

    /// Adds a bias vector to every row of a matrix.
    pub fn add_row(&self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let (rows, cols) = require_matrix("add_row", &xv)?;
        if bv.len() != cols {
            return shape_err("add_row", format!("bias of {} for width {cols}", bv.len()));
        }
        let mut out = xv.data().to_vec();
        for row in out.chunks_mut(cols) {
            row.iter_mut().zip(bv.data()).for_each(|(o, b)| *o += b);
        }
        self.push(
            "add_row",
            Tensor::matrix(rows, cols, out)?,
            Some(Box::new(move |g, grads| {
                grads.accumulate(x, g);
                grads.accumulate_with(bias, cols, |gb| {
                    for row in g.chunks(cols) {
                        gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    }
                });
            })),
        )
    }

    /// `x · w + b` for a matrix `x`.
    pub fn linear(&self, x: Var, w: Var, b: Var) -> Result<Var> {
        let h = self.matmul(x, w)?;
        self.add_row(h, b)
    }

    pub fn scale(&self, x: Var, s: f64) -> Result<Var> {
        let xv = self.value(x);
        self.push(
            "scale",
            xv.map(|v| v * s),
            Some(Box::new(move |g, grads| {
                let scaled: Vec<f64> = g.iter().map(|v| v * s).collect();
                grads.accumulate(x, &scaled);
            })),
        )
    }

    pub fn relu(&self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        self.push(
            "relu",
            xv.map(|v| v.max(0.0)),
            Some(Box::new(move |g, grads| {
                grads.accumulate_with(x, g.len(), |gx| {
                    for ((o, &gi), &xi) in gx.iter_mut().zip(g).zip(xv.data()) {
                        if xi > 0.0 {
                            *o += gi;
                        }
                    }
                });
            })),
        )
    }

    pub fn exp(&self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let out = Rc::new(xv.map(f64::exp));
        let saved = Rc::clone(&out);
        self.push(
            "exp",
            (*out).clone(),
            Some(Box::new(move |g, grads| {
                grads.accumulate_with(x, g.len(), |gx| {
                    for ((o, &gi), &yi) in gx.iter_mut().zip(g).zip(saved.data()) {
                        *o += gi * yi;
                    }
                });
            })),
        )
    }

    /// Concatenates two matrices along the feature axis.
    pub fn concat_cols(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (ra, ca) = require_matrix("concat_cols", &av)?;
        let (rb, cb) = require_matrix("concat_cols", &bv)?;
        if ra != rb {
            return shape_err("concat_cols", format!("{ra} rows vs {rb} rows"));
        }
        let w = ca + cb;
        let mut out = Vec::with_capacity(ra * w);
        for r in 0..ra {
            out.extend_from_slice(av.row(r));
            out.extend_from_slice(bv.row(r));
        }
        self.push(
            "concat_cols",
            Tensor::matrix(ra, w, out)?,
            Some(Box::new(move |g, grads| {
                grads.accumulate_with(a, ra * ca, |ga| {
                    for r in 0..ra {
                        ga[r * ca..(r + 1) * ca].iter_mut().zip(&g[r * w..r * w + ca]).for_each(|(o, v)| *o += v);
                    }
                });
                grads.accumulate_with(b, ra * cb, |gb| {
                    for r in 0..ra {
                        gb[r * cb..(r + 1) * cb].iter_mut().zip(&g[r * w + ca..(r + 1) * w]).for_each(|(o, v)| *o += v);
                    }
                });
            })),
        )
    }

    /// Reverses the row (time) order of a matrix.
    pub fn reverse_rows(&self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = require_matrix("reverse_rows", &xv)?;
        let out: Vec<f64> = (0..rows).rev().flat_map(|r| xv.row(r).to_vec()).collect();
        self.push(
            "reverse_rows",
            Tensor::matrix(rows, cols, out)?,
            Some(Box::new(move |g, grads| {
                grads.accumulate_with(x, rows * cols, |gx| {
                    for r in 0..rows {
                        let src = &g[(rows - 1 - r) * cols..(rows - r) * cols];
                        gx[r * cols..(r + 1) * cols].iter_mut().zip(src).for_each(|(o, v)| *o += v);
                    }
                });
            })),
        )
    }

    pub fn sum(&self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let n = xv.len();
        self.push(
            "sum",
            Tensor::scalar(xv.sum()),
            Some(Box::new(move |g, grads| {
                let g0 = g[0];
                grads.accumulate_with(x, n, |gx| gx.iter_mut().for_each(|o| *o += g0));
            })),
        )
    }

    pub fn mean(&self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        if n == 0 {
            return shape_err("mean", "empty tensor");
        }
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Sum of scalar nodes.
    pub fn add_scalars(&self, xs: &[Var]) -> Result<Var> {
        let mut total = 0.0;
        for &x in xs {
            let v = self.value(x);
            if v.len() != 1 {
                return shape_err("add_scalars", format!("non-scalar {:?}", v.shape()));
            }
            total += v.data()[0];
        }
        let parents = xs.to_vec();
        self.push(
            "add_scalars",
            Tensor::scalar(total),
            Some(Box::new(move |g, grads| {
                for &p in &parents {
                    grads.accumulate(p, g);
                }
            })),
        )
    }

    /// Row-wise `log softmax(x / temperature)`, computed with max subtraction.
    pub fn log_softmax(&self, x: Var, temperature: f64) -> Result<Var> {
        if !(temperature > 0.0) || !temperature.is_finite() {
            return invalid(format!("temperature must be positive, got {temperature}"));
        }
        let xv = self.value(x);
        let (rows, cols) = require_matrix("log_softmax", &xv)?;
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let scaled: Vec<f64> = xv.row(r).iter().map(|v| v / temperature).collect();
            let lse = log_sum_exp(&scaled);
            out.extend(scaled.iter().map(|v| v - lse));
        }
        let out = Rc::new(Tensor::matrix(rows, cols, out)?);
        let saved = Rc::clone(&out);
        self.push(
            "log_softmax",
            (*out).clone(),
            Some(Box::new(move |g, grads| {
                grads.accumulate_with(x, rows * cols, |gx| {
                    for r in 0..rows {
                        let gr = &g[r * cols..(r + 1) * cols];
                        let total: f64 = gr.iter().sum();
                        let lp = saved.row(r);
                        for c in 0..cols {
                            gx[r * cols + c] += (gr[c] - lp[c].exp() * total) / temperature;
                        }
                    }
                });
            })),
        )
    }

    /// Probabilities and log-probabilities of `softmax(x / temperature)`.
    pub fn softmax_logsoftmax(&self, x: Var, temperature: f64) -> Result<(Var, Var)> {
        let logp = self.log_softmax(x, temperature)?;
        let p = self.exp(logp)?;
        Ok((p, logp))
    }

    /// Mean negative log-likelihood of `targets` under row log-probabilities.
    pub fn nll(&self, logp: Var, targets: &[usize]) -> Result<Var> {
        let lv = self.value(logp);
        let (rows, cols) = require_matrix("nll", &lv)?;
        if rows != targets.len() || rows == 0 {
            return shape_err("nll", format!("{rows} rows for {} targets", targets.len()));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= cols) {
            return shape_err("nll", format!("target {bad} out of range {cols}"));
        }
        let loss = -targets.iter().enumerate().map(|(r, &t)| lv.at(r, t)).sum::<f64>() / rows as f64;
        let targets = targets.to_vec();
        self.push(
            "nll",
            Tensor::scalar(loss),
            Some(Box::new(move |g, grads| {
                let w = -g[0] / rows as f64;
                grads.accumulate_with(logp, rows * cols, |gl| {
                    for (r, &t) in targets.iter().enumerate() {
                        gl[r * cols + t] += w;
                    }
                });
            })),
        )
    }

    /// Gathers rows of an embedding table.
    pub fn embedding(&self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        let (vocab, dim) = require_matrix("embedding", &tv)?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return shape_err("embedding", format!("id {bad} outside table of {vocab}"));
        }
        let out: Vec<f64> = ids.iter().flat_map(|&i| tv.row(i).to_vec()).collect();
        let ids = ids.to_vec();
        self.push(
            "embedding",
            Tensor::matrix(ids.len(), dim, out)?,
            Some(Box::new(move |g, grads| {
                grads.accumulate_with(table, vocab * dim, |gt| {
                    for (r, &i) in ids.iter().enumerate() {
                        gt[i * dim..(i + 1) * dim].iter_mut().zip(&g[r * dim..(r + 1) * dim]).for_each(|(o, v)| *o += v);
                    }
                });
            })),
        )
    }

    /// Selects the first `n` rows of a matrix.
    pub fn take_rows(&self, x: Var, n: usize) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = require_matrix("take_rows", &xv)?;
        if n > rows {
            return shape_err("take_rows", format!("{n} of {rows} rows"));
        }
        self.push(
            "take_rows",
            Tensor::matrix(n, cols, xv.data()[..n * cols].to_vec())?,
            Some(Box::new(move |g, grads: &mut Grads| {
                grads.accumulate_with(x, rows * cols, |gx| {
                    gx[..n * cols].iter_mut().zip(g).for_each(|(o, v)| *o += v);
                });
            })),
        )
    }
}
