//! The landmark student network: a strided 1D conv stack, a BiLSTM and one
//! classifier shared by both heads.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, LstmWeights, Padding, Var};
use crate::data::{LandmarkSequence, DEFAULT_FRAME_WIDTH};
use crate::error::{invalid, shape_err, Result};
use crate::params::{BoundParams, ParamStore};
use crate::rng::rng_from_seed;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MslrConfig {
    pub input_dim: usize,
    pub kernel: usize,
    pub channels: Vec<usize>,
    pub strides: Vec<usize>,
    pub padding: Padding,
    /// Per direction; the BiLSTM emits `2 * hidden` features, which must
    /// equal the last conv width so the classifier can be shared.
    pub hidden: usize,
    /// Including blank and the other reserved ids.
    pub vocab_size: usize,
    pub temperature: f64,
}

impl Default for MslrConfig {
    fn default() -> Self {
        Self {
            input_dim: DEFAULT_FRAME_WIDTH,
            kernel: 5,
            channels: vec![128, 128, 256, 256],
            strides: vec![1, 1, 2, 2],
            padding: Padding::Same,
            hidden: 128,
            vocab_size: 1000,
            temperature: 1.0,
        }
    }
}

impl MslrConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.kernel == 0 || self.kernel % 2 == 0 {
            errs.push(format!("model.kernel must be odd, got {}", self.kernel));
        }
        if self.channels.is_empty() {
            errs.push("model.channels needs at least one layer".into());
        }
        if self.channels.len() != self.strides.len() {
            errs.push(format!(
                "model.channels has {} layers but model.strides has {}",
                self.channels.len(),
                self.strides.len()
            ));
        }
        if self.input_dim == 0 || self.hidden == 0 || self.channels.contains(&0) || self.strides.contains(&0) {
            errs.push("model widths, hidden size and strides must be positive".into());
        }
        if self.vocab_size < 2 {
            errs.push(format!("model.vocab_size must be at least 2, got {}", self.vocab_size));
        }
        if let Some(&last) = self.channels.last() {
            if 2 * self.hidden != last {
                errs.push(format!(
                    "model.hidden ({}) must be half the last conv width ({last}) for the shared classifier",
                    self.hidden
                ));
            }
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            errs.push(format!("model.temperature must be positive, got {}", self.temperature));
        }
        errs
    }

    fn checked(&self) -> Result<()> {
        let errs = self.validate();
        if errs.is_empty() {
            Ok(())
        } else {
            invalid(errs.join("; "))
        }
    }

    /// Length of both output streams for `t` input frames.
    pub fn output_len(&self, t: usize) -> Result<usize> {
        let mut len = t;
        for &s in &self.strides {
            len = match self.padding.output_len(len, self.kernel, s) {
                Some((l, _)) if l > 0 => l,
                _ => return invalid(format!("{t} input frames leave no output frames")),
            };
        }
        Ok(len)
    }

    /// Multiply-adds for one sequence of `t` frames, counting conv layers,
    /// both LSTM directions and the classifier applied to both heads.
    pub fn count_flops(&self, t: usize) -> Result<u64> {
        self.checked()?;
        let mut total = 0u64;
        let mut len = t;
        let mut din = self.input_dim;
        for (&dout, &s) in self.channels.iter().zip(&self.strides) {
            len = self.padding.output_len(len, self.kernel, s).map(|(l, _)| l).unwrap_or(0);
            total += (len * self.kernel * din * dout) as u64;
            din = dout;
        }
        let h = self.hidden;
        total += 2 * (len * 4 * h * (din + h)) as u64;
        total += 2 * (len * din * self.vocab_size) as u64;
        Ok(total)
    }
}

/// Log-probabilities of both heads, each `[T' × V]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MslrOutputs {
    pub conv_logp: Tensor,
    pub bilstm_logp: Tensor,
}

impl MslrOutputs {
    pub fn conv_probs(&self) -> Tensor {
        self.conv_logp.map(f64::exp)
    }

    pub fn bilstm_probs(&self) -> Tensor {
        self.bilstm_logp.map(f64::exp)
    }
}

/// Graph handles for one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct MslrVars {
    pub features: Var,
    pub conv_logp: Var,
    pub bilstm_logp: Var,
}

fn lstm_names(dir: &str) -> [String; 3] {
    [format!("lstm.{dir}.w_ih"), format!("lstm.{dir}.w_hh"), format!("lstm.{dir}.bias")]
}

/// Fan-in scaled uniform weights, zero biases except a forget-gate bias of 1.
pub fn init_params(cfg: &MslrConfig, seed: u64) -> Result<ParamStore> {
    cfg.checked()?;
    let mut rng = rng_from_seed(seed);
    let mut uniform = |shape: &[usize], fan_in: usize| {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        Tensor::new(shape.to_vec(), data).expect("shape matches")
    };
    let mut p = ParamStore::new();
    let mut din = cfg.input_dim;
    for (i, &dout) in cfg.channels.iter().enumerate() {
        p.insert(format!("conv{i}.w"), uniform(&[cfg.kernel, din, dout], cfg.kernel * din));
        p.insert(format!("conv{i}.b"), Tensor::zeros(&[dout]));
        din = dout;
    }
    let h = cfg.hidden;
    for dir in ["fwd", "bwd"] {
        let [w_ih, w_hh, bias] = lstm_names(dir);
        p.insert(w_ih, uniform(&[din, 4 * h], h));
        p.insert(w_hh, uniform(&[h, 4 * h], h));
        let mut b = vec![0.0; 4 * h];
        b[h..2 * h].fill(1.0);
        p.insert(bias, Tensor::new(vec![4 * h], b)?);
    }
    p.insert("cls.w", uniform(&[din, cfg.vocab_size], din));
    p.insert("cls.b", Tensor::zeros(&[cfg.vocab_size]));
    Ok(p)
}

/// Builds the forward pass for `x [T × D]` on `g`.
pub fn forward_graph(g: &Graph, params: &BoundParams, cfg: &MslrConfig, x: Var) -> Result<MslrVars> {
    cfg.checked()?;
    let shape = g.shape(x);
    if shape.len() != 2 || shape[1] != cfg.input_dim {
        return shape_err("mslr", format!("expected [T x {}] input, got {shape:?}", cfg.input_dim));
    }
    cfg.output_len(shape[0])?;
    let mut h = x;
    for (i, &s) in cfg.strides.iter().enumerate() {
        let w = params.var(&format!("conv{i}.w"))?;
        let b = params.var(&format!("conv{i}.b"))?;
        h = g.relu(g.conv1d(h, w, b, s, cfg.padding)?)?;
    }
    let lstm = |dir: &str| -> Result<LstmWeights> {
        let [w_ih, w_hh, bias] = lstm_names(dir);
        Ok(LstmWeights {
            w_ih: params.var(&w_ih)?,
            w_hh: params.var(&w_hh)?,
            bias: params.var(&bias)?,
        })
    };
    let seq = g.bilstm(h, lstm("fwd")?, lstm("bwd")?)?;
    let (cw, cb) = (params.var("cls.w")?, params.var("cls.b")?);
    let conv_logp = g.log_softmax(g.linear(h, cw, cb)?, cfg.temperature)?;
    let bilstm_logp = g.log_softmax(g.linear(seq, cw, cb)?, cfg.temperature)?;
    Ok(MslrVars {
        features: h,
        conv_logp,
        bilstm_logp,
    })
}

/// Inference without gradient bookkeeping.
pub fn forward(seq: &LandmarkSequence, params: &ParamStore, cfg: &MslrConfig) -> Result<MslrOutputs> {
    forward_tensor(&seq.to_tensor(), params, cfg)
}

pub fn forward_tensor(x: &Tensor, params: &ParamStore, cfg: &MslrConfig) -> Result<MslrOutputs> {
    if x.rank() != 2 || x.cols() != cfg.input_dim {
        return shape_err("mslr", format!("expected [T x {}] input, got {:?}", cfg.input_dim, x.shape()));
    }
    let g = Graph::inference();
    let bound = params.bind(&g)?;
    let xv = g.leaf(x.clone())?;
    let v = forward_graph(&g, &bound, cfg, xv)?;
    Ok(MslrOutputs {
        conv_logp: (*g.value(v.conv_logp)).clone(),
        bilstm_logp: (*g.value(v.bilstm_logp)).clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::{self, random_tensor};

    fn toy() -> MslrConfig {
        MslrConfig {
            input_dim: 8,
            kernel: 3,
            channels: vec![6, 4],
            strides: vec![1, 2],
            hidden: 2,
            vocab_size: 4,
            ..Default::default()
        }
    }

    #[test]
    fn default_config_is_valid() {
        assert!(MslrConfig::default().validate().is_empty());
        let bad = MslrConfig {
            kernel: 4,
            hidden: 3,
            vocab_size: 1,
            ..toy()
        };
        assert_eq!(bad.validate().len(), 3);
    }

    #[test]
    fn rows_are_distributions_and_lengths_match() {
        let cfg = toy();
        let p = init_params(&cfg, 0).unwrap();
        let x = random_tensor(&[9, 8], 1.0, 1);
        let out = forward_tensor(&x, &p, &cfg).unwrap();
        assert_eq!(out.conv_logp.shape(), [5, 4]);
        assert_eq!(out.bilstm_logp.shape(), [5, 4]);
        for probs in [out.conv_probs(), out.bilstm_probs()] {
            for t in 0..5 {
                assert!((probs.row(t).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
        assert!(forward_tensor(&random_tensor(&[9, 7], 1.0, 1), &p, &cfg).is_err());
    }

    #[test]
    fn same_padding_length_is_ceil() {
        let cfg = MslrConfig::default();
        for t in [1, 7, 8, 9, 100] {
            assert_eq!(cfg.output_len(t).unwrap(), t.div_ceil(4));
        }
    }

    #[test]
    fn constant_logits_give_uniform_heads() {
        let cfg = MslrConfig { vocab_size: 2, ..toy() };
        let mut p = init_params(&cfg, 3).unwrap();
        p.insert("cls.w", Tensor::zeros(&[4, 2]));
        p.insert("cls.b", Tensor::new(vec![2], vec![0.7, 0.7]).unwrap());
        let out = forward_tensor(&random_tensor(&[6, 8], 1.0, 2), &p, &cfg).unwrap();
        for v in out.conv_probs().data().iter().chain(out.bilstm_probs().data()) {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn high_temperature_flattens_both_heads() {
        let cfg = MslrConfig { temperature: 1e3, ..toy() };
        let p = init_params(&cfg, 4).unwrap();
        let out = forward_tensor(&random_tensor(&[6, 8], 3.0, 5), &p, &cfg).unwrap();
        for v in out.conv_probs().data().iter().chain(out.bilstm_probs().data()) {
            assert!((v - 0.25).abs() < 1e-3);
        }
    }

    #[test]
    fn init_is_seeded() {
        let cfg = toy();
        assert_eq!(init_params(&cfg, 1).unwrap(), init_params(&cfg, 1).unwrap());
        assert_ne!(init_params(&cfg, 1).unwrap(), init_params(&cfg, 2).unwrap());
        let out = forward_tensor(&random_tensor(&[6, 8], 1.0, 0), &init_params(&cfg, 0).unwrap(), &cfg).unwrap();
        assert!(out.conv_logp.first_non_finite().is_none());
    }

    #[test]
    fn full_model_gradients_match_finite_differences() {
        let cfg = MslrConfig {
            channels: vec![4, 4],
            strides: vec![1, 2],
            ..toy()
        };
        let params = init_params(&cfg, 7).unwrap();
        let names: Vec<String> = params.iter().map(|(k, _)| k.clone()).collect();
        let mut inputs: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();
        inputs.push(random_tensor(&[6, 8], 1.0, 8));
        let r = gradcheck::check(&inputs, |g, v| {
            let bound = BoundParams::from_vars(names.iter().cloned().zip(v.iter().copied()));
            let out = forward_graph(g, &bound, &cfg, v[names.len()])?;
            let a = gradcheck::weighted_sum(g, out.conv_logp, &random_tensor(&[12], 1.0, 9).into_data())?;
            let b = gradcheck::weighted_sum(g, out.bilstm_logp, &random_tensor(&[12], 1.0, 10).into_data())?;
            g.add(a, b)
        })
        .unwrap();
        assert!(r.max_rel_err < 1e-4, "{r:?}");
    }

    #[test]
    fn flops_hand_count() {
        // One conv layer, K=1, D=1 -> 2 channels, H=1, V=2, T=3.
        let cfg = MslrConfig {
            input_dim: 1,
            kernel: 1,
            channels: vec![2],
            strides: vec![1],
            hidden: 1,
            vocab_size: 2,
            ..Default::default()
        };
        // conv 3*1*1*2 = 6; lstm 2 dirs * 3 * 4*1*(2+1) = 72; cls 2 heads * 3*2*2 = 24.
        assert_eq!(cfg.count_flops(3).unwrap(), 102);
        let d = MslrConfig::default();
        assert_eq!(d.count_flops(400).unwrap(), 2 * d.count_flops(200).unwrap());
    }
}
