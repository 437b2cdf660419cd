use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::data::{BOS, EOS, RESERVED_TOKENS};
use crate::error::{invalid, Error, Result};
use crate::params::{BoundParams, ParamStore};
use crate::rng::rng_from_seed;
use crate::tensor::Tensor;

const LN_EPS: f64 = 1e-5;

/// Shape of one corrector stage: a pre-LN encoder-decoder transformer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformerConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub heads: usize,
    pub ffn: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    /// Longest input or output, excluding BOS/EOS.
    pub max_len: usize,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self {
            vocab_size: 64,
            d_model: 32,
            heads: 2,
            ffn: 64,
            encoder_layers: 4,
            decoder_layers: 1,
            max_len: 16,
        }
    }
}

impl TransformerConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.vocab_size <= RESERVED_TOKENS.len() {
            errs.push(format!(
                "corrector vocabulary of {} has no room beyond the reserved tokens",
                self.vocab_size
            ));
        }
        if self.d_model == 0 || self.ffn == 0 || self.heads == 0 || self.max_len == 0 {
            errs.push("corrector widths, heads and max_len must be positive".into());
        } else if self.d_model % self.heads != 0 {
            errs.push(format!("{} heads do not divide d_model {}", self.heads, self.d_model));
        }
        if self.decoder_layers == 0 || self.encoder_layers <= self.decoder_layers {
            errs.push(format!(
                "corrector needs encoder_layers > decoder_layers >= 1, got {} and {}",
                self.encoder_layers, self.decoder_layers
            ));
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

    /// Recovers everything but the head count from parameter shapes.
    pub fn infer(params: &ParamStore, heads: usize) -> Result<Self> {
        let emb = params.get("tok_emb")?.shape().to_vec();
        let pos = params.get("enc.pos")?.shape().to_vec();
        let ffn = params.get("enc0.ff1.w")?.shape()[1];
        let count = |prefix: &str| {
            (0..)
                .take_while(|i| params.get(&format!("{prefix}{i}.ln1.g")).is_ok())
                .count()
        };
        let cfg = Self {
            vocab_size: emb[0],
            d_model: emb[1],
            heads,
            ffn,
            encoder_layers: count("enc"),
            decoder_layers: count("dec"),
            max_len: pos[0] - 1,
        };
        cfg.checked()?;
        Ok(cfg)
    }
}

fn uniform(shape: &[usize], bound: f64, rng: &mut impl rand::Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

fn insert_linear(p: &mut ParamStore, name: &str, din: usize, dout: usize, rng: &mut impl rand::Rng) {
    let bound = 1.0 / (din as f64).sqrt();
    p.insert(format!("{name}.w"), uniform(&[din, dout], bound, rng));
    p.insert(format!("{name}.b"), Tensor::zeros(&[dout]));
}

fn insert_ln(p: &mut ParamStore, name: &str, d: usize) {
    p.insert(format!("{name}.g"), Tensor::new(vec![d], vec![1.0; d]).expect("shape"));
    p.insert(format!("{name}.b"), Tensor::zeros(&[d]));
}

fn insert_attn(p: &mut ParamStore, name: &str, d: usize, rng: &mut impl rand::Rng) {
    for proj in ["q", "k", "v", "o"] {
        insert_linear(p, &format!("{name}.{proj}"), d, d, rng);
    }
}

/// Sinusoidal initialization (scaled down) for the learned position tables.
fn positions(rows: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; rows * d];
    for pos in 0..rows {
        for i in 0..d {
            let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let angle = pos as f64 * freq;
            data[pos * d + i] = 0.1 * if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(vec![rows, d], data).expect("shape")
}

pub fn init_transformer(cfg: &TransformerConfig, seed: u64) -> Result<ParamStore> {
    cfg.checked()?;
    let mut rng = rng_from_seed(seed);
    let mut p = ParamStore::new();
    let d = cfg.d_model;
    p.insert("tok_emb", uniform(&[cfg.vocab_size, d], (3.0 / d as f64).sqrt(), &mut rng));
    // One extra row: the decoder input carries BOS in front of max_len tokens
    // and the encoder input carries a trailing EOS.
    p.insert("enc.pos", positions(cfg.max_len + 1, d));
    p.insert("dec.pos", positions(cfg.max_len + 1, d));
    for l in 0..cfg.encoder_layers {
        let n = format!("enc{l}");
        insert_ln(&mut p, &format!("{n}.ln1"), d);
        insert_attn(&mut p, &format!("{n}.self"), d, &mut rng);
        insert_ln(&mut p, &format!("{n}.ln2"), d);
        insert_linear(&mut p, &format!("{n}.ff1"), d, cfg.ffn, &mut rng);
        insert_linear(&mut p, &format!("{n}.ff2"), cfg.ffn, d, &mut rng);
    }
    insert_ln(&mut p, "enc.ln", d);
    for l in 0..cfg.decoder_layers {
        let n = format!("dec{l}");
        insert_ln(&mut p, &format!("{n}.ln1"), d);
        insert_attn(&mut p, &format!("{n}.self"), d, &mut rng);
        insert_ln(&mut p, &format!("{n}.ln2"), d);
        insert_attn(&mut p, &format!("{n}.cross"), d, &mut rng);
        insert_ln(&mut p, &format!("{n}.ln3"), d);
        insert_linear(&mut p, &format!("{n}.ff1"), d, cfg.ffn, &mut rng);
        insert_linear(&mut p, &format!("{n}.ff2"), cfg.ffn, d, &mut rng);
    }
    insert_ln(&mut p, "dec.ln", d);
    insert_linear(&mut p, "out", d, cfg.vocab_size, &mut rng);
    Ok(p)
}

struct Net<'a> {
    g: &'a Graph,
    p: &'a BoundParams,
    cfg: &'a TransformerConfig,
}

impl Net<'_> {
    fn v(&self, name: &str) -> Result<Var> {
        self.p.var(name)
    }

    fn linear(&self, x: Var, name: &str) -> Result<Var> {
        self.g.linear(x, self.v(&format!("{name}.w"))?, self.v(&format!("{name}.b"))?)
    }

    fn ln(&self, x: Var, name: &str) -> Result<Var> {
        self.g.layernorm(x, self.v(&format!("{name}.g"))?, self.v(&format!("{name}.b"))?, LN_EPS)
    }

    fn attn(&self, x: Var, mem: Var, name: &str, causal: bool) -> Result<Var> {
        let q = self.linear(x, &format!("{name}.q"))?;
        let k = self.linear(mem, &format!("{name}.k"))?;
        let v = self.linear(mem, &format!("{name}.v"))?;
        let a = self.g.attention(q, k, v, self.cfg.heads, causal)?;
        self.linear(a, &format!("{name}.o"))
    }

    fn ffn(&self, x: Var, name: &str) -> Result<Var> {
        let h = self.g.relu(self.linear(x, &format!("{name}.ff1"))?)?;
        self.linear(h, &format!("{name}.ff2"))
    }

    fn embed(&self, ids: &[usize], pos: &str) -> Result<Var> {
        let tok = self.g.embedding(self.v("tok_emb")?, ids)?;
        let scaled = self.g.scale(tok, (self.cfg.d_model as f64).sqrt())?;
        let positions: Vec<usize> = (0..ids.len()).collect();
        let pe = self.g.embedding(self.v(pos)?, &positions)?;
        self.g.add(scaled, pe)
    }

    fn encode(&self, src: &[usize]) -> Result<Var> {
        let mut x = self.embed(src, "enc.pos")?;
        for l in 0..self.cfg.encoder_layers {
            let n = format!("enc{l}");
            let h = self.ln(x, &format!("{n}.ln1"))?;
            x = self.g.add(x, self.attn(h, h, &format!("{n}.self"), false)?)?;
            let h = self.ln(x, &format!("{n}.ln2"))?;
            x = self.g.add(x, self.ffn(h, &n)?)?;
        }
        self.ln(x, "enc.ln")
    }

    fn decode(&self, mem: Var, prefix: &[usize]) -> Result<Var> {
        let mut x = self.embed(prefix, "dec.pos")?;
        for l in 0..self.cfg.decoder_layers {
            let n = format!("dec{l}");
            let h = self.ln(x, &format!("{n}.ln1"))?;
            x = self.g.add(x, self.attn(h, h, &format!("{n}.self"), true)?)?;
            let h = self.ln(x, &format!("{n}.ln2"))?;
            x = self.g.add(x, self.attn(h, mem, &format!("{n}.cross"), false)?)?;
            let h = self.ln(x, &format!("{n}.ln3"))?;
            x = self.g.add(x, self.ffn(h, &n)?)?;
        }
        let h = self.ln(x, "dec.ln")?;
        self.linear(h, "out")
    }
}

fn check_tokens(cfg: &TransformerConfig, ids: &[usize], what: &str) -> Result<()> {
    if ids.len() > cfg.max_len {
        return invalid(format!("{what} of {} tokens exceeds max_len {}", ids.len(), cfg.max_len));
    }
    if let Some(&bad) = ids.iter().find(|&&t| t >= cfg.vocab_size) {
        return invalid(format!("{what} token {bad} outside vocabulary of {}", cfg.vocab_size));
    }
    Ok(())
}

fn source(src: &[usize]) -> Vec<usize> {
    let mut s = src.to_vec();
    s.push(EOS);
    s
}

/// Teacher-forced logits `[(len(tgt) + 1) × V]` for predicting `tgt + EOS`
/// from `BOS + tgt`.
pub fn transformer_logits(
    g: &Graph,
    params: &BoundParams,
    cfg: &TransformerConfig,
    src: &[usize],
    tgt: &[usize],
) -> Result<Var> {
    check_tokens(cfg, src, "source")?;
    check_tokens(cfg, tgt, "target")?;
    let net = Net { g, p: params, cfg };
    let mem = net.encode(&source(src))?;
    let mut prefix = vec![BOS];
    prefix.extend_from_slice(tgt);
    net.decode(mem, &prefix)
}

/// Mean token-level cross-entropy of `tgt + EOS` given `src`.
pub fn transformer_loss(
    g: &Graph,
    params: &BoundParams,
    cfg: &TransformerConfig,
    src: &[usize],
    tgt: &[usize],
) -> Result<Var> {
    let logits = transformer_logits(g, params, cfg, src, tgt)?;
    let logp = g.log_softmax(logits, 1.0)?;
    let mut targets = tgt.to_vec();
    targets.push(EOS);
    g.nll(logp, &targets)
}

/// Greedy autoregressive decode. Reserved ids other than EOS are never
/// emitted and the output stops at `max_len` tokens.
pub fn greedy_generate(params: &ParamStore, cfg: &TransformerConfig, src: &[usize]) -> Result<Vec<usize>> {
    cfg.checked()?;
    check_tokens(cfg, src, "source")?;
    let g = Graph::inference();
    let bound = params.bind(&g)?;
    let net = Net { g: &g, p: &bound, cfg };
    let mem = net.encode(&source(src))?;
    let mut prefix = vec![BOS];
    let first = RESERVED_TOKENS.len();
    while prefix.len() <= cfg.max_len {
        let logits = g.value(net.decode(mem, &prefix)?);
        let row = logits.row(prefix.len() - 1);
        let allowed = (first..cfg.vocab_size).chain((prefix.len() > 1).then_some(EOS));
        let best = allowed
            .map(|i| (i, row[i]))
            .fold(None::<(usize, f64)>, |acc, (i, v)| match acc {
                Some((_, bv)) if bv >= v => acc,
                _ => Some((i, v)),
            })
            .map(|(i, _)| i)
            .ok_or_else(|| Error::InvalidArgument("empty candidate set".into()))?;
        if best == EOS {
            break;
        }
        prefix.push(best);
    }
    Ok(prefix[1..].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck;

    fn tiny() -> TransformerConfig {
        TransformerConfig {
            vocab_size: 9,
            d_model: 4,
            heads: 2,
            ffn: 6,
            encoder_layers: 2,
            decoder_layers: 1,
            max_len: 5,
        }
    }

    #[test]
    fn config_rules() {
        assert!(TransformerConfig::default().validate().is_empty());
        let bad = TransformerConfig {
            encoder_layers: 1,
            decoder_layers: 1,
            ..tiny()
        };
        assert_eq!(bad.validate().len(), 1);
        let p = init_transformer(&tiny(), 1).unwrap();
        assert_eq!(TransformerConfig::infer(&p, 2).unwrap(), tiny());
    }

    #[test]
    fn untrained_output_is_well_formed() {
        let cfg = tiny();
        for seed in 0..20 {
            let p = init_transformer(&cfg, seed).unwrap();
            let out = greedy_generate(&p, &cfg, &[5, 6, 7]).unwrap();
            assert!(!out.is_empty() && out.len() <= cfg.max_len);
            assert!(out.iter().all(|&t| t >= RESERVED_TOKENS.len() && t < cfg.vocab_size));
        }
        let p = init_transformer(&cfg, 0).unwrap();
        assert!(greedy_generate(&p, &cfg, &[5; 6]).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let cfg = tiny();
        let store = init_transformer(&cfg, 3).unwrap();
        let names: Vec<String> = store.iter().map(|(k, _)| k.clone()).collect();
        let tensors: Vec<Tensor> = store
            .iter()
            .enumerate()
            .map(|(i, (_, t))| {
                // Perturb so layernorm gains and zero biases are not special points.
                let noise = gradcheck::random_tensor(t.shape(), 0.1, 100 + i as u64);
                Tensor::new(t.shape().to_vec(), t.data().iter().zip(noise.data()).map(|(a, b)| a + b).collect())
                    .unwrap()
            })
            .collect();
        let report = gradcheck::check(&tensors, |g, vars| {
            let bound = BoundParams::from_vars(names.iter().cloned().zip(vars.iter().copied()));
            transformer_loss(g, &bound, &cfg, &[5, 7, 6], &[5, 6, 8])
        })
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "{report:?}");
    }
}
