use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::corrupt::{corrupt, preprocess_ids, CorrectionPair, CorruptionSpec};
use super::model::{greedy_generate, init_transformer, transformer_loss, TransformerConfig};
use crate::archive::Archive;
use crate::autodiff::Graph;
use crate::data::{Vocabulary, RESERVED_TOKENS};
use crate::error::{invalid, Error, Result};
use crate::optim::{Adam, AdamConfig};
use crate::params::ParamStore;
use crate::rng::{derive_seed, rng_from_seed};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorrectorConfig {
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub ffn: usize,
    pub max_len: usize,
    /// Heavy corruption for the meaning-restoring first stage.
    pub stage1: CorruptionSpec,
    /// Light corruption for the fine-grained second stage.
    pub stage2: CorruptionSpec,
    /// Fraction of training pairs left uncorrupted.
    pub clean_mix: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub seed: u64,
    /// Start the second stage from the trained first stage.
    pub warm_start_stage2: bool,
    /// Feed second-stage training inputs through the trained first stage, so
    /// it learns from the errors the first stage leaves behind.
    pub cascade: bool,
    /// Learning-rate multiplier for a warm-started second stage.
    pub stage2_lr_scale: f64,
}

impl Default for CorrectorConfig {
    fn default() -> Self {
        let t = TransformerConfig::default();
        Self {
            encoder_layers: t.encoder_layers,
            decoder_layers: t.decoder_layers,
            d_model: t.d_model,
            heads: t.heads,
            ffn: t.ffn,
            max_len: t.max_len,
            stage1: CorruptionSpec::with_total(0.3),
            stage2: CorruptionSpec::with_total(0.1),
            clean_mix: 0.3,
            epochs: 20,
            batch_size: 16,
            optimizer: AdamConfig {
                lr: 2e-3,
                weight_decay: 0.0,
                ..AdamConfig::default()
            },
            seed: 0,
            warm_start_stage2: true,
            cascade: true,
            stage2_lr_scale: 0.1,
        }
    }
}

impl CorrectorConfig {
    pub fn transformer(&self, vocab_size: usize) -> TransformerConfig {
        TransformerConfig {
            vocab_size,
            d_model: self.d_model,
            heads: self.heads,
            ffn: self.ffn,
            encoder_layers: self.encoder_layers,
            decoder_layers: self.decoder_layers,
            max_len: self.max_len,
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = self.transformer(RESERVED_TOKENS.len() + 1).validate();
        errs.extend(self.stage1.validate().into_iter().map(|e| format!("stage1: {e}")));
        errs.extend(self.stage2.validate().into_iter().map(|e| format!("stage2: {e}")));
        if !(0.0..=1.0).contains(&self.clean_mix) {
            errs.push(format!("corrector.clean_mix must be in [0, 1], got {}", self.clean_mix));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            errs.push("corrector epochs and batch_size must be positive".into());
        }
        errs.extend(self.optimizer.validate());
        errs
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PretrainLog {
    pub stage: usize,
    pub epoch: usize,
    pub loss: f64,
}

/// Two transformer stages applied in sequence.
#[derive(Clone, Debug)]
pub struct Corrector {
    pub config: TransformerConfig,
    pub stage1: ParamStore,
    pub stage2: ParamStore,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CorrectOptions {
    /// Run the second stage on the first stage's output.
    pub dual: bool,
    /// Collapse immediate repeats before correcting.
    pub preprocess: bool,
}

impl Default for CorrectOptions {
    fn default() -> Self {
        Self {
            dual: true,
            preprocess: true,
        }
    }
}

impl Corrector {
    pub fn init(config: TransformerConfig, seed: u64) -> Result<Self> {
        Ok(Self {
            stage1: init_transformer(&config, derive_seed(seed, &[1]))?,
            stage2: init_transformer(&config, derive_seed(seed, &[2]))?,
            config,
        })
    }

    pub fn correct(&self, ids: &[usize], opts: CorrectOptions) -> Result<Vec<usize>> {
        let input = if opts.preprocess { preprocess_ids(ids) } else { ids.to_vec() };
        if input.is_empty() {
            return Ok(input);
        }
        let first = greedy_generate(&self.stage1, &self.config, &input)?;
        if opts.dual {
            greedy_generate(&self.stage2, &self.config, &first)
        } else {
            Ok(first)
        }
    }

    pub fn to_archive(&self, meta: &[(&str, &str)]) -> Result<Archive> {
        let mut store = ParamStore::new();
        for (prefix, p) in [("s1.", &self.stage1), ("s2.", &self.stage2)] {
            for (k, t) in p.iter() {
                store.insert(format!("{prefix}{k}"), t.clone());
            }
        }
        let heads = self.config.heads.to_string();
        let mut all: Vec<(&str, &str)> = vec![("corrector_heads", &heads)];
        all.extend_from_slice(meta);
        store.to_archive(&all)
    }

    pub fn save(&self, path: impl AsRef<Path>, meta: &[(&str, &str)]) -> Result<()> {
        self.to_archive(meta)?.save(path)
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        let heads: usize = a
            .text("meta.corrector_heads")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format("archive is not a corrector checkpoint".into()))?;
        let all = ParamStore::from_archive(a)?;
        let split = |prefix: &str| {
            let mut s = ParamStore::new();
            for (k, t) in all.iter() {
                if let Some(rest) = k.strip_prefix(prefix) {
                    s.insert(rest, t.clone());
                }
            }
            s
        };
        let (stage1, stage2) = (split("s1."), split("s2."));
        let config = TransformerConfig::infer(&stage1, heads)?;
        if TransformerConfig::infer(&stage2, heads)? != config {
            return Err(Error::Format("corrector stages have different shapes".into()));
        }
        Ok(Self { config, stage1, stage2 })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_archive(&Archive::load(path)?)
    }
}

/// Training pair for one sentence: clean with probability `clean_mix`,
/// otherwise corrupted and cut to `max_len`.
pub fn training_pair(
    clean: &[usize],
    spec: &CorruptionSpec,
    clean_mix: f64,
    candidates: &[usize],
    max_len: usize,
    seed: u64,
) -> Result<CorrectionPair> {
    let keep_clean = rng_from_seed(derive_seed(seed, &[0])).random::<f64>() < clean_mix;
    let mut pair = if keep_clean {
        CorrectionPair {
            corrupted: clean.to_vec(),
            clean: clean.to_vec(),
            seed,
        }
    } else {
        corrupt(clean, spec, candidates, derive_seed(seed, &[1]))?
    };
    pair.corrupted.truncate(max_len);
    Ok(pair)
}

fn train_stage(
    params: &mut ParamStore,
    cfg: &TransformerConfig,
    cc: &CorrectorConfig,
    stage: usize,
    corpus: &[Vec<usize>],
    upstream: Option<&ParamStore>,
    on_epoch: &mut impl FnMut(&PretrainLog),
) -> Result<Vec<PretrainLog>> {
    let spec = if stage == 1 { &cc.stage1 } else { &cc.stage2 };
    let candidates: Vec<usize> = (RESERVED_TOKENS.len()..cfg.vocab_size).collect();
    let batches = corpus.len().div_ceil(cc.batch_size);
    let lr = if stage == 2 && cc.warm_start_stage2 { cc.optimizer.lr * cc.stage2_lr_scale } else { cc.optimizer.lr };
    let mut opt = Adam::new(AdamConfig {
        lr,
        linear_decay_steps: Some((cc.epochs * batches) as u64),
        ..cc.optimizer.clone()
    })?;
    let mut logs = Vec::with_capacity(cc.epochs);
    for epoch in 1..=cc.epochs {
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        rand::seq::SliceRandom::shuffle(
            order.as_mut_slice(),
            &mut rng_from_seed(derive_seed(cc.seed, &[stage as u64, epoch as u64])),
        );
        let mut total = 0.0;
        for batch in order.chunks(cc.batch_size) {
            let mut acc: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            for &i in batch {
                let seed = derive_seed(cc.seed, &[stage as u64, epoch as u64, i as u64]);
                let mut pair = training_pair(&corpus[i], spec, cc.clean_mix, &candidates, cfg.max_len, seed)?;
                if let Some(up) = upstream {
                    pair.corrupted = greedy_generate(up, cfg, &pair.corrupted)?;
                }
                let g = Graph::new();
                let bound = params.bind(&g)?;
                let loss = transformer_loss(&g, &bound, cfg, &pair.corrupted, &pair.clean)?;
                total += g.scalar_value(loss);
                let grads = g.backward(loss)?;
                for (k, v) in bound.gradients(&g, &grads) {
                    match acc.get_mut(&k) {
                        Some(a) => a.iter_mut().zip(&v).for_each(|(a, v)| *a += v),
                        None => {
                            acc.insert(k, v);
                        }
                    }
                }
            }
            let inv = 1.0 / batch.len() as f64;
            acc.values_mut().for_each(|g| g.iter_mut().for_each(|v| *v *= inv));
            opt.step(params, &acc)?;
        }
        let log = PretrainLog {
            stage,
            epoch,
            loss: total / corpus.len() as f64,
        };
        on_epoch(&log);
        logs.push(log);
    }
    Ok(logs)
}

/// Self-supervised pretraining of both stages on clean gloss sentences.
pub fn pretrain(
    corpus: &[Vec<usize>],
    vocab: &Vocabulary,
    cc: &CorrectorConfig,
    mut on_epoch: impl FnMut(&PretrainLog),
) -> Result<(Corrector, Vec<PretrainLog>)> {
    let errs = cc.validate();
    if !errs.is_empty() {
        return invalid(errs.join("; "));
    }
    if corpus.len() < cc.batch_size {
        return invalid(format!(
            "corpus of {} sentences is shorter than one batch of {}",
            corpus.len(),
            cc.batch_size
        ));
    }
    let cfg = cc.transformer(vocab.len());
    for (i, s) in corpus.iter().enumerate() {
        if s.is_empty() || s.len() > cfg.max_len {
            return invalid(format!("sentence {i} has {} tokens, outside 1..={}", s.len(), cfg.max_len));
        }
        vocab.validate(s)?;
        if s.iter().any(|&t| t < RESERVED_TOKENS.len()) {
            return invalid(format!("sentence {i} contains a reserved token"));
        }
    }
    let mut c = Corrector::init(cfg.clone(), cc.seed)?;
    let mut logs = train_stage(&mut c.stage1, &cfg, cc, 1, corpus, None, &mut on_epoch)?;
    if cc.warm_start_stage2 {
        c.stage2 = c.stage1.clone();
    }
    let upstream = cc.cascade.then(|| c.stage1.clone());
    logs.extend(train_stage(&mut c.stage2, &cfg, cc, 2, corpus, upstream.as_ref(), &mut on_epoch)?);
    Ok((c, logs))
}

/// `corrupted<TAB>clean` lines.
pub fn pairs_to_tsv(pairs: &[CorrectionPair], vocab: &Vocabulary) -> String {
    pairs
        .iter()
        .map(|p| format!("{}\t{}\n", vocab.decode(&p.corrupted), vocab.decode(&p.clean)))
        .collect()
}

pub fn pairs_from_tsv(text: &str, vocab: &Vocabulary) -> Result<Vec<CorrectionPair>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let Some((corrupted, clean)) = line.split_once('\t') else {
            return Err(Error::Format(format!("line {}: expected corrupted<TAB>clean", n + 1)));
        };
        let pair = CorrectionPair {
            corrupted: vocab.encode(corrupted).0,
            clean: vocab.encode(clean).0,
            seed: 0,
        };
        if pair.clean.is_empty() {
            return Err(Error::Format(format!("line {}: empty clean side", n + 1)));
        }
        out.push(pair);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textcorr::{gloss_corpus, GrammarConfig};

    fn small() -> CorrectorConfig {
        CorrectorConfig {
            encoder_layers: 2,
            decoder_layers: 1,
            d_model: 16,
            heads: 2,
            ffn: 32,
            max_len: 8,
            batch_size: 4,
            epochs: 1,
            ..Default::default()
        }
    }

    fn corpus(n: usize, seed: u64) -> (Vocabulary, Vec<Vec<usize>>) {
        let g = GrammarConfig {
            topics: 2,
            slots: 4,
            ..Default::default()
        };
        let vocab = g.vocabulary();
        let ids = gloss_corpus(&g, n, seed).unwrap().iter().map(|s| vocab.encode(s).0).collect();
        (vocab, ids)
    }

    #[test]
    fn smoke_run_and_checkpoint_round_trip() {
        let (vocab, ids) = corpus(10, 0);
        let (c, logs) = pretrain(&ids, &vocab, &small(), |_| {}).unwrap();
        assert_eq!(logs.len(), 2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corrector.sgt");
        c.save(&path, &[]).unwrap();
        let back = Corrector::load(&path).unwrap();
        assert_eq!(back.config, c.config);
        let out = back.correct(&ids[0], CorrectOptions::default()).unwrap();
        assert_eq!(out, c.correct(&ids[0], CorrectOptions::default()).unwrap());
    }

    #[test]
    fn short_corpus_is_rejected() {
        let (vocab, ids) = corpus(3, 0);
        assert!(pretrain(&ids, &vocab, &small(), |_| {}).is_err());
    }

    #[test]
    fn full_clean_mix_is_identity_training() {
        let (_, ids) = corpus(20, 1);
        for (i, s) in ids.iter().enumerate() {
            let p = training_pair(s, &CorruptionSpec::with_total(0.5), 1.0, &[5, 6, 7], 8, i as u64).unwrap();
            assert_eq!(p.corrupted, p.clean);
        }
    }

    #[test]
    fn loss_decreases() {
        let (vocab, ids) = corpus(100, 2);
        let cc = CorrectorConfig {
            epochs: 5,
            batch_size: 8,
            ..small()
        };
        let (_, logs) = pretrain(&ids, &vocab, &cc, |_| {}).unwrap();
        for stage in [1, 2] {
            let l: Vec<f64> = logs.iter().filter(|l| l.stage == stage).map(|l| l.loss).collect();
            assert!(l[4] < l[0], "stage {stage}: {l:?}");
        }
    }

    #[test]
    fn tsv_round_trip() {
        let (vocab, ids) = corpus(5, 3);
        let pairs: Vec<_> = ids
            .iter()
            .map(|s| corrupt(s, &CorruptionSpec::default(), &[5, 6], 9).unwrap())
            .map(|p| CorrectionPair { seed: 0, ..p })
            .collect();
        assert_eq!(pairs_from_tsv(&pairs_to_tsv(&pairs, &vocab), &vocab).unwrap(), pairs);
    }
}
