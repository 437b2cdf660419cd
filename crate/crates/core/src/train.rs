//! Mini-batch training of the student with optional distillation, plus
//! greedy-decode evaluation.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::{apply_policy, AugmentPolicy};
use crate::autodiff::Graph;
use crate::ctc::{check_feasible, greedy_decode};
use crate::data::{GlossSequence, LandmarkSequence};
use crate::distill::{total_loss, KdWeights, LossBreakdown, TeacherStreams};
use crate::error::{invalid, Result};
use crate::metrics::{wer, WerBreakdown};
use crate::mslr::{forward_graph, forward_tensor, MslrConfig};
use crate::optim::{Adam, AdamConfig};
use crate::params::ParamStore;
use crate::rng::{derive_seed, rng_from_seed};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample {
    pub sequence: LandmarkSequence,
    pub target: GlossSequence,
    pub teacher: Option<TeacherStreams>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: AdamConfig,
    /// Decay the learning rate linearly to zero over the whole run.
    pub linear_decay: bool,
    pub augment: bool,
    pub policy: AugmentPolicy,
    pub kd: KdWeights,
    /// Stop once the training-set WER reaches 0 (checked after each epoch).
    pub stop_at_zero_train_wer: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 80,
            batch_size: 8,
            seed: 0,
            optimizer: AdamConfig::default(),
            linear_decay: true,
            augment: true,
            policy: AugmentPolicy::default(),
            kd: KdWeights::default(),
            stop_at_zero_train_wer: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.epochs == 0 {
            errs.push("train.epochs must be positive".into());
        }
        if self.batch_size == 0 {
            errs.push("train.batch_size must be positive".into());
        }
        errs.extend(self.optimizer.validate());
        errs.extend(self.policy.validate());
        errs.extend(self.kd.validate());
        errs
    }
}

/// Mean per-sample loss components of one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub train_wer: Option<f64>,
    pub dev_wer: Option<f64>,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let l = &self.loss;
        write!(
            f,
            "epoch={} l_total={:.9} l_c={:.9} l_b={:.9} l_s={:.9} l_ctc={:.9}",
            self.epoch, l.total, l.conv, l.bilstm, l.self_kd, l.ctc
        )?;
        if let Some(w) = self.train_wer {
            write!(f, " train_wer={w:.6}")?;
        }
        match self.dev_wer {
            Some(w) => write!(f, " dev_wer={w:.6}"),
            None => write!(f, " dev_wer=na"),
        }
    }
}

/// Checks every target against the vocabulary size and the model's output
/// length before any training happens.
pub fn validate_samples(cfg: &MslrConfig, samples: &[TrainSample]) -> Result<()> {
    for s in samples {
        if s.sequence.width() != cfg.input_dim {
            return invalid(format!(
                "sample {} has width {}, model expects {}",
                s.sequence.id,
                s.sequence.width(),
                cfg.input_dim
            ));
        }
        if let Some(bad) = s.target.iter().find(|&&i| i == 0 || i >= cfg.vocab_size) {
            return invalid(format!("sample {} has target id {bad} outside 1..{}", s.sequence.id, cfg.vocab_size));
        }
        check_feasible(cfg.output_len(s.sequence.frames())?, &s.target).map_err(|e| {
            crate::error::Error::InvalidArgument(format!("sample {}: {e}", s.sequence.id))
        })?;
    }
    Ok(())
}

/// Loss and gradients for one sample.
pub fn sample_gradients(
    params: &ParamStore,
    cfg: &MslrConfig,
    seq: &LandmarkSequence,
    target: &[usize],
    teacher: Option<&TeacherStreams>,
    kd: &KdWeights,
) -> Result<(LossBreakdown, BTreeMap<String, Vec<f64>>)> {
    let g = Graph::new();
    let bound = params.bind(&g)?;
    let x = g.leaf(seq.to_tensor())?;
    let out = forward_graph(&g, &bound, cfg, x)?;
    let (loss, breakdown) = total_loss(&g, &out, teacher, target, kd)?;
    let grads = g.backward(loss)?;
    Ok((breakdown, bound.gradients(&g, &grads)))
}

fn augmented(sample: &TrainSample, cfg: &MslrConfig, tc: &TrainConfig, seed: u64) -> Result<LandmarkSequence> {
    if !tc.augment {
        return Ok(sample.sequence.clone());
    }
    let aug = apply_policy(&sample.sequence, &tc.policy, seed)?;
    // Temporal rescaling can make a target infeasible; keep the original then.
    match cfg.output_len(aug.frames()).and_then(|t| check_feasible(t, &sample.target)) {
        Ok(()) => Ok(aug),
        Err(_) => Ok(sample.sequence.clone()),
    }
}

/// Trains `params` in place. Shuffling and augmentation draw from seeds
/// derived from `(tc.seed, epoch, sample index)`, so a run is a pure function
/// of its inputs. `on_epoch` sees each log line as it is produced.
pub fn train(
    cfg: &MslrConfig,
    tc: &TrainConfig,
    params: &mut ParamStore,
    train_set: &[TrainSample],
    dev_set: &[TrainSample],
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    let mut errs = cfg.validate();
    errs.extend(tc.validate());
    if !errs.is_empty() {
        return invalid(errs.join("; "));
    }
    if train_set.is_empty() {
        return invalid("training set is empty");
    }
    validate_samples(cfg, train_set)?;
    validate_samples(cfg, dev_set)?;
    let batches_per_epoch = train_set.len().div_ceil(tc.batch_size);
    let mut opt_cfg = tc.optimizer.clone();
    if tc.linear_decay {
        opt_cfg.linear_decay_steps = Some((tc.epochs * batches_per_epoch) as u64);
    }
    let mut opt = Adam::new(opt_cfg)?;
    let mut logs = Vec::with_capacity(tc.epochs);
    for epoch in 1..=tc.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng_from_seed(derive_seed(tc.seed, &[epoch as u64])));
        let mut sum = LossBreakdown::default();
        for batch in order.chunks(tc.batch_size) {
            let mut acc: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            for &i in batch {
                let s = &train_set[i];
                let seq = augmented(s, cfg, tc, derive_seed(tc.seed, &[epoch as u64, i as u64]))?;
                let (b, grads) = sample_gradients(params, cfg, &seq, &s.target, s.teacher.as_ref(), &tc.kd)?;
                sum.total += b.total;
                sum.conv += b.conv;
                sum.bilstm += b.bilstm;
                sum.self_kd += b.self_kd;
                sum.ctc += b.ctc;
                for (k, g) in grads {
                    match acc.get_mut(&k) {
                        Some(a) => a.iter_mut().zip(&g).for_each(|(a, g)| *a += g),
                        None => {
                            acc.insert(k, g);
                        }
                    }
                }
            }
            let inv = 1.0 / batch.len() as f64;
            acc.values_mut().for_each(|g| g.iter_mut().for_each(|v| *v *= inv));
            opt.step(params, &acc)?;
        }
        let n = train_set.len() as f64;
        let loss = LossBreakdown {
            total: sum.total / n,
            conv: sum.conv / n,
            bilstm: sum.bilstm / n,
            self_kd: sum.self_kd / n,
            ctc: sum.ctc / n,
        };
        let train_wer = if tc.stop_at_zero_train_wer {
            Some(evaluate(params, cfg, train_set)?.wer())
        } else {
            None
        };
        let dev_wer = if dev_set.is_empty() {
            None
        } else {
            Some(evaluate(params, cfg, dev_set)?.wer())
        };
        let log = EpochLog {
            epoch,
            loss,
            train_wer,
            dev_wer,
        };
        on_epoch(&log);
        logs.push(log);
        if train_wer == Some(0.0) {
            break;
        }
    }
    Ok(logs)
}

/// Greedy decode of the BiLSTM head.
pub fn recognize(params: &ParamStore, cfg: &MslrConfig, seq: &LandmarkSequence) -> Result<GlossSequence> {
    let out = forward_tensor(&seq.to_tensor(), params, cfg)?;
    Ok(greedy_decode(&out.bilstm_logp))
}

/// Per-sample hypotheses and breakdowns, in input order.
pub fn evaluate_samples(
    params: &ParamStore,
    cfg: &MslrConfig,
    samples: &[TrainSample],
) -> Result<Vec<(GlossSequence, WerBreakdown)>> {
    samples
        .iter()
        .map(|s| {
            let hyp = recognize(params, cfg, &s.sequence)?;
            let b = wer(&s.target, &hyp)?;
            Ok((hyp, b))
        })
        .collect()
}

/// Corpus WER of greedy decoding.
pub fn evaluate(params: &ParamStore, cfg: &MslrConfig, samples: &[TrainSample]) -> Result<WerBreakdown> {
    if samples.is_empty() {
        return invalid("cannot evaluate an empty set");
    }
    let mut total = WerBreakdown::default();
    for (_, b) in evaluate_samples(params, cfg, samples)? {
        total += b;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_samples, SynthConfig};
    use crate::mslr::init_params;

    fn tiny() -> (MslrConfig, Vec<TrainSample>) {
        let synth = SynthConfig {
            num_samples: 4,
            vocab_size: 3,
            keypoints: 2,
            coords: 2,
            frames_per_gloss: 4,
            min_len: 1,
            max_len: 2,
            ..Default::default()
        };
        let (vocab, samples) = synth_samples(&synth).unwrap();
        let cfg = MslrConfig {
            input_dim: 4,
            kernel: 3,
            channels: vec![8, 8],
            strides: vec![1, 1],
            hidden: 4,
            vocab_size: vocab.len(),
            ..Default::default()
        };
        let samples = samples
            .into_iter()
            .map(|s| TrainSample {
                sequence: s.sequence,
                target: s.target,
                teacher: None,
            })
            .collect();
        (cfg, samples)
    }

    #[test]
    fn replays_are_bit_identical() {
        let (cfg, data) = tiny();
        let tc = TrainConfig {
            epochs: 2,
            batch_size: 2,
            ..Default::default()
        };
        let run = || {
            let mut p = init_params(&cfg, 1).unwrap();
            let logs = train(&cfg, &tc, &mut p, &data, &data, |_| {}).unwrap();
            (p, logs.iter().map(ToString::to_string).collect::<Vec<_>>())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn kd_off_logs_zero_components() {
        let (cfg, data) = tiny();
        let tc = TrainConfig {
            epochs: 1,
            kd: KdWeights {
                alpha: 0.0,
                ..Default::default()
            },
            ..Default::default()
        };
        let mut p = init_params(&cfg, 1).unwrap();
        let logs = train(&cfg, &tc, &mut p, &data, &[], |_| {}).unwrap();
        let l = logs[0].loss;
        assert_eq!((l.conv, l.bilstm, l.self_kd), (0.0, 0.0, 0.0));
        assert_eq!(l.total, l.ctc);
        assert!(logs[0].to_string().contains("dev_wer=na"));
    }

    #[test]
    fn infeasible_samples_are_rejected_up_front() {
        let (mut cfg, data) = tiny();
        cfg.strides = vec![4, 4];
        let mut p = init_params(&cfg, 1).unwrap();
        let err = train(&cfg, &TrainConfig::default(), &mut p, &data, &[], |_| {}).unwrap_err();
        assert!(err.to_string().contains("train_0000"), "{err}");
    }
}
