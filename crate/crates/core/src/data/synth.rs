use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{DatasetManifest, GlossSequence, LandmarkSequence, ManifestRecord, Vocabulary};
use crate::error::{invalid, Result};
use crate::rng::{derive_seed, rng_from_seed};

/// Motif templates depend only on the gloss index, so datasets generated
/// with different seeds share one label space.
const MOTIF_SEED: u64 = 0x5EED_0F_6A055;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub num_samples: usize,
    pub vocab_size: usize,
    pub frames_per_gloss: usize,
    pub noise_level: f64,
    pub keypoints: usize,
    pub coords: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub split: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            num_samples: 100,
            vocab_size: 10,
            frames_per_gloss: 16,
            noise_level: 0.05,
            keypoints: 138,
            coords: 2,
            min_len: 2,
            max_len: 4,
            split: "train".into(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.vocab_size < 2 {
            errs.push(format!("synth.vocab_size must be at least 2, got {}", self.vocab_size));
        }
        if self.frames_per_gloss == 0 || self.keypoints == 0 || self.coords == 0 {
            errs.push("synth.frames_per_gloss, keypoints and coords must be positive".into());
        }
        if !(self.noise_level >= 0.0) || !self.noise_level.is_finite() {
            errs.push(format!("synth.noise_level must be a non-negative number, got {}", self.noise_level));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            errs.push(format!("synth length range {}..={} is empty or starts at 0", self.min_len, self.max_len));
        }
        if self.split.is_empty() || self.split.contains(char::is_whitespace) {
            errs.push("synth.split must be a non-empty word".into());
        }
        errs
    }

    pub fn vocabulary(&self) -> Vocabulary {
        let names: Vec<String> = (0..self.vocab_size).map(gloss_name).collect();
        Vocabulary::build(&[names.join(" ")]).expect("non-empty")
    }
}

fn gloss_name(i: usize) -> String {
    format!("g{i}")
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSample {
    pub sequence: LandmarkSequence,
    pub gloss: String,
    pub target: GlossSequence,
}

/// The noiseless `frames_per_gloss × (F·C)` trajectory of gloss `index`:
/// a per-channel offset plus a sinusoid whose frequency, amplitude and
/// phase are drawn from a generator keyed by the gloss index.
pub fn gloss_motif(index: usize, frames_per_gloss: usize, keypoints: usize, coords: usize) -> Vec<f64> {
    let mut rng = rng_from_seed(derive_seed(MOTIF_SEED, &[index as u64]));
    let freq = [0.5, 1.0, 1.5, 2.0][rng.random_range(0..4)];
    let width = keypoints * coords;
    let params: Vec<(f64, f64, f64)> = (0..width)
        .map(|_| (rng.random_range(-1.0..1.0), rng.random_range(0.2..0.6), rng.random_range(0.0..TAU)))
        .collect();
    let mut out = Vec::with_capacity(frames_per_gloss * width);
    for j in 0..frames_per_gloss {
        let phase = j as f64 / frames_per_gloss as f64;
        out.extend(params.iter().map(|&(base, amp, ph)| base + amp * (TAU * freq * phase + ph).sin()));
    }
    out
}

/// Generates samples in memory; a pure function of the config.
pub fn synth_samples(cfg: &SynthConfig) -> Result<(Vocabulary, Vec<SynthSample>)> {
    let errs = cfg.validate();
    if !errs.is_empty() {
        return invalid(errs.join("; "));
    }
    let vocab = cfg.vocabulary();
    let motifs: Vec<Vec<f64>> = (0..cfg.vocab_size)
        .map(|g| gloss_motif(g, cfg.frames_per_gloss, cfg.keypoints, cfg.coords))
        .collect();
    let noise = Normal::new(0.0, cfg.noise_level.max(f64::MIN_POSITIVE)).expect("valid std");
    let mut samples = Vec::with_capacity(cfg.num_samples);
    for i in 0..cfg.num_samples {
        let mut rng = rng_from_seed(derive_seed(cfg.seed, &[i as u64]));
        let len = rng.random_range(cfg.min_len..=cfg.max_len);
        let glosses: Vec<usize> = (0..len).map(|_| rng.random_range(0..cfg.vocab_size)).collect();
        let mut data: Vec<f64> = glosses.iter().flat_map(|&g| motifs[g].iter().copied()).collect();
        if cfg.noise_level > 0.0 {
            data.iter_mut().for_each(|v| *v += noise.sample(&mut rng));
        }
        let gloss = glosses.iter().map(|&g| gloss_name(g)).collect::<Vec<_>>().join(" ");
        let id = format!("{}_{i:05}", cfg.split);
        let sequence = LandmarkSequence::new(id, len * cfg.frames_per_gloss, cfg.keypoints, cfg.coords, data)?;
        samples.push(SynthSample {
            target: vocab.encode(&gloss),
            sequence,
            gloss,
        });
    }
    Ok((vocab, samples))
}

/// Writes `vocab.txt`, `landmarks/<id>.lmk` and `<split>.tsv` under `dir`,
/// returning the manifest path.
pub fn write_synth_dataset(cfg: &SynthConfig, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let (vocab, samples) = synth_samples(cfg)?;
    fs::create_dir_all(dir.join("landmarks"))?;
    vocab.save(dir.join("vocab.txt"))?;
    let mut manifest = DatasetManifest::new(cfg.split.clone());
    for s in &samples {
        let rel = PathBuf::from("landmarks").join(format!("{}.lmk", s.sequence.id));
        s.sequence.save(dir.join(&rel))?;
        manifest.records.push(ManifestRecord {
            landmarks: rel,
            gloss: s.gloss.clone(),
            teacher: None,
        });
    }
    let path = dir.join(format!("{}.tsv", cfg.split));
    manifest.save(&path)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            num_samples: 6,
            vocab_size: 5,
            keypoints: 3,
            coords: 2,
            ..Default::default()
        }
    }

    #[test]
    fn zero_noise_single_gloss_is_the_motif() {
        let cfg = SynthConfig {
            noise_level: 0.0,
            min_len: 1,
            max_len: 1,
            ..small()
        };
        let (_, samples) = synth_samples(&cfg).unwrap();
        for s in samples {
            let g: usize = s.gloss[1..].parse().unwrap();
            assert_eq!(s.sequence.data(), gloss_motif(g, 16, 3, 2).as_slice());
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        write_synth_dataset(&small(), a.path()).unwrap();
        write_synth_dataset(&small(), b.path()).unwrap();
        for rel in ["vocab.txt", "train.tsv", "landmarks/train_00003.lmk"] {
            assert_eq!(fs::read(a.path().join(rel)).unwrap(), fs::read(b.path().join(rel)).unwrap(), "{rel}");
        }
        let m = DatasetManifest::load(a.path().join("train.tsv")).unwrap();
        assert_eq!(m.records.len(), 6);
    }

    #[test]
    fn motifs_are_distinct_and_targets_valid() {
        let a = gloss_motif(0, 8, 3, 2);
        let b = gloss_motif(1, 8, 3, 2);
        assert_ne!(a, b);
        let (vocab, samples) = synth_samples(&small()).unwrap();
        for s in &samples {
            vocab.validate(&s.target).unwrap();
            assert_eq!(s.sequence.frames(), s.target.len() * 16);
        }
        assert!(synth_samples(&SynthConfig { vocab_size: 1, ..small() }).is_err());
    }
}
