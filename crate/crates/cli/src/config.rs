use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use signkd::augment::AugmentPolicy;
use signkd::data::SynthConfig;
use signkd::distill::KdWeights;
use signkd::mslr::MslrConfig;
use signkd::optim::AdamConfig;
use signkd::textcorr::{CorrectorConfig, GrammarConfig};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Defaults to `vocab.txt` next to the training manifest.
    pub vocab: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSizes {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        Self {
            train: 100,
            dev: 20,
            test: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub linear_decay: bool,
    pub augment: bool,
    pub stop_at_zero_train_wer: bool,
    pub optimizer: AdamConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            epochs: 80,
            batch_size: 8,
            linear_decay: true,
            augment: true,
            stop_at_zero_train_wer: false,
            optimizer: AdamConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextcorrSection {
    /// Sentences drawn from the grammar when no corpus file is given.
    pub corpus_size: usize,
    pub grammar: GrammarConfig,
}

impl Default for TextcorrSection {
    fn default() -> Self {
        Self {
            corpus_size: 500,
            grammar: GrammarConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantSection {
    pub calibration_samples: usize,
    pub bench_repeats: usize,
}

impl Default for QuantSection {
    fn default() -> Self {
        Self {
            calibration_samples: 16,
            bench_repeats: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Required: runs never draw implicit entropy.
    pub seed: Option<u64>,
    pub output_dir: PathBuf,
    pub data: DataPaths,
    pub splits: SplitSizes,
    pub synth: SynthConfig,
    /// `vocab_size = 0` takes the size from the vocabulary file.
    pub model: MslrConfig,
    pub augment: AugmentPolicy,
    pub kd: KdWeights,
    pub train: TrainSection,
    pub corrector: CorrectorConfig,
    pub textcorr: TextcorrSection,
    pub quant: QuantSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            output_dir: PathBuf::from("runs/default"),
            data: DataPaths::default(),
            splits: SplitSizes::default(),
            synth: SynthConfig::default(),
            model: MslrConfig {
                vocab_size: 0,
                ..MslrConfig::default()
            },
            augment: AugmentPolicy::default(),
            kd: KdWeights::default(),
            train: TrainSection::default(),
            corrector: CorrectorConfig::default(),
            textcorr: TextcorrSection::default(),
            quant: QuantSection::default(),
        }
    }
}

/// Why a config could not be used; `Invalid` carries every violation.
#[derive(Debug)]
pub enum ConfigError {
    Read(String),
    Invalid(Vec<String>),
}

fn parse_scalar(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Applies a `dotted.key=value` override; the value is read as a TOML
/// literal when possible and as a bare string otherwise.
fn apply_override(root: &mut toml::Table, spec: &str) -> Result<(), String> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| format!("override `{spec}` is not of the form key=value"))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(format!("override key `{key}` has an empty segment"));
    }
    let mut table = root;
    for p in &parts[..parts.len() - 1] {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| format!("override `{key}`: `{p}` is not a table"))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), parse_scalar(raw.trim()));
    Ok(())
}

impl RunConfig {
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut root = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| ConfigError::Read(format!("{}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| ConfigError::Read(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        let errs: Vec<String> = overrides.iter().filter_map(|o| apply_override(&mut root, o).err()).collect();
        // A partial [model] table would otherwise pick up the library's
        // default vocabulary size instead of the vocabulary file's.
        if let Some(model) = root.get_mut("model").and_then(toml::Value::as_table_mut) {
            model.entry("vocab_size").or_insert(toml::Value::Integer(0));
        }
        if !errs.is_empty() {
            return Err(ConfigError::Invalid(errs));
        }
        let cfg: RunConfig = toml::Value::Table(root)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Invalid(vec![e.to_string()]))?;
        let errs = cfg.validate();
        if errs.is_empty() {
            Ok(cfg)
        } else {
            Err(ConfigError::Invalid(errs))
        }
    }

    /// Every violation, not just the first.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.seed.is_none() {
            errs.push("seed must be set explicitly".to_string());
        }
        errs.extend(self.synth.validate());
        let mut model = self.model.clone();
        if model.vocab_size == 0 {
            model.vocab_size = 6;
        }
        errs.extend(model.validate());
        errs.extend(self.augment.validate());
        errs.extend(self.kd.validate());
        if self.train.epochs == 0 || self.train.batch_size == 0 {
            errs.push("train.epochs and train.batch_size must be positive".into());
        }
        errs.extend(self.train.optimizer.validate());
        errs.extend(self.corrector.validate());
        errs.extend(self.textcorr.grammar.validate());
        if self.textcorr.grammar.max_sentence_len() > self.corrector.max_len {
            errs.push(format!(
                "grammar sentences of up to {} glosses exceed corrector.max_len {}",
                self.textcorr.grammar.max_sentence_len(),
                self.corrector.max_len
            ));
        }
        if self.quant.calibration_samples == 0 || self.quant.bench_repeats == 0 {
            errs.push("quant.calibration_samples and quant.bench_repeats must be positive".into());
        }
        for (name, p) in [
            ("data.train", &self.data.train),
            ("data.dev", &self.data.dev),
            ("data.test", &self.data.test),
            ("data.vocab", &self.data.vocab),
        ] {
            if let Some(p) = p {
                if !p.exists() {
                    errs.push(format!("{name} points to {}, which does not exist", p.display()));
                }
            }
        }
        errs
    }

    pub fn seed(&self) -> u64 {
        self.seed.expect("validated")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the resolved config text.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_and_hash() {
        let cfg = RunConfig::load(None, &["seed=3".into(), "train.epochs=2".into(), "output_dir=out".into()]).unwrap();
        assert_eq!(cfg.seed, Some(3));
        assert_eq!(cfg.train.epochs, 2);
        assert_eq!(cfg.output_dir, PathBuf::from("out"));
        let again: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.hash(), cfg.hash());
    }

    #[test]
    fn every_violation_is_listed() {
        let Err(ConfigError::Invalid(errs)) = RunConfig::load(
            None,
            &["train.epochs=0".into(), "kd.alpha=-1".into(), "data.train='/nonexistent.tsv'".into()],
        ) else {
            panic!("expected validation errors");
        };
        assert!(errs.len() >= 4, "{errs:?}");
        assert!(errs.iter().any(|e| e.contains("seed")));
    }
}
