use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRecord {
    pub landmarks: PathBuf,
    pub gloss: String,
    pub teacher: Option<PathBuf>,
}

/// A dataset split: one `path TAB gloss text [TAB teacher path]` record per
/// line. An optional `#split TAB <name>` header names the split; other lines
/// starting with `#` are ignored. Relative paths resolve against the
/// manifest's directory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub split: String,
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn new(split: impl Into<String>) -> Self {
        Self {
            split: split.into(),
            records: Vec::new(),
        }
    }

    pub fn to_tsv(&self) -> String {
        let mut out = format!("#split\t{}\n", self.split);
        for r in &self.records {
            out.push_str(&r.landmarks.to_string_lossy());
            out.push('\t');
            out.push_str(&r.gloss);
            if let Some(t) = &r.teacher {
                out.push('\t');
                out.push_str(&t.to_string_lossy());
            }
            out.push('\n');
        }
        out
    }

    /// Parses without touching the filesystem.
    pub fn parse(text: &str, default_split: &str) -> Result<Self> {
        let mut m = Self::new(default_split);
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if let Some(rest) = line.strip_prefix("#split\t") {
                m.split = rest.trim().to_string();
                continue;
            }
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if !(2..=3).contains(&cols.len()) || cols[0].is_empty() {
                return Err(Error::Format(format!("manifest line {}: expected 2 or 3 tab-separated fields", i + 1)));
            }
            m.records.push(ManifestRecord {
                landmarks: PathBuf::from(cols[0]),
                gloss: cols[1].to_string(),
                teacher: cols.get(2).filter(|s| !s.is_empty()).map(PathBuf::from),
            });
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_tsv())?;
        Ok(())
    }

    /// Loads, resolves relative paths and checks that every referenced file
    /// exists.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let mut m = Self::parse(&fs::read_to_string(path)?, &stem)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut missing = Vec::new();
        for r in &mut m.records {
            if r.landmarks.is_relative() {
                r.landmarks = base.join(&r.landmarks);
            }
            if let Some(t) = &mut r.teacher {
                if t.is_relative() {
                    *t = base.join(&*t);
                }
            }
            for p in std::iter::once(&r.landmarks).chain(r.teacher.as_ref()) {
                if !p.exists() {
                    missing.push(p.display().to_string());
                }
            }
        }
        if !missing.is_empty() {
            return Err(Error::Format(format!("manifest {} references missing files: {}", path.display(), missing.join(", "))));
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tsv_round_trip() {
        let mut m = DatasetManifest::new("train");
        m.records.push(ManifestRecord {
            landmarks: "a.lmk".into(),
            gloss: "g1 g2".into(),
            teacher: None,
        });
        m.records.push(ManifestRecord {
            landmarks: "b.lmk".into(),
            gloss: "g3".into(),
            teacher: Some("b.tch".into()),
        });
        let text = m.to_tsv();
        assert_eq!(DatasetManifest::parse(&text, "x").unwrap(), m);
    }

    #[test]
    fn missing_files_fail_at_load() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.tsv");
        fs::write(&p, "nope.lmk\tg1\n").unwrap();
        let err = DatasetManifest::load(&p).unwrap_err().to_string();
        assert!(err.contains("nope.lmk"), "{err}");
        assert!(DatasetManifest::parse("only-one-field\n", "x").is_err());
    }
}
