//! Line-oriented dataset manifests.
//!
//! ```text
//! # oracle=toy:7,4,16x16x1,64
//! # k=4
//! calib/belonging_000.swvt    belonging    calib:belonging    1234
//! eval/uniform-noise_000.swvt    non_belonging    eval:uniform-noise    -
//! ```
//!
//! `#` lines carry `key=value` metadata. The split is the `source_tag` prefix
//! before `:`; entries tagged `calib:` feed calibration, all others are
//! evaluated. Paths are relative to the manifest's directory.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use super::HarnessError;
use crate::attribution::Decision;
use crate::oracle::OracleSpec;

pub const CALIBRATION_PREFIX: &str = "calib:";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Calibration,
    Evaluation,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    /// As written in the manifest; doubles as the video id.
    pub path: String,
    pub label: Decision,
    pub source_tag: String,
    pub seed: Option<u64>,
}

impl ManifestEntry {
    pub fn split(&self) -> Split {
        if self.source_tag.starts_with(CALIBRATION_PREFIX) {
            Split::Calibration
        } else {
            Split::Evaluation
        }
    }

    pub fn id(&self) -> &str {
        &self.path
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    /// `key=value` pairs from `#` lines, in file order.
    pub meta: Vec<(String, String)>,
    /// Directory relative paths are resolved against.
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, HarnessError> {
        let mut m = Manifest {
            base_dir: base_dir.to_path_buf(),
            ..Default::default()
        };
        for (n, line) in text.lines().enumerate() {
            let bad = |msg: String| HarnessError::Manifest(format!("line {}: {msg}", n + 1));
            let trimmed = line.trim_end_matches('\r');
            if trimmed.trim().is_empty() {
                continue;
            }
            if let Some(comment) = trimmed.strip_prefix('#') {
                if let Some((k, v)) = comment.trim().split_once('=') {
                    m.meta.push((k.trim().to_string(), v.trim().to_string()));
                }
                continue;
            }
            let fields: Vec<&str> = trimmed.split('\t').collect();
            if fields.len() != 4 {
                return Err(bad(format!("expected 4 tab-separated fields, got {}", fields.len())));
            }
            let label = fields[1].parse::<Decision>().map_err(bad)?;
            let seed = match fields[3] {
                "-" => None,
                s => Some(s.parse().map_err(|_| bad(format!("bad seed `{s}`")))?),
            };
            if fields[0].is_empty() || fields[2].is_empty() {
                return Err(bad("empty path or source tag".into()));
            }
            m.entries.push(ManifestEntry {
                path: fields[0].to_string(),
                label,
                source_tag: fields[2].to_string(),
                seed,
            });
        }
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path)
            .map_err(|e| HarnessError::Manifest(format!("{}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.meta {
            out.push_str(&format!("# {k}={v}\n"));
        }
        for e in &self.entries {
            let seed = e.seed.map_or_else(|| "-".to_string(), |s| s.to_string());
            out.push_str(&format!("{}\t{}\t{}\t{}\n", e.path, e.label.token(), e.source_tag, seed));
        }
        out
    }

    /// Unique paths; calibration entries must be belonging.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.path.as_str()) {
                return Err(HarnessError::Manifest(format!("duplicate path `{}`", e.path)));
            }
            if e.split() == Split::Calibration && e.label != Decision::Belonging {
                return Err(HarnessError::Manifest(format!(
                    "calibration entry `{}` is not labelled belonging",
                    e.path
                )));
            }
        }
        Ok(())
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn oracle(&self) -> Result<Option<OracleSpec>, HarnessError> {
        self.meta("oracle")
            .map(|s| s.parse().map_err(|e: crate::oracle::OracleError| HarnessError::Manifest(e.to_string())))
            .transpose()
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        self.base_dir.join(&entry.path)
    }

    /// Entries of one split, sorted by id.
    pub fn split(&self, split: Split) -> Vec<&ManifestEntry> {
        let mut v: Vec<_> = self.entries.iter().filter(|e| e.split() == split).collect();
        v.sort_by(|a, b| a.path.cmp(&b.path));
        v
    }
}
