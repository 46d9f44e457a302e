//! Seeded synthetic datasets built around a toy target model.

use std::fs;
use std::path::Path;

use super::manifest::{Manifest, ManifestEntry};
use super::{mix_seed, HarnessError};
use crate::attribution::Decision;
use crate::io::save_video;
use crate::oracle::{
    synthesize_belonging, synthesize_nonbelonging, NonBelonging, OracleSpec, ToyChunkAutoencoder, ToyConfig,
};

const STREAM_CALIB: u64 = 1;
const STREAM_EVAL_BELONGING: u64 = 2;
const STREAM_NONBELONGING: u64 = 3;
const STREAM_OTHER_MODEL: u64 = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub toy: ToyConfig,
    pub n_chunks: usize,
    pub sigma_b: f64,
    pub calib: usize,
    pub eval_belonging: usize,
    /// Alternates uniform noise and other-model videos, noise first.
    pub nonbelonging: usize,
    pub master_seed: u64,
}

impl SynthConfig {
    /// `K = 4`, `N = 8`, 16x16x1, `d = 64`, `sigma_b = 0.01`; 20 calibration,
    /// 50 + 50 evaluation videos.
    pub fn desk(master_seed: u64) -> Self {
        Self {
            toy: ToyConfig::desk(7),
            n_chunks: 8,
            sigma_b: 0.01,
            calib: 20,
            eval_belonging: 50,
            nonbelonging: 50,
            master_seed,
        }
    }
}

/// One video to synthesize.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Recipe {
    Belonging { seed: u64 },
    NonBelonging { kind: NonBelonging, seed: u64 },
}

/// `(relative path, source tag, recipe)` for every video, calibration first.
pub fn plan(cfg: &SynthConfig) -> Vec<(String, String, Recipe)> {
    let mut out = Vec::new();
    for i in 0..cfg.calib {
        let seed = mix_seed(&[cfg.master_seed, STREAM_CALIB, i as u64]);
        out.push((format!("calib/belonging_{i:03}.swvt"), "calib:belonging".into(), Recipe::Belonging { seed }));
    }
    for i in 0..cfg.eval_belonging {
        let seed = mix_seed(&[cfg.master_seed, STREAM_EVAL_BELONGING, i as u64]);
        out.push((format!("eval/belonging_{i:03}.swvt"), "eval:belonging".into(), Recipe::Belonging { seed }));
    }
    for i in 0..cfg.nonbelonging {
        let seed = mix_seed(&[cfg.master_seed, STREAM_NONBELONGING, i as u64]);
        let kind = if i % 2 == 0 {
            NonBelonging::UniformNoise
        } else {
            let mut model_seed = mix_seed(&[cfg.master_seed, STREAM_OTHER_MODEL, i as u64]);
            if model_seed == cfg.toy.seed {
                model_seed = model_seed.wrapping_add(1);
            }
            NonBelonging::OtherToy { model_seed }
        };
        out.push((
            format!("eval/{}_{i:03}.swvt", kind.tag()),
            format!("eval:{}", kind.tag()),
            Recipe::NonBelonging { kind, seed },
        ));
    }
    out
}

/// Writes every video under `out_dir` plus `manifest.tsv`; returns the
/// manifest.
pub fn synthesize_dataset(cfg: &SynthConfig, out_dir: &Path) -> Result<Manifest, HarnessError> {
    if cfg.calib + cfg.eval_belonging + cfg.nonbelonging == 0 {
        return Err(HarnessError::Manifest("dataset would be empty".into()));
    }
    let target = ToyChunkAutoencoder::build(cfg.toy.clone())?;
    for sub in ["calib", "eval"] {
        fs::create_dir_all(out_dir.join(sub)).map_err(|e| HarnessError::io(out_dir.join(sub), e))?;
    }
    let mut manifest = Manifest {
        base_dir: out_dir.to_path_buf(),
        meta: vec![
            ("oracle".into(), OracleSpec::Toy(cfg.toy.clone()).to_string()),
            ("k".into(), cfg.toy.k.to_string()),
            ("n_chunks".into(), cfg.n_chunks.to_string()),
            ("sigma_b".into(), cfg.sigma_b.to_string()),
            ("master_seed".into(), cfg.master_seed.to_string()),
        ],
        entries: Vec::new(),
    };
    for (path, tag, recipe) in plan(cfg) {
        let (video, label, seed) = match recipe {
            Recipe::Belonging { seed } => (
                synthesize_belonging(&target, cfg.n_chunks, cfg.sigma_b, seed)?,
                Decision::Belonging,
                seed,
            ),
            Recipe::NonBelonging { kind, seed } => (
                synthesize_nonbelonging(&target, kind, cfg.n_chunks, cfg.sigma_b, seed)?,
                Decision::NonBelonging,
                seed,
            ),
        };
        save_video(&video, &out_dir.join(&path))?;
        manifest.entries.push(ManifestEntry {
            path,
            label,
            source_tag: tag,
            seed: Some(seed),
        });
    }
    manifest.validate()?;
    let manifest_path = out_dir.join("manifest.tsv");
    fs::write(&manifest_path, manifest.to_text()).map_err(|e| HarnessError::io(manifest_path, e))?;
    Ok(manifest)
}
