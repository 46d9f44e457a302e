//! Batch attribution over manifests: synthetic datasets, scored runs and
//! ablation sweeps.

pub mod manifest;
pub mod run;
pub mod sweeps;
pub mod synth;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use thiserror::Error;

use crate::attribution::AttributionError;
use crate::calibration::CalibrationError;
use crate::io::IoError;
use crate::oracle::{OracleError, OracleSpec, Reconstructor};

pub use manifest::{Manifest, ManifestEntry, Split};
pub use run::{
    calibrate, compute_signals, evaluate, resolve_pair, CalibParams, ConfusionMatrix, EvalOptions, RunReport,
    SignalOptions, ThresholdSource, VideoSignal,
};
pub use synth::{synthesize_dataset, SynthConfig};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Video(#[from] IoError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Attribution(#[from] AttributionError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error("need {needed} calibration videos, manifest has {available}")]
    InsufficientCalibration { needed: usize, available: usize },
    #[error("calibration video {id} failed: {message}")]
    CalibrationVideo { id: String, message: String },
}

impl HarnessError {
    pub(crate) fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }
}

/// SplitMix64 finaliser.
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a path of integers.
pub fn mix_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x5EED, |acc, &p| splitmix(acc ^ splitmix(p)))
}

/// FNV-1a, used to key per-video seeds by id.
pub fn stable_hash(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Runs `f` over `items` on up to `jobs` workers, each with its own oracle
/// instance. Results come back in input order. Only a failure to open an
/// oracle aborts.
pub(crate) fn par_map<I, T, F>(
    items: &[I],
    spec: &OracleSpec,
    timeout: Duration,
    jobs: usize,
    f: F,
) -> Result<Vec<T>, HarnessError>
where
    I: Sync,
    T: Send,
    F: Fn(&mut dyn Reconstructor, &I) -> T + Sync,
{
    let n = items.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let workers = jobs.clamp(1, n);
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<T>>> = (0..n).map(|_| Mutex::new(None)).collect();
    thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                s.spawn(|| -> Result<(), OracleError> {
                    let mut oracle = spec.open(timeout)?;
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        if i >= n {
                            return Ok(());
                        }
                        let out = f(&mut *oracle, &items[i]);
                        *slots[i].lock().unwrap() = Some(out);
                    }
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker thread panicked"))
            .collect::<Result<Vec<()>, _>>()
    })?;
    Ok(slots
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("every item is processed"))
        .collect())
}
