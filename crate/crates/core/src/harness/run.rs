//! Scored attribution runs over a manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use super::manifest::{Manifest, ManifestEntry, Split};
use super::{mix_seed, par_map, stable_hash, HarnessError};
use crate::attribution::{
    attribution_signal, select_window_pair, AttributionSignal, Decision, PairStrategy, WindowPair, WindowPairChoice,
};
use crate::calibration::{threshold, zero_shot, BandwidthRule, Kernel, ThresholdModel, DEFAULT_ALPHA};
use crate::io::{load_video, VideoFormat};
use crate::metrics::MetricKind;
use crate::oracle::{OracleSpec, Reconstructor, DEFAULT_TIMEOUT};
use crate::transform::Transform;
use crate::video::Video;

/// Everything that shapes one video's signal.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalOptions {
    pub oracle: OracleSpec,
    pub metric: MetricKind,
    /// Applied in order to evaluation videos.
    pub transforms: Vec<Transform>,
    /// Applied in order to calibration videos.
    pub calibration_transforms: Vec<Transform>,
    pub jobs: usize,
    /// Master seed for transform noise.
    pub seed: u64,
    pub timeout: Duration,
}

impl SignalOptions {
    pub fn new(oracle: OracleSpec, seed: u64) -> Self {
        Self {
            oracle,
            metric: MetricKind::Mse,
            transforms: Vec::new(),
            calibration_transforms: Vec::new(),
            jobs: 1,
            seed,
            timeout: DEFAULT_TIMEOUT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibParams {
    pub alpha: f64,
    pub kernel: Kernel,
    pub rule: BandwidthRule,
}

impl Default for CalibParams {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            kernel: Kernel::Gaussian,
            rule: BandwidthRule::Scott,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ThresholdSource {
    /// Fit on the first `samples` calibration videos (all when `None`).
    Calibrate { params: CalibParams, samples: Option<usize> },
    ZeroShot,
    Fixed(ThresholdModel),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub signal: SignalOptions,
    pub pair: PairStrategy,
    pub threshold: ThresholdSource,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoSignal {
    pub id: String,
    pub truth: Decision,
    pub source_tag: String,
    pub outcome: Result<AttributionSignal, String>,
    /// Wall-clock milliseconds; never part of the text report.
    pub ms: f64,
}

impl VideoSignal {
    pub fn t(&self) -> Option<f64> {
        self.outcome.as_ref().ok().map(|s| s.t)
    }
}

pub fn load_entry(manifest: &Manifest, entry: &ManifestEntry) -> Result<Video, String> {
    let path = manifest.resolve(entry);
    load_video(&path, VideoFormat::detect(&path))
        .map(|l| l.video)
        .map_err(|e| e.to_string())
}

/// Applies `transforms` in order; step `i` draws noise from a seed keyed by
/// the master seed, the video id and `i`.
pub fn apply_transforms(video: Video, id: &str, transforms: &[Transform], seed: u64) -> Result<Video, String> {
    transforms.iter().enumerate().try_fold(video, |v, (i, t)| {
        t.apply(&v, mix_seed(&[seed, stable_hash(id), i as u64]))
            .map_err(|e| format!("{t}: {e}"))
    })
}

fn signal_for(
    oracle: &mut dyn Reconstructor,
    manifest: &Manifest,
    entry: &ManifestEntry,
    pair: WindowPair,
    opts: &SignalOptions,
    transforms: &[Transform],
) -> VideoSignal {
    let start = Instant::now();
    let outcome = load_entry(manifest, entry)
        .and_then(|v| apply_transforms(v, entry.id(), transforms, opts.seed))
        .and_then(|v| attribution_signal(&v, oracle, pair, opts.metric).map_err(|e| e.to_string()));
    VideoSignal {
        id: entry.id().to_string(),
        truth: entry.label,
        source_tag: entry.source_tag.clone(),
        outcome,
        ms: start.elapsed().as_secs_f64() * 1e3,
    }
}

/// Signals for `entries` in the given order. Evaluation entries get
/// `opts.transforms`, calibration entries `opts.calibration_transforms`.
pub fn compute_signals(
    manifest: &Manifest,
    entries: &[&ManifestEntry],
    pair: WindowPair,
    opts: &SignalOptions,
) -> Result<Vec<VideoSignal>, HarnessError> {
    par_map(entries, &opts.oracle, opts.timeout, opts.jobs, |oracle, entry| {
        let transforms: &[Transform] = match entry.split() {
            Split::Calibration => &opts.calibration_transforms,
            Split::Evaluation => &opts.transforms,
        };
        signal_for(oracle, manifest, entry, pair, opts, transforms)
    })
}

/// Fixed and explicit pairs need no data; a searched pair scans the
/// calibration videos.
pub fn resolve_pair(
    manifest: &Manifest,
    strategy: PairStrategy,
    opts: &SignalOptions,
) -> Result<WindowPairChoice, HarnessError> {
    let mut oracle = opts.oracle.open(opts.timeout)?;
    let calib = match strategy {
        PairStrategy::Searched => load_calibration(manifest, None)?,
        _ => Vec::new(),
    };
    Ok(select_window_pair(&calib, &mut *oracle, strategy, opts.metric)?)
}

pub fn load_calibration(manifest: &Manifest, samples: Option<usize>) -> Result<Vec<Video>, HarnessError> {
    calibration_entries(manifest, samples)?
        .into_iter()
        .map(|e| {
            load_entry(manifest, e).map_err(|message| HarnessError::CalibrationVideo {
                id: e.id().to_string(),
                message,
            })
        })
        .collect()
}

/// The first `samples` calibration entries by id.
pub fn calibration_entries(manifest: &Manifest, samples: Option<usize>) -> Result<Vec<&ManifestEntry>, HarnessError> {
    let mut all = manifest.split(Split::Calibration);
    if let Some(s) = samples {
        if s > all.len() {
            return Err(HarnessError::InsufficientCalibration {
                needed: s,
                available: all.len(),
            });
        }
        all.truncate(s);
    }
    Ok(all)
}

/// Successful calibration t-values; any failed calibration video is an error.
pub fn calibration_values(signals: &[VideoSignal]) -> Result<Vec<f64>, HarnessError> {
    signals
        .iter()
        .map(|s| match &s.outcome {
            Ok(sig) => Ok(sig.t),
            Err(message) => Err(HarnessError::CalibrationVideo {
                id: s.id.clone(),
                message: message.clone(),
            }),
        })
        .collect()
}

pub fn calibrate(
    manifest: &Manifest,
    pair: WindowPair,
    opts: &SignalOptions,
    params: CalibParams,
    samples: Option<usize>,
) -> Result<ThresholdModel, HarnessError> {
    let entries = calibration_entries(manifest, samples)?;
    let signals = compute_signals(manifest, &entries, pair, opts)?;
    let values = calibration_values(&signals)?;
    Ok(threshold(&values, params.alpha, params.kernel, params.rule)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    /// Belonging classified belonging.
    pub tp: usize,
    /// Non-belonging classified belonging.
    pub fp: usize,
    /// Belonging classified non-belonging.
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionMatrix {
    pub fn from_outcomes(pairs: impl IntoIterator<Item = (Decision, Decision)>) -> Self {
        let mut m = Self::default();
        for (truth, decision) in pairs {
            match (truth, decision) {
                (Decision::Belonging, Decision::Belonging) => m.tp += 1,
                (Decision::NonBelonging, Decision::Belonging) => m.fp += 1,
                (Decision::Belonging, Decision::NonBelonging) => m.fn_ += 1,
                (Decision::NonBelonging, Decision::NonBelonging) => m.tn += 1,
            }
        }
        m
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// `(TP + TN) / total`; 0 for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => (self.tp + self.tn) as f64 / n as f64,
        }
    }
}

/// Confusion matrix of the successful signals at threshold `tau`.
pub fn score(signals: &[VideoSignal], tau: f64) -> ConfusionMatrix {
    ConfusionMatrix::from_outcomes(
        signals
            .iter()
            .filter_map(|s| s.outcome.as_ref().ok().map(|sig| (s.truth, sig.decide(tau)))),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    /// Resolved configuration, echoed at the top of the report.
    pub config: Vec<(String, String)>,
    pub pair: WindowPairChoice,
    pub threshold: ThresholdModel,
    /// Evaluation videos sorted by id.
    pub records: Vec<VideoSignal>,
    pub confusion: ConfusionMatrix,
}

pub fn evaluate(manifest: &Manifest, opts: &EvalOptions) -> Result<RunReport, HarnessError> {
    let sig = &opts.signal;
    let pair = resolve_pair(manifest, opts.pair, sig)?;
    let threshold = match &opts.threshold {
        ThresholdSource::ZeroShot => zero_shot(),
        ThresholdSource::Fixed(m) => m.clone(),
        ThresholdSource::Calibrate { params, samples } => calibrate(manifest, pair.pair, sig, *params, *samples)?,
    };
    let entries = manifest.split(Split::Evaluation);
    let records = compute_signals(manifest, &entries, pair.pair, sig)?;
    let confusion = score(&records, threshold.tau);
    let transforms = if sig.transforms.is_empty() {
        "none".to_string()
    } else {
        sig.transforms.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" ")
    };
    let config = vec![
        ("oracle".into(), sig.oracle.to_string()),
        ("metric".into(), sig.metric.to_string()),
        ("pair_strategy".into(), opts.pair.to_string()),
        ("pair".into(), pair.pair.to_string()),
        ("transforms".into(), transforms),
        ("seed".into(), sig.seed.to_string()),
    ];
    Ok(RunReport {
        config,
        pair,
        threshold,
        records,
        confusion,
    })
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub const HISTOGRAM_BINS: usize = 40;

impl RunReport {
    pub fn accuracy(&self) -> f64 {
        self.confusion.accuracy()
    }

    pub fn failures(&self) -> impl Iterator<Item = (&str, &str)> {
        self.records
            .iter()
            .filter_map(|r| r.outcome.as_ref().err().map(|e| (r.id.as_str(), e.as_str())))
    }

    /// Deterministic text report; contains no timings.
    pub fn render_report(&self) -> String {
        let mut out = String::from("# attribution run\n");
        for (k, v) in &self.config {
            let _ = writeln!(out, "{k} = {v}");
        }
        let th = &self.threshold;
        let _ = writeln!(out, "threshold.mode = {}", th.mode.name());
        let _ = writeln!(out, "threshold.tau = {}", th.tau);
        let _ = writeln!(out, "threshold.alpha = {}", th.alpha);
        let _ = writeln!(out, "threshold.kernel = {}", th.kernel);
        let _ = writeln!(out, "threshold.bandwidth_rule = {}", th.bandwidth_rule);
        let _ = writeln!(out, "threshold.h = {}", th.h);
        let _ = writeln!(out, "threshold.s = {}", th.s());
        if !self.pair.table.is_empty() {
            out.push_str("\n# mean window loss per offset\n");
            for (j, loss) in &self.pair.table {
                let _ = writeln!(out, "offset {j}: {loss:e}");
            }
        }
        let c = &self.confusion;
        let failed = self.failures().count();
        let _ = writeln!(out, "\n# scores\nvideos = {}\nscored = {}\nfailed = {failed}", self.records.len(), c.total());
        let _ = writeln!(out, "tp = {}\nfp = {}\nfn = {}\ntn = {}", c.tp, c.fp, c.fn_, c.tn);
        let _ = writeln!(out, "accuracy = {:.6}", c.accuracy());
        out.push_str("\n# videos\nid\ttruth\tt\tdecision\tcapped_frames\tdropped_frames\n");
        for r in &self.records {
            match &r.outcome {
                Ok(s) => {
                    let _ = writeln!(
                        out,
                        "{}\t{}\t{}\t{}\t{}\t{}",
                        r.id,
                        r.truth.token(),
                        s.t,
                        s.decide(th.tau).token(),
                        s.capped_frames,
                        s.dropped_frames
                    );
                }
                Err(e) => {
                    let _ = writeln!(out, "{}\t{}\t-\terror\t-\t-\t# {}", r.id, r.truth.token(), e);
                }
            }
        }
        out
    }

    /// `id,t,decision,truth,capped_frames,ms`; failed videos have empty t.
    pub fn render_csv(&self) -> String {
        let mut out = String::from("id,t,decision,truth,capped_frames,ms\n");
        for r in &self.records {
            let (t, decision, capped) = match &r.outcome {
                Ok(s) => (s.t.to_string(), s.decide(self.threshold.tau).token().to_string(), s.capped_frames.to_string()),
                Err(_) => (String::new(), "error".to_string(), String::new()),
            };
            let _ = writeln!(out, "{},{t},{decision},{},{capped},{:.3}", csv_field(&r.id), r.truth.token(), r.ms);
        }
        out
    }

    /// One `(file name, csv)` histogram of t per ground-truth label, on a
    /// shared grid.
    pub fn render_histograms(&self) -> Vec<(String, String)> {
        let ts: Vec<(Decision, f64)> = self.records.iter().filter_map(|r| r.t().map(|t| (r.truth, t))).collect();
        let lo = ts.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
        let hi = ts.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = if ts.is_empty() {
            (0.0, 1.0)
        } else if hi > lo {
            (lo, hi)
        } else {
            (lo - 0.5, hi + 0.5)
        };
        let width = (hi - lo) / HISTOGRAM_BINS as f64;
        [Decision::Belonging, Decision::NonBelonging]
            .into_iter()
            .map(|label| {
                let mut counts = [0usize; HISTOGRAM_BINS];
                for &(_, t) in ts.iter().filter(|x| x.0 == label) {
                    let bin = (((t - lo) / width) as usize).min(HISTOGRAM_BINS - 1);
                    counts[bin] += 1;
                }
                let mut csv = String::from("bin_start,bin_end,count\n");
                for (i, c) in counts.iter().enumerate() {
                    let _ = writeln!(csv, "{},{},{c}", lo + i as f64 * width, lo + (i + 1) as f64 * width);
                }
                (format!("hist_{}.csv", label.token()), csv)
            })
            .collect()
    }

    /// Writes `report.txt`, `results.csv` and the histograms into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<(), HarnessError> {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        let mut files = vec![
            ("report.txt".to_string(), self.render_report()),
            ("results.csv".to_string(), self.render_csv()),
        ];
        files.extend(self.render_histograms());
        for (name, body) in files {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| HarnessError::io(&path, e))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_formula() {
        let m = ConfusionMatrix {
            tp: 484,
            fp: 0,
            fn_: 16,
            tn: 500,
        };
        assert!((m.accuracy() - 0.984).abs() < 1e-12);
        let wrong = ConfusionMatrix {
            tp: 0,
            fp: 5,
            fn_: 5,
            tn: 0,
        };
        assert_eq!(wrong.accuracy(), 0.0);
        assert_eq!(ConfusionMatrix::default().accuracy(), 0.0);
    }

    #[test]
    fn csv_quoting() {
        assert_eq!(csv_field("a,b"), "\"a,b\"");
        assert_eq!(csv_field("plain"), "plain");
    }
}
