//! Ablation sweeps: calibration size, video length, loss metric, window pair,
//! post-processing robustness and the double-reconstruction baseline.

use std::fmt::Write as _;

use super::manifest::{Manifest, Split};
use super::run::{
    calibration_entries, calibration_values, compute_signals, load_entry, score, CalibParams, ConfusionMatrix,
    SignalOptions, VideoSignal,
};
use super::{par_map, HarnessError};
use crate::attribution::{argmax_corrupted, corruption_table, Decision, WindowPair};
use crate::calibration::{threshold, zero_shot, ThresholdModel};
use crate::metrics::MetricKind;
use crate::oracle::aedr_signal;
use crate::transform::Transform;

/// A rendered sweep: header plus rows of cells.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepTable {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub notes: Vec<String>,
}

impl SweepTable {
    fn new(name: &str, header: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            header: header.iter().map(|s| s.to_string()).collect(),
            ..Default::default()
        }
    }

    pub fn render_text(&self) -> String {
        let mut widths: Vec<usize> = self.header.iter().map(String::len).collect();
        for row in &self.rows {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.len());
            }
        }
        let line = |cells: &[String]| {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        let mut out = format!("# sweep: {}\n{}\n", self.name, line(&self.header));
        for row in &self.rows {
            out.push_str(&line(row));
            out.push('\n');
        }
        for n in &self.notes {
            let _ = writeln!(out, "# {n}");
        }
        out
    }

    pub fn render_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

fn failed(signals: &[VideoSignal]) -> usize {
    signals.iter().filter(|s| s.outcome.is_err()).count()
}

fn mean_ms(signals: &[VideoSignal]) -> f64 {
    signals.iter().map(|s| s.ms).sum::<f64>() / signals.len().max(1) as f64
}

fn eval_signals(manifest: &Manifest, pair: WindowPair, opts: &SignalOptions) -> Result<Vec<VideoSignal>, HarnessError> {
    compute_signals(manifest, &manifest.split(Split::Evaluation), pair, opts)
}

fn calib_values(
    manifest: &Manifest,
    pair: WindowPair,
    opts: &SignalOptions,
    samples: Option<usize>,
) -> Result<Vec<f64>, HarnessError> {
    let entries = calibration_entries(manifest, samples)?;
    calibration_values(&compute_signals(manifest, &entries, pair, opts)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplesRow {
    pub s: usize,
    pub threshold: ThresholdModel,
    pub confusion: ConfusionMatrix,
}

/// For each `S`, calibrate on the first `S` calibration videos (`S = 0` is
/// zero-shot) and score the evaluation split.
pub fn sweep_samples(
    manifest: &Manifest,
    pair: WindowPair,
    opts: &SignalOptions,
    s_values: &[usize],
    params: CalibParams,
) -> Result<Vec<SamplesRow>, HarnessError> {
    let max_s = s_values.iter().copied().max().unwrap_or(0);
    let pool = calib_values(manifest, pair, opts, Some(max_s))?;
    let eval = eval_signals(manifest, pair, opts)?;
    s_values
        .iter()
        .map(|&s| {
            let model = match s {
                0 => zero_shot(),
                _ => threshold(&pool[..s], params.alpha, params.kernel, params.rule)?,
            };
            Ok(SamplesRow {
                s,
                confusion: score(&eval, model.tau),
                threshold: model,
            })
        })
        .collect()
}

pub fn samples_table(rows: &[SamplesRow]) -> SweepTable {
    let mut t = SweepTable::new("samples", &["s", "mode", "tau", "accuracy_pct"]);
    for r in rows {
        t.rows.push(vec![
            r.s.to_string(),
            r.threshold.mode.name().to_string(),
            format!("{:.6}", r.threshold.tau),
            pct(r.confusion.accuracy()),
        ]);
    }
    t
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub label: String,
    /// `None` when no threshold could be fitted; the row is then unscored.
    pub tau: Option<f64>,
    pub confusion: ConfusionMatrix,
    pub failed: usize,
    pub mean_ms: f64,
}

/// Truncates calibration and evaluation videos to each fraction,
/// recalibrates, and scores. When the truncated calibration videos are too
/// short to produce a signal the row is left unscored, but per-video
/// failures are still counted. A shorter video has fewer overlap frames and a
/// wider signal spread, so a threshold fitted at full length would not
/// transfer.
pub fn sweep_length(
    manifest: &Manifest,
    pair: WindowPair,
    opts: &SignalOptions,
    params: CalibParams,
    fractions: &[f64],
) -> Result<Vec<EvalRow>, HarnessError> {
    fractions
        .iter()
        .map(|&fraction| {
            let mut o = opts.clone();
            o.transforms.push(Transform::Truncate { fraction });
            o.calibration_transforms.push(Transform::Truncate { fraction });
            let tau = match calib_values(manifest, pair, &o, None) {
                Ok(values) => Some(threshold(&values, params.alpha, params.kernel, params.rule)?.tau),
                Err(HarnessError::CalibrationVideo { .. }) => None,
                Err(e) => return Err(e),
            };
            let eval = eval_signals(manifest, pair, &o)?;
            Ok(EvalRow {
                label: fraction.to_string(),
                tau,
                confusion: tau.map(|tau| score(&eval, tau)).unwrap_or_default(),
                failed: failed(&eval),
                mean_ms: mean_ms(&eval),
            })
        })
        .collect()
}

pub fn length_table(rows: &[EvalRow]) -> SweepTable {
    let mut t = SweepTable::new("length", &["fraction", "tau", "accuracy_pct", "failed", "mean_ms"]);
    for r in rows {
        t.rows.push(vec![
            r.label.clone(),
            r.tau.map_or_else(|| "n/a".to_string(), |tau| format!("{tau:.6}")),
            match r.tau {
                Some(_) => pct(r.confusion.accuracy()),
                None => "n/a".to_string(),
            },
            r.failed.to_string(),
            format!("{:.3}", r.mean_ms),
        ]);
    }
    t.notes.push("mean_ms is wall-clock and varies between runs".into());
    t
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedRow {
    pub label: String,
    /// `Err` when calibration failed for this configuration.
    pub result: Result<(ThresholdModel, ConfusionMatrix), String>,
}

fn calibrated_run(
    manifest: &Manifest,
    pair: WindowPair,
    opts: &SignalOptions,
    params: CalibParams,
) -> Result<Result<(ThresholdModel, ConfusionMatrix), String>, HarnessError> {
    let values = calib_values(manifest, pair, opts, None)?;
    let model = match threshold(&values, params.alpha, params.kernel, params.rule) {
        Ok(m) => m,
        Err(e) => return Ok(Err(e.to_string())),
    };
    let eval = eval_signals(manifest, pair, opts)?;
    let confusion = score(&eval, model.tau);
    Ok(Ok((model, confusion)))
}

/// One calibration and evaluation per metric.
pub fn sweep_metric(
    manifest: &Manifest,
    pair: WindowPair,
    opts: &SignalOptions,
    metrics: &[MetricKind],
    params: CalibParams,
) -> Result<Vec<CalibratedRow>, HarnessError> {
    metrics
        .iter()
        .map(|&m| {
            let o = SignalOptions { metric: m, ..opts.clone() };
            Ok(CalibratedRow {
                label: m.to_string(),
                result: calibrated_run(manifest, pair, &o, params)?,
            })
        })
        .collect()
}

pub fn calibrated_table(name: &str, key: &str, rows: &[CalibratedRow]) -> SweepTable {
    let mut t = SweepTable::new(name, &[key, "tau", "accuracy_pct"]);
    for r in rows {
        match &r.result {
            Ok((m, c)) => t.rows.push(vec![r.label.clone(), format!("{:.6}", m.tau), pct(c.accuracy())]),
            Err(e) => {
                t.rows.push(vec![r.label.clone(), "-".into(), "-".into()]);
                t.notes.push(format!("{}: {e}", r.label));
            }
        }
    }
    t
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowSweep {
    pub rows: Vec<CalibratedRow>,
    /// Mean whole-window loss per offset over the calibration videos.
    pub table: Vec<(usize, f64)>,
    pub searched: WindowPair,
}

/// One calibration and evaluation per pair, plus the searched choice.
pub fn sweep_window(
    manifest: &Manifest,
    opts: &SignalOptions,
    pairs: &[WindowPair],
    params: CalibParams,
) -> Result<WindowSweep, HarnessError> {
    let calib: Vec<_> = calibration_entries(manifest, None)?
        .into_iter()
        .map(|e| {
            load_entry(manifest, e).map_err(|message| HarnessError::CalibrationVideo {
                id: e.id().to_string(),
                message,
            })
        })
        .collect::<Result<_, _>>()?;
    let mut oracle = opts.oracle.open(opts.timeout)?;
    let table = corruption_table(&calib, &mut *oracle, opts.metric)?;
    let k = oracle.chunk_frames();
    let searched = WindowPair::new(0, argmax_corrupted(&table, k)?, k)?;
    let rows = pairs
        .iter()
        .map(|&p| {
            Ok(CalibratedRow {
                label: format!("({p})"),
                result: calibrated_run(manifest, p, opts, params)?,
            })
        })
        .collect::<Result<_, HarnessError>>()?;
    Ok(WindowSweep { rows, table, searched })
}

pub fn window_tables(sweep: &WindowSweep) -> Vec<SweepTable> {
    let mut pairs = calibrated_table("window", "pair", &sweep.rows);
    pairs.notes.push(format!("searched pair: ({})", sweep.searched));
    let mut losses = SweepTable::new("window-loss", &["offset", "kind", "mean_loss"]);
    let k = sweep.table.len().saturating_sub(1).max(1);
    for (j, loss) in &sweep.table {
        losses.rows.push(vec![
            j.to_string(),
            crate::video::WindowKind::of(*j, k).to_string(),
            format!("{loss:e}"),
        ]);
    }
    vec![pairs, losses]
}

/// Scores transformed evaluation videos against a clean-calibrated
/// threshold. `None` is the untransformed baseline.
pub fn sweep_robustness(
    manifest: &Manifest,
    pair: WindowPair,
    opts: &SignalOptions,
    model: &ThresholdModel,
    transforms: &[Option<Transform>],
) -> Result<Vec<EvalRow>, HarnessError> {
    transforms
        .iter()
        .map(|t| {
            let mut o = opts.clone();
            o.transforms.extend(t.iter().copied());
            let eval = eval_signals(manifest, pair, &o)?;
            Ok(EvalRow {
                label: t.map_or_else(|| "none".to_string(), |t| t.to_string()),
                tau: Some(model.tau),
                confusion: score(&eval, model.tau),
                failed: failed(&eval),
                mean_ms: mean_ms(&eval),
            })
        })
        .collect()
}

pub fn robustness_table(rows: &[EvalRow]) -> SweepTable {
    let base = rows.first().map(|r| r.confusion.accuracy()).unwrap_or(0.0);
    let mut t = SweepTable::new("robustness", &["transform", "accuracy_pct", "drop_pts", "failed"]);
    for r in rows {
        let acc = r.confusion.accuracy();
        t.rows.push(vec![r.label.clone(), pct(acc), pct(base - acc), r.failed.to_string()]);
    }
    t
}

pub const ROBUSTNESS_TRANSFORMS: [Option<Transform>; 5] = [
    None,
    Some(Transform::CenterCrop50),
    Some(Transform::FlipH),
    Some(Transform::FlipV),
    Some(Transform::GaussianNoise { sigma: 0.05 }),
];

#[derive(Debug, Clone, PartialEq)]
pub struct AedrComparison {
    /// `(id, truth, ratio)` for each evaluation video that succeeded.
    pub ratios: Vec<(String, Decision, f64)>,
    /// Belonging iff `ratio < cut`.
    pub cut: f64,
    pub aedr: ConfusionMatrix,
    pub signal: ConfusionMatrix,
    pub failed: usize,
}

/// The cut that maximises accuracy of "belonging iff value < cut" over
/// labelled values; ties go to the smallest cut.
pub fn best_cut(values: &[(Decision, f64)]) -> (f64, ConfusionMatrix) {
    let mut sorted: Vec<f64> = values.iter().map(|v| v.1).collect();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut candidates = vec![sorted.first().copied().unwrap_or(0.0)];
    candidates.extend(sorted.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    candidates.push(sorted.last().map_or(1.0, |v| v + v.abs().max(1.0)));
    let eval = |cut: f64| {
        ConfusionMatrix::from_outcomes(values.iter().map(|&(truth, v)| {
            (truth, if v < cut { Decision::Belonging } else { Decision::NonBelonging })
        }))
    };
    let mut best = (candidates[0], eval(candidates[0]));
    for &c in &candidates[1..] {
        let m = eval(c);
        if m.accuracy() > best.1.accuracy() {
            best = (c, m);
        }
    }
    best
}

/// Double-reconstruction ratio versus the window-pair signal at `model`'s
/// threshold. The ratio's cut is the best achievable on the labelled
/// evaluation split.
pub fn sweep_aedr(
    manifest: &Manifest,
    pair: WindowPair,
    opts: &SignalOptions,
    model: &ThresholdModel,
) -> Result<AedrComparison, HarnessError> {
    let entries = manifest.split(Split::Evaluation);
    let aedr = par_map(&entries, &opts.oracle, opts.timeout, opts.jobs, |oracle, entry| {
        load_entry(manifest, entry)
            .and_then(|v| aedr_signal(oracle, &v, opts.metric).map_err(|e| e.to_string()))
            .map(|s| (entry.id().to_string(), entry.label, s.ratio))
    })?;
    let failed = aedr.iter().filter(|r| r.is_err()).count();
    let ratios: Vec<_> = aedr.into_iter().filter_map(Result::ok).collect();
    let labelled: Vec<_> = ratios.iter().map(|r| (r.1, r.2)).collect();
    let (cut, aedr) = best_cut(&labelled);
    let signal = score(&eval_signals(manifest, pair, opts)?, model.tau);
    Ok(AedrComparison {
        ratios,
        cut,
        aedr,
        signal,
        failed,
    })
}

pub fn aedr_table(c: &AedrComparison) -> SweepTable {
    let mut t = SweepTable::new("aedr", &["signal", "threshold", "accuracy_pct"]);
    t.rows.push(vec!["window-pair".into(), "calibrated".into(), pct(c.signal.accuracy())]);
    t.rows.push(vec!["double-reconstruction".into(), format!("{:e}", c.cut), pct(c.aedr.accuracy())]);
    t.notes.push("double-reconstruction cut is the best achievable on the evaluation labels".into());
    if c.failed > 0 {
        t.notes.push(format!("{} videos failed", c.failed));
    }
    t
}
