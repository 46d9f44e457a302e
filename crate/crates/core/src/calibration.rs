//! Threshold calibration: the `(1 - alpha)` quantile of a kernel density
//! estimate over calibration signals, or the fixed zero-shot cut `tau = 1`.

use std::fmt;
use std::str::FromStr;

use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

pub const DEFAULT_ALPHA: f64 = 0.05;
/// Bisection bracket half-width beyond the sample range, in bandwidths.
const BRACKET_BANDWIDTHS: f64 = 6.0;

#[derive(Debug, Error, PartialEq)]
pub enum CalibrationError {
    #[error("degenerate calibration sample: all {0} signals are equal")]
    DegenerateSample(usize),
    #[error("need at least 2 calibration signals, got {0}")]
    TooFewSamples(usize),
    #[error("alpha {0} outside (0, 1)")]
    BadAlpha(f64),
    #[error("non-finite calibration signal at index {0}")]
    NonFinite(usize),
    #[error("threshold file: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Kernel {
    #[default]
    Gaussian,
    /// Uniform on `[-1, 1]`.
    Uniform,
    /// Epanechnikov on `[-1, 1]`.
    Epanechnikov,
}

impl Kernel {
    pub const ALL: [Kernel; 3] = [Kernel::Gaussian, Kernel::Uniform, Kernel::Epanechnikov];

    pub fn density(&self, x: f64) -> f64 {
        match self {
            Kernel::Gaussian => (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt(),
            Kernel::Uniform if x.abs() <= 1.0 => 0.5,
            Kernel::Epanechnikov if x.abs() <= 1.0 => 0.75 * (1.0 - x * x),
            _ => 0.0,
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            Kernel::Gaussian => standard_normal().cdf(x),
            Kernel::Uniform => ((x + 1.0) / 2.0).clamp(0.0, 1.0),
            Kernel::Epanechnikov => {
                let x = x.clamp(-1.0, 1.0);
                (0.25 * (2.0 + 3.0 * x - x * x * x)).clamp(0.0, 1.0)
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Kernel::Gaussian => "gaussian",
            Kernel::Uniform => "uniform",
            Kernel::Epanechnikov => "epanechnikov",
        }
    }
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Kernel {
    type Err = CalibrationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Kernel::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| CalibrationError::Parse(format!("unknown kernel `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BandwidthRule {
    #[default]
    Scott,
    Silverman,
}

impl BandwidthRule {
    pub const ALL: [BandwidthRule; 2] = [BandwidthRule::Scott, BandwidthRule::Silverman];

    pub fn name(&self) -> &'static str {
        match self {
            BandwidthRule::Scott => "scott",
            BandwidthRule::Silverman => "silverman",
        }
    }
}

impl fmt::Display for BandwidthRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BandwidthRule {
    type Err = CalibrationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BandwidthRule::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| CalibrationError::Parse(format!("unknown bandwidth rule `{s}`")))
    }
}

fn check_signals(signals: &[f64]) -> Result<(), CalibrationError> {
    if signals.len() < 2 {
        return Err(CalibrationError::TooFewSamples(signals.len()));
    }
    if let Some(i) = signals.iter().position(|s| !s.is_finite()) {
        return Err(CalibrationError::NonFinite(i));
    }
    Ok(())
}

/// Sample standard deviation with the `S - 1` denominator.
pub fn sample_std(signals: &[f64]) -> f64 {
    let n = signals.len() as f64;
    let mean = signals.iter().sum::<f64>() / n;
    (signals.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Linear-interpolation quantile of a sorted sample.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Scott: `sigma S^-1/5`. Silverman: `0.9 min(sigma, IQR/1.34) S^-1/5`,
/// using `sigma` alone when the IQR is zero.
pub fn bandwidth(signals: &[f64], rule: BandwidthRule) -> Result<f64, CalibrationError> {
    check_signals(signals)?;
    let sigma = sample_std(signals);
    if sigma <= 0.0 || !sigma.is_finite() {
        return Err(CalibrationError::DegenerateSample(signals.len()));
    }
    let factor = (signals.len() as f64).powf(-0.2);
    Ok(match rule {
        BandwidthRule::Scott => sigma * factor,
        BandwidthRule::Silverman => {
            let mut sorted = signals.to_vec();
            sorted.sort_by(f64::total_cmp);
            let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
            let spread = if iqr > 0.0 { sigma.min(iqr / 1.34) } else { sigma };
            0.9 * spread * factor
        }
    })
}

/// `(1/S) sum_q G((u - t_q) / h)` with `G` the kernel's CDF.
pub fn kde_cdf(signals: &[f64], h: f64, kernel: Kernel, u: f64) -> f64 {
    let sum: f64 = signals.iter().map(|t| kernel.cdf((u - t) / h)).sum();
    (sum / signals.len() as f64).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdMode {
    Kde,
    ZeroShot,
}

impl ThresholdMode {
    pub fn name(&self) -> &'static str {
        match self {
            ThresholdMode::Kde => "kde",
            ThresholdMode::ZeroShot => "zero_shot",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdModel {
    pub tau: f64,
    pub alpha: f64,
    pub kernel: Kernel,
    pub bandwidth_rule: BandwidthRule,
    /// Resolved bandwidth; 0 in zero-shot mode.
    pub h: f64,
    pub mode: ThresholdMode,
    pub signals: Vec<f64>,
}

/// Smallest `u` with `kde_cdf(u) >= 1 - alpha`, by bisection to machine
/// precision.
pub fn threshold(
    signals: &[f64],
    alpha: f64,
    kernel: Kernel,
    rule: BandwidthRule,
) -> Result<ThresholdModel, CalibrationError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(CalibrationError::BadAlpha(alpha));
    }
    let h = bandwidth(signals, rule)?;
    let target = 1.0 - alpha;
    let cdf = |u: f64| kde_cdf(signals, h, kernel, u);
    let (min, max) = signals
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| (lo.min(s), hi.max(s)));
    let mut lo = min - BRACKET_BANDWIDTHS * h;
    let mut hi = max + BRACKET_BANDWIDTHS * h;
    // Extreme alphas can sit inside the Gaussian tails beyond 6h.
    while cdf(lo) >= target {
        lo -= (hi - lo).max(h);
    }
    while cdf(hi) < target {
        hi += (hi - lo).max(h);
    }
    loop {
        let mid = lo + 0.5 * (hi - lo);
        if mid <= lo || mid >= hi {
            break;
        }
        if cdf(mid) >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(ThresholdModel {
        tau: hi,
        alpha,
        kernel,
        bandwidth_rule: rule,
        h,
        mode: ThresholdMode::Kde,
        signals: signals.to_vec(),
    })
}

/// `tau = 1` with no calibration data.
pub fn zero_shot() -> ThresholdModel {
    ThresholdModel {
        tau: 1.0,
        alpha: DEFAULT_ALPHA,
        kernel: Kernel::default(),
        bandwidth_rule: BandwidthRule::default(),
        h: 0.0,
        mode: ThresholdMode::ZeroShot,
        signals: Vec::new(),
    }
}

impl ThresholdModel {
    pub fn s(&self) -> usize {
        self.signals.len()
    }

    pub fn cdf(&self, u: f64) -> Option<f64> {
        (self.mode == ThresholdMode::Kde).then(|| kde_cdf(&self.signals, self.h, self.kernel, u))
    }

    /// `key=value` lines: tau, alpha, kernel, bandwidth_rule, h, mode, s,
    /// signals.
    pub fn to_text(&self) -> String {
        let signals: Vec<String> = self.signals.iter().map(|s| s.to_string()).collect();
        format!(
            "tau={}\nalpha={}\nkernel={}\nbandwidth_rule={}\nh={}\nmode={}\ns={}\nsignals={}\n",
            self.tau,
            self.alpha,
            self.kernel,
            self.bandwidth_rule,
            self.h,
            self.mode.name(),
            self.s(),
            signals.join(",")
        )
    }

    pub fn from_text(text: &str) -> Result<Self, CalibrationError> {
        let err = |m: String| CalibrationError::Parse(m);
        let mut fields = std::collections::HashMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line.split_once('=').ok_or_else(|| err(format!("line `{line}` lacks `=`")))?;
            if fields.insert(k.trim(), v.trim()).is_some() {
                return Err(err(format!("duplicate key `{}`", k.trim())));
            }
        }
        let get = |k: &str| fields.get(k).copied().ok_or_else(|| err(format!("missing `{k}`")));
        let num = |k: &str| -> Result<f64, CalibrationError> {
            let v = get(k)?;
            v.parse().map_err(|_| err(format!("bad number `{v}` for `{k}`")))
        };
        let mode = match get("mode")? {
            "kde" => ThresholdMode::Kde,
            "zero_shot" => ThresholdMode::ZeroShot,
            other => return Err(err(format!("unknown mode `{other}`"))),
        };
        let signals: Vec<f64> = match get("signals")? {
            "" => Vec::new(),
            list => list
                .split(',')
                .map(|s| s.trim().parse().map_err(|_| err(format!("bad signal `{s}`"))))
                .collect::<Result<_, _>>()?,
        };
        let s: usize = get("s")?.parse().map_err(|_| err("bad `s`".into()))?;
        if s != signals.len() {
            return Err(err(format!("s={s} but {} signals listed", signals.len())));
        }
        let model = ThresholdModel {
            tau: num("tau")?,
            alpha: num("alpha")?,
            kernel: get("kernel")?.parse()?,
            bandwidth_rule: get("bandwidth_rule")?.parse()?,
            h: num("h")?,
            mode,
            signals,
        };
        if !model.tau.is_finite() {
            return Err(err(format!("tau {} is not usable", model.tau)));
        }
        if mode == ThresholdMode::ZeroShot && model.tau != 1.0 {
            return Err(err(format!("zero-shot model with tau={}", model.tau)));
        }
        if mode == ThresholdMode::Kde && (model.h <= 0.0 || model.signals.len() < 2) {
            return Err(err("kde model needs h > 0 and at least 2 signals".into()));
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn scott_two_point() {
        let h = bandwidth(&[0.0, 1.0], BandwidthRule::Scott).unwrap();
        assert!((h - 0.5f64.sqrt() * 2f64.powf(-0.2)).abs() < 1e-15);
        assert!((h - 0.6156).abs() < 1e-4);
        assert_eq!(
            bandwidth(&[0.3, 0.3, 0.3], BandwidthRule::Scott),
            Err(CalibrationError::DegenerateSample(3))
        );
        assert_eq!(bandwidth(&[0.3], BandwidthRule::Scott), Err(CalibrationError::TooFewSamples(1)));
    }

    #[test]
    fn silverman_uses_iqr() {
        // sigma = 1.5811, IQR = 2 -> IQR/1.34 = 1.4925 is the smaller spread.
        let s = [1.0, 2.0, 3.0, 4.0, 5.0];
        let h = bandwidth(&s, BandwidthRule::Silverman).unwrap();
        assert!((h - 0.9 * (2.0 / 1.34) * 5f64.powf(-0.2)).abs() < 1e-12);
        // IQR of zero falls back to sigma.
        let flat = [0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 2.0];
        let h = bandwidth(&flat, BandwidthRule::Silverman).unwrap();
        assert!((h - 0.9 * sample_std(&flat) * 7f64.powf(-0.2)).abs() < 1e-12);
    }

    #[test]
    fn cdf_limits_and_table_values() {
        for k in Kernel::ALL {
            assert_eq!(kde_cdf(&[0.3], 0.2, k, 0.3), 0.5);
            assert!(kde_cdf(&[0.3], 0.2, k, -100.0) < 1e-12);
            assert!(kde_cdf(&[0.3], 0.2, k, 100.0) > 1.0 - 1e-12);
        }
        assert!((kde_cdf(&[0.0], 1.0, Kernel::Gaussian, 1.0) - 0.841344746).abs() < 1e-9);
    }

    #[test]
    fn symmetric_pair_median_is_zero() {
        for k in Kernel::ALL {
            let m = threshold(&[-0.5, 0.5], 0.5, k, BandwidthRule::Scott).unwrap();
            assert!(m.tau.abs() < 1e-12, "{k}: {}", m.tau);
        }
    }

    #[test]
    fn bad_alpha() {
        assert_eq!(
            threshold(&[0.1, 0.2], 1.0, Kernel::Gaussian, BandwidthRule::Scott),
            Err(CalibrationError::BadAlpha(1.0))
        );
    }

    #[test]
    fn text_round_trip() {
        let m = threshold(&[0.1, 0.2, 0.35, 1.0 / 3.0], 0.05, Kernel::Epanechnikov, BandwidthRule::Silverman).unwrap();
        let text = m.to_text();
        assert!(text.starts_with("tau="));
        assert_eq!(ThresholdModel::from_text(&text).unwrap(), m);
        let z = zero_shot();
        assert_eq!(ThresholdModel::from_text(&z.to_text()).unwrap(), z);
        assert!(ThresholdModel::from_text(&text.replace("s=4", "s=3")).is_err());
        assert!(ThresholdModel::from_text("tau=1\n").is_err());
    }

    proptest! {
        #[test]
        fn inf_characterization(
            signals in prop::collection::vec(0.0f64..2.0, 3..40),
            alpha in 0.01f64..0.5,
            kernel in prop::sample::select(Kernel::ALL.to_vec()),
        ) {
            prop_assume!(sample_std(&signals) > 1e-3);
            let m = threshold(&signals, alpha, kernel, BandwidthRule::Scott).unwrap();
            prop_assert!(m.cdf(m.tau).unwrap() >= 1.0 - alpha);
            prop_assert!(m.cdf(m.tau - 1e-6).unwrap() < 1.0 - alpha);
        }

        #[test]
        fn cdf_is_monotone(signals in prop::collection::vec(-1.0f64..1.0, 1..20), h in 0.01f64..1.0) {
            for k in Kernel::ALL {
                let mut prev = 0.0;
                for i in 0..200 {
                    let u = -3.0 + 6.0 * i as f64 / 199.0;
                    let c = kde_cdf(&signals, h, k, u);
                    prop_assert!(c >= prev);
                    prev = c;
                }
            }
        }
    }
}
