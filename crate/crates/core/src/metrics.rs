//! Per-frame reconstruction losses.
//!
//! Every [`MetricKind`] is turned into a dissimilarity (zero for identical
//! frames, growing with the difference) so that loss ratios keep one
//! orientation: PSNR enters as `PSNR_CAP_DB - PSNR` and SSIM as `1 - SSIM`.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::video::{FrameRange, FrameShape, Video};

/// MSE floor before taking the logarithm; caps PSNR at 120 dB.
pub const MSE_FLOOR: f64 = 1e-12;
pub const PSNR_CAP_DB: f64 = 120.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("frame sizes differ: {left} vs {right} elements")]
    DimensionMismatch { left: usize, right: usize },
    #[error("frame shape {shape} does not match {len} elements")]
    ShapeMismatch { shape: FrameShape, len: usize },
    #[error("window shapes differ: {left} vs {right}")]
    WindowMismatch { left: String, right: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum MetricKind {
    #[default]
    Mse,
    Mae,
    Psnr,
    Ssim,
}

impl MetricKind {
    pub const ALL: [MetricKind; 4] = [MetricKind::Mse, MetricKind::Mae, MetricKind::Psnr, MetricKind::Ssim];

    pub fn name(&self) -> &'static str {
        match self {
            MetricKind::Mse => "mse",
            MetricKind::Mae => "mae",
            MetricKind::Psnr => "psnr",
            MetricKind::Ssim => "ssim",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("unknown metric `{0}` (expected mse, mae, psnr or ssim)")]
pub struct ParseMetricError(pub String);

impl FromStr for MetricKind {
    type Err = ParseMetricError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mse" => Ok(MetricKind::Mse),
            "mae" => Ok(MetricKind::Mae),
            "psnr" => Ok(MetricKind::Psnr),
            "ssim" => Ok(MetricKind::Ssim),
            _ => Err(ParseMetricError(s.to_string())),
        }
    }
}

fn check_same(a: &[f32], b: &[f32]) -> Result<(), MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(())
}

pub fn mse(a: &[f32], b: &[f32]) -> Result<f64, MetricError> {
    check_same(a, b)?;
    let sum: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.len() as f64)
}

pub fn mae(a: &[f32], b: &[f32]) -> Result<f64, MetricError> {
    check_same(a, b)?;
    let sum: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64 - y as f64).abs())
        .sum();
    Ok(sum / a.len() as f64)
}

/// PSNR in dB for a dynamic range of 1, capped at [`PSNR_CAP_DB`].
pub fn psnr_from_mse(mse: f64) -> f64 {
    -10.0 * mse.max(MSE_FLOOR).log10()
}

pub fn psnr(a: &[f32], b: &[f32]) -> Result<f64, MetricError> {
    mse(a, b).map(psnr_from_mse)
}

/// Normalised 1-D Gaussian taps for the SSIM window.
pub fn ssim_taps() -> [f64; SSIM_WINDOW] {
    let radius = (SSIM_WINDOW / 2) as f64;
    let mut taps = [0.0; SSIM_WINDOW];
    for (i, t) in taps.iter_mut().enumerate() {
        let x = i as f64 - radius;
        *t = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Half-sample symmetric boundary (`d c b a | a b c d | d c b a`), valid for
/// any offset.
pub fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let m = i.rem_euclid(2 * n);
    (if m < n { m } else { 2 * n - 1 - m }) as usize
}

/// Gaussian-window SSIM, computed per channel and averaged.
pub fn ssim(a: &[f32], b: &[f32], shape: FrameShape) -> Result<f64, MetricError> {
    check_same(a, b)?;
    if shape.len() != a.len() {
        return Err(MetricError::ShapeMismatch { shape, len: a.len() });
    }
    let (h, w, c) = (shape.height, shape.width, shape.channels);
    let taps = ssim_taps();
    let mut total = 0.0;
    let mut planes = [vec![0.0; h * w], vec![0.0; h * w], vec![0.0; h * w], vec![0.0; h * w], vec![0.0; h * w]];
    let mut scratch = vec![0.0; h * w];
    for ch in 0..c {
        for i in 0..h * w {
            let x = a[i * c + ch] as f64;
            let y = b[i * c + ch] as f64;
            planes[0][i] = x;
            planes[1][i] = y;
            planes[2][i] = x * x;
            planes[3][i] = y * y;
            planes[4][i] = x * y;
        }
        for plane in planes.iter_mut() {
            blur(plane, &mut scratch, h, w, &taps);
        }
        let [mx, my, xx, yy, xy] = &planes;
        let mut sum = 0.0;
        for i in 0..h * w {
            let (mu_x, mu_y) = (mx[i], my[i]);
            let var_x = xx[i] - mu_x * mu_x;
            let var_y = yy[i] - mu_y * mu_y;
            let cov = xy[i] - mu_x * mu_y;
            sum += ((2.0 * mu_x * mu_y + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((mu_x * mu_x + mu_y * mu_y + SSIM_C1) * (var_x + var_y + SSIM_C2));
        }
        total += sum / (h * w) as f64;
    }
    Ok(total / c as f64)
}

/// Separable Gaussian filter with symmetric padding, in place.
fn blur(plane: &mut [f64], scratch: &mut [f64], h: usize, w: usize, taps: &[f64; SSIM_WINDOW]) {
    let radius = (SSIM_WINDOW / 2) as isize;
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, &k) in taps.iter().enumerate() {
                let sx = reflect_index(x as isize + t as isize - radius, w);
                acc += k * plane[y * w + sx];
            }
            scratch[y * w + x] = acc;
        }
    }
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, &k) in taps.iter().enumerate() {
                let sy = reflect_index(y as isize + t as isize - radius, h);
                acc += k * scratch[sy * w + x];
            }
            plane[y * w + x] = acc;
        }
    }
}

/// Per-frame dissimilarity between two frames of the given shape.
pub fn frame_loss(a: &[f32], b: &[f32], shape: FrameShape, metric: MetricKind) -> Result<f64, MetricError> {
    match metric {
        MetricKind::Mse => mse(a, b),
        MetricKind::Mae => mae(a, b),
        MetricKind::Psnr => psnr(a, b).map(|p| PSNR_CAP_DB - p),
        MetricKind::Ssim => ssim(a, b, shape).map(|s| (1.0 - s).max(0.0)),
    }
}

/// Per-frame losses of one reconstructed window, tagged with the absolute
/// (1-based) frame numbers they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct LossSeries {
    pub metric: MetricKind,
    pub frames: FrameRange,
    pub values: Vec<f64>,
}

impl LossSeries {
    /// Loss of absolute frame `frame`, if covered.
    pub fn at(&self, frame: usize) -> Option<f64> {
        self.frames
            .contains(frame)
            .then(|| self.values[frame - self.frames.start])
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Losses of `reconstructed` against `original`, frame by frame. `frames`
/// gives the absolute frame numbers of the window.
pub fn loss_series(
    original: &Video,
    reconstructed: &Video,
    metric: MetricKind,
    frames: FrameRange,
) -> Result<LossSeries, MetricError> {
    if original.frames() != reconstructed.frames() || original.shape() != reconstructed.shape() {
        return Err(MetricError::WindowMismatch {
            left: format!("{}x{}", original.frames(), original.shape()),
            right: format!("{}x{}", reconstructed.frames(), reconstructed.shape()),
        });
    }
    if frames.count() != original.frames() {
        return Err(MetricError::DimensionMismatch {
            left: frames.count(),
            right: original.frames(),
        });
    }
    let shape = original.shape();
    let values = original
        .frames_iter()
        .zip(reconstructed.frames_iter())
        .map(|(a, b)| frame_loss(b, a, shape, metric))
        .collect::<Result<_, _>>()?;
    Ok(LossSeries { metric, frames, values })
}
