//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use vidattr_core::calibration::Kernel;

pub fn mirror(mut i: isize, n: usize) -> usize {
    let n = n as isize;
    while i < 0 || i >= n {
        i = if i < 0 { -i - 1 } else { 2 * n - 1 - i };
    }
    i as usize
}

/// Direct 11x11 weighted-window SSIM, two-pass moments, no separability.
pub fn ssim_oracle(a: &[f32], b: &[f32], h: usize, w: usize, c: usize) -> f64 {
    let mut weights = [[0.0f64; 11]; 11];
    let mut norm = 0.0;
    for (dy, row) in weights.iter_mut().enumerate() {
        for (dx, wt) in row.iter_mut().enumerate() {
            let (x, y) = (dx as f64 - 5.0, dy as f64 - 5.0);
            *wt = (-(x * x + y * y) / (2.0 * 1.5 * 1.5)).exp();
            norm += *wt;
        }
    }
    let (c1, c2) = (1e-4, 9e-4);
    let mut per_channel = 0.0;
    for ch in 0..c {
        let px = |img: &[f32], y: usize, x: usize| img[(y * w + x) * c + ch] as f64;
        let mut sum = 0.0;
        for y in 0..h {
            for x in 0..w {
                let taps = || {
                    (0..11).flat_map(move |dy| {
                        (0..11).map(move |dx| {
                            let sy = mirror(y as isize + dy as isize - 5, h);
                            let sx = mirror(x as isize + dx as isize - 5, w);
                            (weights[dy][dx] / norm, sy, sx)
                        })
                    })
                };
                let (mut mx, mut my) = (0.0, 0.0);
                for (wt, sy, sx) in taps() {
                    mx += wt * px(a, sy, sx);
                    my += wt * px(b, sy, sx);
                }
                let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
                for (wt, sy, sx) in taps() {
                    let (dx, dy) = (px(a, sy, sx) - mx, px(b, sy, sx) - my);
                    vx += wt * dx * dx;
                    vy += wt * dy * dy;
                    cov += wt * dx * dy;
                }
                sum += (2.0 * mx * my + c1) * (2.0 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            }
        }
        per_channel += sum / (h * w) as f64;
    }
    per_channel / c as f64
}

pub const POINTS: usize = 100_000;

pub fn density(kernel: Kernel, x: f64) -> f64 {
    match kernel {
        Kernel::Gaussian => (-x * x / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt(),
        Kernel::Uniform => {
            if x.abs() <= 1.0 {
                0.5
            } else {
                0.0
            }
        }
        Kernel::Epanechnikov => (0.75 * (1.0 - x * x)).max(0.0),
    }
}

pub fn kde_density(signals: &[f64], h: f64, kernel: Kernel, u: f64) -> f64 {
    signals.iter().map(|t| density(kernel, (u - t) / h)).sum::<f64>() / (signals.len() as f64 * h)
}

/// Trapezoid rule over `POINTS` nodes from far left of the sample to `u`.
/// Compact kernels get their support edges as extra breakpoints so each
/// panel integrates a smooth piece.
pub fn cdf_oracle(signals: &[f64], h: f64, kernel: Kernel, u: f64) -> f64 {
    let min = signals.iter().cloned().fold(f64::INFINITY, f64::min);
    let lo = min - 40.0 * h;
    if u <= lo {
        return 0.0;
    }
    let mut cuts = vec![lo, u];
    if kernel != Kernel::Gaussian {
        for t in signals {
            for e in [t - h, t + h] {
                if e > lo && e < u {
                    cuts.push(e);
                }
            }
        }
    }
    cuts.sort_by(f64::total_cmp);
    let span = u - lo;
    let mut total = 0.0;
    for pair in cuts.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if b <= a {
            continue;
        }
        let n = ((POINTS as f64 * (b - a) / span) as usize).max(2);
        let step = (b - a) / n as f64;
        // Evaluate just inside the panel so edge discontinuities take the
        // panel's own side.
        let f = |x: f64| kde_density(signals, h, kernel, x.clamp(a + 1e-13 * h, b - 1e-13 * h));
        let mut s = 0.5 * (f(a) + f(b));
        for i in 1..n {
            s += f(a + i as f64 * step);
        }
        total += s * step;
    }
    total
}

pub fn random_signals(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = rng.random_range(0.01..2.0);
    let shift = rng.random_range(-1.0..1.0);
    (0..n)
        .map(|_| shift + scale * Normal::new(0.0f64, 1.0).unwrap().sample(&mut rng).powi(3).tanh())
        .collect()
}

pub fn random_pair(seed: u64, n: usize, noise: f32) -> (Vec<f32>, Vec<f32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a: Vec<f32> = (0..n).map(|_| rng.random::<f32>()).collect();
    let b = a
        .iter()
        .map(|&x| (x + noise * (rng.random::<f32>() - 0.5)).clamp(0.0, 1.0))
        .collect();
    (a, b)
}
