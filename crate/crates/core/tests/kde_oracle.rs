mod common;

use common::{cdf_oracle, random_signals};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use vidattr_core::attribution::{attribution_signal, WindowPair};
use vidattr_core::calibration::{bandwidth, kde_cdf, sample_std, threshold, BandwidthRule, Kernel};
use vidattr_core::metrics::MetricKind;
use vidattr_core::oracle::{synthesize_belonging, ToyChunkAutoencoder, ToyConfig};

#[test]
fn analytic_cdf_matches_quadrature() {
    for seed in 0..20 {
        let signals = random_signals(seed, 50);
        let h = bandwidth(&signals, BandwidthRule::Scott).unwrap();
        let mut sorted = signals.clone();
        sorted.sort_by(f64::total_cmp);
        let probes = [sorted[0] - 2.0 * h, sorted[5], sorted[25] + 0.3 * h, sorted[49], sorted[49] + h];
        for kernel in Kernel::ALL {
            for &u in &probes {
                let got = kde_cdf(&signals, h, kernel, u);
                let want = cdf_oracle(&signals, h, kernel, u);
                assert!((got - want).abs() < 1e-6, "seed {seed} {kernel:?} u={u}: {got} vs {want}");
            }
        }
    }
}

#[test]
fn tau_matches_quadrature_inverse_cdf() {
    let signals = [0.2, 0.3, 0.4];
    for kernel in Kernel::ALL {
        let model = threshold(&signals, 0.05, kernel, BandwidthRule::Scott).unwrap();
        let (mut lo, mut hi) = (0.0, 2.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if cdf_oracle(&signals, model.h, kernel, mid) >= 0.95 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        assert!((model.tau - hi).abs() < 1e-6, "{kernel:?}: {} vs {hi}", model.tau);
        assert!(model.tau > 0.4);
    }
}

#[test]
fn scott_bandwidth_on_gaussian_sample() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let xs: Vec<f64> = (0..200).map(|_| Normal::new(0.0f64, 1.0).unwrap().sample(&mut rng)).collect();
    let mean = xs.iter().sum::<f64>() / 200.0;
    let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 199.0).sqrt();
    assert!((sample_std(&xs) - sd).abs() < 1e-12);
    let h = bandwidth(&xs, BandwidthRule::Scott).unwrap();
    assert!((h - sd * 200f64.powf(-0.2)).abs() < 1e-12);
}

#[test]
fn one_outlier_moves_tau_by_at_most_three_bandwidths() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base: Vec<f64> = (0..60).map(|_| 0.01 + 0.001 * Normal::new(0.0f64, 1.0).unwrap().sample(&mut rng)).collect();
        let before = threshold(&base, 0.05, Kernel::Gaussian, BandwidthRule::Scott).unwrap();
        let mut replaced = base.clone();
        replaced[0] = 0.01 + 0.01;
        let after = threshold(&replaced, 0.05, Kernel::Gaussian, BandwidthRule::Scott).unwrap();
        assert!((after.tau - before.tau).abs() <= 3.0 * after.h, "{} -> {}", before.tau, after.tau);
    }
}

#[test]
fn held_out_false_rejection_rate_on_toy_signals() {
    let mut toy = ToyChunkAutoencoder::build(ToyConfig::desk(7)).unwrap();
    let pair = WindowPair::fixed(4).unwrap();
    let signal = |toy: &mut ToyChunkAutoencoder, seed| {
        let v = synthesize_belonging(toy, 8, 0.01, seed).unwrap();
        attribution_signal(&v, toy, pair, MetricKind::Mse).unwrap().t
    };
    let calib: Vec<f64> = (0..200).map(|s| signal(&mut toy, s)).collect();
    let model = threshold(&calib, 0.05, Kernel::Gaussian, BandwidthRule::Scott).unwrap();
    let held: Vec<f64> = (10_000..10_200).map(|s| signal(&mut toy, s)).collect();
    let above = held.iter().filter(|&&t| t >= model.tau).count();
    assert!(above as f64 / held.len() as f64 <= 0.10, "{above} of {}", held.len());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tau_is_translation_and_scale_equivariant(
        seed: u64,
        shift in -5.0f64..5.0,
        scale in 0.1f64..10.0,
        k in 0usize..3,
        rule in 0usize..2,
    ) {
        let kernel = Kernel::ALL[k];
        let rule = BandwidthRule::ALL[rule];
        let base = random_signals(seed, 30);
        let t0 = threshold(&base, 0.05, kernel, rule).unwrap().tau;
        let shifted: Vec<f64> = base.iter().map(|t| t + shift).collect();
        let scaled: Vec<f64> = base.iter().map(|t| t * scale).collect();
        let ts = threshold(&shifted, 0.05, kernel, rule).unwrap().tau;
        let tk = threshold(&scaled, 0.05, kernel, rule).unwrap().tau;
        prop_assert!((ts - (t0 + shift)).abs() < 1e-9, "{} vs {}", ts, t0 + shift);
        prop_assert!((tk - t0 * scale).abs() < 1e-9 * scale.max(1.0), "{} vs {}", tk, t0 * scale);
    }
}
