#![allow(dead_code)]

use mbt::{BoostConfig, Dataset64, Hierarchy, LossResponseSpec, Matrix64, TreeConfig};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};

/// Nonlinear multi-output regression data with an optional linear block.
pub fn synthetic(n: usize, n_f: usize, n_t: usize, n_p: usize, seed: u64) -> Dataset64 {
    let mut rng = StdRng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.3).unwrap();
    let x = Matrix64::from_fn(n, n_f, |_, _| rng.random_range(-2.0..2.0));
    let x_lr = (n_p > 0).then(|| Matrix64::from_fn(n, n_p, |_, j| if j == 0 { 1.0 } else { rng.random_range(-1.0..1.0) }));
    let y = Matrix64::from_fn(n, n_t, |i, t| {
        let phase = 2.0 * std::f64::consts::PI * t as f64 / n_t as f64;
        let mut v = (x[(i, 0)] * 1.5).sin() * (1.0 + phase.cos()) + if x[(i, 1 % n_f)] > 0.5 { 2.0 } else { -0.5 };
        if let Some(l) = &x_lr {
            v += l.row(i).iter().enumerate().map(|(j, a)| a * (j as f64 + 1.0)).sum::<f64>();
        }
        v + noise.sample(&mut rng)
    });
    Dataset64::new(x, y, x_lr).unwrap()
}

/// Targets that add up exactly along `h`.
pub fn hierarchical_data(n: usize, h: &Hierarchy<f64>, seed: u64) -> Dataset64 {
    let mut rng = StdRng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.2).unwrap();
    let n_b = h.n_bottom();
    let x = Matrix64::from_fn(n, 3, |_, _| rng.random_range(-2.0..2.0));
    let b = Matrix64::from_fn(n, n_b, |i, j| {
        (x[(i, 0)] + j as f64 * 0.3).sin() + if x[(i, 2)] > 0.0 { 1.0 } else { 0.0 } + noise.sample(&mut rng)
    });
    let y = b.matmul(&h.s.transpose()).unwrap();
    Dataset64::new(x, y, None).unwrap()
}

pub fn quick_config(spec: LossResponseSpec<f64>, n_rounds: usize) -> BoostConfig<f64> {
    BoostConfig {
        n_rounds,
        learning_rate: 0.3,
        tree: TreeConfig { n_min: 10, max_depth: 4, n_bins: 32 },
        ..BoostConfig::new(spec)
    }
}

pub fn taus() -> Vec<f64> {
    vec![0.1, 0.5, 0.9]
}

/// One (name, data, config) case per loss kind.
pub fn all_kinds(n: usize, n_rounds: usize, seed: u64) -> Vec<(&'static str, Dataset64, BoostConfig<f64>)> {
    let n_t = 6;
    let h = Hierarchy::from_levels(&[1, 2], 4).unwrap();
    vec![
        ("l2_constant", synthetic(n, 4, n_t, 0, seed), quick_config(LossResponseSpec::l2_constant(1.0), n_rounds)),
        ("l2_smooth", synthetic(n, 4, n_t, 0, seed), quick_config(LossResponseSpec::l2_smooth(n_t, 2.0).unwrap(), n_rounds)),
        (
            "l2_fourier",
            synthetic(n, 4, n_t, 0, seed),
            quick_config(LossResponseSpec::l2_fourier(n_t, &[1, 2], 0.5).unwrap(), n_rounds),
        ),
        ("l2_hierarchical", hierarchical_data(n, &h, seed), quick_config(LossResponseSpec::l2_hierarchical(h.s.clone(), 1.0), n_rounds)),
        ("l2_linear", synthetic(n, 4, 2, 3, seed), quick_config(LossResponseSpec::l2_linear(1.0), n_rounds)),
        ("quantile_smoothed", synthetic(n, 4, 2, 0, seed), quick_config(LossResponseSpec::quantile_smoothed(taus(), 1.0, false), n_rounds)),
        (
            "quantile_smoothed_refit",
            synthetic(n, 4, 2, 0, seed),
            quick_config(LossResponseSpec::quantile_smoothed(taus(), 1.0, true), n_rounds),
        ),
        (
            "quantile_linquad",
            synthetic(n, 4, 2, 0, seed),
            quick_config(LossResponseSpec::quantile_linquad(taus(), 20.0, 1.0, false), n_rounds),
        ),
        (
            "quantile_linquad_refit",
            synthetic(n, 4, 2, 0, seed),
            quick_config(LossResponseSpec::quantile_linquad(taus(), 20.0, 1.0, true), n_rounds),
        ),
    ]
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Base forecasts and actuals for `h`. Bottom forecasts carry a persistent
/// bias whose sign flips rarely; upper forecasts are unbiased but noisy.
pub fn biased_forecasts(n: usize, h: &Hierarchy<f64>, seed: u64) -> (Matrix64, Matrix64) {
    let mut rng = StdRng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.3).unwrap();
    let upper_noise = Normal::new(0.0, 1.5).unwrap();
    let n_b = h.n_bottom();
    let mut sign = vec![1.0f64; n_b];
    let mut base = Matrix64::zeros(n, n_b);
    let mut fb = Matrix64::zeros(n, n_b);
    for i in 0..n {
        for b in 0..n_b {
            if rng.random::<f64>() < 0.03 {
                sign[b] = -sign[b];
            }
            base[(i, b)] = 5.0 + (i as f64 / 6.0 + b as f64).sin() + noise.sample(&mut rng);
            fb[(i, b)] = base[(i, b)] + 1.5 * sign[b] + noise.sample(&mut rng);
        }
    }
    let actuals = base.matmul(&h.s.transpose()).unwrap();
    let n_u = h.n_upper();
    let yhat = Matrix64::from_fn(n, h.n_series(), |i, j| {
        if j < n_u {
            actuals[(i, j)] + upper_noise.sample(&mut rng)
        } else {
            fb[(i, j - n_u)]
        }
    });
    (yhat, actuals)
}

pub fn rmse(a: &Matrix64, b: &Matrix64) -> f64 {
    let d = a.sub(b).unwrap();
    (d.as_slice().iter().map(|v| v * v).sum::<f64>() / d.as_slice().len() as f64).sqrt()
}
