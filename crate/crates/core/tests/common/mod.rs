//! Shared generators and statistical bands for the integration tests.
#![allow(dead_code)]

use aggiv::AggregateIvScm;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Binomial, DiscreteCDF};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn signed(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    let v = rng.random_range(lo..hi);
    if rng.random_bool(0.5) {
        v
    } else {
        -v
    }
}

/// Random valid SCM. Every instrument has `|sum_j alpha_j delta_lj| >= 0.5`.
pub fn random_scm(rng: &mut ChaCha8Rng, k: usize, m: usize, unit_variance: bool) -> AggregateIvScm {
    loop {
        let alpha: Vec<f64> = (0..k).map(|_| signed(rng, 0.5, 2.0)).collect();
        let beta: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
        let delta: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..k).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let gamma_a: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let gamma_y = rng.random_range(-1.0..1.0);
        let mut scm = AggregateIvScm::unit_variance(alpha, beta, delta, gamma_a, gamma_y);
        if !unit_variance {
            scm.var_u = rng.random_range(0.5..2.0);
            scm.var_y = rng.random_range(0.5..2.0);
            scm.var_i = (0..m).map(|_| rng.random_range(0.5..2.0)).collect();
            scm.var_a = (0..k).map(|_| rng.random_range(0.5..2.0)).collect();
        }
        if (0..m).all(|l| scm.first_stage_weight(l).abs() >= 0.5) {
            return scm;
        }
    }
}

pub fn random_dims(rng: &mut ChaCha8Rng, max_k: usize, max_m: usize) -> (usize, usize) {
    (rng.random_range(1..=max_k), rng.random_range(1..=max_m))
}

/// Sets `beta_j = tau alpha_j` for every `j` in `set`; returns `tau`.
pub fn make_proportional(rng: &mut ChaCha8Rng, scm: &mut AggregateIvScm, set: &[usize]) -> f64 {
    let tau = rng.random_range(-2.0..2.0);
    for &j in set {
        scm.beta[j] = tau * scm.alpha[j];
    }
    tau
}

/// Random subset of `0..k` (possibly empty or full).
pub fn random_subset(rng: &mut ChaCha8Rng, k: usize) -> Vec<usize> {
    (0..k).filter(|_| rng.random_bool(0.5)).collect()
}

/// Central `confidence` interval of the rejection frequency for `n` Bernoulli(`p`) trials.
pub fn binomial_band(n: u64, p: f64, confidence: f64) -> (f64, f64) {
    let dist = Binomial::new(p, n).expect("valid binomial");
    let tail = (1.0 - confidence) / 2.0;
    let lo = dist.inverse_cdf(tail);
    let hi = dist.inverse_cdf(1.0 - tail);
    (lo as f64 / n as f64, hi as f64 / n as f64)
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn sample_cov(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - mx) * (b - my))
        .sum::<f64>()
        / (x.len() - 1) as f64
}

/// Standard error of a Gaussian sample covariance: `sqrt((s_xx s_yy + s_xy^2) / n)`.
pub fn cov_std_error(sxx: f64, syy: f64, sxy: f64, n: usize) -> f64 {
    ((sxx * syy + sxy * sxy) / n as f64).sqrt()
}
