//! The single-instrument exclusion-violating SCM that is observationally
//! equivalent to an aggregate SCM with unit error variances.
//!
//! ```text
//! U <- e_u    I <- e_i
//! A <- delta_a' I + gamma_a' U + e_a'
//! Y <- beta' A + delta_y' I + gamma_y' U + e_y'
//! ```

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng::{
    standard_normals, stream_id, STREAM_COMPONENT, STREAM_CONFOUNDER, STREAM_INSTRUMENT,
    STREAM_OUTCOME,
};
use crate::scm::{dot, AggregateIvScm, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExclusionViolationScm {
    pub beta_prime: f64,
    pub delta_a_prime: f64,
    pub gamma_a_prime: f64,
    pub delta_y_prime: f64,
    pub gamma_y_prime: f64,
    pub var_eps_a_prime: f64,
    pub var_eps_y_prime: f64,
}

/// Column order of [`ExclusionViolationScm::moments`] and [`observed_moments`].
pub const EQUIVALENCE_LABELS: [&str; 4] = ["i1", "u", "a", "y"];

fn check_preconditions(scm: &AggregateIvScm) -> Result<()> {
    scm.ensure_valid()?;
    if scm.m != 1 {
        return Err(Error::Precondition(format!(
            "exclusion-violation equivalence requires exactly one instrument, got m = {}",
            scm.m
        )));
    }
    let unit = scm.var_u == 1.0
        && scm.var_y == 1.0
        && scm.var_i.iter().all(|&v| v == 1.0)
        && scm.var_a.iter().all(|&v| v == 1.0);
    if !unit {
        return Err(Error::Precondition(
            "exclusion-violation equivalence requires all error variances equal to 1".into(),
        ));
    }
    Ok(())
}

/// `sum_{l<j} (beta_l alpha_j - beta_j alpha_l)^2`, summed over the minors directly.
pub fn minor_sum(alpha: &[f64], beta: &[f64]) -> f64 {
    let mut s = 0.0;
    for j in 0..alpha.len() {
        for l in 0..j {
            s += (beta[l] * alpha[j] - beta[j] * alpha[l]).powi(2);
        }
    }
    s
}

pub fn exclusion_violation_equivalent(scm: &AggregateIvScm) -> Result<ExclusionViolationScm> {
    check_preconditions(scm)?;
    let (alpha, beta, delta, gamma_a) = (&scm.alpha, &scm.beta, &scm.delta[0], &scm.gamma_a);
    let alpha_sq = dot(alpha, alpha);
    let beta_prime = dot(alpha, beta) / alpha_sq;
    let delta_a_prime = dot(alpha, delta);
    let gamma_a_prime = dot(alpha, gamma_a);
    // Lagrange: |a|^2 |b|^2 - (a.b)^2 = sum of squared 2x2 minors.
    let var_eps_y_prime = 1.0 + minor_sum(alpha, beta) / alpha_sq;
    Ok(ExclusionViolationScm {
        beta_prime,
        delta_a_prime,
        gamma_a_prime,
        delta_y_prime: dot(beta, delta) - beta_prime * delta_a_prime,
        gamma_y_prime: dot(beta, gamma_a) + scm.gamma_y - beta_prime * gamma_a_prime,
        var_eps_a_prime: alpha_sq,
        var_eps_y_prime,
    })
}

impl ExclusionViolationScm {
    pub fn validate(&self) -> Result<()> {
        let values = [
            self.beta_prime,
            self.delta_a_prime,
            self.gamma_a_prime,
            self.delta_y_prime,
            self.gamma_y_prime,
            self.var_eps_a_prime,
            self.var_eps_y_prime,
        ];
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config(
                "exclusion-violation model has non-finite coefficients".into(),
            ));
        }
        if !(self.var_eps_a_prime > 0.0 && self.var_eps_y_prime > 0.0) {
            return Err(Error::Precondition(
                "error variances must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Closed-form covariance of `(I, U, A, Y)`.
    pub fn moments(&self) -> Matrix4<f64> {
        let (b, da, ga, dy, gy) = (
            self.beta_prime,
            self.delta_a_prime,
            self.gamma_a_prime,
            self.delta_y_prime,
            self.gamma_y_prime,
        );
        let va = self.var_eps_a_prime;
        let cov_ia = da;
        let cov_ua = ga;
        let cov_iy = b * da + dy;
        let cov_uy = b * ga + gy;
        let var_a = da * da + ga * ga + va;
        let cov_ay = b * da * da + dy * da + b * ga * ga + gy * ga + b * va;
        let var_y = cov_iy.powi(2) + cov_uy.powi(2) + b * b * va + self.var_eps_y_prime;
        Matrix4::new(
            1.0, 0.0, cov_ia, cov_iy, //
            0.0, 1.0, cov_ua, cov_uy, //
            cov_ia, cov_ua, var_a, cov_ay, //
            cov_iy, cov_uy, cov_ay, var_y,
        )
    }

    /// Draws `n` rows with columns `i1, u, a, y`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Dataset> {
        self.validate()?;
        let i = standard_normals(seed, stream_id(STREAM_INSTRUMENT, 0), n);
        let u = standard_normals(seed, stream_id(STREAM_CONFOUNDER, 0), n);
        let sd_a = self.var_eps_a_prime.sqrt();
        let sd_y = self.var_eps_y_prime.sqrt();
        let ea = standard_normals(seed, stream_id(STREAM_COMPONENT, 0), n);
        let ey = standard_normals(seed, stream_id(STREAM_OUTCOME, 0), n);
        let a: Vec<f64> = (0..n)
            .map(|t| self.delta_a_prime * i[t] + self.gamma_a_prime * u[t] + sd_a * ea[t])
            .collect();
        let y: Vec<f64> = (0..n)
            .map(|t| {
                self.beta_prime * a[t]
                    + self.delta_y_prime * i[t]
                    + self.gamma_y_prime * u[t]
                    + sd_y * ey[t]
            })
            .collect();
        Dataset::new(
            EQUIVALENCE_LABELS.iter().map(|s| s.to_string()).collect(),
            vec![i, u, a, y],
        )
    }

    /// IV estimand of the mapped model, `cov(Y, I) / cov(A, I)`.
    pub fn iv_estimand(&self) -> Result<f64> {
        if self.delta_a_prime == 0.0 {
            return Err(Error::IrrelevantInstrument("delta_a' = 0".into()));
        }
        Ok(self.beta_prime + self.delta_y_prime / self.delta_a_prime)
    }
}

/// Covariance of `(I, U, A, Y)` in the aggregate SCM.
pub fn observed_moments(scm: &AggregateIvScm) -> Result<Matrix4<f64>> {
    let mom = scm.population_moments()?;
    let vars = [
        Var::Instrument(0),
        Var::Confounder,
        Var::Aggregate,
        Var::Outcome,
    ];
    Ok(Matrix4::from_fn(|r, c| mom.cov(vars[r], vars[c])))
}

/// Largest absolute entry of the difference between the two closed-form
/// covariance matrices over `(I, U, A, Y)`.
pub fn verify_distribution_equivalence(
    scm: &AggregateIvScm,
    eq: &ExclusionViolationScm,
) -> Result<f64> {
    check_preconditions(scm)?;
    let diff = observed_moments(scm)? - eq.moments();
    Ok(diff.iter().fold(0.0f64, |m, v| m.max(v.abs())))
}
