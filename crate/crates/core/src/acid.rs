//! Aggregate-constrained component intervention distributions (ACIDs).
//!
//! An ACID says how `do(A = a)` is realised on the components: which joint
//! distribution `(A_1..A_k)` is drawn from, with the components cut off from
//! the instrument and the confounder. Under a linear outcome equation the
//! aggregate causal effect only depends on the component means,
//! `ACE = E[sum_j beta_j A_j | do(A = a + 1)] - E[sum_j beta_j A_j | do(A = a)]`.
//!
//! The Gaussian family `N(c + a d, Sigma)` is valid when
//! `alpha'c = 0`, `alpha'd = 1`, `alpha'Sigma = 0` and `Sigma` is PSD, in which
//! case `ACE = beta'd` for every base value `a`.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng::{
    derive_seed, standard_normals, stream_id, stream_rng, STREAM_LATENT, STREAM_UNIFORM,
};
use crate::scm::{dot, proportional_ratio_over, AggregateIvScm, DEFAULT_PROPORTIONAL_TOL};

/// Absolute tolerance on constraint residuals.
pub const DEFAULT_ACID_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianAcid {
    /// Aggregation weights the constraints are stated against.
    pub alpha: Vec<f64>,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
    pub sigma: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintCheck {
    pub name: &'static str,
    pub residual: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintReport {
    pub tol: f64,
    pub checks: Vec<ConstraintCheck>,
}

impl ConstraintReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&ConstraintCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for ConstraintReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .checks
            .iter()
            .map(|c| {
                format!(
                    "{}={} (residual {:e})",
                    c.name,
                    if c.pass { "pass" } else { "fail" },
                    c.residual
                )
            })
            .collect();
        write!(f, "{}", parts.join(", "))
    }
}

/// Checks the four Gaussian-ACID constraints of `acid` against `alpha`.
pub fn validate_gaussian_acid(
    acid: &GaussianAcid,
    alpha: &[f64],
    tol: f64,
) -> Result<ConstraintReport> {
    let k = alpha.len();
    if acid.c.len() != k || acid.d.len() != k || acid.sigma.shape() != (k, k) {
        return Err(Error::Dimension(format!(
            "ACID has c[{}], d[{}], sigma {:?}; alpha has length {k}",
            acid.c.len(),
            acid.d.len(),
            acid.sigma.shape()
        )));
    }
    let intercepts = dot(alpha, &acid.c).abs();
    let slopes = (dot(alpha, &acid.d) - 1.0).abs();
    let alpha_v = DVector::from_column_slice(alpha);
    let null = (acid.sigma.transpose() * &alpha_v).amax();
    let asymmetry = (&acid.sigma - acid.sigma.transpose()).amax();
    let sym = (&acid.sigma + acid.sigma.transpose()) * 0.5;
    let min_eig = if k == 0 {
        0.0
    } else {
        sym.symmetric_eigenvalues().min()
    };
    let psd = asymmetry.max(-min_eig).max(0.0);

    let check = |name, residual: f64| ConstraintCheck {
        name,
        residual,
        pass: residual <= tol,
    };
    Ok(ConstraintReport {
        tol,
        checks: vec![
            check("sum_alpha_c", intercepts),
            check("sum_alpha_d", slopes),
            check("alpha_sigma", null),
            check("sigma_psd", psd),
        ],
    })
}

impl GaussianAcid {
    pub fn new(alpha: Vec<f64>, c: Vec<f64>, d: Vec<f64>, sigma: DMatrix<f64>) -> Self {
        Self { alpha, c, d, sigma }
    }

    /// Zero intercepts and a deterministic (`Sigma = 0`) instantiation.
    pub fn deterministic(alpha: Vec<f64>, d: Vec<f64>) -> Self {
        let k = alpha.len();
        Self::new(alpha, vec![0.0; k], d, DMatrix::zeros(k, k))
    }

    pub fn k(&self) -> usize {
        self.alpha.len()
    }

    pub fn validate(&self, tol: f64) -> Result<ConstraintReport> {
        validate_gaussian_acid(self, &self.alpha, tol)
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let report = self.validate(DEFAULT_ACID_TOL)?;
        if report.passed() {
            Ok(())
        } else {
            Err(Error::InvalidAcid(report))
        }
    }

    /// Aggregate causal effect `sum_j beta_j d_j`.
    pub fn ace(&self, beta: &[f64]) -> Result<f64> {
        self.ensure_valid()?;
        if beta.len() != self.k() {
            return Err(Error::Dimension(format!(
                "beta has length {}, ACID has k = {}",
                beta.len(),
                self.k()
            )));
        }
        Ok(dot(beta, &self.d))
    }

    /// Interventional mean `c + a d`.
    pub fn mean_at(&self, a: f64) -> Vec<f64> {
        self.c.iter().zip(&self.d).map(|(c, d)| c + a * d).collect()
    }

    /// Draws `n` component vectors under `do(A = a)`.
    ///
    /// Noise lives in the `(k - 1)`-dimensional complement of `alpha`: with
    /// `Q` an orthonormal basis of that complement and `Q'Sigma Q = F F'`,
    /// a draw is `c + a d + Q F z`. Each draw is finally projected onto
    /// `alpha'x = a` to remove rounding drift.
    pub fn sample(&self, a: f64, n: usize, seed: u64) -> Result<Dataset> {
        let columns = self.sample_columns(a, n, seed)?;
        let labels = (1..=self.k()).map(|j| format!("a{j}")).collect();
        Ok(Dataset::new(labels, columns)?.with_metadata("a", a))
    }

    fn sample_columns(&self, a: f64, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        self.ensure_valid()?;
        let k = self.k();
        let mean = self.mean_at(a);
        let alpha = DVector::from_column_slice(&self.alpha);
        let alpha_sq = alpha.norm_squared();

        let basis = complement_basis(&self.alpha);
        let factor = if k > 1 {
            let reduced = basis.transpose() * &self.sigma * &basis;
            let reduced = (&reduced + reduced.transpose()) * 0.5;
            let eig = reduced.symmetric_eigen();
            let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
            &basis * eig.eigenvectors * DMatrix::from_diagonal(&roots)
        } else {
            DMatrix::zeros(k, 0)
        };

        let latent: Vec<Vec<f64>> = (0..factor.ncols())
            .map(|i| standard_normals(seed, stream_id(STREAM_LATENT, i as u32), n))
            .collect();

        let mut columns = vec![Vec::with_capacity(n); k];
        let mut x = vec![0.0; k];
        for t in 0..n {
            for j in 0..k {
                let mut v = mean[j];
                for (i, z) in latent.iter().enumerate() {
                    v += factor[(j, i)] * z[t];
                }
                x[j] = v;
            }
            let drift = (a - dot(&self.alpha, &x)) / alpha_sq;
            for j in 0..k {
                columns[j].push(x[j] + drift * self.alpha[j]);
            }
        }
        Ok(columns)
    }
}

/// Orthonormal basis (`k x (k-1)`) of the complement of `alpha`, from a
/// Householder reflection mapping `e_1` onto `alpha / |alpha|`.
pub fn complement_basis(alpha: &[f64]) -> DMatrix<f64> {
    let k = alpha.len();
    let v = DVector::from_column_slice(alpha).normalize();
    let mut u = v.clone();
    let sign = if v[0] >= 0.0 { 1.0 } else { -1.0 };
    u[0] += sign;
    let u = u.normalize();
    let h = DMatrix::identity(k, k) - (&u * u.transpose()) * 2.0;
    h.columns(1, k - 1).into_owned()
}

/// Something that can instantiate `do(A = a)` as component draws.
pub trait InterventionSampler {
    fn dim(&self) -> usize;

    fn supports(&self, a: f64) -> bool;

    /// `k` columns of `n` draws each.
    fn sample_components(&self, a: f64, n: usize, seed: u64) -> Result<Vec<Vec<f64>>>;
}

impl InterventionSampler for GaussianAcid {
    fn dim(&self) -> usize {
        self.k()
    }

    fn supports(&self, a: f64) -> bool {
        a.is_finite()
    }

    fn sample_components(&self, a: f64, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        self.sample_columns(a, n, seed)
    }
}

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
}

/// Difference of the sample means of `sum_j beta_j A_j` under `do(A = a + 1)` and
/// `do(A = a)`, `n` draws each.
pub fn ace_monte_carlo<S: InterventionSampler + ?Sized>(
    sampler: &S,
    beta: &[f64],
    a: f64,
    n: usize,
    seed: u64,
) -> Result<McEstimate> {
    if beta.len() != sampler.dim() {
        return Err(Error::Dimension(format!(
            "beta has length {}, sampler has k = {}",
            beta.len(),
            sampler.dim()
        )));
    }
    if n < 2 {
        return Err(Error::Precondition("Monte-Carlo ACE needs n >= 2".into()));
    }
    for value in [a, a + 1.0] {
        if !sampler.supports(value) {
            return Err(Error::OutOfSupport(value));
        }
    }
    let outcome_stats = |value: f64, stream: u64| -> Result<(f64, f64)> {
        let cols = sampler.sample_components(value, n, derive_seed(seed, &[stream]))?;
        let y: Vec<f64> = (0..n)
            .map(|t| beta.iter().zip(&cols).map(|(b, c)| b * c[t]).sum())
            .collect();
        let mean = y.iter().sum::<f64>() / n as f64;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Ok((mean, var))
    };
    let (m0, v0) = outcome_stats(a, 0)?;
    let (m1, v1) = outcome_stats(a + 1.0, 1)?;
    Ok(McEstimate {
        value: m1 - m0,
        std_error: ((v0 + v1) / n as f64).sqrt(),
    })
}

/// Gaussian ACID matching the observational conditional distribution of the
/// components given the aggregate: `d = S alpha / (alpha'S alpha)`,
/// `Sigma = S - S alpha alpha'S / (alpha'S alpha)` with `S` the observational
/// component covariance.
pub fn natural_acid(scm: &AggregateIvScm) -> Result<GaussianAcid> {
    let moments = scm.population_moments()?;
    let s = moments.component_cov();
    let alpha = DVector::from_column_slice(&scm.alpha);
    let s_alpha = &s * &alpha;
    let scale = alpha.dot(&s_alpha);
    if !(scale > 0.0) {
        return Err(Error::DegenerateVariance(
            "alpha' Cov(A_1..A_k) alpha is not positive".into(),
        ));
    }
    let d = &s_alpha / scale;
    let sigma = &s - (&s_alpha * s_alpha.transpose()) / scale;
    let sigma = (&sigma + sigma.transpose()) * 0.5;
    Ok(GaussianAcid::new(
        scm.alpha.clone(),
        vec![0.0; scm.k],
        d.iter().copied().collect(),
        sigma,
    ))
}

/// `s * (I - alpha alpha' / |alpha|^2)`.
pub fn complement_projector(alpha: &[f64], s: f64) -> DMatrix<f64> {
    let k = alpha.len();
    let a = DVector::from_column_slice(alpha);
    (DMatrix::identity(k, k) - (&a * a.transpose()) / a.norm_squared()) * s
}

fn check_scale(sigma_scale: f64) -> Result<()> {
    if !(sigma_scale >= 0.0 && sigma_scale.is_finite()) {
        return Err(Error::Precondition(format!(
            "covariance scale must be finite and >= 0, got {sigma_scale}"
        )));
    }
    Ok(())
}

/// Instrument-tuned ACID for instrument `l`: `d_j = delta_lj / sum_i alpha_i delta_li`,
/// `c = 0`, `Sigma = sigma_scale * (I - alpha alpha'/|alpha|^2)`.
pub fn instrument_tuned_acid(
    scm: &AggregateIvScm,
    l: usize,
    sigma_scale: f64,
) -> Result<GaussianAcid> {
    scm.ensure_valid()?;
    check_scale(sigma_scale)?;
    let denominator = scm.ensure_relevant(l)?;
    let d = scm.delta[l].iter().map(|v| v / denominator).collect();
    Ok(GaussianAcid::new(
        scm.alpha.clone(),
        vec![0.0; scm.k],
        d,
        complement_projector(&scm.alpha, sigma_scale),
    ))
}

/// Instrument-tunes only the components outside `proportional_set`.
///
/// Components in the set must share `beta_j / alpha_j`; their slopes are
/// `r alpha_j / sum_{i in set} alpha_i^2` with `r = 1 - sum_{j not in set} alpha_j d_j`.
pub fn partially_instrument_tuned_acid(
    scm: &AggregateIvScm,
    proportional_set: &[usize],
    l: usize,
    sigma_scale: f64,
) -> Result<GaussianAcid> {
    scm.ensure_valid()?;
    check_scale(sigma_scale)?;
    let k = scm.k;
    let mut in_set = vec![false; k];
    for &j in proportional_set {
        if j >= k {
            return Err(Error::Dimension(format!(
                "proportional set index {} out of range for k = {k}",
                j + 1
            )));
        }
        if in_set[j] {
            return Err(Error::Precondition(format!(
                "proportional set lists component {} twice",
                j + 1
            )));
        }
        in_set[j] = true;
    }
    if !proportional_set.is_empty()
        && proportional_ratio_over(
            &scm.alpha,
            &scm.beta,
            proportional_set.iter().copied(),
            DEFAULT_PROPORTIONAL_TOL,
        )?
        .is_none()
    {
        return Err(Error::Precondition(
            "proportional set is not proportional: beta_j/alpha_j differ".into(),
        ));
    }
    let denominator = scm.ensure_relevant(l)?;

    let mut d = vec![0.0; k];
    let mut tuned_mass = 0.0;
    for j in (0..k).filter(|&j| !in_set[j]) {
        d[j] = scm.delta[l][j] / denominator;
        tuned_mass += scm.alpha[j] * d[j];
    }
    if !proportional_set.is_empty() {
        let remainder = 1.0 - tuned_mass;
        let norm: f64 = proportional_set
            .iter()
            .map(|&j| scm.alpha[j] * scm.alpha[j])
            .sum();
        for &j in proportional_set {
            d[j] = remainder * scm.alpha[j] / norm;
        }
    }
    Ok(GaussianAcid::new(
        scm.alpha.clone(),
        vec![0.0; k],
        d,
        complement_projector(&scm.alpha, sigma_scale),
    ))
}

/// Any ACID under which the marginals of `alpha_j A_j` coincide.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMarginalAcid {
    alpha: Vec<f64>,
}

impl SymmetricMarginalAcid {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::Dimension("alpha is empty".into()));
        }
        if let Some(index) = alpha.iter().position(|&a| a == 0.0) {
            return Err(Error::ZeroAggregationWeight { index });
        }
        Ok(Self { alpha })
    }

    /// `sum_j beta_j / (k alpha_j)`.
    pub fn ace(&self, beta: &[f64]) -> Result<f64> {
        if beta.len() != self.alpha.len() {
            return Err(Error::Dimension(format!(
                "beta has length {}, expected {}",
                beta.len(),
                self.alpha.len()
            )));
        }
        let k = self.alpha.len() as f64;
        Ok(beta.iter().zip(&self.alpha).map(|(b, a)| b / (k * a)).sum())
    }

    /// A deterministic Gaussian member: `d_j = 1 / (k alpha_j)`, `c = 0`, `Sigma = 0`.
    pub fn gaussian_member(&self) -> GaussianAcid {
        let k = self.alpha.len() as f64;
        let d = self.alpha.iter().map(|a| 1.0 / (k * a)).collect();
        GaussianAcid::deterministic(self.alpha.clone(), d)
    }
}

pub fn symmetric_marginal_ace(scm: &AggregateIvScm) -> Result<f64> {
    scm.ensure_valid()?;
    SymmetricMarginalAcid::new(scm.alpha.clone())?.ace(&scm.beta)
}

/// Two-component ACID with `A_1 ~ Uniform[-2, 2]` and `A_2` distributed as
/// `Z_2 | Z_1 + Z_2 = a` for independent `Z_1 ~ U[-2, 2]`, `Z_2 ~ U[-1, 1]`.
/// It is surgical but its effect depends on the base value `a`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UniformCounterexampleAcid;

impl UniformCounterexampleAcid {
    pub const BETA: [f64; 2] = [2.0, 3.0];
    pub const SUPPORT: (f64, f64) = (-3.0, 3.0);

    fn check(a: f64) -> Result<()> {
        if (Self::SUPPORT.0..=Self::SUPPORT.1).contains(&a) {
            Ok(())
        } else {
            Err(Error::OutOfSupport(a))
        }
    }

    /// Support `[max(a - 2, -1), min(a + 2, 1)]` of `A_2` under `do(A = a)`.
    pub fn component_support(a: f64) -> Result<(f64, f64)> {
        Self::check(a)?;
        Ok(((a - 2.0).max(-1.0), (a + 2.0).min(1.0)))
    }

    /// `E[A_2 | do(A = a)]`.
    pub fn expected_second(a: f64) -> Result<f64> {
        Self::check(a)?;
        Ok(if a <= -1.0 {
            (a + 1.0) / 2.0
        } else if a <= 1.0 {
            0.0
        } else {
            (a - 1.0) / 2.0
        })
    }

    /// `E[Y | do(A = a + 1)] - E[Y | do(A = a)]` with `beta = (2, 3)`.
    pub fn effect(a: f64) -> Result<f64> {
        Self::check(a + 1.0)?;
        // E[A_1 | do(A = a)] = 0 for every a, so only the second component moves.
        let b2 = Self::BETA[1];
        Ok(b2 * (Self::expected_second(a + 1.0)? - Self::expected_second(a)?))
    }
}

pub fn uniform_counterexample_delta(a: f64) -> Result<f64> {
    UniformCounterexampleAcid::check(a)?;
    UniformCounterexampleAcid::effect(a)
}

impl InterventionSampler for UniformCounterexampleAcid {
    fn dim(&self) -> usize {
        2
    }

    fn supports(&self, a: f64) -> bool {
        Self::check(a).is_ok()
    }

    fn sample_components(&self, a: f64, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        let (lo, hi) = Self::component_support(a)?;
        let mut first = stream_rng(seed, stream_id(STREAM_UNIFORM, 0));
        let mut second = stream_rng(seed, stream_id(STREAM_UNIFORM, 1));
        let a1 = (0..n).map(|_| first.random_range(-2.0..=2.0)).collect();
        let a2 = (0..n)
            .map(|_| {
                if hi > lo {
                    second.random_range(lo..=hi)
                } else {
                    lo
                }
            })
            .collect();
        Ok(vec![a1, a2])
    }
}
