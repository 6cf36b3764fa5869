//! The linear aggregate-treatment SCM.
//!
//! ```text
//! U   <- e_u                 I_l <- e_il                    l = 1..m
//! A_j <- sum_l delta[l][j] I_l + gamma_a[j] U + e_aj        j = 1..k
//! A    = sum_j alpha[j] A_j                                 (aggregation rule)
//! Y   <- sum_j beta[j] A_j + gamma_y U + e_y
//! ```
//!
//! All errors are independent mean-zero Gaussians; intercepts are zero.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng::{
    standard_normals, stream_id, STREAM_COMPONENT, STREAM_CONFOUNDER, STREAM_INSTRUMENT,
    STREAM_OUTCOME,
};

/// Relative tolerance used when none is supplied to [`AggregateIvScm::proportional_ratio`].
pub const DEFAULT_PROPORTIONAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateIvScm {
    pub k: usize,
    pub m: usize,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// Row `l` holds the effects of instrument `I_l` on the `k` components.
    pub delta: Vec<Vec<f64>>,
    pub gamma_a: Vec<f64>,
    pub gamma_y: f64,
    pub var_u: f64,
    pub var_i: Vec<f64>,
    pub var_a: Vec<f64>,
    pub var_y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    ZeroDimension(&'static str),
    Length {
        field: &'static str,
        expected: usize,
        found: usize,
    },
    DeltaRow {
        row: usize,
        expected: usize,
        found: usize,
    },
    NonPositiveVariance {
        field: String,
        value: f64,
    },
    NonFinite(String),
    DegenerateAggregate,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::ZeroDimension(name) => {
                write!(f, "dimension violation: {name} must be positive")
            }
            Violation::Length {
                field,
                expected,
                found,
            } => write!(
                f,
                "dimension violation: {field} has length {found}, expected {expected}"
            ),
            Violation::DeltaRow {
                row,
                expected,
                found,
            } => write!(
                f,
                "dimension violation: delta row {} has {found} columns, expected {expected}",
                row + 1
            ),
            Violation::NonPositiveVariance { field, value } => {
                write!(f, "non-positive variance: {field} = {value}")
            }
            Violation::NonFinite(field) => write!(f, "non-finite parameter: {field}"),
            Violation::DegenerateAggregate => {
                write!(
                    f,
                    "degenerate aggregate: all aggregation weights alpha are zero"
                )
            }
        }
    }
}

/// Violated invariants of an [`AggregateIvScm`]; empty when the model is valid.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn mentions(&self, needle: &str) -> bool {
        self.violations
            .iter()
            .any(|v| v.to_string().contains(needle))
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "ok");
        }
        let parts: Vec<String> = self.violations.iter().map(ToString::to_string).collect();
        write!(f, "{}", parts.join("; "))
    }
}

/// A variable of the observational system, used to index [`PopulationMoments`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    Instrument(usize),
    Confounder,
    Component(usize),
    Aggregate,
    Outcome,
}

/// Exact covariance matrix over `(I_1..I_m, U, A_1..A_k, A, Y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationMoments {
    pub labels: Vec<String>,
    pub cov: DMatrix<f64>,
    k: usize,
    m: usize,
}

impl PopulationMoments {
    pub fn index(&self, var: Var) -> usize {
        match var {
            Var::Instrument(l) => {
                assert!(l < self.m, "instrument index out of range");
                l
            }
            Var::Confounder => self.m,
            Var::Component(j) => {
                assert!(j < self.k, "component index out of range");
                self.m + 1 + j
            }
            Var::Aggregate => self.m + 1 + self.k,
            Var::Outcome => self.m + 2 + self.k,
        }
    }

    pub fn cov(&self, a: Var, b: Var) -> f64 {
        self.cov[(self.index(a), self.index(b))]
    }

    pub fn var(&self, a: Var) -> f64 {
        self.cov(a, a)
    }

    pub fn cor(&self, a: Var, b: Var) -> f64 {
        self.cov(a, b) / (self.var(a) * self.var(b)).sqrt()
    }

    /// Observational covariance of the components (`k x k`).
    pub fn component_cov(&self) -> DMatrix<f64> {
        let start = self.index(Var::Component(0));
        self.cov.view((start, start), (self.k, self.k)).into_owned()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn m(&self) -> usize {
        self.m
    }
}

/// Column labels `i1..im, u, a1..ak, a, y`.
pub fn observational_labels(k: usize, m: usize) -> Vec<String> {
    let mut labels: Vec<String> = (1..=m).map(|l| format!("i{l}")).collect();
    labels.push("u".into());
    labels.extend((1..=k).map(|j| format!("a{j}")));
    labels.push("a".into());
    labels.push("y".into());
    labels
}

impl AggregateIvScm {
    /// Single- or multi-instrument model with every error variance equal to one.
    pub fn unit_variance(
        alpha: Vec<f64>,
        beta: Vec<f64>,
        delta: Vec<Vec<f64>>,
        gamma_a: Vec<f64>,
        gamma_y: f64,
    ) -> Self {
        let k = alpha.len();
        let m = delta.len();
        Self {
            k,
            m,
            alpha,
            beta,
            delta,
            gamma_a,
            gamma_y,
            var_u: 1.0,
            var_i: vec![1.0; m],
            var_a: vec![1.0; k],
            var_y: 1.0,
        }
    }

    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        if self.k == 0 {
            violations.push(Violation::ZeroDimension("k"));
        }
        if self.m == 0 {
            violations.push(Violation::ZeroDimension("m"));
        }
        for (field, len, expected) in [
            ("alpha", self.alpha.len(), self.k),
            ("beta", self.beta.len(), self.k),
            ("gamma_a", self.gamma_a.len(), self.k),
            ("var_a", self.var_a.len(), self.k),
            ("delta", self.delta.len(), self.m),
            ("var_i", self.var_i.len(), self.m),
        ] {
            if len != expected {
                violations.push(Violation::Length {
                    field,
                    expected,
                    found: len,
                });
            }
        }
        for (row, r) in self.delta.iter().enumerate() {
            if r.len() != self.k {
                violations.push(Violation::DeltaRow {
                    row,
                    expected: self.k,
                    found: r.len(),
                });
            }
        }

        let mut variances = vec![
            ("var_u".to_string(), self.var_u),
            ("var_y".to_string(), self.var_y),
        ];
        variances.extend(
            self.var_i
                .iter()
                .enumerate()
                .map(|(l, &v)| (format!("var_i[{}]", l + 1), v)),
        );
        variances.extend(
            self.var_a
                .iter()
                .enumerate()
                .map(|(j, &v)| (format!("var_a[{}]", j + 1), v)),
        );
        for (field, value) in variances {
            // NaN fails this comparison too.
            if !(value > 0.0 && value.is_finite()) {
                violations.push(Violation::NonPositiveVariance { field, value });
            }
        }

        let coefficients = [
            ("alpha", &self.alpha),
            ("beta", &self.beta),
            ("gamma_a", &self.gamma_a),
        ];
        for (field, values) in coefficients {
            if values.iter().any(|v| !v.is_finite()) {
                violations.push(Violation::NonFinite(field.to_string()));
            }
        }
        if self.delta.iter().flatten().any(|v| !v.is_finite()) {
            violations.push(Violation::NonFinite("delta".into()));
        }
        if !self.gamma_y.is_finite() {
            violations.push(Violation::NonFinite("gamma_y".into()));
        }

        if self.alpha.iter().all(|&a| a == 0.0) {
            violations.push(Violation::DegenerateAggregate);
        }
        ValidationReport { violations }
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let report = self.validate();
        if report.is_valid() {
            Ok(())
        } else {
            Err(Error::InvalidScm(report))
        }
    }

    fn check_instrument(&self, l: usize) -> Result<()> {
        if l >= self.m {
            return Err(Error::Dimension(format!(
                "instrument index {} out of range for m = {}",
                l + 1,
                self.m
            )));
        }
        Ok(())
    }

    /// `sum_j alpha_j delta_lj`, the first-stage coefficient of instrument `l`.
    pub fn first_stage_weight(&self, l: usize) -> f64 {
        dot(&self.alpha, &self.delta[l])
    }

    pub fn ensure_relevant(&self, l: usize) -> Result<f64> {
        self.check_instrument(l)?;
        relevance_denominator(&self.alpha, &self.delta[l]).ok_or_else(|| {
            Error::IrrelevantInstrument(format!(
                "instrument i{} has sum_j alpha_j delta_j = 0",
                l + 1
            ))
        })
    }

    pub fn population_moments(&self) -> Result<PopulationMoments> {
        self.ensure_valid()?;
        let (k, m) = (self.k, self.m);

        // Loadings of every non-aggregate variable on the error terms
        // (e_i1..e_im, e_u, e_a1..e_ak, e_y).
        let n_err = m + 1 + k + 1;
        let err_u = m;
        let err_a = |j: usize| m + 1 + j;
        let err_y = m + 1 + k;
        let mut err_var = vec![0.0; n_err];
        err_var[..m].copy_from_slice(&self.var_i);
        err_var[err_u] = self.var_u;
        for j in 0..k {
            err_var[err_a(j)] = self.var_a[j];
        }
        err_var[err_y] = self.var_y;

        let mut component_rows = vec![vec![0.0; n_err]; k];
        for (j, row) in component_rows.iter_mut().enumerate() {
            for l in 0..m {
                row[l] = self.delta[l][j];
            }
            row[err_u] = self.gamma_a[j];
            row[err_a(j)] = 1.0;
        }
        let mut outcome_row = vec![0.0; n_err];
        for (j, row) in component_rows.iter().enumerate() {
            for (acc, &v) in outcome_row.iter_mut().zip(row) {
                *acc += self.beta[j] * v;
            }
        }
        outcome_row[err_u] += self.gamma_y;
        outcome_row[err_y] += 1.0;

        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(m + k + 2);
        for l in 0..m {
            let mut r = vec![0.0; n_err];
            r[l] = 1.0;
            rows.push(r);
        }
        let mut u = vec![0.0; n_err];
        u[err_u] = 1.0;
        rows.push(u);
        rows.extend(component_rows);
        rows.push(outcome_row);

        // Position of each loading row in the full variable order (A is skipped).
        let a_idx = m + 1 + k;
        let full_index = |r: usize| if r < a_idx { r } else { r + 1 };
        let dim = m + k + 3;
        let mut cov = DMatrix::zeros(dim, dim);
        for p in 0..rows.len() {
            for q in p..rows.len() {
                let c: f64 = rows[p]
                    .iter()
                    .zip(&rows[q])
                    .zip(&err_var)
                    .map(|((a, b), v)| a * b * v)
                    .sum();
                cov[(full_index(p), full_index(q))] = c;
                cov[(full_index(q), full_index(p))] = c;
            }
        }

        // The aggregate row is the alpha-combination of the component rows.
        let comp = |j: usize| m + 1 + j;
        for t in (0..dim).filter(|&t| t != a_idx) {
            let mut c = 0.0;
            for j in 0..k {
                c += self.alpha[j] * cov[(comp(j), t)];
            }
            cov[(a_idx, t)] = c;
            cov[(t, a_idx)] = c;
        }
        let mut var_a = 0.0;
        for j in 0..k {
            var_a += self.alpha[j] * cov[(comp(j), a_idx)];
        }
        cov[(a_idx, a_idx)] = var_a;

        Ok(PopulationMoments {
            labels: observational_labels(k, m),
            cov,
            k,
            m,
        })
    }

    /// Population IV estimand for instrument `l`:
    /// `sum_j beta_j delta_lj / sum_j alpha_j delta_lj`.
    pub fn iv_estimand(&self, l: usize) -> Result<f64> {
        self.ensure_valid()?;
        let denominator = self.ensure_relevant(l)?;
        Ok(dot(&self.beta, &self.delta[l]) / denominator)
    }

    /// Returns `Some(tau)` when every `beta_j / alpha_j` equals `tau = beta_1 / alpha_1`
    /// within `tol * max(1, |tau|)`.
    pub fn proportional_ratio(&self, tol: f64) -> Result<Option<f64>> {
        self.ensure_valid()?;
        proportional_ratio_over(&self.alpha, &self.beta, 0..self.k, tol)
    }

    /// Draws `n` observations. Column `a` is accumulated as
    /// `((0 + alpha_1 A_1) + alpha_2 A_2) + ...` in ascending `j`.
    pub fn sample_observational(&self, n: usize, seed: u64) -> Result<Dataset> {
        self.ensure_valid()?;
        let (k, m) = (self.k, self.m);
        let noise = |family, index: usize, var: f64| -> Vec<f64> {
            let sd = var.sqrt();
            let mut z = standard_normals(seed, stream_id(family, index as u32), n);
            z.iter_mut().for_each(|v| *v *= sd);
            z
        };

        let instruments: Vec<Vec<f64>> = (0..m)
            .map(|l| noise(STREAM_INSTRUMENT, l, self.var_i[l]))
            .collect();
        let u = noise(STREAM_CONFOUNDER, 0, self.var_u);
        let mut components = Vec::with_capacity(k);
        for j in 0..k {
            let mut a_j = noise(STREAM_COMPONENT, j, self.var_a[j]);
            for (t, value) in a_j.iter_mut().enumerate() {
                let mut s = 0.0;
                for (l, inst) in instruments.iter().enumerate() {
                    s += self.delta[l][j] * inst[t];
                }
                *value += s + self.gamma_a[j] * u[t];
            }
            components.push(a_j);
        }
        let aggregate: Vec<f64> = (0..n)
            .map(|t| aggregate_row(&self.alpha, |j| components[j][t]))
            .collect();
        let mut y = noise(STREAM_OUTCOME, 0, self.var_y);
        for (t, value) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for (j, comp) in components.iter().enumerate() {
                s += self.beta[j] * comp[t];
            }
            *value += s + self.gamma_y * u[t];
        }

        let mut columns = instruments;
        columns.push(u);
        columns.extend(components);
        columns.push(aggregate);
        columns.push(y);
        Dataset::new(observational_labels(k, m), columns)
    }
}

/// `sum_j alpha_j x_j` accumulated in ascending `j` starting from `0.0`.
pub fn aggregate_row(alpha: &[f64], x: impl Fn(usize) -> f64) -> f64 {
    let mut acc = 0.0;
    for (j, &a) in alpha.iter().enumerate() {
        acc += a * x(j);
    }
    acc
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `sum_j alpha_j w_j`, or `None` when it vanishes up to rounding.
pub(crate) fn relevance_denominator(alpha: &[f64], weights: &[f64]) -> Option<f64> {
    let den = dot(alpha, weights);
    let scale: f64 = alpha.iter().zip(weights).map(|(a, w)| (a * w).abs()).sum();
    if den == 0.0 || den.abs() <= 8.0 * f64::EPSILON * scale {
        None
    } else {
        Some(den)
    }
}

pub(crate) fn proportional_ratio_over(
    alpha: &[f64],
    beta: &[f64],
    indices: impl IntoIterator<Item = usize>,
    tol: f64,
) -> Result<Option<f64>> {
    let mut tau = None;
    let mut worst: Option<(usize, f64)> = None;
    for j in indices {
        if alpha[j] == 0.0 {
            return Err(Error::ZeroAggregationWeight { index: j });
        }
        let ratio = beta[j] / alpha[j];
        let t = *tau.get_or_insert(ratio);
        let dev = (ratio - t).abs();
        if dev > tol * t.abs().max(1.0) && worst.is_none_or(|(_, d)| dev > d) {
            worst = Some((j, dev));
        }
    }
    Ok(match worst {
        Some(_) => None,
        None => tau,
    })
}

/// Outcome aggregated from `m_y` sub-outcomes `Y_i <- sum_j beta_ji A_j + gamma_yi U + e_yi`,
/// `Y = sum_i omega_i Y_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateOutcomeSpec {
    pub omega: Vec<f64>,
    /// `k x m_y`: row `j` holds the effects of component `A_j` on each sub-outcome.
    pub beta_matrix: Vec<Vec<f64>>,
    pub gamma_y_vec: Vec<f64>,
    pub var_y_vec: Vec<f64>,
}

impl AggregateOutcomeSpec {
    pub fn validate_for(&self, scm: &AggregateIvScm) -> Result<()> {
        let m_y = self.omega.len();
        if m_y == 0 {
            return Err(Error::Dimension("omega is empty".into()));
        }
        if self.beta_matrix.len() != scm.k || self.beta_matrix.iter().any(|r| r.len() != m_y) {
            return Err(Error::Dimension(format!(
                "beta_matrix must be {} x {m_y}",
                scm.k
            )));
        }
        if self.gamma_y_vec.len() != m_y || self.var_y_vec.len() != m_y {
            return Err(Error::Dimension(format!(
                "gamma_y_vec and var_y_vec must have length {m_y}"
            )));
        }
        if self.var_y_vec.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Precondition(
                "var_y_vec entries must be positive".into(),
            ));
        }
        if self.omega.iter().all(|&w| w == 0.0) {
            return Err(Error::Precondition(
                "degenerate aggregate outcome: all omega are zero".into(),
            ));
        }
        Ok(())
    }
}

/// IV estimand of an aggregate outcome on the aggregate treatment with a single instrument:
/// `sum_i omega_i (sum_j beta_ji delta_j) / (sum_j alpha_j delta_j)`.
pub fn aggregate_outcome_estimand(
    scm: &AggregateIvScm,
    spec: &AggregateOutcomeSpec,
) -> Result<f64> {
    scm.ensure_valid()?;
    if scm.m != 1 {
        return Err(Error::Precondition(format!(
            "aggregate outcome estimand needs a single instrument, got m = {}",
            scm.m
        )));
    }
    spec.validate_for(scm)?;
    let denominator = scm.ensure_relevant(0)?;
    let delta = &scm.delta[0];
    let mut total = 0.0;
    for (i, &w) in spec.omega.iter().enumerate() {
        let numerator: f64 = (0..scm.k).map(|j| spec.beta_matrix[j][i] * delta[j]).sum();
        total += w * numerator / denominator;
    }
    Ok(total)
}

/// Instrument formed as the fixed combination `I = sum_l eta_l I_l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateInstrumentSpec {
    pub eta: Vec<f64>,
}

/// Projection coefficients `xi_j = cov(A_j, I) / var(I)` of each component on the
/// aggregated instrument.
pub fn aggregate_instrument_projection(
    scm: &AggregateIvScm,
    spec: &AggregateInstrumentSpec,
) -> Result<Vec<f64>> {
    scm.ensure_valid()?;
    if spec.eta.len() != scm.m {
        return Err(Error::Dimension(format!(
            "eta has length {}, expected m = {}",
            spec.eta.len(),
            scm.m
        )));
    }
    if spec.eta.iter().all(|&e| e == 0.0) {
        return Err(Error::Precondition(
            "degenerate aggregate instrument: all eta are zero".into(),
        ));
    }
    let moments = scm.population_moments()?;
    let eta = &spec.eta;
    let mut var_i = 0.0;
    for (l, &el) in eta.iter().enumerate() {
        for (h, &eh) in eta.iter().enumerate() {
            var_i += el * eh * moments.cov(Var::Instrument(l), Var::Instrument(h));
        }
    }
    if !(var_i > 0.0) {
        return Err(Error::DegenerateVariance(
            "var(I) = 0 for the aggregated instrument".into(),
        ));
    }
    Ok((0..scm.k)
        .map(|j| {
            let c: f64 = eta
                .iter()
                .enumerate()
                .map(|(l, &e)| e * moments.cov(Var::Component(j), Var::Instrument(l)))
                .sum();
            c / var_i
        })
        .collect())
}

/// IV estimand with the aggregated instrument: `sum_j beta_j xi_j / sum_j alpha_j xi_j`.
pub fn aggregate_instrument_estimand(
    scm: &AggregateIvScm,
    spec: &AggregateInstrumentSpec,
) -> Result<f64> {
    let xi = aggregate_instrument_projection(scm, spec)?;
    let denominator = relevance_denominator(&scm.alpha, &xi).ok_or_else(|| {
        Error::IrrelevantInstrument("aggregated instrument has sum_j alpha_j xi_j = 0".into())
    })?;
    Ok(dot(&scm.beta, &xi) / denominator)
}
