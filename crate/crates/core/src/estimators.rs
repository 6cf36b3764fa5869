//! Two-stage least squares on sample data.
//!
//! Both stages include an intercept. Intercepts are absorbed by centring every
//! column, so the instrument block is solved on the centred Gram matrix.

use nalgebra::{DMatrix, DVector};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::scm::{AggregateIvScm, Var};

/// Smallest eigenvalue of the instruments' correlation matrix below which the
/// design counts as rank deficient.
const RANK_TOL: f64 = 1e-10;

pub const REPORT_CSV_HEADER: &str = "estimate,f_stat,n,instruments";

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub point_estimate: f64,
    pub intercept: f64,
    /// First-stage slopes, one per instrument (intercept excluded).
    pub first_stage_coefficients: Vec<f64>,
    pub first_stage_f: f64,
    pub n: usize,
    pub instrument_labels: Vec<String>,
}

impl EstimateReport {
    /// `estimate,f_stat,n,instruments` with instrument names joined by `;`.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{}",
            self.point_estimate,
            self.first_stage_f,
            self.n,
            self.instrument_labels.join(";")
        )
    }
}

/// Centred regressor block with its factorised Gram matrix.
pub(crate) struct CenteredDesign {
    columns: Vec<Vec<f64>>,
    gram: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    n: usize,
}

pub(crate) struct LinearFit {
    pub slopes: Vec<f64>,
    /// Centred fitted values.
    pub fitted: Vec<f64>,
    pub rss: f64,
    pub tss: f64,
}

impl LinearFit {
    pub fn r_squared(&self) -> f64 {
        if self.tss > 0.0 {
            (1.0 - self.rss / self.tss).max(0.0)
        } else {
            0.0
        }
    }
}

fn center(x: &[f64]) -> (Vec<f64>, f64) {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    (x.iter().map(|v| v - mean).collect(), mean)
}

impl CenteredDesign {
    pub fn new(regressors: &[&[f64]], labels: &[&str]) -> Result<Self> {
        let p = regressors.len();
        let n = regressors.first().map_or(0, |c| c.len());
        if p == 0 {
            return Err(Error::UnderIdentified("no instruments given".into()));
        }
        if n <= p + 1 {
            return Err(Error::RankDeficient(format!(
                "n = {n} observations for {p} instruments plus intercept"
            )));
        }
        let columns: Vec<Vec<f64>> = regressors.iter().map(|c| center(c).0).collect();
        let mut gram = DMatrix::zeros(p, p);
        for a in 0..p {
            for b in a..p {
                let g: f64 = columns[a].iter().zip(&columns[b]).map(|(x, y)| x * y).sum();
                gram[(a, b)] = g;
                gram[(b, a)] = g;
            }
        }
        for (a, label) in labels.iter().enumerate() {
            if !(gram[(a, a)] > 0.0) {
                return Err(Error::RankDeficient(format!(
                    "instrument `{label}` is constant"
                )));
            }
        }
        let scale = DVector::from_iterator(p, (0..p).map(|a| gram[(a, a)].sqrt()));
        let corr = DMatrix::from_fn(p, p, |a, b| gram[(a, b)] / (scale[a] * scale[b]));
        if corr.symmetric_eigenvalues().min() < RANK_TOL {
            return Err(Error::RankDeficient(format!(
                "instrument columns [{}] are collinear",
                labels.join(", ")
            )));
        }
        let gram = gram
            .cholesky()
            .ok_or_else(|| Error::RankDeficient("instrument Gram matrix is singular".into()))?;
        Ok(Self { columns, gram, n })
    }

    pub fn fit(&self, y: &[f64]) -> LinearFit {
        let (yc, _) = center(y);
        let rhs = DVector::from_iterator(
            self.columns.len(),
            self.columns
                .iter()
                .map(|c| c.iter().zip(&yc).map(|(x, y)| x * y).sum()),
        );
        let slopes = self.gram.solve(&rhs);
        let mut fitted = vec![0.0; self.n];
        for (col, &b) in self.columns.iter().zip(slopes.iter()) {
            for (f, x) in fitted.iter_mut().zip(col) {
                *f += b * x;
            }
        }
        let rss = yc.iter().zip(&fitted).map(|(y, f)| (y - f).powi(2)).sum();
        let tss = yc.iter().map(|y| y * y).sum();
        LinearFit {
            slopes: slopes.iter().copied().collect(),
            fitted,
            rss,
            tss,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.columns.len()
    }
}

fn f_statistic(fit: &LinearFit, n: usize, p: usize) -> f64 {
    let explained = (fit.tss - fit.rss).max(0.0);
    explained / p as f64 / (fit.rss / (n - p - 1) as f64)
}

fn columns<'a>(data: &'a Dataset, names: &[&str]) -> Result<Vec<&'a [f64]>> {
    names.iter().map(|name| data.column(name)).collect()
}

/// F statistic for the joint null that every instrument slope in the first
/// stage is zero, with `(m, n - m - 1)` degrees of freedom.
pub fn first_stage_f(data: &Dataset, treatment: &str, instruments: &[&str]) -> Result<f64> {
    let design = CenteredDesign::new(&columns(data, instruments)?, instruments)?;
    let fit = design.fit(data.column(treatment)?);
    Ok(f_statistic(&fit, design.n(), design.p()))
}

pub(crate) struct TwoStage {
    pub report: EstimateReport,
    pub design: CenteredDesign,
}

pub(crate) fn two_stage(
    data: &Dataset,
    treatment: &str,
    outcome: &str,
    instruments: &[&str],
) -> Result<TwoStage> {
    let design = CenteredDesign::new(&columns(data, instruments)?, instruments)?;
    let a = data.column(treatment)?;
    let y = data.column(outcome)?;
    let first = design.fit(a);

    let fitted_ss: f64 = first.fitted.iter().map(|f| f * f).sum();
    if !(fitted_ss > 1e-14 * first.tss) {
        return Err(Error::WeakInstrument(format!(
            "first-stage fitted values of `{treatment}` are constant"
        )));
    }
    let (yc, y_mean) = center(y);
    let cross: f64 = first.fitted.iter().zip(&yc).map(|(f, y)| f * y).sum();
    let slope = cross / fitted_ss;
    let a_mean = a.iter().sum::<f64>() / a.len() as f64;

    let report = EstimateReport {
        point_estimate: slope,
        intercept: y_mean - slope * a_mean,
        first_stage_coefficients: first.slopes.clone(),
        first_stage_f: f_statistic(&first, design.n(), design.p()),
        n: design.n(),
        instrument_labels: instruments.iter().map(|s| s.to_string()).collect(),
    };
    Ok(TwoStage { report, design })
}

/// 2SLS of `outcome` on `treatment` using `instruments`.
pub fn fit_2sls(
    data: &Dataset,
    treatment: &str,
    outcome: &str,
    instruments: &[&str],
) -> Result<EstimateReport> {
    two_stage(data, treatment, outcome, instruments).map(|t| t.report)
}

/// Population IV estimand of every instrument, each with its own relevance outcome.
pub fn per_instrument_population_estimands(scm: &AggregateIvScm) -> Vec<Result<f64>> {
    (0..scm.m).map(|l| scm.iv_estimand(l)).collect()
}

/// Large-sample standard deviation of the single-instrument 2SLS estimate at
/// sample size `n`: `sqrt(var(I) var(Y - b A) / (n cov(A, I)^2))` with `b` the
/// population estimand.
pub fn iv_estimand_sd(scm: &AggregateIvScm, l: usize, n: usize) -> Result<f64> {
    let b = scm.iv_estimand(l)?;
    let mom = scm.population_moments()?;
    let inst = Var::Instrument(l);
    let resid_var = mom.var(Var::Outcome) - 2.0 * b * mom.cov(Var::Aggregate, Var::Outcome)
        + b * b * mom.var(Var::Aggregate);
    let c = mom.cov(Var::Aggregate, inst);
    Ok((mom.var(inst) * resid_var.max(0.0) / (n as f64 * c * c)).sqrt())
}
