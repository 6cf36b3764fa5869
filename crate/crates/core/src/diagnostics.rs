//! Over-identification testing and instrument strength.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::estimators::two_stage;
use crate::rng::derive_seed;
use crate::scm::{AggregateIvScm, Var};

/// Type-I error levels used by default for power curves.
pub const DEFAULT_LEVELS: [f64; 2] = [0.01, 0.5];

pub const POWER_CSV_HEADER: &str = "config,level,beta1,replicates,rejections,frequency";

#[derive(Debug, Clone, PartialEq)]
pub struct SarganReport {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub reject: bool,
    pub level: f64,
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Error::Precondition(format!(
            "test level must lie in (0, 1), got {level}"
        )))
    }
}

/// Sargan statistic `n R^2` from regressing the 2SLS residuals on all
/// instruments and an intercept, referred to a chi-squared with `m - 1`
/// degrees of freedom.
pub fn sargan_test(
    data: &Dataset,
    treatment: &str,
    outcome: &str,
    instruments: &[&str],
    level: f64,
) -> Result<SarganReport> {
    check_level(level)?;
    if instruments.len() < 2 {
        return Err(Error::UnderIdentified(format!(
            "Sargan test needs at least 2 instruments for one treatment, got {}",
            instruments.len()
        )));
    }
    let fitted = two_stage(data, treatment, outcome, instruments)?;
    let a = data.column(treatment)?;
    let y = data.column(outcome)?;
    let (b0, b) = (fitted.report.intercept, fitted.report.point_estimate);
    let residuals: Vec<f64> = a.iter().zip(y).map(|(a, y)| y - b0 - b * a).collect();

    let aux = fitted.design.fit(&residuals);
    let y_mean = y.iter().sum::<f64>() / y.len() as f64;
    let y_tss: f64 = y.iter().map(|v| (v - y_mean).powi(2)).sum();
    // Residuals at rounding level carry no information about orthogonality.
    let statistic = if aux.tss <= 1e-24 * y_tss {
        0.0
    } else {
        fitted.design.n() as f64 * aux.r_squared()
    };
    let dof = instruments.len() - 1;
    let p_value = ChiSquared::new(dof as f64)
        .expect("dof >= 1")
        .sf(statistic)
        .clamp(0.0, 1.0);
    Ok(SarganReport {
        statistic,
        dof,
        p_value,
        reject: p_value < level,
        level,
    })
}

/// Population correlation `cor(I_l, A)`.
pub fn instrument_treatment_correlation(scm: &AggregateIvScm, l: usize) -> Result<f64> {
    if l >= scm.m {
        return Err(Error::Dimension(format!(
            "instrument index {} out of range for m = {}",
            l + 1,
            scm.m
        )));
    }
    let mom = scm.population_moments()?;
    let var_a = mom.var(Var::Aggregate);
    if !(var_a > 0.0) {
        return Err(Error::DegenerateVariance("var(A) = 0".into()));
    }
    Ok(mom.cor(Var::Instrument(l), Var::Aggregate))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InstrumentStrength {
    Strong,
    Moderate,
    Weak,
}

impl InstrumentStrength {
    /// Strong above 0.5 absolute population correlation with the treatment,
    /// weak below 0.2.
    pub fn classify(correlation: f64) -> Self {
        let c = correlation.abs();
        if c > 0.5 {
            Self::Strong
        } else if c < 0.2 {
            Self::Weak
        } else {
            Self::Moderate
        }
    }
}

impl fmt::Display for InstrumentStrength {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Strong => "strong",
            Self::Moderate => "moderate",
            Self::Weak => "weak",
        })
    }
}

/// Named instrument-to-component effect rows (`delta`, one row per instrument).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstrumentConfig {
    pub name: String,
    pub delta: Vec<Vec<f64>>,
}

impl InstrumentConfig {
    pub fn new(name: &str, delta: Vec<Vec<f64>>) -> Self {
        Self {
            name: name.to_string(),
            delta,
        }
    }
}

/// The three two-instrument configurations used for the Sargan study.
pub fn standard_instrument_configs() -> Vec<InstrumentConfig> {
    vec![
        InstrumentConfig::new("strong-weak", vec![vec![5.0, 3.0], vec![0.1, 0.2]]),
        InstrumentConfig::new("strong-strong", vec![vec![5.0, 3.0], vec![4.0, 2.0]]),
        InstrumentConfig::new("weak-weak", vec![vec![0.15, 0.1], vec![0.08, 0.05]]),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerCurveSpec {
    /// Model whose `beta[0]` and `delta` are overwritten per grid point and configuration.
    pub template: AggregateIvScm,
    pub beta1_grid: Vec<f64>,
    pub configs: Vec<InstrumentConfig>,
    pub replicates: usize,
    pub n: usize,
    pub levels: Vec<f64>,
    pub master_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerRow {
    pub config: String,
    pub level: f64,
    pub beta1: f64,
    pub replicates: usize,
    pub rejections: usize,
    pub frequency: f64,
}

impl PowerRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.config, self.level, self.beta1, self.replicates, self.rejections, self.frequency
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FailureTally {
    pub config: String,
    pub beta1: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerCurve {
    /// Ordered by configuration (as given), then level, then `beta1`.
    pub rows: Vec<PowerRow>,
    /// Replicates whose estimation failed; they count as non-rejections.
    pub failures: Vec<FailureTally>,
}

impl PowerCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(POWER_CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.csv_row());
            out.push('\n');
        }
        out
    }

    pub fn total_failures(&self) -> usize {
        self.failures.iter().map(|f| f.failures).sum()
    }

    pub fn frequency(&self, config: &str, level: f64, beta1: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.config == config && r.level == level && (r.beta1 - beta1).abs() < 1e-9)
            .map(|r| r.frequency)
    }

    pub fn series(&self, config: &str, level: f64) -> Vec<&PowerRow> {
        self.rows
            .iter()
            .filter(|r| r.config == config && r.level == level)
            .collect()
    }
}

/// Rejection frequencies of the Sargan test per configuration, level and `beta1`.
///
/// Replicate `r` at grid point `g` of configuration `c` draws its data with
/// seed `derive_seed(master_seed, [c, g, r])`; each dataset is tested once and
/// the p-value compared with every level.
pub fn sargan_power_curve(spec: &PowerCurveSpec) -> Result<PowerCurve> {
    if spec.replicates == 0 {
        return Err(Error::Precondition("replicates must be >= 1".into()));
    }
    if spec.beta1_grid.is_empty() || spec.configs.is_empty() {
        return Err(Error::Precondition(
            "grid and configurations must be non-empty".into(),
        ));
    }
    for &level in &spec.levels {
        check_level(level)?;
    }
    let mut levels = spec.levels.clone();
    levels.sort_by(f64::total_cmp);

    let mut scms = Vec::with_capacity(spec.configs.len());
    for config in &spec.configs {
        let mut scm = spec.template.clone();
        scm.delta = config.delta.clone();
        scm.m = config.delta.len();
        scm.var_i.resize(scm.m, 1.0);
        scm.ensure_valid()?;
        if scm.m < 2 {
            return Err(Error::UnderIdentified(format!(
                "configuration `{}` has fewer than 2 instruments",
                config.name
            )));
        }
        scms.push(scm);
    }
    let instrument_labels: Vec<String> = (1..=scms[0].m).map(|l| format!("i{l}")).collect();

    let tasks: Vec<(usize, usize)> = (0..scms.len())
        .flat_map(|c| (0..spec.beta1_grid.len()).map(move |g| (c, g)))
        .collect();
    let results: Vec<(Vec<usize>, usize)> = tasks
        .par_iter()
        .map(|&(c, g)| {
            let mut scm = scms[c].clone();
            scm.beta[0] = spec.beta1_grid[g];
            let labels: Vec<&str> = instrument_labels[..scm.m]
                .iter()
                .map(String::as_str)
                .collect();
            let mut rejections = vec![0usize; levels.len()];
            let mut failures = 0usize;
            for r in 0..spec.replicates {
                let seed = derive_seed(spec.master_seed, &[c as u64, g as u64, r as u64]);
                let outcome = scm
                    .sample_observational(spec.n, seed)
                    .and_then(|data| sargan_test(&data, "a", "y", &labels, 0.5));
                match outcome {
                    Ok(report) => {
                        for (count, &level) in rejections.iter_mut().zip(&levels) {
                            if report.p_value < level {
                                *count += 1;
                            }
                        }
                    }
                    Err(_) => failures += 1,
                }
            }
            (rejections, failures)
        })
        .collect();

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (c, config) in spec.configs.iter().enumerate() {
        for (li, &level) in levels.iter().enumerate() {
            for (g, &beta1) in spec.beta1_grid.iter().enumerate() {
                let (rejections, _) = &results[c * spec.beta1_grid.len() + g];
                rows.push(PowerRow {
                    config: config.name.clone(),
                    level,
                    beta1,
                    replicates: spec.replicates,
                    rejections: rejections[li],
                    frequency: rejections[li] as f64 / spec.replicates as f64,
                });
            }
        }
        for (g, &beta1) in spec.beta1_grid.iter().enumerate() {
            let (_, failed) = results[c * spec.beta1_grid.len() + g];
            if failed > 0 {
                failures.push(FailureTally {
                    config: config.name.clone(),
                    beta1,
                    failures: failed,
                });
            }
        }
    }
    Ok(PowerCurve { rows, failures })
}

fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && x[order[end + 1]] == x[order[start]] {
            end += 1;
        }
        let rank = (start + end) as f64 / 2.0 + 1.0;
        for &i in &order[start..=end] {
            ranks[i] = rank;
        }
        start = end + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties. `NaN` when either
/// input is constant.
pub fn spearman_correlation(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "spearman inputs must have equal length");
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sargan_scm(delta: Vec<Vec<f64>>, beta1: f64) -> AggregateIvScm {
        AggregateIvScm::unit_variance(vec![1.0, 1.0], vec![beta1, 2.0], delta, vec![0.5, 0.5], 2.0)
    }

    fn rounded(x: f64) -> f64 {
        (x * 1000.0).round() / 1000.0
    }

    #[test]
    fn strong_weak_correlations_and_classes() {
        let scm = sargan_scm(vec![vec![5.0, 3.0], vec![0.1, 0.2]], 1.0);
        let c1 = instrument_treatment_correlation(&scm, 0).unwrap();
        let c2 = instrument_treatment_correlation(&scm, 1).unwrap();
        assert_eq!((rounded(c1), rounded(c2)), (0.977, 0.037));
        assert_eq!(InstrumentStrength::classify(c1), InstrumentStrength::Strong);
        assert_eq!(InstrumentStrength::classify(c2), InstrumentStrength::Weak);
    }

    #[test]
    fn weak_weak_correlations_follow_closed_form() {
        // cor(I_l, A) = (d_l1 + d_l2) / sqrt((d_11 + d_12)^2 + (d_21 + d_22)^2 + 3)
        let scm = sargan_scm(vec![vec![0.15, 0.1], vec![0.08, 0.05]], 1.0);
        let sd = (0.25f64.powi(2) + 0.13f64.powi(2) + 3.0).sqrt();
        assert_relative_eq!(
            instrument_treatment_correlation(&scm, 0).unwrap(),
            0.25 / sd,
            epsilon = 1e-15
        );
        assert_relative_eq!(
            instrument_treatment_correlation(&scm, 1).unwrap(),
            0.13 / sd,
            epsilon = 1e-15
        );
        assert_eq!(rounded(0.13 / sd), 0.074);
    }

    #[test]
    fn zero_row_has_zero_correlation() {
        let scm = sargan_scm(vec![vec![5.0, 3.0], vec![0.0, 0.0]], 1.0);
        assert_eq!(instrument_treatment_correlation(&scm, 1).unwrap(), 0.0);
    }

    #[test]
    fn exactly_fitting_outcome_gives_zero_statistic() {
        let scm = sargan_scm(vec![vec![5.0, 3.0], vec![4.0, 2.0]], 2.0);
        let data = scm.sample_observational(300, 5).unwrap();
        let a = data.column("a").unwrap();
        let y: Vec<f64> = a.iter().map(|v| 2.0 * v).collect();
        let data = Dataset::new(
            vec!["i1".into(), "i2".into(), "a".into(), "y".into()],
            vec![
                data.column("i1").unwrap().to_vec(),
                data.column("i2").unwrap().to_vec(),
                a.to_vec(),
                y,
            ],
        )
        .unwrap();
        let report = sargan_test(&data, "a", "y", &["i1", "i2"], 0.01).unwrap();
        assert_eq!(report.statistic, 0.0);
        assert_eq!(report.p_value, 1.0);
        assert!(!report.reject);
        assert_eq!(report.dof, 1);
    }

    #[test]
    fn single_instrument_is_under_identified() {
        let data = sargan_scm(vec![vec![1.0, 1.0]], 1.0)
            .sample_observational(50, 1)
            .unwrap();
        assert!(matches!(
            sargan_test(&data, "a", "y", &["i1"], 0.05),
            Err(Error::UnderIdentified(_))
        ));
        assert!(matches!(
            sargan_test(&data, "a", "y", &["i1", "i1"], 1.5),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn reject_iff_p_below_level() {
        let scm = sargan_scm(vec![vec![5.0, 3.0], vec![4.0, 2.0]], -1.0);
        for seed in 0..5 {
            let data = scm.sample_observational(1000, seed).unwrap();
            for level in [0.01, 0.5] {
                let r = sargan_test(&data, "a", "y", &["i1", "i2"], level).unwrap();
                assert_eq!(r.reject, r.p_value < level);
                assert!((0.0..=1.0).contains(&r.p_value));
                assert!(r.statistic >= 0.0);
            }
        }
    }

    #[test]
    fn spearman_handles_ties() {
        assert_relative_eq!(
            spearman_correlation(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]),
            1.0
        );
        assert_relative_eq!(
            spearman_correlation(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]),
            -1.0
        );
        // ranks x: 1, 2.5, 2.5, 4 ; y: 1, 2, 3, 4
        let rho = spearman_correlation(&[0.0, 1.0, 1.0, 2.0], &[0.0, 1.0, 2.0, 3.0]);
        assert_relative_eq!(rho, 4.5 / (4.5f64 * 5.0).sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn power_curve_is_deterministic_and_ordered() {
        let spec = PowerCurveSpec {
            template: sargan_scm(vec![vec![5.0, 3.0], vec![4.0, 2.0]], 2.0),
            beta1_grid: vec![0.0, 2.0],
            configs: standard_instrument_configs()[..2].to_vec(),
            replicates: 5,
            n: 200,
            levels: vec![0.5, 0.01],
            master_seed: 3,
        };
        let a = sargan_power_curve(&spec).unwrap();
        let b = sargan_power_curve(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 2 * 2 * 2);
        assert_eq!(a.rows[0].config, "strong-weak");
        assert_eq!(a.rows[0].level, 0.01);
        assert_eq!(a.rows[1].beta1, 2.0);
        assert!(a.to_csv().starts_with(
            "config,level,beta1,replicates,rejections,frequency\nstrong-weak,0.01,0,5,"
        ));
        // A rejection at 0.01 is also a rejection at 0.5.
        for c in ["strong-weak", "strong-strong"] {
            for beta1 in [0.0, 2.0] {
                assert!(
                    a.frequency(c, 0.01, beta1).unwrap() <= a.frequency(c, 0.5, beta1).unwrap()
                );
            }
        }
    }
}
