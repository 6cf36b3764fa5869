//! Reproduction runs. Each experiment produces one CSV table; [`write_experiment`]
//! stores it as `<out>/<id>/results.csv` next to a `manifest`.
//!
//! Random tasks draw from `derive_seed(seed, key)` with a key naming the grid
//! point, so output is byte-identical for a fixed configuration whatever the
//! thread count.

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::acid::{ace_monte_carlo, GaussianAcid, UniformCounterexampleAcid};
use crate::diagnostics::{
    instrument_treatment_correlation, sargan_power_curve, standard_instrument_configs,
    InstrumentStrength, PowerCurve, PowerCurveSpec, DEFAULT_LEVELS,
};
use crate::error::{Error, Result};
use crate::estimators::{fit_2sls, iv_estimand_sd};
use crate::rng::{derive_seed, stream_rng};
use crate::scm::AggregateIvScm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentId {
    Figure2a,
    Figure2b,
    Figure4,
    Table1,
    Table2,
    Counterexample,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 6] = [
        ExperimentId::Figure2a,
        ExperimentId::Figure2b,
        ExperimentId::Figure4,
        ExperimentId::Table1,
        ExperimentId::Table2,
        ExperimentId::Counterexample,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentId::Figure2a => "figure2a",
            ExperimentId::Figure2b => "figure2b",
            ExperimentId::Figure4 => "figure4",
            ExperimentId::Table1 => "table1",
            ExperimentId::Table2 => "table2",
            ExperimentId::Counterexample => "counterexample",
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|id| id.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment `{s}`")))
    }
}

/// Evenly spaced points `start, start + step, ..., stop`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl Grid {
    pub fn new(start: f64, stop: f64, step: f64) -> Result<Self> {
        let grid = Self { start, stop, step };
        grid.validate()?;
        Ok(grid)
    }

    fn validate(&self) -> Result<()> {
        let finite = self.start.is_finite() && self.stop.is_finite() && self.step.is_finite();
        if !finite || self.step <= 0.0 || self.stop < self.start {
            return Err(Error::Config(format!(
                "grid needs finite start <= stop and step > 0, got {}:{}:{}",
                self.start, self.stop, self.step
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        ((self.stop - self.start) / self.step).round() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Points are interpolated between the end points and rounded to 12
    /// decimals, so `-1:4:0.1` yields `0.3` rather than `0.30000000000000004`.
    pub fn points(&self) -> Vec<f64> {
        let count = self.len();
        if count == 1 {
            return vec![self.start];
        }
        (0..count)
            .map(|i| {
                let x = self.start + (self.stop - self.start) * i as f64 / (count - 1) as f64;
                let r = (x * 1e12).round() / 1e12;
                if r == 0.0 {
                    0.0
                } else {
                    r
                }
            })
            .collect()
    }
}

impl FromStr for Grid {
    type Err = Error;

    /// `start:stop:step`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let parse = |p: &str| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("grid `{s}`: `{p}` is not a number")))
        };
        match parts.as_slice() {
            [a, b, c] => Grid::new(parse(a)?, parse(b)?, parse(c)?),
            _ => Err(Error::Config(format!("grid `{s}` is not start:stop:step"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub id: ExperimentId,
    pub seed: u64,
    pub grid: Grid,
    pub sample_sizes: Vec<usize>,
    pub replicates: usize,
}

impl ExperimentConfig {
    pub fn defaults(id: ExperimentId, seed: u64) -> Self {
        let beta_grid = Grid {
            start: -1.0,
            stop: 4.0,
            step: 0.1,
        };
        let (grid, sample_sizes, replicates) = match id {
            ExperimentId::Figure2a => (beta_grid, vec![10, 100, 1000], 1),
            ExperimentId::Figure2b => (
                Grid {
                    start: -2.0,
                    stop: 2.0,
                    step: 0.1,
                },
                vec![10, 100, 1000],
                1,
            ),
            ExperimentId::Figure4 => (beta_grid, vec![1000], 100),
            ExperimentId::Table1 => (beta_grid, vec![1], 1),
            ExperimentId::Table2 => (beta_grid, vec![1], 20),
            ExperimentId::Counterexample => (
                Grid {
                    start: -3.0,
                    stop: 2.0,
                    step: 0.1,
                },
                vec![100_000],
                1,
            ),
        };
        Self {
            id,
            seed,
            grid,
            sample_sizes,
            replicates,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.sample_sizes.is_empty() || self.sample_sizes.contains(&0) {
            return Err(Error::Config(
                "sample sizes must be non-empty and positive".into(),
            ));
        }
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be >= 1".into()));
        }
        Ok(())
    }

    /// SHA-256 of the JSON form of the configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

/// Model behind both sweep experiments: `alpha = delta = gamma = 1`, `beta_2 = 2`.
pub fn figure2_scm(beta1: f64) -> AggregateIvScm {
    AggregateIvScm::unit_variance(
        vec![1.0, 1.0],
        vec![beta1, 2.0],
        vec![vec![1.0, 1.0]],
        vec![1.0, 1.0],
        1.0,
    )
}

/// Two-instrument model of the Sargan study with `delta` from one configuration.
pub fn sargan_scm(beta1: f64, delta: Vec<Vec<f64>>) -> AggregateIvScm {
    AggregateIvScm::unit_variance(vec![1.0, 1.0], vec![beta1, 2.0], delta, vec![0.5, 0.5], 2.0)
}

pub const FIGURE2A_HEADER: &str =
    "beta1,n,replicate,sample_estimate,beta_iv_theoretical,ace_theoretical,beta_iv_sd,error";
pub const FIGURE2B_HEADER: &str =
    "d1,n,replicate,sample_estimate,beta_iv_theoretical,ace_theoretical,beta_iv_sd,error";

#[derive(Debug, Clone, PartialEq)]
pub struct Figure2Row {
    /// `beta1` for panel A, `d1` for panel B.
    pub x: f64,
    pub n: usize,
    pub replicate: usize,
    /// `NaN` when estimation failed; `error` then holds the failure code.
    pub sample_estimate: f64,
    pub beta_iv_theoretical: f64,
    pub ace_theoretical: f64,
    pub beta_iv_sd: f64,
    pub error: Option<&'static str>,
}

impl Figure2Row {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.x,
            self.n,
            self.replicate,
            self.sample_estimate,
            self.beta_iv_theoretical,
            self.ace_theoretical,
            self.beta_iv_sd,
            self.error.unwrap_or("")
        )
    }
}

fn figure2_rows(
    config: &ExperimentConfig,
    setting: impl Fn(f64) -> (AggregateIvScm, GaussianAcid) + Sync,
) -> Result<Vec<Figure2Row>> {
    config.validate()?;
    let points = config.grid.points();
    let mut tasks = Vec::new();
    for (g, &x) in points.iter().enumerate() {
        for &n in &config.sample_sizes {
            for r in 0..config.replicates {
                tasks.push((g, x, n, r));
            }
        }
    }
    tasks
        .par_iter()
        .map(|&(g, x, n, r)| {
            let (scm, acid) = setting(x);
            let beta_iv = scm.iv_estimand(0)?;
            let ace = acid.ace(&scm.beta)?;
            let sd = iv_estimand_sd(&scm, 0, n)?;
            let seed = derive_seed(config.seed, &[g as u64, n as u64, r as u64]);
            let estimate = scm
                .sample_observational(n, seed)
                .and_then(|data| fit_2sls(&data, "a", "y", &["i1"]));
            let (sample_estimate, error) = match estimate {
                Ok(report) => (report.point_estimate, None),
                Err(e) => (f64::NAN, Some(e.code())),
            };
            Ok(Figure2Row {
                x,
                n,
                replicate: r,
                sample_estimate,
                beta_iv_theoretical: beta_iv,
                ace_theoretical: ace,
                beta_iv_sd: sd,
                error,
            })
        })
        .collect()
}

/// Varies `beta1` with the intervention `d = (2, -1)` held fixed.
pub fn run_figure2a(config: &ExperimentConfig) -> Result<Vec<Figure2Row>> {
    figure2_rows(config, |beta1| {
        (
            figure2_scm(beta1),
            GaussianAcid::deterministic(vec![1.0, 1.0], vec![2.0, -1.0]),
        )
    })
}

/// Fixes `beta1 = 1` and varies the intervention `d = (d1, 1 - d1)`.
pub fn run_figure2b(config: &ExperimentConfig) -> Result<Vec<Figure2Row>> {
    figure2_rows(config, |d1| {
        (
            figure2_scm(1.0),
            GaussianAcid::deterministic(vec![1.0, 1.0], vec![d1, 1.0 - d1]),
        )
    })
}

pub fn figure4_spec(config: &ExperimentConfig) -> Result<PowerCurveSpec> {
    config.validate()?;
    let configs = standard_instrument_configs();
    Ok(PowerCurveSpec {
        template: sargan_scm(2.0, configs[0].delta.clone()),
        beta1_grid: config.grid.points(),
        configs,
        replicates: config.replicates,
        n: config.sample_sizes[0],
        levels: DEFAULT_LEVELS.to_vec(),
        master_seed: config.seed,
    })
}

pub fn run_figure4(config: &ExperimentConfig) -> Result<PowerCurve> {
    sargan_power_curve(&figure4_spec(config)?)
}

pub const TABLE1_HEADER: &str = "config,instrument,delta_1,delta_2,correlation,strength";

#[derive(Debug, Clone, PartialEq)]
pub struct Table1Row {
    pub config: String,
    /// 1-based.
    pub instrument: usize,
    pub delta: Vec<f64>,
    pub correlation: f64,
    pub strength: InstrumentStrength,
}

pub fn run_table1() -> Result<Vec<Table1Row>> {
    let mut rows = Vec::new();
    for config in standard_instrument_configs() {
        let scm = sargan_scm(2.0, config.delta.clone());
        for (l, delta) in config.delta.iter().enumerate() {
            let correlation = instrument_treatment_correlation(&scm, l)?;
            rows.push(Table1Row {
                config: config.name.clone(),
                instrument: l + 1,
                delta: delta.clone(),
                correlation,
                strength: InstrumentStrength::classify(correlation),
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Table2Case {
    General,
    /// `beta_2 = 0`.
    B,
    /// `delta_2 = 0`.
    C,
    /// `beta_2 = 0` and `delta_2 = 0`.
    D,
}

impl Table2Case {
    pub const ALL: [Table2Case; 4] = [
        Table2Case::General,
        Table2Case::B,
        Table2Case::C,
        Table2Case::D,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Table2Case::General => "general",
            Table2Case::B => "b",
            Table2Case::C => "c",
            Table2Case::D => "d",
        }
    }

    /// Applies the case's zero restrictions to a single-instrument `k = 2` model.
    pub fn restrict(self, scm: &AggregateIvScm) -> AggregateIvScm {
        let mut out = scm.clone();
        if matches!(self, Table2Case::B | Table2Case::D) {
            out.beta[1] = 0.0;
        }
        if matches!(self, Table2Case::C | Table2Case::D) {
            out.delta[0][1] = 0.0;
        }
        out
    }
}

pub const TABLE2_HEADER: &str =
    "draw,case,alpha1,alpha2,beta1,beta2,delta1,delta2,d1,d2,beta_iv,ace";

#[derive(Debug, Clone, PartialEq)]
pub struct Table2Row {
    pub draw: usize,
    pub case: Table2Case,
    pub scm: AggregateIvScm,
    pub d: Vec<f64>,
    pub beta_iv: f64,
    pub ace: f64,
}

/// Population IV estimand and ACE of `acid` for each case's restriction of `scm`.
pub fn run_table2(
    scm: &AggregateIvScm,
    acid: &GaussianAcid,
) -> Result<Vec<(Table2Case, f64, f64)>> {
    if scm.k != 2 || scm.m != 1 {
        return Err(Error::Dimension(
            "the cases are stated for k = 2, m = 1".into(),
        ));
    }
    acid.ensure_valid()?;
    Table2Case::ALL
        .into_iter()
        .map(|case| {
            let restricted = case.restrict(scm);
            Ok((
                case,
                restricted.iv_estimand(0)?,
                acid.ace(&restricted.beta)?,
            ))
        })
        .collect()
}

/// Random `k = 2` parameterization with a deterministic valid ACID.
pub fn table2_draw(seed: u64) -> (AggregateIvScm, GaussianAcid) {
    let mut rng = stream_rng(seed, 0);
    let mut signed = |lo: f64, hi: f64| {
        let v: f64 = rng.random_range(lo..hi);
        if rng.random_bool(0.5) {
            v
        } else {
            -v
        }
    };
    let alpha = vec![signed(0.5, 2.0), signed(0.5, 2.0)];
    let beta = vec![signed(0.0, 3.0), signed(0.0, 3.0)];
    let delta = vec![signed(0.5, 2.0), signed(0.5, 2.0)];
    let d1 = signed(0.0, 2.0);
    let d = vec![d1, (1.0 - alpha[0] * d1) / alpha[1]];
    let gamma = vec![signed(0.0, 1.0), signed(0.0, 1.0)];
    let gamma_y = signed(0.0, 1.0);
    let acid = GaussianAcid::deterministic(alpha.clone(), d);
    (
        AggregateIvScm::unit_variance(alpha, beta, vec![delta], gamma, gamma_y),
        acid,
    )
}

/// `replicates` random parameterizations; draws whose general case has
/// `alpha_1 delta_1 + alpha_2 delta_2` near zero are redrawn.
pub fn run_table2_draws(config: &ExperimentConfig) -> Result<Vec<Table2Row>> {
    config.validate()?;
    let mut rows = Vec::new();
    let mut attempt = 0u64;
    let mut draw = 0;
    while draw < config.replicates {
        let (scm, acid) = table2_draw(derive_seed(config.seed, &[attempt]));
        attempt += 1;
        if scm.first_stage_weight(0).abs() < 0.25 {
            continue;
        }
        for (case, beta_iv, ace) in run_table2(&scm, &acid)? {
            rows.push(Table2Row {
                draw,
                case,
                scm: case.restrict(&scm),
                d: acid.d.clone(),
                beta_iv,
                ace,
            });
        }
        draw += 1;
    }
    Ok(rows)
}

pub const COUNTEREXAMPLE_HEADER: &str = "a,expected_a2,effect,mc_effect,mc_std_error";

#[derive(Debug, Clone, PartialEq)]
pub struct CounterexampleRow {
    pub a: f64,
    pub expected_a2: f64,
    pub effect: f64,
    pub mc_effect: f64,
    pub mc_std_error: f64,
}

pub fn run_counterexample(config: &ExperimentConfig) -> Result<Vec<CounterexampleRow>> {
    config.validate()?;
    let n = config.sample_sizes[0].max(2);
    let points = config.grid.points();
    points
        .par_iter()
        .enumerate()
        .map(|(g, &a)| {
            let mc = ace_monte_carlo(
                &UniformCounterexampleAcid,
                &UniformCounterexampleAcid::BETA,
                a,
                n,
                derive_seed(config.seed, &[g as u64]),
            )?;
            Ok(CounterexampleRow {
                a,
                expected_a2: UniformCounterexampleAcid::expected_second(a)?,
                effect: UniformCounterexampleAcid::effect(a)?,
                mc_effect: mc.value,
                mc_std_error: mc.std_error,
            })
        })
        .collect()
}

/// CSV body of one experiment plus the number of failed estimation tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub csv: String,
    pub rows: usize,
    pub failures: usize,
}

fn table(header: &str, rows: impl IntoIterator<Item = String>) -> (String, usize) {
    let mut csv = String::from(header);
    csv.push('\n');
    let mut count = 0;
    for row in rows {
        csv.push_str(&row);
        csv.push('\n');
        count += 1;
    }
    (csv, count)
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let (csv, rows, failures) = match config.id {
        ExperimentId::Figure2a | ExperimentId::Figure2b => {
            let (rows, header) = if config.id == ExperimentId::Figure2a {
                (run_figure2a(config)?, FIGURE2A_HEADER)
            } else {
                (run_figure2b(config)?, FIGURE2B_HEADER)
            };
            let failures = rows.iter().filter(|r| r.error.is_some()).count();
            let (csv, n) = table(header, rows.iter().map(Figure2Row::csv_row));
            (csv, n, failures)
        }
        ExperimentId::Figure4 => {
            let curve = run_figure4(config)?;
            (curve.to_csv(), curve.rows.len(), curve.total_failures())
        }
        ExperimentId::Table1 => {
            let rows = run_table1()?;
            let (csv, n) = table(
                TABLE1_HEADER,
                rows.iter().map(|r| {
                    format!(
                        "{},{},{},{},{},{}",
                        r.config, r.instrument, r.delta[0], r.delta[1], r.correlation, r.strength
                    )
                }),
            );
            (csv, n, 0)
        }
        ExperimentId::Table2 => {
            let rows = run_table2_draws(config)?;
            let (csv, n) = table(
                TABLE2_HEADER,
                rows.iter().map(|r| {
                    let s = &r.scm;
                    format!(
                        "{},{},{},{},{},{},{},{},{},{},{},{}",
                        r.draw,
                        r.case.name(),
                        s.alpha[0],
                        s.alpha[1],
                        s.beta[0],
                        s.beta[1],
                        s.delta[0][0],
                        s.delta[0][1],
                        r.d[0],
                        r.d[1],
                        r.beta_iv,
                        r.ace
                    )
                }),
            );
            (csv, n, 0)
        }
        ExperimentId::Counterexample => {
            let rows = run_counterexample(config)?;
            let (csv, n) = table(
                COUNTEREXAMPLE_HEADER,
                rows.iter().map(|r| {
                    format!(
                        "{},{},{},{},{}",
                        r.a, r.expected_a2, r.effect, r.mc_effect, r.mc_std_error
                    )
                }),
            );
            (csv, n, 0)
        }
    };
    Ok(ExperimentOutput {
        csv,
        rows,
        failures,
    })
}

pub fn manifest(config: &ExperimentConfig, output: &ExperimentOutput) -> String {
    format!(
        "experiment={}\nseed={}\nconfig_sha256={}\nversion={}\nrows={}\nfailures={}\n",
        config.id,
        config.seed,
        config.hash(),
        env!("CARGO_PKG_VERSION"),
        output.rows,
        output.failures
    )
}

/// Runs `config` and writes `<out>/<id>/results.csv` and `<out>/<id>/manifest`.
/// Returns the experiment directory.
pub fn write_experiment(config: &ExperimentConfig, out: &Path) -> Result<PathBuf> {
    let output = run_experiment(config)?;
    let dir = out.join(config.id.name());
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("results.csv"), &output.csv)?;
    std::fs::write(dir.join("manifest"), manifest(config, &output))?;
    Ok(dir)
}
