//! The `aggiv` command line.
//!
//! Exit codes: 0 success, 2 malformed input or usage, 3 model validation or
//! precondition failure, 4 numerical or estimation failure. Failures print one
//! JSON object on stderr: `{"error": code, "kind": ..., "exit_code": ..., "message": ...}`.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::acid::{ace_monte_carlo, GaussianAcid, UniformCounterexampleAcid};
use crate::config::{exclusion_violation_to_toml, read_model, Acid, ModelConfig};
use crate::dataset::Dataset;
use crate::diagnostics::sargan_test;
use crate::equivalence::{exclusion_violation_equivalent, verify_distribution_equivalence};
use crate::error::{Error, ErrorKind, Result};
use crate::estimators::{fit_2sls, REPORT_CSV_HEADER};
use crate::experiments::{write_experiment, ExperimentConfig, ExperimentId, Grid};

#[derive(Debug, Clone, Parser)]
#[command(
    name = "aggiv",
    version,
    about = "Aggregate-treatment IV models: simulation, estimands, 2SLS and Sargan diagnostics"
)]
pub struct Cli {
    /// Output directory.
    #[arg(long, global = true, env = "AGGIV_OUT", default_value = "out")]
    pub out: PathBuf,
    /// Master seed.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Print progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArg {
    /// Model file (TOML).
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Draw observational data from a model file into `<out>/simulate/data.csv`.
    Simulate {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long, default_value_t = 1000)]
        n: usize,
    },
    /// Fit 2SLS to a CSV dataset.
    Estimate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "a")]
        treatment: String,
        #[arg(long, default_value = "y")]
        outcome: String,
        /// Comma-separated instrument columns (default: every `i<l>` column).
        #[arg(long, value_delimiter = ',')]
        instruments: Vec<String>,
    },
    /// Build the model's `[acid]`, report its ACE and optionally sample `do(A = at)`.
    Acid {
        #[command(flatten)]
        model: ModelArg,
        /// Intervention value to sample at.
        #[arg(long, allow_hyphen_values = true)]
        at: Option<f64>,
        #[arg(long, default_value_t = 10_000)]
        n: usize,
    },
    /// Write the observationally equivalent exclusion-violating model.
    Equivalence {
        #[command(flatten)]
        model: ModelArg,
    },
    /// Sargan over-identification test on a CSV dataset or on data drawn from a model.
    Sargan {
        #[arg(long, conflicts_with = "config", required_unless_present = "config")]
        data: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value = "a")]
        treatment: String,
        #[arg(long, default_value = "y")]
        outcome: String,
        #[arg(long, value_delimiter = ',')]
        instruments: Vec<String>,
        #[arg(long, default_value_t = 0.05)]
        level: f64,
    },
    /// Run a reproduction experiment into `<out>/<experiment>/`.
    Experiment {
        /// figure2a | figure2b | figure4 | table1 | table2 | counterexample
        id: String,
        /// `start:stop:step` for the swept parameter.
        #[arg(long, allow_hyphen_values = true)]
        grid: Option<String>,
        /// Comma-separated sample sizes.
        #[arg(long, value_delimiter = ',')]
        n: Vec<usize>,
        #[arg(long)]
        replicates: Option<usize>,
    },
    /// Check a model file (and its `[acid]`) against all invariants.
    Validate {
        #[command(flatten)]
        model: ModelArg,
    },
}

pub fn exit_code(kind: ErrorKind) -> i32 {
    match kind {
        ErrorKind::Input => 2,
        ErrorKind::Validation => 3,
        ErrorKind::Numerical => 4,
    }
}

pub fn error_line(err: &Error) -> String {
    let kind = match err.kind() {
        ErrorKind::Input => "input",
        ErrorKind::Validation => "validation",
        ErrorKind::Numerical => "numerical",
    };
    serde_json::json!({
        "error": err.code(),
        "kind": kind,
        "exit_code": exit_code(err.kind()),
        "message": err.to_string(),
    })
    .to_string()
}

fn default_instruments(data: &Dataset, given: &[String]) -> Vec<String> {
    if !given.is_empty() {
        return given.to_vec();
    }
    data.labels()
        .iter()
        .filter(|l| l.len() > 1 && l.starts_with('i') && l[1..].bytes().all(|b| b.is_ascii_digit()))
        .cloned()
        .collect()
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, contents)?;
    Ok(())
}

/// Executes `cli`, writing human-readable results to `stdout`.
pub fn run(cli: &Cli, stdout: &mut (dyn Write + Send)) -> Result<()> {
    match &cli.command {
        Command::Simulate { model, n } => {
            let data = match read_model(&model.config)? {
                ModelConfig::Aggregate { scm, .. } => scm.sample_observational(*n, cli.seed)?,
                ModelConfig::ExclusionViolation(eq) => eq.sample(*n, cli.seed)?,
            };
            let path = cli.out.join("simulate").join("data.csv");
            write_file(
                &path,
                &data.with_metadata("seed", cli.seed).to_csv_string()?,
            )?;
            writeln!(stdout, "{}", path.display())?;
        }
        Command::Estimate {
            data,
            treatment,
            outcome,
            instruments,
        } => {
            let data = Dataset::read_csv_file(data)?;
            let instruments = default_instruments(&data, instruments);
            let names: Vec<&str> = instruments.iter().map(String::as_str).collect();
            let report = fit_2sls(&data, treatment, outcome, &names)?;
            let text = format!("{REPORT_CSV_HEADER}\n{}\n", report.csv_row());
            write_file(&cli.out.join("estimate").join("report.csv"), &text)?;
            write!(stdout, "{text}")?;
        }
        Command::Acid { model, at, n } => {
            let config = read_model(&model.config)?;
            let (scm, spec) = config.aggregate()?;
            scm.ensure_valid()?;
            let spec =
                spec.ok_or_else(|| Error::Config("model file has no [acid] table".into()))?;
            let acid = spec.build(scm)?;
            match &acid {
                Acid::Gaussian(g) => {
                    writeln!(stdout, "kind=gaussian")?;
                    writeln!(stdout, "d={:?}", g.d)?;
                    writeln!(stdout, "ace={}", g.ace(&scm.beta)?)?;
                }
                Acid::Counterexample(_) => {
                    writeln!(stdout, "kind=counterexample")?;
                    if let Some(a) = at {
                        writeln!(stdout, "effect={}", UniformCounterexampleAcid::effect(*a)?)?;
                    }
                }
            }
            if let Some(a) = at {
                let sampler = acid.sampler();
                let mc = ace_monte_carlo(sampler, &scm.beta, *a, (*n).max(2), cli.seed)?;
                writeln!(stdout, "ace_monte_carlo={} se={}", mc.value, mc.std_error)?;
                let columns = sampler.sample_components(*a, *n, cli.seed)?;
                let labels = (1..=sampler.dim()).map(|j| format!("a{j}")).collect();
                let data = Dataset::new(labels, columns)?.with_metadata("a", a);
                let path = cli.out.join("acid").join("interventional.csv");
                write_file(&path, &data.to_csv_string()?)?;
                writeln!(stdout, "{}", path.display())?;
            }
        }
        Command::Equivalence { model } => {
            let config = read_model(&model.config)?;
            let (scm, _) = config.aggregate()?;
            let eq = exclusion_violation_equivalent(scm)?;
            let discrepancy = verify_distribution_equivalence(scm, &eq)?;
            let text = exclusion_violation_to_toml(&eq);
            write_file(&cli.out.join("equivalence").join("model.toml"), &text)?;
            write!(stdout, "{text}")?;
            writeln!(stdout, "# max covariance discrepancy = {discrepancy:e}")?;
        }
        Command::Sargan {
            data,
            config,
            n,
            treatment,
            outcome,
            instruments,
            level,
        } => {
            let data = match (data, config) {
                (Some(path), _) => Dataset::read_csv_file(path)?,
                (None, Some(path)) => {
                    let config = read_model(path)?;
                    config.aggregate()?.0.sample_observational(*n, cli.seed)?
                }
                (None, None) => {
                    return Err(Error::Config(
                        "either --data or --config is required".into(),
                    ))
                }
            };
            let instruments = default_instruments(&data, instruments);
            let names: Vec<&str> = instruments.iter().map(String::as_str).collect();
            let r = sargan_test(&data, treatment, outcome, &names, *level)?;
            writeln!(
                stdout,
                "statistic={} dof={} p_value={} level={} reject={}",
                r.statistic, r.dof, r.p_value, r.level, r.reject
            )?;
        }
        Command::Experiment {
            id,
            grid,
            n,
            replicates,
        } => {
            let id: ExperimentId = id.parse()?;
            let mut config = ExperimentConfig::defaults(id, cli.seed);
            if let Some(grid) = grid {
                config.grid = grid.parse::<Grid>()?;
            }
            if !n.is_empty() {
                config.sample_sizes = n.clone();
            }
            if let Some(r) = replicates {
                config.replicates = *r;
            }
            if cli.verbose {
                eprintln!("running {id} with seed {}", cli.seed);
            }
            let dir = write_experiment(&config, &cli.out)?;
            writeln!(stdout, "{}", dir.join("results.csv").display())?;
        }
        Command::Validate { model } => {
            let config = read_model(&model.config)?;
            match &config {
                ModelConfig::ExclusionViolation(eq) => {
                    eq.validate()?;
                    writeln!(stdout, "exclusion-violation model: valid")?;
                }
                ModelConfig::Aggregate { scm, acid } => {
                    let report = scm.validate();
                    if !report.is_valid() {
                        writeln!(stdout, "scm: {report}")?;
                        return Err(Error::InvalidScm(report));
                    }
                    writeln!(stdout, "scm: valid")?;
                    if let Some(spec) = acid {
                        match spec.build(scm) {
                            Ok(Acid::Gaussian(g)) => {
                                let checks = g.validate(crate::acid::DEFAULT_ACID_TOL)?;
                                writeln!(stdout, "acid: {checks}")?;
                            }
                            Ok(Acid::Counterexample(_)) => {
                                writeln!(stdout, "acid: counterexample (uniform, k = 2)")?
                            }
                            Err(e) => {
                                writeln!(stdout, "acid: {e}")?;
                                return Err(e);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

fn run_with_pool(cli: &Cli, stdout: &mut (dyn Write + Send)) -> Result<()> {
    match cli.jobs {
        Some(jobs) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(jobs.max(1))
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            pool.install(|| run(cli, stdout))
        }
        None => run(cli, stdout),
    }
}

/// Runs `cli` against the process stdout and returns the exit code.
pub fn dispatch(cli: &Cli) -> i32 {
    let mut buffer = Vec::new();
    let result = run_with_pool(cli, &mut buffer);
    let _ = std::io::stdout().write_all(&buffer);
    match result {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("{}", error_line(&err));
            exit_code(err.kind())
        }
    }
}

/// Parses `args` (including the program name) and dispatches.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => dispatch(&cli),
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            0
        }
        Err(e) => {
            let err = Error::Config(
                e.to_string()
                    .lines()
                    .next()
                    .unwrap_or("usage error")
                    .to_string(),
            );
            eprintln!("{}", error_line(&err));
            2
        }
    }
}

/// Convenience for checks: the Gaussian ACE of a model file's `[acid]`.
pub fn model_ace(path: &Path) -> Result<f64> {
    let config = read_model(path)?;
    let (scm, spec) = config.aggregate()?;
    let spec = spec.ok_or_else(|| Error::Config("model file has no [acid] table".into()))?;
    match spec.build(scm)? {
        Acid::Gaussian(g) => GaussianAcid::ace(&g, &scm.beta),
        Acid::Counterexample(_) => Err(Error::Precondition(
            "the counterexample ACE depends on a".into(),
        )),
    }
}
