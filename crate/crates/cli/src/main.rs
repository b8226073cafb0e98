//! `robkal`: command-line harness for the robust Kalman filtering library.
//!
//! Exit codes: 0 success, 1 invalid input or usage, 2 numerical failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use serde_json::Value;

use robkal::diagnostics::linearity_test;
use robkal::expect::{Engine, DEFAULT_MC_SAMPLES};
use robkal::experiment::{run_experiment, ExperimentConfig};
use robkal::filter::{states_csv, Calibration, FilterPlan, FilterSpec};
use robkal::kalman::riccati;
use robkal::minimax::{
    density_trace, density_trace_csv, io_saddle, solve_least_favorable_radius, solve_rho,
    GaussianIdealSpec, GaussianPair, IdealPair,
};
use robkal::rls::{calibrate_b_delta, calibrate_b_io, calibrate_b_io_delta, calibrate_b_radius};
use robkal::rng::{derive_seed, purpose};
use robkal::ssm::{contaminate, simulate_ideal, ModelSpec, Trajectory};
use robkal::Error;

#[derive(Parser)]
#[command(
    name = "robkal",
    version,
    about = "Robust Kalman filtering: filters, calibration, saddle points, experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EngineKind {
    Auto,
    ClosedForm,
    Quadrature,
    MonteCarlo,
}

#[derive(Args)]
struct Common {
    /// JSON config: a model, a Gaussian ideal pair or an experiment.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config's).
    #[arg(long)]
    seed: Option<u64>,
    /// Output file, written atomically; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output format; each subcommand has its own default.
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Args)]
struct EngineArgs {
    /// Expectation engine for calibration and saddle points.
    #[arg(long, value_enum, default_value = "auto")]
    engine: EngineKind,
    /// Monte Carlo sample size.
    #[arg(long, default_value_t = DEFAULT_MC_SAMPLES)]
    samples: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a trajectory (contaminated when the experiment config says so).
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Number of time steps (model configs).
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Run one filter over observations (or a fresh simulation).
    Filter {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        engine: EngineArgs,
        /// Trajectory CSV to filter.
        #[arg(long)]
        observations: Option<PathBuf>,
        /// Simulate this many steps when no observations are given.
        #[arg(long)]
        horizon: Option<usize>,
        /// Radius calibration.
        #[arg(long, conflicts_with_all = ["delta", "b"])]
        r: Option<f64>,
        /// Efficiency calibration.
        #[arg(long, conflicts_with = "b")]
        delta: Option<f64>,
        /// Fixed clipping height ("inf" allowed).
        #[arg(long, value_parser = parse_height)]
        b: Option<f64>,
        /// Use rLS.IO instead of rLS.AO.
        #[arg(long)]
        io: bool,
    },
    /// Clipping height b(r) or b(delta).
    Calibrate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        engine: EngineArgs,
        /// Contamination radius.
        #[arg(long, conflicts_with = "delta", required_unless_present = "delta")]
        r: Option<f64>,
        /// Efficiency premium.
        #[arg(long)]
        delta: Option<f64>,
        /// Time step whose prediction covariance is used (model configs).
        #[arg(long, default_value_t = 1)]
        time: usize,
        /// Calibrate the rLS.IO residual.
        #[arg(long)]
        io: bool,
    },
    /// Least favorable radius on [r_l, r_u].
    Radius {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        engine: EngineArgs,
        /// Lower end of the radius range.
        #[arg(long)]
        rl: f64,
        /// Upper end of the radius range.
        #[arg(long)]
        ru: f64,
        /// Time step whose prediction covariance is used (model configs).
        #[arg(long, default_value_t = 1)]
        time: usize,
    },
    /// SO (or IO) minimax saddle point.
    Saddle {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        engine: EngineArgs,
        /// Contamination radius, 0 < r < 1.
        #[arg(long)]
        r: f64,
        /// Time step whose prediction covariance is used (model configs).
        #[arg(long, default_value_t = 1)]
        time: usize,
        /// Solve the IO problem instead of SO.
        #[arg(long)]
        io: bool,
        /// Write the `y,p_id,p_re,p_di` density trace here.
        #[arg(long)]
        trace_density: Option<PathBuf>,
        /// Grid size of the density trace.
        #[arg(long, default_value_t = 241)]
        points: usize,
    },
    /// Skewness test of a sample (CSV, one draw per row).
    Lintest {
        #[command(flatten)]
        common: Common,
        /// Sample CSV with a header row.
        #[arg(long)]
        sample: PathBuf,
        /// Test level.
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
    },
    /// Monte Carlo experiment from a config.
    Experiment {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(Error::Io(e))
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn parse_height(s: &str) -> std::result::Result<f64, String> {
    match s {
        "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
        _ => s.parse::<f64>().map_err(|e| e.to_string()),
    }
}

fn read_file(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| {
        CliError::Core(Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        )))
    })
}

/// A parsed `--config`.
enum Config {
    Model(ModelSpec),
    Pair(GaussianPair),
    Experiment(Box<ExperimentConfig>),
}

fn read_config(path: Option<&Path>) -> CliResult<Config> {
    let path = path.ok_or_else(|| CliError::Usage("--config is required".into()))?;
    let text = read_file(path)?;
    let value: Value = serde_json::from_str(&text).map_err(Error::from)?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::validation("config", "expected a JSON object"))?;
    if obj.contains_key("filters") || obj.contains_key("model") {
        Ok(Config::Experiment(Box::new(ExperimentConfig::from_json(
            &text,
        )?)))
    } else if obj.contains_key("Sigma_x") {
        let spec: GaussianIdealSpec = serde_json::from_value(value).map_err(Error::from)?;
        Ok(Config::Pair(GaussianPair::try_from(spec)?))
    } else {
        Ok(Config::Model(ModelSpec::from_json(&text)?))
    }
}

fn model_of(config: &Config) -> CliResult<&ModelSpec> {
    match config {
        Config::Model(m) => Ok(m),
        Config::Experiment(e) => Ok(&e.model),
        Config::Pair(_) => Err(CliError::Usage(
            "this subcommand needs a model config".into(),
        )),
    }
}

/// The one-step Gaussian pair `(dX_t, dY_t)` of a model at `time`, or the configured pair.
fn pair_of(config: &Config, time: usize) -> CliResult<GaussianPair> {
    if let Config::Pair(p) = config {
        return Ok(p.clone());
    }
    let model = model_of(config)?;
    if time < 1 {
        return Err(CliError::Usage("--time must be at least 1".into()));
    }
    model.check_horizon(time)?;
    let step = riccati(model, time)?.pop().expect("time >= 1");
    Ok(GaussianPair::new(
        DVector::zeros(model.p),
        step.sigma_pred,
        model.z_at(time)?.clone(),
        model.v_at(time)?.clone(),
    )?)
}

fn engine_of(args: &EngineArgs, seed: Option<u64>) -> Engine {
    let seed = seed.unwrap_or(0);
    match args.engine {
        EngineKind::Auto => Engine::Auto {
            samples: args.samples,
            seed,
        },
        EngineKind::ClosedForm => Engine::ClosedForm,
        EngineKind::Quadrature => Engine::Quadrature,
        EngineKind::MonteCarlo => Engine::MonteCarlo {
            samples: args.samples,
            seed,
        },
    }
}

/// Write `content` to `path` through a temporary file in the same directory,
/// so an interrupted run never leaves a partial file behind.
fn write_atomic(path: &Path, content: &str) -> CliResult<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(content.as_bytes())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

fn emit(out: Option<&Path>, content: &str) -> CliResult<()> {
    match out {
        Some(p) => write_atomic(p, content),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(content.as_bytes())?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn json<T: Serialize>(value: &T) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(Error::from)?;
    s.push('\n');
    Ok(s)
}

/// Replication 0 of an experiment, or a plain ideal run for a model config.
fn trajectory(config: &Config, horizon: Option<usize>, seed: Option<u64>) -> CliResult<Trajectory> {
    match config {
        Config::Experiment(e) => {
            let seed = seed.unwrap_or(e.seed);
            let horizon = horizon.unwrap_or(e.horizon);
            let ideal = simulate_ideal(&e.model, horizon, derive_seed(seed, 0, purpose::SIMULATE))?;
            Ok(match &e.contamination {
                Some(c) => contaminate(
                    &e.model,
                    &ideal,
                    c,
                    derive_seed(seed, 0, purpose::CONTAMINATE_HITS),
                )?,
                None => ideal,
            })
        }
        Config::Model(m) => {
            let horizon = horizon.ok_or_else(|| {
                CliError::Usage("--horizon is required for a model config".into())
            })?;
            Ok(simulate_ideal(m, horizon, seed.unwrap_or(0))?)
        }
        Config::Pair(_) => Err(CliError::Usage("simulation needs a model config".into())),
    }
}

fn csv_numbers(text: &str) -> CliResult<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|c| c.trim().parse::<f64>()).collect();
        match parsed {
            Ok(r) => rows.push(r),
            Err(_) if i == 0 => continue,
            Err(e) => {
                return Err(
                    Error::validation(format!("sample line {}", i + 1), e.to_string()).into(),
                )
            }
        }
    }
    Ok(rows)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate { common, horizon } => {
            let config = read_config(common.config.as_deref())?;
            let traj = trajectory(&config, horizon, common.seed)?;
            let text = match common.format.unwrap_or(Format::Csv) {
                Format::Csv => traj.to_csv(),
                Format::Json => json(&traj)?,
            };
            emit(common.out.as_deref(), &text)
        }
        Command::Filter {
            common,
            engine,
            observations,
            horizon,
            r,
            delta,
            b,
            io,
        } => {
            let config = read_config(common.config.as_deref())?;
            let model = model_of(&config)?;
            let ys = match &observations {
                Some(p) => Trajectory::observations_from_csv(&read_file(p)?)?,
                None => trajectory(&config, horizon, common.seed)?.y,
            };
            let calibration = match (r, delta, b) {
                (Some(r), _, _) => Some(Calibration::Radius { r }),
                (_, Some(delta), _) => Some(Calibration::Delta { delta }),
                (_, _, Some(b)) => Some(Calibration::Fixed { b }),
                _ => None,
            };
            let engine = engine_of(&engine, common.seed);
            let spec = match (calibration, &config) {
                (Some(calibration), _) if io => FilterSpec::RlsIo {
                    calibration,
                    engine,
                },
                (Some(calibration), _) => FilterSpec::RlsAo {
                    calibration,
                    engine,
                    covariance: Default::default(),
                },
                (None, _) if io => {
                    return Err(CliError::Usage("--io needs --r, --delta or --b".into()))
                }
                (None, Config::Experiment(e)) => e.filters[0],
                (None, _) => FilterSpec::Classical,
            };
            let plan = FilterPlan::new(spec, model, ys.len())?;
            let states = plan.run(model, &ys)?;
            let text = match common.format.unwrap_or(Format::Csv) {
                Format::Csv => states_csv(model, &states),
                Format::Json => {
                    #[derive(Serialize)]
                    struct FilterOutput<'a> {
                        label: String,
                        spec: FilterSpec,
                        #[serde(with = "robkal::rls::serde_heights")]
                        b_schedule: Vec<f64>,
                        states: &'a [robkal::kalman::FilterState],
                    }
                    json(&FilterOutput {
                        label: plan.label(),
                        spec,
                        b_schedule: plan.b_schedule(),
                        states: &states,
                    })?
                }
            };
            emit(common.out.as_deref(), &text)
        }
        Command::Calibrate {
            common,
            engine,
            r,
            delta,
            time,
            io,
        } => {
            let config = read_config(common.config.as_deref())?;
            let pair = pair_of(&config, time)?;
            let engine = engine_of(&engine, common.seed);
            let trace_filt = pair.cond_var_term();
            let (gain, dlt, z) = (pair.gain(), pair.delta(), pair.z());
            let cal = match (r, delta, io) {
                (Some(r), _, false) => calibrate_b_radius(gain, dlt, r, engine)?,
                (Some(r), _, true) => calibrate_b_io(gain, z, dlt, r, engine)?,
                (None, Some(d), false) => calibrate_b_delta(gain, dlt, trace_filt, d, engine)?,
                (None, Some(d), true) => calibrate_b_io_delta(gain, z, dlt, trace_filt, d, engine)?,
                (None, None, _) => {
                    return Err(CliError::Usage("one of --r or --delta is required".into()))
                }
            };
            let text = match common.format.unwrap_or(Format::Json) {
                Format::Json => json(&cal)?,
                Format::Csv => format!(
                    "b,residual,std_error\n{},{},{}\n",
                    if cal.b.is_infinite() {
                        "inf".to_string()
                    } else {
                        cal.b.to_string()
                    },
                    cal.residual,
                    cal.std_error
                ),
            };
            emit(common.out.as_deref(), &text)
        }
        Command::Radius {
            common,
            engine,
            rl,
            ru,
            time,
        } => {
            let config = read_config(common.config.as_deref())?;
            let pair = pair_of(&config, time)?;
            let sol = solve_least_favorable_radius(
                rl,
                ru,
                &IdealPair::Gaussian(pair),
                engine_of(&engine, common.seed),
            )?;
            let text = match common.format.unwrap_or(Format::Json) {
                Format::Json => json(&sol)?,
                Format::Csv => {
                    let mut s = String::from("r,A,B,rho0\n");
                    for ((a, b), g) in sol.a_table.iter().zip(&sol.b_table).zip(&sol.rho0_grid) {
                        s.push_str(&format!("{},{},{},{}\n", a.r, a.value, b.value, g.value));
                    }
                    s
                }
            };
            emit(common.out.as_deref(), &text)
        }
        Command::Saddle {
            common,
            engine,
            r,
            time,
            io,
            trace_density,
            points,
        } => {
            let config = read_config(common.config.as_deref())?;
            let pair = pair_of(&config, time)?;
            let ideal = IdealPair::Gaussian(pair.clone());
            let engine = engine_of(&engine, common.seed);
            let sp = if io {
                io_saddle(&ideal, r, engine)?
            } else {
                solve_rho(&ideal, r, engine)?
            };
            if let Some(path) = &trace_density {
                if io {
                    return Err(CliError::Usage(
                        "--trace-density is available for the SO problem only".into(),
                    ));
                }
                write_atomic(
                    path,
                    &density_trace_csv(&density_trace(&pair, &sp, points)?),
                )?;
            }
            let text = match common.format.unwrap_or(Format::Json) {
                Format::Json => json(&sp)?,
                Format::Csv => format!(
                    "r,rho,risk,normalization_residual,std_error\n{},{},{},{},{}\n",
                    sp.r, sp.rho, sp.risk, sp.normalization_residual, sp.std_error
                ),
            };
            emit(common.out.as_deref(), &text)
        }
        Command::Lintest {
            common,
            sample,
            alpha,
        } => {
            let rows = csv_numbers(&read_file(&sample)?)?;
            let p = rows.first().map_or(0, |r| r.len());
            if rows.iter().any(|r| r.len() != p) {
                return Err(Error::validation("sample", "rows have different lengths").into());
            }
            let m = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
            let res = linearity_test(&m, alpha)?;
            let text = match common.format.unwrap_or(Format::Json) {
                Format::Json => json(&res)?,
                Format::Csv => format!(
                    "n,t_n,sigma_hat,critical,standardized,reject\n{},{},{},{},{},{}\n",
                    res.n, res.t_n, res.sigma_hat, res.critical, res.standardized, res.reject
                ),
            };
            emit(common.out.as_deref(), &text)
        }
        Command::Experiment { common } => {
            let mut config = match read_config(common.config.as_deref())? {
                Config::Experiment(e) => *e,
                _ => {
                    return Err(CliError::Usage(
                        "experiment needs an experiment config".into(),
                    ))
                }
            };
            if let Some(seed) = common.seed {
                config.seed = seed;
            }
            let report = run_experiment(&config)?;
            let base = common
                .config
                .as_deref()
                .and_then(Path::parent)
                .unwrap_or(Path::new("."));
            let resolve = |p: &Path| {
                if p.is_absolute() {
                    p.to_path_buf()
                } else {
                    base.join(p)
                }
            };
            let mut wrote = false;
            if let Some(p) = &config.outputs.report {
                write_atomic(&resolve(p), &json(&report)?)?;
                wrote = true;
            }
            if let Some(p) = &config.outputs.mse_csv {
                write_atomic(&resolve(p), &report.mse_csv())?;
                wrote = true;
            }
            if common.out.is_some() || !wrote {
                let text = match common.format.unwrap_or(Format::Json) {
                    Format::Json => json(&report)?,
                    Format::Csv => report.mse_csv(),
                };
                emit(common.out.as_deref(), &text)?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
