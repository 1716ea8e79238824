mod report;
mod repro;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use obsvkit::estimator::{default_window, query_grid, simulate_run, EstimatorMode, RunConfig};
use obsvkit::sampling::{design_for_target, find_certificate, DesignParams, Placement, SamplingTarget};
use obsvkit::system::{parse_sampling, parse_system};
use obsvkit::{Error, LtiSystem, RankTol, SamplingSequence, TimeDomain};

pub const EXIT_MISMATCH: u8 = 1;
pub const EXIT_SCHEMA: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;
pub const EXIT_DESIGN: u8 = 4;
pub const EXIT_CERTIFICATE: u8 = 5;
pub const EXIT_REGRESSOR: u8 = 6;
pub const EXIT_USAGE: u8 = 64;

const TOL_ENV: &str = "OBSVKIT_TOL";

#[derive(Parser)]
#[command(name = "obsvkit", version, about = "Sample-based functional observability toolkit")]
struct Cli {
    /// Absolute singular-value threshold for rank decisions (overrides OBSVKIT_TOL).
    #[arg(long, global = true)]
    tol: Option<f64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rank tests, decompositions and certificates for a system and optional sampling sequence.
    Analyze {
        system: PathBuf,
        #[arg(long)]
        sampling: Option<PathBuf>,
        /// Report path; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Design a certified sampling sequence.
    Design {
        system: PathBuf,
        #[arg(long, value_enum, default_value_t = TargetArg::ObservableSubspace)]
        target: TargetArg,
        /// Window length for continuous-time designs.
        #[arg(long = "T", value_name = "T")]
        horizon: Option<f64>,
        /// Number of samples for discrete-time designs.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, value_enum, default_value_t = PlacementArg::Uniform)]
        placement: PlacementArg,
        /// Largest period scanned for aliasing (discrete time).
        #[arg(long)]
        s_max: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate the sliding-window estimator on a sampling schedule.
    Estimate {
        system: PathBuf,
        sampling: PathBuf,
        /// Initial state, comma separated; defaults to F^T / |F|.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x0: Option<Vec<f64>>,
        /// Prior estimate, comma separated; defaults to zero.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        prior: Option<Vec<f64>>,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Samples per window; defaults to the observability index of the estimated pair.
        #[arg(long)]
        window: Option<usize>,
        #[arg(long, value_enum, default_value_t = ModeArg::Full)]
        mode: ModeArg,
        /// Last query time; defaults to the last sample.
        #[arg(long)]
        horizon: Option<f64>,
        /// Query points on [0, horizon] in continuous time.
        #[arg(long, default_value_t = 200)]
        queries: usize,
        /// CSV path for the error trace.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reproduce a reference case end to end.
    Repro {
        #[arg(long = "case", value_enum)]
        case: repro::Case,
        #[arg(long, default_value = "repro")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TargetArg {
    #[value(name = "full_state")]
    FullState,
    #[value(name = "observable_subspace")]
    ObservableSubspace,
    #[value(name = "functional_via_C", alias = "functional_via_c")]
    FunctionalViaC,
    #[value(name = "functional_via_Q", alias = "functional_via_q")]
    FunctionalViaQ,
}

impl From<TargetArg> for SamplingTarget {
    fn from(t: TargetArg) -> Self {
        match t {
            TargetArg::FullState => SamplingTarget::FullState,
            TargetArg::ObservableSubspace => SamplingTarget::ObservableSubspace,
            TargetArg::FunctionalViaC => SamplingTarget::FunctionalViaC,
            TargetArg::FunctionalViaQ => SamplingTarget::FunctionalViaQ,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PlacementArg {
    Uniform,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Full,
    Reduced,
}

/// Failure carrying the process exit code.
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }
}

pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::NumericalInconsistency(_) => EXIT_NUMERICAL,
        Error::DesignFailure(_) | Error::NotObservable { .. } => EXIT_DESIGN,
        Error::MissingCertificate(_) => EXIT_CERTIFICATE,
        Error::RankDeficientRegressor { .. } => EXIT_REGRESSOR,
        _ => EXIT_SCHEMA,
    }
}

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        let hint = match err {
            Error::MissingCertificate(_) => "; run `obsvkit analyze` to inspect the available certificates",
            _ => "",
        };
        Failure::new(exit_code(&err), format!("{err}{hint}"))
    }
}

pub type CliResult<T = ()> = std::result::Result<T, Failure>;

pub fn read_file(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| Failure::new(EXIT_SCHEMA, format!("cannot read {}: {e}", path.display())))
}

pub fn write_file(path: &Path, contents: &str) -> CliResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)
            .map_err(|e| Failure::new(EXIT_SCHEMA, format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| Failure::new(EXIT_SCHEMA, format!("cannot write {}: {e}", path.display())))
}

fn emit(out: Option<&Path>, contents: &str) -> CliResult {
    match out {
        Some(path) => write_file(path, contents),
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

fn load_system(path: &Path) -> CliResult<LtiSystem> {
    Ok(parse_system(&read_file(path)?)?)
}

fn load_sampling(path: &Path, domain: TimeDomain) -> CliResult<SamplingSequence> {
    Ok(parse_sampling(&read_file(path)?, domain)?)
}

fn resolve_tol(flag: Option<f64>) -> CliResult<RankTol> {
    let value = match flag {
        Some(v) => Some(v),
        None => match std::env::var(TOL_ENV) {
            Ok(raw) => Some(
                raw.trim()
                    .parse::<f64>()
                    .map_err(|_| Failure::new(EXIT_USAGE, format!("{TOL_ENV}={raw} is not a number")))?,
            ),
            Err(_) => None,
        },
    };
    match value {
        Some(v) if !(v.is_finite() && v >= 0.0) => {
            Err(Failure::new(EXIT_USAGE, format!("tolerance must be a non-negative number, got {v}")))
        }
        other => Ok(RankTol::from(other)),
    }
}

fn state_vector(values: Option<Vec<f64>>, n: usize, what: &str) -> CliResult<Option<DVector<f64>>> {
    match values {
        None => Ok(None),
        Some(v) if v.len() != n => Err(Failure::new(
            EXIT_SCHEMA,
            format!("{what} has {} entries, state dimension is {n}", v.len()),
        )),
        Some(v) => Ok(Some(DVector::from_vec(v))),
    }
}

fn run(cli: Cli) -> CliResult {
    let tol = resolve_tol(cli.tol)?;
    match cli.command {
        Command::Analyze { system, sampling, out } => {
            let sys = load_system(&system)?;
            let seq = sampling.map(|p| load_sampling(&p, sys.domain())).transpose()?;
            let (doc, diagnostics) = report::analyze(&sys, seq.as_ref(), tol)?;
            emit(out.as_deref(), &report::pretty(&doc))?;
            if !diagnostics.is_empty() {
                return Err(Failure::new(EXIT_NUMERICAL, diagnostics.join("; ")));
            }
            Ok(())
        }
        Command::Design {
            system,
            target,
            horizon,
            k,
            placement,
            s_max,
            seed,
            out,
        } => {
            let sys = load_system(&system)?;
            let params = DesignParams {
                horizon,
                k,
                placement: match placement {
                    PlacementArg::Uniform => Placement::Uniform,
                    PlacementArg::Random => Placement::Random,
                },
                s_max,
                seed,
                tol,
                certificate: None,
            };
            let design = design_for_target(&sys, target.into(), &params)?;
            emit(out.as_deref(), &report::pretty(&design.to_json()))
        }
        Command::Estimate {
            system,
            sampling,
            x0,
            prior,
            noise,
            seed,
            window,
            mode,
            horizon,
            queries,
            out,
        } => {
            let sys = load_system(&system)?;
            let schedule = load_sampling(&sampling, sys.domain())?;
            let f = sys.require_f()?.clone();
            let n = sys.n();
            let x0 = state_vector(x0, n, "x0")?.unwrap_or_else(|| obsvkit::cases::unit_mismatch_state(&f));
            let prior = state_vector(prior, n, "prior")?;
            let mode = match mode {
                ModeArg::Full => EstimatorMode::Full,
                ModeArg::Reduced => EstimatorMode::Reduced(find_certificate(&sys, &f, seed)?),
            };
            let window = match window {
                Some(w) => w,
                None => default_window(&sys, &mode, tol)?,
            };
            let end = horizon.unwrap_or_else(|| *schedule.times().last().expect("non-empty schedule"));
            let config = RunConfig {
                x0,
                schedule,
                window,
                noise_bound: noise,
                seed,
                query_times: query_grid(sys.domain(), end, queries),
                prior,
                mode,
                tol,
            };
            let run = simulate_run(&sys, &config)?;
            if let Some(path) = out {
                write_file(&path, &run.to_csv())?;
            }
            println!("{}", report::pretty(&serde_json::json!(run.summary())).trim_end());
            Ok(())
        }
        Command::Repro { case, out } => repro::run(case, &out, tol),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("obsvkit: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
