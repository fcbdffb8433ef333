//! `dobc`: command-line front end for distributed observer-based control
//! synthesis.
//!
//! Exit codes: 0 success, 2 invalid input, 3 synthesis failure, 4 numerical
//! failure (including a run whose report records a failed check).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde::Serialize;

use dobc_core::delay::{delayed_error_decay, demo_scenario, design_dim, radius_spectrum, synthesize_delayed, DelayScenarioFile};
use dobc_core::io::{from_json, to_json, GainsFile, SystemFile};
use dobc_core::model::{check_joint, StructureReport};
use dobc_core::setpoint::{design_setpoint_controller, setpoint_feasible, simulate_tracking, SetpointFile, TRACKING_TOL};
use dobc_core::sim::{assemble_closed_loop, decay_slope, simulate_continuous, simulate_discrete, InitialState};
use dobc_core::{CompensatorMode, Error, SpectrumSpec, SynthConfig, SynthesisReport};

#[derive(Parser)]
#[command(name = "dobc", version, about = "Distributed observer-based control synthesis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a system file: joint controllability/observability, zero
    /// channels, self-loops and strong connectivity.
    Check { system: PathBuf },

    /// Synthesize observer gains with a controller on channel q.
    Synthesize {
        system: PathBuf,
        /// Comma-separated eigenvalues, complex as `a+bi`.
        #[arg(long, allow_hyphen_values = true)]
        spectrum: String,
        /// 1-based channel carrying the compensator.
        #[arg(long, default_value_t = 1)]
        q: usize,
        #[arg(long, value_enum, default_value_t = Mode::Full)]
        mode: Mode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Gains file to write.
        #[arg(long)]
        out: PathBuf,
        /// Report file; printed to stdout when absent.
        #[arg(long)]
        report: Option<PathBuf>,
    },

    /// Simulate the closed loop and write a CSV trace.
    Simulate {
        system: PathBuf,
        gains: PathBuf,
        /// Horizon: time for continuous runs, number of steps with --discrete.
        #[arg(long = "T", default_value_t = 10.0)]
        t_final: f64,
        /// Initial plant state, comma-separated; all ones when absent.
        #[arg(long, allow_hyphen_values = true)]
        x0: Option<String>,
        /// RK4 step; defaults to 0.05 / max|eig|.
        #[arg(long)]
        h: Option<f64>,
        /// Treat the plant as discrete time.
        #[arg(long)]
        discrete: bool,
        #[arg(long)]
        out: PathBuf,
    },

    /// Design and simulate set-point regulation from a scenario file.
    Setpoint {
        scenario: PathBuf,
        /// Report file; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Optional CSV trace of the tracking run.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },

    /// Run the bundled three-channel delayed network for every q.
    DelayDemo {
        /// Report file; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Spectral radius of the prescribed spectrum.
        #[arg(long, default_value_t = 0.5)]
        rho: f64,
        #[arg(long, default_value_t = 120)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Use this scenario instead of the bundled one.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Write the bundled scenario here and exit.
        #[arg(long)]
        dump_scenario: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Full,
    Minimal,
}

impl From<Mode> for CompensatorMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Full => CompensatorMode::Full,
            Mode::Minimal => CompensatorMode::Minimal,
        }
    }
}

#[derive(Debug)]
enum Failure {
    Core(Error),
    Io(PathBuf, std::io::Error),
    /// The command ran but its report records a failed check.
    Report { code: u8, message: String },
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Core(Error::InvalidInput(_) | Error::DimensionMismatch { .. }) => 2,
            Failure::Core(Error::Synthesis { .. }) => 3,
            Failure::Core(Error::Numerical(_) | Error::Internal(_)) => 4,
            Failure::Io(..) => 2,
            Failure::Report { code, .. } => *code,
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Core(e) => e.to_string(),
            Failure::Io(p, e) => format!("{}: {e}", p.display()),
            Failure::Report { message, .. } => message.clone(),
        }
    }
}

type Outcome = std::result::Result<(), Failure>;

fn read(path: &Path) -> std::result::Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Io(path.to_path_buf(), e))
}

fn write(path: &Path, text: &str) -> Outcome {
    fs::write(path, text).map_err(|e| Failure::Io(path.to_path_buf(), e))
}

fn emit<T: Serialize>(value: &T, path: Option<&Path>) -> Outcome {
    let text = to_json(value)?;
    match path {
        Some(p) => write(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn parse_vector(text: &str, what: &str) -> std::result::Result<Vec<f64>, Failure> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidInput(format!("{what}: cannot parse {:?} as a number", t.trim())).into())
        })
        .collect()
}

#[derive(Serialize)]
struct CheckReport {
    structure: StructureReport,
    strongly_connected: bool,
    passed: bool,
}

fn cmd_check(system: &Path) -> Outcome {
    let file: SystemFile = from_json(&read(system)?, &system.display().to_string())?;
    let (sys, g, _) = file.into_parts()?;
    let structure = check_joint(&sys, dobc_core::linalg::DEFAULT_RANK_TOL)?;
    let strongly_connected = g.is_strongly_connected();
    let passed = structure.passed() && strongly_connected;
    let mut violations = structure.violations.clone();
    if !strongly_connected {
        violations.push("neighbor graph is not strongly connected".into());
    }
    emit(
        &CheckReport {
            structure,
            strongly_connected,
            passed,
        },
        None,
    )?;
    if passed {
        Ok(())
    } else {
        Err(Failure::Report {
            code: 2,
            message: violations.join("; "),
        })
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_synthesize(system: &Path, spectrum: &str, q: usize, mode: Mode, seed: u64, out: &Path, report: Option<&Path>) -> Outcome {
    let file: SystemFile = from_json(&read(system)?, &system.display().to_string())?;
    let (sys, g, f) = file.into_parts()?;
    let f = f.unwrap_or_else(|| sys.zero_feedback());
    let targets = SpectrumSpec::parse(spectrum)?;
    if q == 0 || q > sys.m() {
        return Err(Error::InvalidInput(format!("--q {q} is not a channel in 1..={}", sys.m())).into());
    }
    let config = SynthConfig {
        seed,
        mode: mode.into(),
        ..SynthConfig::default()
    };
    let syn = dobc_core::synthesize(&sys, &g, &f, &targets, q - 1, &config)?;
    write(out, &to_json(&GainsFile::new(&syn.gains, &f))?)?;
    emit(&syn.report, report)
}

#[derive(Serialize)]
struct SimSummary {
    samples: usize,
    horizon: f64,
    step: Option<f64>,
    discrete: bool,
    final_error_norm: f64,
    fitted_decay: Option<f64>,
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(system: &Path, gains: &Path, t_final: f64, x0: Option<&str>, h: Option<f64>, discrete: bool, out: &Path) -> Outcome {
    let file: SystemFile = from_json(&read(system)?, &system.display().to_string())?;
    let gfile: GainsFile = from_json(&read(gains)?, &gains.display().to_string())?;
    let (sys, _, _) = file.into_parts()?;
    let (obs, f) = gfile.into_gains(&sys)?;
    let x0 = match x0 {
        Some(text) => {
            let v = parse_vector(text, "--x0")?;
            if v.len() != sys.n() {
                return Err(Error::DimensionMismatch {
                    context: "--x0".into(),
                    expected: sys.n().to_string(),
                    actual: v.len().to_string(),
                }
                .into());
            }
            DVector::from_vec(v)
        }
        None => DVector::from_element(sys.n(), 1.0),
    };
    if !(t_final >= 0.0 && t_final.is_finite()) {
        return Err(Error::InvalidInput(format!("--T {t_final} must be a nonnegative number")).into());
    }
    let cl = assemble_closed_loop(&sys, &f, &obs, None)?;
    let init = InitialState::plant(x0);
    let (trace, step) = if discrete {
        if t_final.fract() != 0.0 {
            return Err(Error::InvalidInput(format!("--T {t_final} must be a whole number of steps with --discrete")).into());
        }
        (simulate_discrete(&cl, &init, t_final as usize)?, None)
    } else {
        let step = match h {
            Some(h) => h,
            None => dobc_core::sim::default_step(&cl)?,
        };
        (simulate_continuous(&cl, &init, t_final, Some(step))?, Some(step))
    };
    write(out, &trace.to_csv())?;
    let peak = (0..trace.len()).map(|k| trace.error_norm(k)).fold(0.0, f64::max);
    let slope = decay_slope(&trace, 1e-9 * peak);
    emit(
        &SimSummary {
            samples: trace.len(),
            horizon: t_final,
            step,
            discrete,
            final_error_norm: trace.final_error_norm(),
            fitted_decay: if discrete { slope.map(f64::exp) } else { slope },
        },
        None,
    )
}

#[derive(Serialize)]
struct SetpointReport {
    r: Vec<f64>,
    horizon: f64,
    /// `|y_i(T) - r_i|` per channel.
    errors: Vec<f64>,
    tolerance: f64,
    passed: bool,
    feedback_spectrum: Vec<[f64; 2]>,
    synthesis: SynthesisReport,
}

fn cmd_setpoint(scenario: &Path, out: Option<&Path>, trace_path: Option<&Path>, seed: u64) -> Outcome {
    let file: SetpointFile = from_json(&read(scenario)?, &scenario.display().to_string())?;
    let s = file.into_scenario()?;
    let config = SynthConfig {
        seed,
        ..SynthConfig::default()
    };
    if !setpoint_feasible(&s.problem, config.rank_tol)? {
        return Err(Error::InvalidInput(
            "set-point problem is infeasible: rank [A B; C 0] < n + m, so no controller can hold every y_i at an arbitrary r_i".into(),
        )
        .into());
    }
    let design = design_setpoint_controller(&s.problem, &s.graph, &s.feedback_spectrum, &s.spectrum, s.q, &config)?;
    let run = simulate_tracking(&s.problem, &design, &s.x0, None)?;
    if let Some(p) = trace_path {
        write(p, &run.trace.to_csv())?;
    }
    let passed = run.errors.iter().all(|e| *e < TRACKING_TOL);
    let report = SetpointReport {
        r: s.problem.r.clone(),
        horizon: design.horizon,
        errors: run.errors.clone(),
        tolerance: TRACKING_TOL,
        passed,
        feedback_spectrum: s.feedback_spectrum.values().iter().map(|z| [z.re, z.im]).collect(),
        synthesis: design.synthesis.report,
    };
    emit(&report, out)?;
    if passed {
        Ok(())
    } else {
        Err(Failure::Report {
            code: 4,
            message: format!("tracking error {:?} not below {TRACKING_TOL:e} at T = {}", run.errors, design.horizon),
        })
    }
}

#[derive(Serialize)]
struct DelayRun {
    q: usize,
    passed: bool,
    lifted_dim: usize,
    design_dim: usize,
    compensator_order: usize,
    max_spectral_mismatch: f64,
    fitted_rate: Option<f64>,
    bound: f64,
    stacked_fitted_rate: Option<f64>,
    trace_gap: f64,
    final_error_norm: f64,
}

#[derive(Serialize)]
struct DelayReport {
    n: usize,
    m: usize,
    max_delay: usize,
    /// `[from, to, delay]`, 1-based.
    delays: Vec<[usize; 3]>,
    rho: f64,
    steps: usize,
    passed: bool,
    runs: Vec<DelayRun>,
}

const DECAY_MARGIN: f64 = 0.05;

fn cmd_delay_demo(out: Option<&Path>, rho: f64, steps: usize, seed: u64, scenario: Option<&Path>) -> Outcome {
    let s = match scenario {
        Some(p) => from_json::<DelayScenarioFile>(&read(p)?, &p.display().to_string())?.into_scenario()?,
        None => demo_scenario()?,
    };
    let (n, m, d) = (s.sys.n(), s.sys.m(), s.delays.max_delay());
    let dim = design_dim(n, m, d);
    let targets = radius_spectrum(rho, 2 * dim)?;
    let bound = targets.max_modulus() + DECAY_MARGIN;
    let x0 = DVector::from_element(n, 1.0);
    let mut runs = Vec::new();
    let mut failed = Vec::new();
    for q in 0..m {
        let config = SynthConfig {
            seed: seed.wrapping_add(q as u64),
            ..SynthConfig::default()
        };
        let syn = synthesize_delayed(&s.sys, &s.graph, &s.feedback, &targets, q, &s.delays, &config)?;
        let fit = delayed_error_decay(&s.sys, &s.graph, &s.feedback, &syn.gains, &s.delays, &x0, steps)?;
        let passed = fit.rate.is_some_and(|r| r <= bound);
        if !passed {
            failed.push(q + 1);
        }
        runs.push(DelayRun {
            q: q + 1,
            passed,
            lifted_dim: n * m * (d + 1),
            design_dim: dim,
            compensator_order: syn.gains.compensator_order(),
            max_spectral_mismatch: syn.report.max_spectral_mismatch,
            fitted_rate: fit.rate,
            bound,
            stacked_fitted_rate: fit.stacked_rate,
            trace_gap: fit.gap,
            final_error_norm: fit.trace.final_error_norm(),
        });
    }
    let report = DelayReport {
        n,
        m,
        max_delay: d,
        delays: s.delays.arcs().iter().map(|(&(from, to), &dl)| [from + 1, to + 1, dl]).collect(),
        rho,
        steps,
        passed: failed.is_empty(),
        runs,
    };
    emit(&report, out)?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Report {
            code: 4,
            message: format!("fitted decay above {bound} for q = {failed:?}"),
        })
    }
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Check { system } => cmd_check(&system),
        Command::Synthesize {
            system,
            spectrum,
            q,
            mode,
            seed,
            out,
            report,
        } => cmd_synthesize(&system, &spectrum, q, mode, seed, &out, report.as_deref()),
        Command::Simulate {
            system,
            gains,
            t_final,
            x0,
            h,
            discrete,
            out,
        } => cmd_simulate(&system, &gains, t_final, x0.as_deref(), h, discrete, &out),
        Command::Setpoint {
            scenario,
            out,
            trace,
            seed,
        } => cmd_setpoint(&scenario, out.as_deref(), trace.as_deref(), seed),
        Command::DelayDemo {
            out,
            rho,
            steps,
            seed,
            scenario,
            dump_scenario,
        } => match dump_scenario {
            Some(p) => write(&p, dobc_core::delay::demo_scenario_json()),
            None => cmd_delay_demo(out.as_deref(), rho, steps, seed, scenario.as_deref()),
        },
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
