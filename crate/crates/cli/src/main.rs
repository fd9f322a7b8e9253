//! `tubeharm`: runs barrier scans, solves, measure and growth experiments
//! from a TOML configuration and writes JSON/CSV results.
//!
//! Exit codes: 0 success, 1 acceptance failure, 2 configuration error,
//! 3 solver non-convergence.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tubeharm_core::serde_ext::extended_real;
use tubeharm_core::Error;

use config::ExperimentConfig;

#[derive(Debug)]
pub enum Failure {
    Config(String),
    NonConvergence(String),
    Other(String),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::NonConvergence(_) => 3,
            Failure::Other(_) => 1,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "configuration error: {m}"),
            Failure::NonConvergence(m) => write!(f, "solver did not converge: {m}"),
            Failure::Other(m) => write!(f, "{m}"),
        }
    }
}

/// Parameter and geometry errors are configuration errors; anything else
/// raised by the numerics is reported as a run failure.
pub fn core_failure(e: Error) -> Failure {
    match e {
        Error::InvalidDimensions { .. }
        | Error::ExponentOutOfRange { .. }
        | Error::Precondition(_)
        | Error::UnderResolved(_)
        | Error::GridMismatch(_) => Failure::Config(e.to_string()),
        _ => Failure::Other(e.to_string()),
    }
}

#[derive(Parser)]
#[command(name = "tubeharm", version, about = "p-harmonic functions and measures outside tubes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sign scans of the hat/check barriers, δ̂_c estimates and large-p thresholds.
    Barriers(Common),
    /// One Dirichlet solve; writes the grid solution.
    Solve(Common),
    /// p-harmonic measure of the sphere at probe points.
    Measure(Common),
    /// Closed-form measures (half-plane for p = 2, Lindqvist for p = n).
    Oracle(Common),
    /// Measure at A_{2s} against the outer radius R.
    Scaling(Common),
    /// Growth of a solution away from the tube.
    Growth(Common),
    /// Pass/fail summary of earlier outputs.
    Report(Common),
}

#[derive(Args, Clone, Default)]
struct Common {
    /// TOML configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args, Clone, Default)]
struct Overrides {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    /// Comma-separated for `barriers`; `inf` is accepted.
    #[arg(long, value_delimiter = ',', value_parser = parse_extended)]
    p: Vec<f64>,
    #[arg(long)]
    s: Option<f64>,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    r: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    radii: Vec<f64>,
    /// Absolute γ values (`barriers`).
    #[arg(long, value_delimiter = ',')]
    gamma: Vec<f64>,
    /// Uniform spacing (`solve`, `measure`).
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    delta_fraction: Option<f64>,
    #[arg(long)]
    delta_c: Option<f64>,
    #[arg(long)]
    stop_tol: Option<f64>,
    #[arg(long)]
    max_sweeps: Option<usize>,
    #[arg(long)]
    inputs: Option<PathBuf>,
}

fn parse_extended(s: &str) -> Result<f64, String> {
    extended_real::parse(s).ok_or_else(|| format!("not a number or inf: {s:?}"))
}

fn single_p(o: &Overrides) -> Result<Option<f64>, Failure> {
    match o.p.as_slice() {
        [] => Ok(None),
        [p] => Ok(Some(*p)),
        _ => Err(Failure::Config("this command takes a single --p".into())),
    }
}

fn reject(name: &str, present: bool, command: &str) -> Result<(), Failure> {
    if present {
        return Err(Failure::Config(format!("--{name} does not apply to `{command}`")));
    }
    Ok(())
}

macro_rules! set {
    ($target:expr, $value:expr) => {
        if let Some(v) = $value {
            $target = v;
        }
    };
}

/// Applies command-line overrides to the table of `command`.
fn apply_overrides(cfg: &mut ExperimentConfig, command: &str, o: &Overrides) -> Result<(), Failure> {
    let o = o.clone();
    match command {
        "barriers" => {
            let c = &mut cfg.barriers;
            set!(c.n, o.n);
            set!(c.m, o.m);
            if !o.p.is_empty() {
                c.p = o.p.clone();
            }
            if !o.gamma.is_empty() {
                c.gamma = o.gamma.clone();
            }
            reject("s", o.s.is_some(), command)?;
            reject("radius", o.radius.is_some(), command)?;
            reject("r", o.r.is_some(), command)?;
            reject("radii", !o.radii.is_empty(), command)?;
            reject("h", o.h.is_some(), command)?;
            reject("levels", o.levels.is_some(), command)?;
            reject("delta-fraction", o.delta_fraction.is_some(), command)?;
            reject("delta-c", o.delta_c.is_some(), command)?;
            reject("stop-tol", o.stop_tol.is_some(), command)?;
            reject("max-sweeps", o.max_sweeps.is_some(), command)?;
        }
        "solve" | "measure" => {
            let p = single_p(&o)?;
            let (n, m, pp, s, radius, resolution, levels, solver) = if command == "solve" {
                let c = &mut cfg.solve;
                (&mut c.n, &mut c.m, &mut c.p, &mut c.s, &mut c.radius, &mut c.resolution, &mut c.levels, &mut c.solver)
            } else {
                let c = &mut cfg.measure;
                (&mut c.n, &mut c.m, &mut c.p, &mut c.s, &mut c.radius, &mut c.resolution, &mut c.levels, &mut c.solver)
            };
            set!(*n, o.n);
            set!(*m, o.m);
            set!(*pp, p);
            set!(*s, o.s);
            set!(*radius, o.radius);
            set!(*levels, o.levels);
            if let Some(h) = o.h {
                *resolution = tubeharm_core::Resolution::Uniform { h };
            }
            set!(solver.stop_tol, o.stop_tol);
            set!(solver.max_sweeps, o.max_sweeps);
            reject("r", o.r.is_some(), command)?;
            reject("radii", !o.radii.is_empty(), command)?;
            reject("gamma", !o.gamma.is_empty(), command)?;
            reject("delta-fraction", o.delta_fraction.is_some(), command)?;
            reject("delta-c", o.delta_c.is_some(), command)?;
        }
        "oracle" => {
            let c = &mut cfg.oracle;
            set!(c.n, o.n);
            set!(c.m, o.m);
            set!(c.r, o.r);
            reject("p", !o.p.is_empty(), command)?;
            reject("s", o.s.is_some(), command)?;
            reject("radius", o.radius.is_some(), command)?;
            reject("radii", !o.radii.is_empty(), command)?;
            reject("gamma", !o.gamma.is_empty(), command)?;
            reject("h", o.h.is_some(), command)?;
            reject("levels", o.levels.is_some(), command)?;
            reject("delta-fraction", o.delta_fraction.is_some(), command)?;
            reject("delta-c", o.delta_c.is_some(), command)?;
            reject("stop-tol", o.stop_tol.is_some(), command)?;
            reject("max-sweeps", o.max_sweeps.is_some(), command)?;
        }
        "scaling" => {
            let p = single_p(&o)?;
            let c = &mut cfg.scaling;
            set!(c.n, o.n);
            set!(c.m, o.m);
            set!(c.p, p);
            set!(c.s, o.s);
            set!(c.delta_c, o.delta_c);
            if !o.radii.is_empty() {
                c.radii = o.radii.clone();
            }
            set!(c.solver.stop_tol, o.stop_tol);
            set!(c.solver.max_sweeps, o.max_sweeps);
            reject("radius", o.radius.is_some(), command)?;
            reject("r", o.r.is_some(), command)?;
            reject("gamma", !o.gamma.is_empty(), command)?;
            reject("h", o.h.is_some(), command)?;
            reject("levels", o.levels.is_some(), command)?;
            reject("delta-fraction", o.delta_fraction.is_some(), command)?;
        }
        "growth" => {
            let p = single_p(&o)?;
            let c = &mut cfg.growth;
            set!(c.n, o.n);
            set!(c.m, o.m);
            set!(c.p, p);
            set!(c.r, o.r);
            set!(c.delta_fraction, o.delta_fraction);
            if o.delta_c.is_some() {
                c.delta_c = o.delta_c;
            }
            set!(c.resolution.levels, o.levels);
            set!(c.solver.stop_tol, o.stop_tol);
            set!(c.solver.max_sweeps, o.max_sweeps);
            reject("s", o.s.is_some(), command)?;
            reject("radius", o.radius.is_some(), command)?;
            reject("radii", !o.radii.is_empty(), command)?;
            reject("gamma", !o.gamma.is_empty(), command)?;
            reject("h", o.h.is_some(), command)?;
        }
        _ => {}
    }
    if command == "report" {
        if o.inputs.is_some() {
            cfg.report.inputs = o.inputs;
        }
    } else {
        reject("inputs", o.inputs.is_some(), command)?;
    }
    Ok(())
}

fn run(command: &'static str, common: Common) -> Result<commands::Outcome, Failure> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    apply_overrides(&mut cfg, command, &common.overrides)?;
    let out = &common.out;
    match command {
        "barriers" => commands::barriers(&cfg, out),
        "solve" => commands::solve(&cfg, out),
        "measure" => commands::measure(&cfg, out),
        "oracle" => commands::oracle(&cfg, out),
        "scaling" => commands::scaling(&cfg, out),
        "growth" => commands::growth(&cfg, out),
        _ => commands::report(&cfg, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, common) = match cli.command {
        Command::Barriers(c) => ("barriers", c),
        Command::Solve(c) => ("solve", c),
        Command::Measure(c) => ("measure", c),
        Command::Oracle(c) => ("oracle", c),
        Command::Scaling(c) => ("scaling", c),
        Command::Growth(c) => ("growth", c),
        Command::Report(c) => ("report", c),
    };
    let outcome = match run(name, common) {
        Ok(o) => o,
        Err(f) => {
            eprintln!("tubeharm {name}: {f}");
            return ExitCode::from(f.exit_code());
        }
    };
    for c in &outcome.checks {
        println!(
            "criterion {}: {} {} — {}",
            c.criterion,
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    if !outcome.unconverged.is_empty() {
        let f = Failure::NonConvergence(outcome.unconverged.join("; "));
        eprintln!("tubeharm {name}: {f}");
        return ExitCode::from(f.exit_code());
    }
    if outcome.checks.iter().any(|c| !c.passed) {
        return ExitCode::from(1);
    }
    ExitCode::SUCCESS
}
