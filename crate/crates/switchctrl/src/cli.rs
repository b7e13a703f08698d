//! Batch command-line front-end.
//!
//! Subcommands: `validate` (parse only), `invariance`, `riccati`,
//! `metric`, `simulate`, and `certify` (all of the above in one run).
//! Systems come from `--config PATH` or an embedded `--fixture NAME`
//! (printable via `--show-fixture`), with `--gamma0`, `--T`, and `--M`
//! overrides. Every run emits one JSON [`RunReport`] to `--output` or
//! stdout; `--dump-curves` and `--dump-paths` add CSV dumps.
//!
//! Exit codes: 0 success; 1 invalid input (bad flags, unparsable or
//! inconsistent configs); 2 numerical failure (lost positive
//! semidefiniteness, singular Gramian, non-finite states).

use std::fs;
use std::io::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::fixtures::{fixture_json, FIXTURE_NAMES};
use crate::invariance::{approx_ctrl_sufficient, approx_null_verdict, v_ladder, InvarianceError};
use crate::metric::{k0_estimate, EpsilonSchedule, MetricError};
use crate::model::{parse_system, ModelError, SwitchSystem};
use crate::report::{
    invariance_section, metric_section, riccati_section, write_paths_csv, write_riccati_csv,
    RunReport,
};
use crate::riccati::{solve, LevelMMode, RiccatiError, RiccatiParams};
use crate::sim::{
    default_grid_steps, duality_check, mc_cost_dual, simulate_primal, LinearFeedback,
    LinearInjection, SamplePath, SimError, ZeroPolicy,
};
use crate::subspace::Vector;

/// Failure of a CLI run, tagged with the exit code it maps to.
#[derive(Debug)]
pub enum CliError {
    /// Exit 1: the invocation or the config is unusable.
    Input(String),
    /// Exit 2: the analysis itself broke down numerically.
    Numerical(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Input(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) | CliError::Numerical(m) => f.write_str(m),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<InvarianceError> for CliError {
    fn from(e: InvarianceError) -> Self {
        match e {
            InvarianceError::ModeDependentB => CliError::Input(e.to_string()),
            InvarianceError::Subspace(_) => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<RiccatiError> for CliError {
    fn from(e: RiccatiError) -> Self {
        match e {
            RiccatiError::InvalidParams { .. } => CliError::Input(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        match e {
            MetricError::Riccati(inner) => inner.into(),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::InvalidParams { .. } => CliError::Input(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(format!("i/o failure: {e}"))
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "switchctrl",
    version,
    about = "Controllability analysis and Monte-Carlo cross-checks for Markov switch systems"
)]
struct Cli {
    /// Print an embedded fixture's JSON config and exit.
    #[arg(long, value_name = "NAME")]
    show_fixture: Option<String>,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse and validate a system config, echoing its summary.
    Validate(SystemArgs),
    /// Compute the invariant-subspace ladder and both verdicts.
    Invariance(SystemArgs),
    /// Solve the backward Riccati family at a single ε.
    Riccati(RiccatiArgs),
    /// Sweep the ε-schedule and judge the exact-controllability limit.
    Metric(MetricArgs),
    /// Run the Monte-Carlo simulation cross-checks.
    Simulate(SimulateArgs),
    /// Run every analysis and emit one combined report.
    Certify(CertifyArgs),
}

#[derive(Args, Debug)]
struct SystemArgs {
    /// Path to a system config JSON document.
    #[arg(
        long,
        value_name = "PATH",
        required_unless_present = "fixture",
        conflicts_with = "fixture"
    )]
    config: Option<PathBuf>,

    /// Name of an embedded fixture (see --show-fixture).
    #[arg(long, value_name = "NAME")]
    fixture: Option<String>,

    /// Override the initial mode (a label from the config).
    #[arg(long, value_name = "LABEL")]
    gamma0: Option<String>,

    /// Override the horizon T.
    #[arg(long = "T", value_name = "TIME")]
    horizon: Option<f64>,

    /// Override the jump cap M.
    #[arg(long = "M", value_name = "COUNT")]
    jump_cap: Option<usize>,

    /// Write the JSON report here instead of stdout.
    #[arg(long, value_name = "PATH")]
    output: Option<PathBuf>,

    /// Report format (only `json` is defined).
    #[arg(long, value_name = "FORMAT", default_value = "json", value_parser = ["json"])]
    format: String,
}

#[derive(Args, Debug)]
struct GridArgs {
    /// ε values, comma-separated, largest first.
    #[arg(
        long = "eps-schedule",
        value_name = "LIST",
        default_value = "1e-1,1e-2,1e-3,1e-4,1e-5,1e-6"
    )]
    eps_schedule: String,

    /// Total integration steps over [0, T] (default: 2000 per unit time).
    #[arg(long = "grid-steps", value_name = "COUNT")]
    grid_steps: Option<usize>,

    /// Terminal-level behavior of the Riccati family.
    #[arg(long = "level-M-mode", value_name = "MODE", default_value = "gramian")]
    level_m_mode: String,
}

#[derive(Args, Debug)]
struct SampleArgs {
    /// Monte-Carlo sample count per estimate.
    #[arg(long, value_name = "COUNT", default_value_t = 200)]
    samples: usize,

    /// Base seed; sample i uses seed base + i.
    #[arg(long, value_name = "SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct RiccatiArgs {
    #[command(flatten)]
    system: SystemArgs,
    #[command(flatten)]
    grid: GridArgs,
    /// Dump the solved family as CSV (t,level,mode,i,j,K_ij).
    #[arg(long = "dump-curves", value_name = "PATH")]
    dump_curves: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct MetricArgs {
    #[command(flatten)]
    system: SystemArgs,
    #[command(flatten)]
    grid: GridArgs,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    system: SystemArgs,
    #[command(flatten)]
    samples: SampleArgs,
    /// Total output grid steps over [0, T] (default: 2000 per unit time).
    #[arg(long = "grid-steps", value_name = "COUNT")]
    grid_steps: Option<usize>,
    /// Dump simulated primal paths as CSV (sample,t,mode,x_1..x_N).
    #[arg(long = "dump-paths", value_name = "PATH")]
    dump_paths: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CertifyArgs {
    #[command(flatten)]
    system: SystemArgs,
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    samples: SampleArgs,
    /// Dump the smallest-ε Riccati family as CSV.
    #[arg(long = "dump-curves", value_name = "PATH")]
    dump_curves: Option<PathBuf>,
    /// Dump simulated primal paths as CSV.
    #[arg(long = "dump-paths", value_name = "PATH")]
    dump_paths: Option<PathBuf>,
}

/// Parse the process arguments, run, and return the exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            err.code()
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    if let Some(name) = &cli.show_fixture {
        let doc = fixture_json(name)?;
        write_stdout(&format!("{doc}\n"))?;
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(CliError::Input(format!(
            "a subcommand or --show-fixture is required (fixtures: {})",
            FIXTURE_NAMES.join(", ")
        )));
    };
    match command {
        Command::Validate(args) => {
            let (system, invocation) = load_system(&args)?;
            let report = RunReport::new("validate", invocation, &system);
            emit(&report, &args.output)
        }
        Command::Invariance(args) => {
            let (system, invocation) = load_system(&args)?;
            let mut report = RunReport::new("invariance", invocation, &system);
            run_invariance(&system, &mut report)?;
            emit(&report, &args.output)
        }
        Command::Riccati(args) => {
            let (system, mut invocation) = load_system(&args.system)?;
            extend_invocation(&mut invocation, grid_invocation(&args.grid));
            let mut report = RunReport::new("riccati", invocation, &system);
            let solution = run_riccati(&system, &args.grid, &mut report)?;
            dump_curves(&system, &solution, &args.dump_curves)?;
            emit(&report, &args.system.output)
        }
        Command::Metric(args) => {
            let (system, mut invocation) = load_system(&args.system)?;
            extend_invocation(&mut invocation, grid_invocation(&args.grid));
            let mut report = RunReport::new("metric", invocation, &system);
            run_metric(&system, &args.grid, &mut report)?;
            emit(&report, &args.system.output)
        }
        Command::Simulate(args) => {
            let (system, mut invocation) = load_system(&args.system)?;
            extend_invocation(
                &mut invocation,
                sample_invocation(&args.samples, args.grid_steps),
            );
            let mut report = RunReport::new("simulate", invocation, &system);
            let paths = run_simulation(&system, &args.samples, args.grid_steps, &mut report)?;
            dump_paths(&system, &paths, &args.dump_paths)?;
            emit(&report, &args.system.output)
        }
        Command::Certify(args) => {
            let (system, mut invocation) = load_system(&args.system)?;
            extend_invocation(&mut invocation, grid_invocation(&args.grid));
            extend_invocation(&mut invocation, sample_invocation(&args.samples, None));
            let mut report = RunReport::new("certify", invocation, &system);
            run_invariance(&system, &mut report)?;
            let solution = run_riccati(&system, &args.grid, &mut report)?;
            dump_curves(&system, &solution, &args.dump_curves)?;
            run_metric(&system, &args.grid, &mut report)?;
            let paths = run_simulation(&system, &args.samples, args.grid.grid_steps, &mut report)?;
            dump_paths(&system, &paths, &args.dump_paths)?;
            emit(&report, &args.system.output)
        }
    }
}

fn load_system(args: &SystemArgs) -> Result<(SwitchSystem, Value), CliError> {
    let (document, source) = if let Some(name) = &args.fixture {
        (fixture_json(name)?.to_string(), json!({ "fixture": name }))
    } else if let Some(path) = &args.config {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
        (text, json!({ "config": path.display().to_string() }))
    } else {
        unreachable!("clap requires --config or --fixture");
    };
    let system = parse_system(&document)?.with_overrides(
        args.gamma0.as_deref(),
        args.horizon,
        args.jump_cap,
    )?;
    let invocation = json!({
        "source": source,
        "overrides": {
            "gamma0": args.gamma0,
            "T": args.horizon,
            "M": args.jump_cap,
        },
    });
    Ok((system, invocation))
}

fn extend_invocation(invocation: &mut Value, extra: Value) {
    let map = invocation.as_object_mut().expect("invocation is an object");
    for (k, v) in extra.as_object().expect("extra is an object") {
        map.insert(k.clone(), v.clone());
    }
}

fn grid_invocation(grid: &GridArgs) -> Value {
    json!({
        "eps_schedule": grid.eps_schedule,
        "grid_steps": grid.grid_steps,
        "level_m_mode": grid.level_m_mode,
    })
}

fn sample_invocation(samples: &SampleArgs, grid_steps: Option<usize>) -> Value {
    json!({
        "samples": samples.samples,
        "seed": samples.seed,
        "sim_grid_steps": grid_steps,
    })
}

fn parse_eps_list(text: &str) -> Result<Vec<f64>, CliError> {
    let values: Result<Vec<f64>, _> = text.split(',').map(|s| s.trim().parse::<f64>()).collect();
    let values =
        values.map_err(|e| CliError::Input(format!("eps-schedule: unparsable value ({e})")))?;
    if values.is_empty() {
        return Err(CliError::Input(
            "eps-schedule: at least one value is required".into(),
        ));
    }
    for v in &values {
        if !v.is_finite() || *v <= 0.0 {
            return Err(CliError::Input(format!(
                "eps-schedule: values must be finite and > 0, got {v}"
            )));
        }
    }
    Ok(values)
}

fn parse_level_m_mode(text: &str) -> Result<LevelMMode, CliError> {
    text.parse::<LevelMMode>()
        .map_err(|e| CliError::Input(format!("level-M-mode: {e}")))
}

fn resolve_grid(system: &SwitchSystem, flag: Option<usize>) -> usize {
    flag.unwrap_or_else(|| default_grid_steps(system.horizon()))
}

fn run_invariance(system: &SwitchSystem, report: &mut RunReport) -> Result<(), CliError> {
    let start = Instant::now();
    let ladder = v_ladder(system)?;
    let approx_null = approx_null_verdict(system)?;
    let sufficiency = approx_ctrl_sufficient(system)?;
    report.add_section(
        "invariance",
        invariance_section(system, &ladder, approx_null, sufficiency),
    );
    report.add_timing("invariance", start.elapsed().as_secs_f64() * 1e3);
    Ok(())
}

/// Solve at the *smallest* scheduled ε — the best finite-ε stand-in for
/// the limit the metric sweep extrapolates.
fn run_riccati(
    system: &SwitchSystem,
    grid: &GridArgs,
    report: &mut RunReport,
) -> Result<crate::riccati::RiccatiSolution, CliError> {
    let start = Instant::now();
    let eps_list = parse_eps_list(&grid.eps_schedule)?;
    let eps = eps_list.iter().cloned().fold(f64::INFINITY, f64::min);
    let level_m_mode = parse_level_m_mode(&grid.level_m_mode)?;
    let steps = resolve_grid(system, grid.grid_steps);
    let solution = solve(system, RiccatiParams::bbt(system, eps, steps, level_m_mode))?;
    report.add_section("riccati", riccati_section(system, &solution));
    report.add_timing("riccati", start.elapsed().as_secs_f64() * 1e3);
    Ok(solution)
}

fn run_metric(
    system: &SwitchSystem,
    grid: &GridArgs,
    report: &mut RunReport,
) -> Result<(), CliError> {
    let start = Instant::now();
    let schedule = EpsilonSchedule::new(parse_eps_list(&grid.eps_schedule)?)?;
    let level_m_mode = parse_level_m_mode(&grid.level_m_mode)?;
    let steps = resolve_grid(system, grid.grid_steps);
    let diag = k0_estimate(system, &schedule, steps, level_m_mode)?;
    report.add_section("metric", metric_section(&diag));
    report.add_timing("metric", start.elapsed().as_secs_f64() * 1e3);
    Ok(())
}

/// The standard cross-check battery:
///
/// * duality residual under seeded random linear policies (the identity
///   that must hold for *any* policies);
/// * zero-injection dual cost from every basis direction (the raw
///   observability mass per coordinate);
/// * zero-control primal terminal statistics from `x0 = (1, …, 1)`.
///
/// Returns the simulated primal paths so the caller can dump them.
fn run_simulation(
    system: &SwitchSystem,
    samples: &SampleArgs,
    grid_steps: Option<usize>,
    report: &mut RunReport,
) -> Result<Vec<SamplePath>, CliError> {
    let start = Instant::now();
    let n = system.state_dim();
    let steps = resolve_grid(system, grid_steps);
    let count = samples.samples;
    let seed = samples.seed;
    let scale = 0.3;

    let x0 = Vector::from_element(n, 1.0);
    let y0 = Vector::from_fn(n, |i, _| if i % 2 == 0 { 1.0 } else { -1.0 });
    let primal_policy = LinearFeedback::random(system, seed.wrapping_add(1), scale);
    let dual_policy = LinearInjection::random(system, seed.wrapping_add(2), scale);
    let (residual_mean, residual_se) =
        duality_check(system, &x0, &y0, &primal_policy, &dual_policy, count, seed)?;

    let mut basis_costs = Vec::with_capacity(n);
    for i in 0..n {
        let e_i = Vector::from_fn(n, |j, _| if i == j { 1.0 } else { 0.0 });
        let (mean, se) = mc_cost_dual(system, &e_i, &ZeroPolicy, count, seed, steps)?;
        basis_costs.push(json!({
            "basis_index": i,
            "mean": mean,
            "std_error": se,
        }));
    }

    let mut paths = Vec::with_capacity(count);
    for i in 0..count {
        paths.push(simulate_primal(
            system,
            &x0,
            &ZeroPolicy,
            seed.wrapping_add(i as u64),
            steps,
        )?);
    }
    let terminal_norms: Vec<f64> = paths.iter().map(|p| p.terminal.norm()).collect();
    let mean_terminal = terminal_norms.iter().sum::<f64>() / terminal_norms.len().max(1) as f64;
    let max_terminal = terminal_norms.iter().cloned().fold(0.0f64, f64::max);

    report.add_section(
        "simulation",
        json!({
            "samples": count,
            "base_seed": seed,
            "grid_steps": steps,
            "x0": x0.iter().cloned().collect::<Vec<f64>>(),
            "y0": y0.iter().cloned().collect::<Vec<f64>>(),
            "policy_scale": scale,
            "primal_gain_seed": seed.wrapping_add(1),
            "dual_gain_seed": seed.wrapping_add(2),
            "duality_residual": { "mean": residual_mean, "std_error": residual_se },
            "dual_cost_zero_policy": basis_costs,
            "primal_zero_policy": {
                "mean_terminal_norm": mean_terminal,
                "max_terminal_norm": max_terminal,
            },
        }),
    );
    report.add_timing("simulation", start.elapsed().as_secs_f64() * 1e3);
    Ok(paths)
}

fn dump_curves(
    system: &SwitchSystem,
    solution: &crate::riccati::RiccatiSolution,
    target: &Option<PathBuf>,
) -> Result<(), CliError> {
    if let Some(path) = target {
        let mut buf = Vec::new();
        write_riccati_csv(system, solution, &mut buf)?;
        fs::write(path, buf)
            .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(())
}

fn dump_paths(
    system: &SwitchSystem,
    paths: &[SamplePath],
    target: &Option<PathBuf>,
) -> Result<(), CliError> {
    if let Some(path) = target {
        let mut buf = Vec::new();
        write_paths_csv(system, paths, &mut buf)?;
        fs::write(path, buf)
            .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(())
}

fn emit(report: &RunReport, output: &Option<PathBuf>) -> Result<(), CliError> {
    let text = report.render();
    match output {
        Some(path) => fs::write(path, text)
            .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display()))),
        None => write_stdout(&text),
    }
}

/// Write to stdout, treating a consumer that closed the pipe early (e.g.
/// `switchctrl … | head`) as success rather than a failed run.
fn write_stdout(text: &str) -> Result<(), CliError> {
    match std::io::stdout().write_all(text.as_bytes()) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        Err(e) => Err(CliError::Input(format!("cannot write to stdout: {e}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eps_list_parsing_accepts_the_default_and_rejects_garbage() {
        let values = parse_eps_list("1e-1,1e-2,1e-3,1e-4,1e-5,1e-6").unwrap();
        assert_eq!(values.len(), 6);
        assert_eq!(values[0], 1e-1);
        assert!(parse_eps_list("1e-1,zebra").is_err());
        assert!(parse_eps_list("1e-1,-1e-2").is_err());
        assert!(parse_eps_list("").is_err());
    }

    #[test]
    fn error_codes_follow_the_contract() {
        assert_eq!(CliError::Input("x".into()).code(), 1);
        assert_eq!(CliError::Numerical("x".into()).code(), 2);
        let model: CliError = ModelError::Invalid {
            path: "Q[0]".into(),
            message: "row sum".into(),
        }
        .into();
        assert_eq!(model.code(), 1);
        let riccati: CliError = RiccatiError::PsdViolation {
            t: 0.5,
            level: 0,
            mode: 1,
            lambda_min: -1e-3,
        }
        .into();
        assert_eq!(riccati.code(), 2);
        let sim: CliError = SimError::SingularGramian { condition: 1e18 }.into();
        assert_eq!(sim.code(), 2);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
