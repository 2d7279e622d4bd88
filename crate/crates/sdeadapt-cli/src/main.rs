//! Command-line front end: every experiment is a batch subcommand that
//! writes CSV tables (or JSON mirrors) plus a run manifest into an output
//! directory, reproducibly from a single seed.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use sdeadapt::brownian::BrownianPath;
use sdeadapt::experiments::{
    convergence_study, divergence_demo, period_study, problem_for_realisation, step_statistics,
    ConvergenceReference,
};
use sdeadapt::mlmc::{first_component, mlmc_estimate, SampleSchedule};
use sdeadapt::models::{make_problem, registry_names, ProblemParams};
use sdeadapt::report::{
    fmt_f64, trajectory_rows, write_csv, write_json, write_manifest, write_trajectory_csv,
    CsvRecord, RunManifest,
};
use sdeadapt::spde::{build_allen_cahn, correlation, norm_rows, to_physical, GalerkinConfig};
use sdeadapt::stepping::{simulate, SimulationOptions, StrategyConfig, StrategyKind};
use sdeadapt::Error;

const REVISION: &str = env!("SDEADAPT_REVISION");

#[derive(Parser)]
#[command(
    name = "sdeadapt",
    version,
    about = "Adaptive Euler-Maruyama schemes: simulation and experiment driver"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one trajectory and write its mesh, steps, and states.
    Simulate(SimulateOpts),
    /// Strong-error sweep over h_max against a reference solution.
    Converge(ConvergeOpts),
    /// Step-size statistics table across strategies.
    Steps(StepsOpts),
    /// Oscillation-period comparison of adaptive and matched fixed schemes.
    Period(PeriodOpts),
    /// Multilevel Monte Carlo estimate with a per-level variance table.
    Mlmc(MlmcOpts),
    /// Allen-Cahn spectral system: norm series of one adaptive trajectory.
    Spde(SpdeOpts),
    /// Divergence counts of the plain and tamed fixed-step schemes.
    Diverge(DivergeOpts),
    /// List the problem registry.
    ListProblems,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

/// Flags shared by every experiment subcommand. All of them are optional at
/// the parser level so a config file can supply missing values; explicit
/// flags always win.
#[derive(Args, Clone, Debug, Default)]
struct CommonOpts {
    /// Problem name from the registry (see list-problems).
    #[arg(long)]
    problem: Option<String>,
    /// Strategy name, or a comma list / "all" where a table accepts several.
    #[arg(long)]
    strategy: Option<String>,
    /// Upper step bound.
    #[arg(long)]
    hmax: Option<f64>,
    /// Bound ratio h_max / h_min.
    #[arg(long)]
    rho: Option<f64>,
    /// AT tolerance; defaults to 0.9 h_max^2 / (1 + h_max).
    #[arg(long)]
    eps: Option<f64>,
    /// Scale of the non-AT adaptive strategies; defaults to h_max.
    #[arg(long)]
    delta: Option<f64>,
    /// State-norm exponent of the BASIN strategy.
    #[arg(long)]
    beta_exp: Option<f64>,
    /// Growth exponent offset of the ADM_II and ADM_IV strategies.
    #[arg(long)]
    c_growth: Option<f64>,
    /// Simulation horizon; defaults to the problem's own.
    #[arg(long = "T", value_name = "T")]
    horizon: Option<f64>,
    /// Number of realisations.
    #[arg(long)]
    paths: Option<u64>,
    /// Base seed; falls back to SDEADAPT_SEED, then 1.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Table format; JSON embeds the manifest, CSV writes it alongside.
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Flat key=value config file; explicit flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads; defaults to the available cores.
    #[arg(long)]
    workers: Option<usize>,
    /// Problem parameter override, repeatable (e.g. --param sigma=0.25).
    #[arg(long = "param", value_name = "KEY=VALUE")]
    params: Vec<String>,
}

#[derive(Args, Debug)]
struct SimulateOpts {
    #[command(flatten)]
    common: CommonOpts,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum RefMode {
    /// Exact solution when the problem has one, fine tamed run otherwise.
    Auto,
    /// Pathwise exact solution.
    Exact,
    /// Fine fixed-step tamed run at --ref-h.
    Fixed,
}

#[derive(Args, Debug)]
struct ConvergeOpts {
    #[command(flatten)]
    common: CommonOpts,
    /// Number of sweep points; point i uses hmax / factor^i.
    #[arg(long, default_value_t = 6)]
    levels: usize,
    /// Geometric spacing of the sweep.
    #[arg(long, default_value_t = 2.0)]
    factor: f64,
    /// Reference solution mode.
    #[arg(long, value_enum, default_value_t = RefMode::Auto)]
    reference: RefMode,
    /// Step of the fixed-step reference.
    #[arg(long, default_value_t = 1e-4)]
    ref_h: f64,
    /// Quadrature subintervals of the exact-solution reference.
    #[arg(long, default_value_t = 8192)]
    quad: usize,
}

#[derive(Args, Debug)]
struct StepsOpts {
    #[command(flatten)]
    common: CommonOpts,
}

#[derive(Args, Debug)]
struct PeriodOpts {
    #[command(flatten)]
    common: CommonOpts,
    /// Step of the fixed-step tamed baseline.
    #[arg(long, default_value_t = 5e-4)]
    baseline_h: f64,
    /// Zero-based state component whose oscillation is counted.
    #[arg(long, default_value_t = 0)]
    component: usize,
}

#[derive(Args, Debug)]
struct MlmcOpts {
    #[command(flatten)]
    common: CommonOpts,
    /// Step bound of the coarsest level.
    #[arg(long, default_value_t = 1.0)]
    hmax0: f64,
    /// Step refinement factor between levels.
    #[arg(long, default_value_t = 4.0)]
    refine: f64,
    /// Finest level index L (levels 0..=L).
    #[arg(long, default_value_t = 3)]
    levels: usize,
    /// Samples per level for the fixed schedule.
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    /// Root mean square error target; switches to pilot-then-top-up
    /// allocation.
    #[arg(long)]
    target_rms: Option<f64>,
    /// Pilot samples per level for the target allocation.
    #[arg(long, default_value_t = 100)]
    pilot: usize,
}

#[derive(Args, Debug)]
struct SpdeOpts {
    #[command(flatten)]
    common: CommonOpts,
    /// Number of spectral modes.
    #[arg(long, default_value_t = 100)]
    modes: usize,
    /// Diffusivity of the linear operator.
    #[arg(long, default_value_t = 0.01)]
    dcoeff: f64,
    /// Noise amplitude.
    #[arg(long, default_value_t = 0.5)]
    sigma: f64,
    /// Covariance decay exponent of the driving noise.
    #[arg(long, default_value_t = 2.0)]
    qdecay: f64,
    /// Collocation grid size for the cubic term; defaults to twice the modes.
    #[arg(long)]
    collocation: Option<usize>,
    /// Grid size of the final-state snapshot.
    #[arg(long, default_value_t = 200)]
    snapshot_points: usize,
}

#[derive(Args, Debug)]
struct DivergeOpts {
    #[command(flatten)]
    common: CommonOpts,
}

/// CLI failures: usage problems exit with 2, library failures map by kind.
#[derive(Debug)]
enum CliError {
    Usage(String),
    Lib(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

type CliResult<T> = Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Lib(e)) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::NonFinite { .. } => 3,
                Error::Io(_) | Error::Json(_) => 1,
                _ => 2,
            };
            ExitCode::from(code)
        }
    }
}

fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Simulate(opts) => cmd_simulate(opts),
        Command::Converge(opts) => cmd_converge(opts),
        Command::Steps(opts) => cmd_steps(opts),
        Command::Period(opts) => cmd_period(opts),
        Command::Mlmc(opts) => cmd_mlmc(opts),
        Command::Spde(opts) => cmd_spde(opts),
        Command::Diverge(opts) => cmd_diverge(opts),
        Command::ListProblems => {
            for name in registry_names() {
                println!("{name}");
            }
            Ok(())
        }
    }
}

/// Per-subcommand defaults applied when neither flag nor config supplies a
/// value.
struct Defaults {
    strategy: &'static str,
    hmax: f64,
    paths: u64,
}

/// Fully resolved run settings.
struct Settings {
    problem: Option<String>,
    strategies: Vec<StrategyKind>,
    hmax: f64,
    rho: f64,
    eps: Option<f64>,
    delta: Option<f64>,
    beta_exp: Option<f64>,
    c_growth: Option<f64>,
    horizon: Option<f64>,
    paths: u64,
    seed: u64,
    out: PathBuf,
    format: Format,
    workers: usize,
    params: ProblemParams,
    param_list: Vec<(String, String)>,
}

impl Settings {
    fn require_problem(&self) -> CliResult<&str> {
        self.problem
            .as_deref()
            .ok_or_else(|| usage("--problem is required (see `sdeadapt list-problems`)"))
    }

    fn single_strategy(&self) -> CliResult<StrategyKind> {
        if self.strategies.len() != 1 {
            return Err(usage("this subcommand takes exactly one --strategy"));
        }
        Ok(self.strategies[0])
    }

    fn strategy_config(&self, kind: StrategyKind, hmax: f64) -> CliResult<StrategyConfig> {
        let mut cfg = StrategyConfig::new(kind, hmax, self.rho);
        cfg.eps = self.eps;
        cfg.delta = self.delta;
        if let Some(b) = self.beta_exp {
            cfg.beta_exp = b;
        }
        if let Some(c) = self.c_growth {
            cfg.c_growth = c;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn manifest(&self, command: &str) -> RunManifest {
        let mut manifest = RunManifest::new(command, self.seed, REVISION)
            .param("strategy", strategy_list_string(&self.strategies))
            .param("hmax", fmt_f64(self.hmax))
            .param("rho", fmt_f64(self.rho))
            .param("paths", self.paths)
            .param("workers", self.workers)
            .param(
                "format",
                match self.format {
                    Format::Csv => "csv",
                    Format::Json => "json",
                },
            );
        if let Some(p) = &self.problem {
            manifest = manifest.param("problem", p);
        }
        if let Some(e) = self.eps {
            manifest = manifest.param("eps", fmt_f64(e));
        }
        if let Some(d) = self.delta {
            manifest = manifest.param("delta", fmt_f64(d));
        }
        if let Some(b) = self.beta_exp {
            manifest = manifest.param("beta_exp", fmt_f64(b));
        }
        if let Some(c) = self.c_growth {
            manifest = manifest.param("c_growth", fmt_f64(c));
        }
        if let Some(t) = self.horizon {
            manifest = manifest.param("T", fmt_f64(t));
        }
        for (key, value) in &self.param_list {
            manifest = manifest.param(&format!("param.{key}"), value);
        }
        manifest
    }
}

fn strategy_list_string(kinds: &[StrategyKind]) -> String {
    kinds
        .iter()
        .map(|k| k.name())
        .collect::<Vec<_>>()
        .join(",")
}

/// Config keys accepted in a --config file, mirroring the common flags.
const CONFIG_KEYS: &[&str] = &[
    "problem", "strategy", "hmax", "rho", "eps", "delta", "beta_exp", "c_growth", "T", "paths",
    "seed", "out", "format", "workers",
];

/// Fills unset common options from a flat key=value file.
fn apply_config(opts: &mut CommonOpts) -> CliResult<()> {
    let Some(path) = opts.config.clone() else {
        return Ok(());
    };
    let text = std::fs::read_to_string(&path).map_err(Error::from)?;
    let mut config_params: Vec<(String, String)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let lineno = idx + 1;
        let parse_err = |reason: String| {
            CliError::Lib(Error::ConfigParse {
                line: lineno,
                reason,
            })
        };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| parse_err("expected key = value".to_string()))?;
        let key = key.trim();
        let value = value.trim();
        let f64_value = || {
            value
                .parse::<f64>()
                .map_err(|_| parse_err(format!("'{value}' is not a number")))
        };
        let u64_value = || {
            value
                .parse::<u64>()
                .map_err(|_| parse_err(format!("'{value}' is not a count")))
        };
        match key {
            "problem" => fill(&mut opts.problem, value.to_string()),
            "strategy" => fill(&mut opts.strategy, value.to_string()),
            "hmax" => fill(&mut opts.hmax, f64_value()?),
            "rho" => fill(&mut opts.rho, f64_value()?),
            "eps" => fill(&mut opts.eps, f64_value()?),
            "delta" => fill(&mut opts.delta, f64_value()?),
            "beta_exp" => fill(&mut opts.beta_exp, f64_value()?),
            "c_growth" => fill(&mut opts.c_growth, f64_value()?),
            "T" => fill(&mut opts.horizon, f64_value()?),
            "paths" => fill(&mut opts.paths, u64_value()?),
            "seed" => fill(&mut opts.seed, u64_value()?),
            "out" => fill(&mut opts.out, PathBuf::from(value)),
            "workers" => fill(&mut opts.workers, u64_value()? as usize),
            "format" => {
                let parsed = match value {
                    "csv" => Format::Csv,
                    "json" => Format::Json,
                    other => return Err(parse_err(format!("'{other}' is not csv or json"))),
                };
                fill(&mut opts.format, parsed);
            }
            _ => {
                if let Some(param) = key.strip_prefix("param.") {
                    config_params.push((param.to_string(), value.to_string()));
                } else {
                    return Err(parse_err(format!(
                        "unknown key '{key}'; valid keys are {} and param.<name>",
                        CONFIG_KEYS.join(", ")
                    )));
                }
            }
        }
    }
    // Flags override the file: prepend config entries so later (flag) entries
    // win when the same parameter appears twice.
    let flag_params = std::mem::take(&mut opts.params);
    opts.params = config_params
        .into_iter()
        .map(|(k, v)| format!("{k}={v}"))
        .chain(flag_params)
        .collect();
    Ok(())
}

fn fill<T>(slot: &mut Option<T>, value: T) {
    if slot.is_none() {
        *slot = Some(value);
    }
}

fn resolve(mut opts: CommonOpts, defaults: &Defaults) -> CliResult<Settings> {
    apply_config(&mut opts)?;

    let seed = match opts.seed {
        Some(s) => s,
        None => match std::env::var("SDEADAPT_SEED") {
            Ok(text) => text
                .parse::<u64>()
                .map_err(|_| usage(format!("SDEADAPT_SEED='{text}' is not a seed")))?,
            Err(_) => 1,
        },
    };

    let strategy_text = opts.strategy.unwrap_or_else(|| defaults.strategy.to_string());
    let strategies = parse_strategies(&strategy_text)?;

    let mut params = ProblemParams::new();
    let mut param_list = Vec::new();
    for entry in &opts.params {
        let (key, value) = entry
            .split_once('=')
            .ok_or_else(|| usage(format!("--param '{entry}' is not key=value")))?;
        let parsed = value
            .parse::<f64>()
            .map_err(|_| usage(format!("--param {key}: '{value}' is not a number")))?;
        params.set(key, parsed);
        param_list.retain(|(k, _): &(String, String)| k != key);
        param_list.push((key.to_string(), value.to_string()));
    }

    let workers = match opts.workers {
        Some(w) if w >= 1 => w,
        Some(_) => return Err(usage("--workers must be at least 1")),
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };

    Ok(Settings {
        problem: opts.problem,
        strategies,
        hmax: opts.hmax.unwrap_or(defaults.hmax),
        rho: opts.rho.unwrap_or(100.0),
        eps: opts.eps,
        delta: opts.delta,
        beta_exp: opts.beta_exp,
        c_growth: opts.c_growth,
        horizon: opts.horizon,
        paths: opts.paths.unwrap_or(defaults.paths),
        seed,
        out: opts.out.unwrap_or_else(|| PathBuf::from("out")),
        format: opts.format.unwrap_or(Format::Csv),
        workers,
        params,
        param_list,
    })
}

fn parse_strategies(text: &str) -> CliResult<Vec<StrategyKind>> {
    if text.trim().eq_ignore_ascii_case("all") {
        return Ok(StrategyKind::all().to_vec());
    }
    let mut kinds = Vec::new();
    for part in text.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        kinds.push(StrategyKind::parse(part)?);
    }
    if kinds.is_empty() {
        return Err(usage("--strategy names no strategy"));
    }
    Ok(kinds)
}

/// Output path of a table, registered in the manifest before any file is
/// written so JSON mirrors embed the complete output list.
fn plan_table(settings: &Settings, manifest: &mut RunManifest, stem: &str) -> PathBuf {
    let ext = match settings.format {
        Format::Csv => "csv",
        Format::Json => "json",
    };
    let path = settings.out.join(format!("{stem}.{ext}"));
    manifest.output(path.display());
    path
}

/// Writes one planned table in the chosen format.
fn write_table<T: CsvRecord + serde::Serialize>(
    settings: &Settings,
    manifest: &RunManifest,
    path: &Path,
    rows: &[T],
) -> CliResult<()> {
    match settings.format {
        Format::Csv => write_csv(path, rows)?,
        Format::Json => write_json(path, manifest, rows)?,
    }
    Ok(())
}

/// Writes the standalone manifest for CSV runs (JSON embeds it).
fn finish(settings: &Settings, manifest: &RunManifest) -> CliResult<()> {
    if settings.format == Format::Csv {
        write_manifest(&settings.out.join("manifest.json"), manifest)?;
    }
    Ok(())
}

fn prepare_out(settings: &Settings) -> CliResult<()> {
    std::fs::create_dir_all(&settings.out).map_err(Error::from)?;
    Ok(())
}

fn cmd_simulate(opts: SimulateOpts) -> CliResult<()> {
    let defaults = Defaults {
        strategy: "at",
        hmax: 0.25,
        paths: 1,
    };
    let settings = resolve(opts.common, &defaults)?;
    let name = settings.require_problem()?.to_string();
    let kind = settings.single_strategy()?;
    let cfg = settings.strategy_config(kind, settings.hmax)?;
    prepare_out(&settings)?;

    let start = Instant::now();
    let problem = problem_for_realisation(&name, &settings.params, settings.seed, 0)?;
    let mut path = BrownianPath::derive(settings.seed, 0, problem.noise_dim);
    let options = SimulationOptions {
        horizon: settings.horizon,
        record_states: true,
    };
    let trajectory = simulate(&problem, &cfg, &mut path, &options)?;

    let mut manifest = settings.manifest("simulate");
    manifest.wall_seconds = start.elapsed().as_secs_f64();
    let written = plan_table(&settings, &mut manifest, "trajectory");
    match settings.format {
        Format::Csv => write_trajectory_csv(&written, &trajectory)?,
        Format::Json => write_json(&written, &manifest, &trajectory_rows(&trajectory))?,
    }
    finish(&settings, &manifest)?;
    println!(
        "{}: {} steps ({} backstopped), terminal time {}, wrote {}",
        kind.name(),
        trajectory.n_steps(),
        trajectory.backstop_count(),
        fmt_f64(trajectory.terminal_time),
        written.display()
    );
    Ok(())
}

fn cmd_converge(opts: ConvergeOpts) -> CliResult<()> {
    let defaults = Defaults {
        strategy: "at",
        hmax: 0.25,
        paths: 100,
    };
    let settings = resolve(opts.common, &defaults)?;
    let name = settings.require_problem()?.to_string();
    let kind = settings.single_strategy()?;
    if opts.levels == 0 {
        return Err(usage("--levels must be at least 1"));
    }
    if !(opts.factor > 1.0) {
        return Err(usage("--factor must exceed 1"));
    }
    let template = settings.strategy_config(kind, settings.hmax)?;
    let h_maxes: Vec<f64> = (0..opts.levels)
        .map(|i| settings.hmax / opts.factor.powi(i as i32))
        .collect();

    let mut params = settings.params.clone();
    if let Some(t) = settings.horizon {
        params.set("t_end", t);
    }
    let reference = match opts.reference {
        RefMode::Exact => ConvergenceReference::Exact { n_quad: opts.quad },
        RefMode::Fixed => ConvergenceReference::FixedTamed { h: opts.ref_h },
        RefMode::Auto => {
            if make_problem(&name, &params)?.has_exact_solution() {
                ConvergenceReference::Exact { n_quad: opts.quad }
            } else {
                ConvergenceReference::FixedTamed { h: opts.ref_h }
            }
        }
    };
    prepare_out(&settings)?;

    let start = Instant::now();
    let study = convergence_study(
        &name,
        &params,
        &template,
        &h_maxes,
        settings.paths,
        settings.seed,
        reference,
        settings.workers,
    )?;

    let mut manifest = settings
        .manifest("converge")
        .param("levels", opts.levels)
        .param("factor", fmt_f64(opts.factor))
        .param(
            "reference",
            match reference {
                ConvergenceReference::Exact { .. } => "exact".to_string(),
                ConvergenceReference::FixedTamed { h } => format!("fixed@{}", fmt_f64(h)),
            },
        )
        .param("quad", opts.quad);
    if let Some(order) = study.fitted_order {
        manifest = manifest.param("fitted_order", fmt_f64(order));
    }
    if let Some(order) = study.fitted_order_fixed {
        manifest = manifest.param("fitted_order_fixed", fmt_f64(order));
    }
    manifest.wall_seconds = start.elapsed().as_secs_f64();
    let written = plan_table(&settings, &mut manifest, "converge");
    write_table(&settings, &manifest, &written, &study.rows)?;
    finish(&settings, &manifest)?;

    let order_text = study
        .fitted_order
        .map_or("n/a".to_string(), |o| format!("{o:.3}"));
    let fixed_text = study
        .fitted_order_fixed
        .map_or("n/a".to_string(), |o| format!("{o:.3}"));
    println!(
        "fitted order {order_text} (matched fixed-step comparator {fixed_text}), wrote {}",
        written.display()
    );
    Ok(())
}

fn cmd_steps(opts: StepsOpts) -> CliResult<()> {
    let defaults = Defaults {
        strategy: "all",
        hmax: 0.25,
        paths: 100,
    };
    let settings = resolve(opts.common, &defaults)?;
    let name = settings.require_problem()?.to_string();
    let cfgs: Vec<StrategyConfig> = settings
        .strategies
        .iter()
        .map(|kind| settings.strategy_config(*kind, settings.hmax))
        .collect::<CliResult<_>>()?;
    prepare_out(&settings)?;

    let start = Instant::now();
    let rows = step_statistics(
        &name,
        &settings.params,
        &cfgs,
        settings.horizon,
        settings.paths,
        settings.seed,
        settings.workers,
    )?;

    let mut manifest = settings.manifest("steps");
    manifest.wall_seconds = start.elapsed().as_secs_f64();
    let written = plan_table(&settings, &mut manifest, "steps");
    write_table(&settings, &manifest, &written, &rows)?;
    finish(&settings, &manifest)?;
    println!("wrote {} ({} strategies)", written.display(), rows.len());
    Ok(())
}

fn cmd_period(opts: PeriodOpts) -> CliResult<()> {
    let defaults = Defaults {
        strategy: "at,ald",
        hmax: 1.0,
        paths: 100,
    };
    let settings = resolve(opts.common, &defaults)?;
    let name = settings.require_problem()?.to_string();
    let cfgs: Vec<StrategyConfig> = settings
        .strategies
        .iter()
        .map(|kind| settings.strategy_config(*kind, settings.hmax))
        .collect::<CliResult<_>>()?;
    let horizon = match settings.horizon {
        Some(t) => t,
        None => make_problem(&name, &settings.params)?.horizon,
    };
    prepare_out(&settings)?;

    let start = Instant::now();
    let rows = period_study(
        &name,
        &settings.params,
        horizon,
        opts.baseline_h,
        &cfgs,
        opts.component,
        settings.paths,
        settings.seed,
        settings.workers,
    )?;

    let mut manifest = settings
        .manifest("period")
        .param("baseline_h", fmt_f64(opts.baseline_h))
        .param("component", opts.component)
        .param("T", fmt_f64(horizon));
    manifest.wall_seconds = start.elapsed().as_secs_f64();
    let written = plan_table(&settings, &mut manifest, "period");
    write_table(&settings, &manifest, &written, &rows)?;
    finish(&settings, &manifest)?;
    println!("wrote {} ({} methods)", written.display(), rows.len());
    Ok(())
}

fn cmd_mlmc(opts: MlmcOpts) -> CliResult<()> {
    let defaults = Defaults {
        strategy: "at",
        hmax: opts.hmax0,
        paths: 0,
    };
    let settings = resolve(opts.common, &defaults)?;
    let name = settings.require_problem()?.to_string();
    let kind = settings.single_strategy()?;
    let template = settings.strategy_config(kind, opts.hmax0)?;
    let schedule = match opts.target_rms {
        Some(target) => SampleSchedule::TargetRms {
            target,
            pilot: opts.pilot,
        },
        None => SampleSchedule::Fixed(vec![opts.samples; opts.levels + 1]),
    };
    let mut params = settings.params.clone();
    if let Some(t) = settings.horizon {
        params.set("t_end", t);
    }
    prepare_out(&settings)?;

    let start = Instant::now();
    let output = mlmc_estimate(
        &name,
        &params,
        &template,
        opts.hmax0,
        opts.refine,
        opts.levels,
        &schedule,
        &first_component,
        settings.seed,
        settings.workers,
    )?;

    let mut manifest = settings
        .manifest("mlmc")
        .param("hmax0", fmt_f64(opts.hmax0))
        .param("refine", fmt_f64(opts.refine))
        .param("levels", opts.levels)
        .param(
            "schedule",
            match &schedule {
                SampleSchedule::Fixed(_) => format!("fixed@{}", opts.samples),
                SampleSchedule::TargetRms { target, pilot } => {
                    format!("target_rms@{}[pilot {pilot}]", fmt_f64(*target))
                }
            },
        )
        .param("estimate", fmt_f64(output.estimate))
        .param("standard_error", fmt_f64(output.standard_error))
        .param("total_cost_steps", output.total_cost_steps)
        .param("resampled_pairs", output.resampled_pairs);
    manifest.wall_seconds = start.elapsed().as_secs_f64();
    let written = plan_table(&settings, &mut manifest, "mlmc");
    write_table(&settings, &manifest, &written, &output.rows)?;
    finish(&settings, &manifest)?;
    println!(
        "estimate {} +/- {} (SE), cost {} steps, wrote {}",
        fmt_f64(output.estimate),
        fmt_f64(output.standard_error),
        output.total_cost_steps,
        written.display()
    );
    Ok(())
}

/// Final-state snapshot point.
#[derive(serde::Serialize)]
struct FieldRow {
    x: f64,
    u: f64,
}

impl CsvRecord for FieldRow {
    fn header() -> &'static [&'static str] {
        &["x", "u"]
    }
    fn fields(&self) -> Vec<String> {
        vec![fmt_f64(self.x), fmt_f64(self.u)]
    }
}

fn cmd_spde(opts: SpdeOpts) -> CliResult<()> {
    let defaults = Defaults {
        strategy: "at",
        hmax: 0.05,
        paths: 1,
    };
    let settings = resolve(opts.common, &defaults)?;
    if settings.problem.is_some() {
        return Err(usage(
            "spde builds its own system; use --modes/--dcoeff/--sigma/--qdecay instead of --problem",
        ));
    }
    let kind = settings.single_strategy()?;
    let cfg = settings.strategy_config(kind, settings.hmax)?;
    let galerkin = GalerkinConfig {
        j_modes: opts.modes,
        d_coeff: opts.dcoeff,
        sigma: opts.sigma,
        q_decay: opts.qdecay,
        collocation: opts.collocation,
        t_end: settings.horizon.unwrap_or(10.0),
    };
    prepare_out(&settings)?;

    let start = Instant::now();
    let problem = build_allen_cahn(&galerkin)?;
    let mut path = BrownianPath::derive(settings.seed, 0, problem.noise_dim);
    let options = SimulationOptions {
        horizon: Some(galerkin.t_end),
        record_states: true,
    };
    let trajectory = simulate(&problem, &cfg, &mut path, &options)?;
    let rows = norm_rows(&trajectory);
    let steps: Vec<f64> = rows.iter().skip(1).map(|r| r.h).collect();
    let norms: Vec<f64> = rows.iter().skip(1).map(|r| r.l2_norm).collect();
    let corr = correlation(&steps, &norms);
    let snapshot: Vec<FieldRow> = to_physical(&trajectory.terminal_state, opts.snapshot_points)
        .into_iter()
        .enumerate()
        .map(|(i, u)| FieldRow {
            x: i as f64 / opts.snapshot_points as f64,
            u,
        })
        .collect();

    let mut manifest = settings
        .manifest("spde")
        .param("modes", opts.modes)
        .param("dcoeff", fmt_f64(opts.dcoeff))
        .param("sigma", fmt_f64(opts.sigma))
        .param("qdecay", fmt_f64(opts.qdecay))
        .param("collocation", galerkin.collocation_points())
        .param("T", fmt_f64(galerkin.t_end))
        .param("step_norm_correlation", fmt_f64(corr));
    manifest.wall_seconds = start.elapsed().as_secs_f64();
    let written = plan_table(&settings, &mut manifest, "spde");
    let snapshot_path = plan_table(&settings, &mut manifest, "spde_final");
    write_table(&settings, &manifest, &written, &rows)?;
    write_table(&settings, &manifest, &snapshot_path, &snapshot)?;
    finish(&settings, &manifest)?;
    println!(
        "{} steps ({} backstopped), step/norm correlation {corr:.4}, wrote {} and {}",
        trajectory.n_steps(),
        trajectory.backstop_count(),
        written.display(),
        snapshot_path.display()
    );
    Ok(())
}

fn cmd_diverge(opts: DivergeOpts) -> CliResult<()> {
    let defaults = Defaults {
        strategy: "fixed_em",
        hmax: 0.5,
        paths: 1000,
    };
    let settings = resolve(opts.common, &defaults)?;
    let name = settings.require_problem()?.to_string();
    prepare_out(&settings)?;

    let start = Instant::now();
    let rows = divergence_demo(
        &name,
        &settings.params,
        settings.hmax,
        settings.horizon,
        settings.paths,
        settings.seed,
        settings.workers,
    )?;

    let mut manifest = settings.manifest("diverge").param("h", fmt_f64(settings.hmax));
    manifest.wall_seconds = start.elapsed().as_secs_f64();
    let written = plan_table(&settings, &mut manifest, "diverge");
    write_table(&settings, &manifest, &written, &rows)?;
    finish(&settings, &manifest)?;
    for row in &rows {
        println!(
            "{}: {}/{} non-finite (fraction {})",
            row.scheme,
            row.n_nonfinite,
            row.n_paths,
            fmt_f64(row.fraction)
        );
    }
    println!("wrote {}", written.display());
    Ok(())
}
