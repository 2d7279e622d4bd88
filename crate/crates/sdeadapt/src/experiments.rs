//! Measurement drivers built on the stepping scheme: step size statistics,
//! strong convergence sweeps against an exact or fine fixed-step reference,
//! period estimation for oscillatory systems, and the fixed-step divergence
//! demonstration.
//!
//! Every driver derives one Wiener path per realisation from a base seed, so
//! results are reproducible and schemes that must share noise run on the same
//! path object. Where a scheme needs step sizes that are only known after a
//! first sweep (the fixed-step comparators matched to an adaptive run's mean
//! step), the driver re-derives each path and replays the first sweep's query
//! sequence verbatim, which rebuilds the identical path before the comparator
//! consumes it.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::brownian::BrownianPath;
use crate::models::{make_problem, ProblemParams, SdeProblem};
use crate::report::{fmt_f64, CsvRecord};
use crate::rng::derive_seed;
use crate::stepping::{simulate, SimulationOptions, StrategyConfig, StrategyKind};
use crate::{Error, Result};

/// Stream tag separating coefficient-sampler seeds from path seeds.
const COEFFICIENT_STREAM: u64 = 0x636f_6566_665f_7331;

/// Builds the problem for one realisation, redrawing coefficients for the
/// randomized problems.
pub fn problem_for_realisation(
    name: &str,
    params: &ProblemParams,
    base_seed: u64,
    index: u64,
) -> Result<SdeProblem> {
    let probe = make_problem(name, params)?;
    if !probe.randomized_coefficients {
        return Ok(probe);
    }
    let sampler_seed = derive_seed(derive_seed(base_seed, COEFFICIENT_STREAM), index);
    let params = params.clone().with_sampler_seed(sampler_seed);
    make_problem(name, &params)
}

/// Basic sample statistics.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct SampleStats {
    pub mean: f64,
    pub var: f64,
    pub min: f64,
    pub max: f64,
}

impl SampleStats {
    /// Mean, unbiased variance, and extremes of a non-empty sample.
    pub fn from_sample(xs: &[f64]) -> Self {
        assert!(!xs.is_empty(), "statistics of an empty sample");
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = if xs.len() > 1 {
            xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let min = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Self {
            mean,
            var,
            min,
            max,
        }
    }
}

/// Runs `jobs` in order-preserving fashion on up to `workers` threads.
fn run_indexed<T: Send, F: Fn(u64) -> Result<T> + Sync + Send>(
    n: u64,
    workers: usize,
    job: F,
) -> Result<Vec<T>> {
    if workers <= 1 {
        (0..n).map(job).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .expect("worker pool");
        pool.install(|| (0..n).into_par_iter().map(job).collect())
    }
}

// ---------------------------------------------------------------------------
// Step size statistics
// ---------------------------------------------------------------------------

/// One row of the step size study for a single strategy.
#[derive(Clone, Debug, Serialize)]
pub struct StepStatsRow {
    /// Strategy name.
    pub strategy: String,
    /// Bound ratio used.
    pub rho: f64,
    /// Mean of per-path mean step sizes, all steps included.
    pub h_mean: f64,
    /// Variance of the pooled step sizes, horizon-truncated steps excluded.
    pub var: f64,
    /// Smallest pooled step, truncated steps excluded.
    pub min: f64,
    /// Largest pooled step, truncated steps excluded.
    pub max: f64,
    /// Wall-clock seconds spent simulating this strategy.
    pub wall_seconds: f64,
    /// Percentage of pooled steps at the lower bound h_min.
    pub pct_min: f64,
}

impl CsvRecord for StepStatsRow {
    fn header() -> &'static [&'static str] {
        &[
            "strategy",
            "rho",
            "h_mean",
            "var",
            "min",
            "max",
            "wall_seconds",
            "pct_min",
        ]
    }
    fn fields(&self) -> Vec<String> {
        vec![
            self.strategy.clone(),
            fmt_f64(self.rho),
            fmt_f64(self.h_mean),
            fmt_f64(self.var),
            fmt_f64(self.min),
            fmt_f64(self.max),
            fmt_f64(self.wall_seconds),
            fmt_f64(self.pct_min),
        ]
    }
}

/// Simulates `n_paths` realisations per strategy and pools step statistics.
///
/// The final step of each path, shortened to land on the horizon, is left
/// out of the min/max/variance/percentage pools; the mean step is the plain
/// average over all accepted steps.
pub fn step_statistics(
    name: &str,
    params: &ProblemParams,
    cfgs: &[StrategyConfig],
    horizon: Option<f64>,
    n_paths: u64,
    seed: u64,
    workers: usize,
) -> Result<Vec<StepStatsRow>> {
    let mut rows = Vec::with_capacity(cfgs.len());
    for cfg in cfgs {
        cfg.validate()?;
        let start = Instant::now();
        let options = SimulationOptions {
            horizon,
            record_states: false,
        };
        let per_path = run_indexed(n_paths, workers, |i| {
            let problem = problem_for_realisation(name, params, seed, i)?;
            let mut path = BrownianPath::derive(seed, i, problem.noise_dim);
            let trajectory = simulate(&problem, cfg, &mut path, &options)?;
            let mut kept = Vec::with_capacity(trajectory.steps.len());
            let mut at_min = 0u64;
            let h_min_bound = cfg.h_min() * (1.0 + 1e-12);
            for (h, truncated) in trajectory.steps.iter().zip(trajectory.truncated.iter()) {
                if *truncated {
                    continue;
                }
                kept.push(*h);
                if *h <= h_min_bound {
                    at_min += 1;
                }
            }
            Ok((trajectory.mean_step(), kept, at_min))
        })?;

        let h_mean =
            per_path.iter().map(|(m, _, _)| *m).sum::<f64>() / per_path.len().max(1) as f64;
        let mut pooled: Vec<f64> = Vec::new();
        let mut at_min_total = 0u64;
        for (_, kept, at_min) in &per_path {
            pooled.extend_from_slice(kept);
            at_min_total += at_min;
        }
        let stats = SampleStats::from_sample(&pooled);
        rows.push(StepStatsRow {
            strategy: cfg.kind.name().to_string(),
            rho: cfg.rho,
            h_mean,
            var: stats.var,
            min: stats.min,
            max: stats.max,
            wall_seconds: start.elapsed().as_secs_f64(),
            pct_min: 100.0 * at_min_total as f64 / pooled.len().max(1) as f64,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Strong convergence
// ---------------------------------------------------------------------------

/// Reference solution used for strong error measurement.
#[derive(Clone, Copy, Debug)]
pub enum ConvergenceReference {
    /// Exact pathwise solution with the given quadrature resolution.
    Exact { n_quad: usize },
    /// Fine fixed-step tamed run at step `h` on the same path.
    FixedTamed { h: f64 },
}

/// One row of the convergence sweep.
#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceRow {
    /// Upper step bound of this sweep point.
    pub h_max: f64,
    /// Bound ratio.
    pub rho: f64,
    /// Mean of per-path mean steps of the adaptive runs.
    pub h_mean: f64,
    /// Root mean square terminal error of the adaptive scheme.
    pub rms_error: f64,
    /// Wall-clock seconds spent on this row's simulations.
    pub wall_seconds: f64,
    /// Number of realisations.
    pub n_paths: usize,
    /// Root mean square terminal error of the fixed-step tamed comparator
    /// run at this row's h_mean on the same paths.
    pub rms_error_fixed: f64,
    /// Adaptive realisations that left the finite range; excluded from the
    /// error and step averages.
    pub n_diverged: usize,
}

impl CsvRecord for ConvergenceRow {
    fn header() -> &'static [&'static str] {
        &[
            "h_max",
            "rho",
            "h_mean",
            "rms_error",
            "wall_seconds",
            "n_paths",
            "rms_error_fixed",
            "n_diverged",
        ]
    }
    fn fields(&self) -> Vec<String> {
        vec![
            fmt_f64(self.h_max),
            fmt_f64(self.rho),
            fmt_f64(self.h_mean),
            fmt_f64(self.rms_error),
            fmt_f64(self.wall_seconds),
            self.n_paths.to_string(),
            fmt_f64(self.rms_error_fixed),
            self.n_diverged.to_string(),
        ]
    }
}

/// Full convergence study output.
#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceStudy {
    pub rows: Vec<ConvergenceRow>,
    /// Least squares slope of log rms_error against log h_mean; absent when
    /// fewer than two rows have a usable error.
    pub fitted_order: Option<f64>,
    /// Same slope for the fixed-step comparator errors.
    pub fitted_order_fixed: Option<f64>,
}

/// Least squares slope of `ln y` against `ln x`.
pub fn fit_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    assert!(xs.len() >= 2, "need at least two points for a slope");
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / lx.len() as f64;
    let my = ly.iter().sum::<f64>() / ly.len() as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in lx.iter().zip(ly.iter()) {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    num / den
}

fn terminal_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Turns a divergence failure into `None` so it can be counted per row
/// instead of aborting a whole study.
fn tolerate_nonfinite<T>(outcome: Result<T>) -> Result<Option<T>> {
    match outcome {
        Ok(value) => Ok(Some(value)),
        Err(Error::NonFinite { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Measures strong terminal error of an adaptive strategy over a sweep of
/// `h_max` values, all schemes and the reference sharing one path per
/// realisation.
///
/// A second sweep runs the fixed-step tamed comparator at each row's
/// measured mean step on replayed copies of the same paths.
#[allow(clippy::too_many_arguments)]
pub fn convergence_study(
    name: &str,
    params: &ProblemParams,
    template: &StrategyConfig,
    h_maxes: &[f64],
    n_paths: u64,
    seed: u64,
    reference: ConvergenceReference,
    workers: usize,
) -> Result<ConvergenceStudy> {
    assert!(!h_maxes.is_empty(), "empty h_max sweep");
    assert!(
        h_maxes.windows(2).all(|w| w[1] < w[0]),
        "h_max sweep must be strictly decreasing"
    );
    if let ConvergenceReference::Exact { .. } = reference {
        let probe = make_problem(name, params)?;
        if !probe.has_exact_solution() {
            return Err(Error::InvalidStrategy(format!(
                "problem '{name}' has no exact solution; use a fixed-step reference"
            )));
        }
    }

    let configs: Vec<StrategyConfig> = h_maxes
        .iter()
        .map(|&h_max| {
            let mut cfg = *template;
            cfg.h_max = h_max;
            cfg
        })
        .collect();
    for cfg in &configs {
        cfg.validate()?;
    }
    let options = SimulationOptions {
        horizon: None,
        record_states: false,
    };

    // First sweep: adaptive runs and the reference value on each path. A
    // diverged run stays in as `None`: its Brownian queries already happened,
    // so the replay below still reproduces the path exactly.
    struct PassOne {
        errors: Vec<Option<f64>>,
        mean_steps: Vec<Option<f64>>,
        reference_value: Vec<f64>,
        sim_seconds: Vec<f64>,
    }
    let pass_one = run_indexed(n_paths, workers, |i| {
        let problem = problem_for_realisation(name, params, seed, i)?;
        let mut path = BrownianPath::derive(seed, i, problem.noise_dim);
        let mut terminals = Vec::with_capacity(configs.len());
        let mut mean_steps = Vec::with_capacity(configs.len());
        let mut sim_seconds = Vec::with_capacity(configs.len());
        for cfg in &configs {
            let start = Instant::now();
            let trajectory = tolerate_nonfinite(simulate(&problem, cfg, &mut path, &options))?;
            sim_seconds.push(start.elapsed().as_secs_f64());
            mean_steps.push(trajectory.as_ref().map(|t| t.mean_step()));
            terminals.push(trajectory.map(|t| t.terminal_state));
        }
        let reference_value = match reference {
            ConvergenceReference::Exact { n_quad } => {
                problem.exact_solution(&mut path, problem.horizon, n_quad)
            }
            ConvergenceReference::FixedTamed { h } => {
                let cfg = StrategyConfig::new(StrategyKind::FixedTamed, h, 1.0);
                simulate(&problem, &cfg, &mut path, &options)?.terminal_state
            }
        };
        let errors = terminals
            .iter()
            .map(|t| t.as_ref().map(|t| terminal_error(t, &reference_value)))
            .collect();
        Ok(PassOne {
            errors,
            mean_steps,
            reference_value,
            sim_seconds,
        })
    })?;

    let n = n_paths as usize;
    let h_means: Vec<f64> = (0..configs.len())
        .map(|k| {
            let survivors: Vec<f64> = pass_one.iter().filter_map(|p| p.mean_steps[k]).collect();
            if survivors.is_empty() {
                f64::NAN
            } else {
                survivors.iter().sum::<f64>() / survivors.len() as f64
            }
        })
        .collect();

    // Second sweep: rebuild each path by replaying the first sweep's queries,
    // then run the fixed-step comparator at the measured mean steps.
    let fixed_configs: Vec<Option<StrategyConfig>> = h_means
        .iter()
        .map(|&h| {
            h.is_finite()
                .then(|| StrategyConfig::new(StrategyKind::FixedTamed, h, 1.0))
        })
        .collect();
    let fixed_errors = run_indexed(n_paths, workers, |i| {
        let problem = problem_for_realisation(name, params, seed, i)?;
        let mut path = BrownianPath::derive(seed, i, problem.noise_dim);
        for cfg in &configs {
            tolerate_nonfinite(simulate(&problem, cfg, &mut path, &options))?;
        }
        match reference {
            ConvergenceReference::Exact { n_quad } => {
                problem.exact_solution(&mut path, problem.horizon, n_quad);
            }
            ConvergenceReference::FixedTamed { h } => {
                let cfg = StrategyConfig::new(StrategyKind::FixedTamed, h, 1.0);
                simulate(&problem, &cfg, &mut path, &options)?;
            }
        }
        let reference_value = &pass_one[i as usize].reference_value;
        let mut errors = Vec::with_capacity(fixed_configs.len());
        for cfg in &fixed_configs {
            errors.push(match cfg {
                Some(cfg) => {
                    let trajectory = simulate(&problem, cfg, &mut path, &options)?;
                    Some(terminal_error(&trajectory.terminal_state, reference_value))
                }
                None => None,
            });
        }
        Ok(errors)
    })?;

    let rms_of = |sample: Vec<f64>| {
        if sample.is_empty() {
            f64::NAN
        } else {
            (sample.iter().map(|e| e * e).sum::<f64>() / sample.len() as f64).sqrt()
        }
    };
    let mut rows = Vec::with_capacity(configs.len());
    for (k, cfg) in configs.iter().enumerate() {
        let rms = rms_of(pass_one.iter().filter_map(|p| p.errors[k]).collect());
        let rms_fixed = rms_of(fixed_errors.iter().filter_map(|e| e[k]).collect());
        let n_diverged = pass_one.iter().filter(|p| p.errors[k].is_none()).count();
        let wall = pass_one.iter().map(|p| p.sim_seconds[k]).sum::<f64>();
        rows.push(ConvergenceRow {
            h_max: cfg.h_max,
            rho: cfg.rho,
            h_mean: h_means[k],
            rms_error: rms,
            wall_seconds: wall,
            n_paths: n,
            rms_error_fixed: rms_fixed,
            n_diverged,
        });
    }

    let usable = |x: f64, y: f64| x.is_finite() && x > 0.0 && y.is_finite() && y > 0.0;
    let fit_over = |rows: &[ConvergenceRow], pick: fn(&ConvergenceRow) -> f64| {
        let points: Vec<(f64, f64)> = rows
            .iter()
            .map(|r| (r.h_mean, pick(r)))
            .filter(|&(x, y)| usable(x, y))
            .collect();
        if points.len() < 2 {
            return None;
        }
        let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
        Some(fit_log_slope(&xs, &ys))
    };
    let fitted_order = fit_over(&rows, |r| r.rms_error);
    let fitted_order_fixed = fit_over(&rows, |r| r.rms_error_fixed);
    Ok(ConvergenceStudy {
        rows,
        fitted_order,
        fitted_order_fixed,
    })
}

// ---------------------------------------------------------------------------
// Period estimation
// ---------------------------------------------------------------------------

/// Counts upward zero crossings of one state component on a recorded
/// trajectory and converts the count into a period estimate `T / k`.
///
/// The first mesh interval is skipped so an initial state sitting on the
/// crossing line is not counted. Returns `None` when no crossing is found.
pub fn estimate_period(
    trajectory: &crate::stepping::Trajectory,
    component: usize,
    horizon: f64,
) -> Option<f64> {
    let n = trajectory.times.len();
    assert!(n > 0, "period estimation needs recorded states");
    let mut crossings = 0u64;
    for idx in 1..n.saturating_sub(1) {
        let a = trajectory.state_at(idx)[component];
        let b = trajectory.state_at(idx + 1)[component];
        if a < 0.0 && b >= 0.0 {
            crossings += 1;
        }
    }
    if crossings == 0 {
        None
    } else {
        Some(horizon / crossings as f64)
    }
}

/// One row of the period study.
#[derive(Clone, Debug, Serialize)]
pub struct PeriodRow {
    /// Scheme label.
    pub method: String,
    /// Relative error of the mean period against the baseline row.
    pub rel_error: f64,
    /// Mean estimated period.
    pub mean: f64,
    /// Variance of the period estimates.
    pub var: f64,
    /// Smallest estimate.
    pub min: f64,
    /// Largest estimate.
    pub max: f64,
    /// Mean step of the scheme (the fixed step for fixed-step schemes).
    pub h: f64,
}

impl CsvRecord for PeriodRow {
    fn header() -> &'static [&'static str] {
        &["method", "rel_error", "mean", "var", "min", "max", "h"]
    }
    fn fields(&self) -> Vec<String> {
        vec![
            self.method.clone(),
            fmt_f64(self.rel_error),
            fmt_f64(self.mean),
            fmt_f64(self.var),
            fmt_f64(self.min),
            fmt_f64(self.max),
            fmt_f64(self.h),
        ]
    }
}

/// Compares period estimates of the adaptive strategies against a fine
/// fixed-step tamed baseline and against fixed-step runs matched to the
/// adaptive mean steps, all on shared paths.
///
/// Per path the driver runs the baseline, then the adaptive strategies; the
/// matched fixed-step runs happen in a second sweep on replayed paths once
/// the adaptive mean steps are known. Output rows: baseline, each adaptive
/// strategy, and one matched fixed-step run per adaptive strategy.
#[allow(clippy::too_many_arguments)]
pub fn period_study(
    name: &str,
    params: &ProblemParams,
    horizon: f64,
    baseline_h: f64,
    adaptive: &[StrategyConfig],
    component: usize,
    n_paths: u64,
    seed: u64,
    workers: usize,
) -> Result<Vec<PeriodRow>> {
    let baseline_cfg = StrategyConfig::new(StrategyKind::FixedTamed, baseline_h, 1.0);
    for cfg in adaptive {
        cfg.validate()?;
    }
    let options = SimulationOptions {
        horizon: Some(horizon),
        record_states: true,
    };

    struct PassOne {
        baseline_period: f64,
        periods: Vec<f64>,
        mean_steps: Vec<f64>,
    }
    let pass_one = run_indexed(n_paths, workers, |i| {
        let problem = problem_for_realisation(name, params, seed, i)?;
        let mut path = BrownianPath::derive(seed, i, problem.noise_dim);
        let baseline = simulate(&problem, &baseline_cfg, &mut path, &options)?;
        let baseline_period = estimate_period(&baseline, component, horizon)
            .ok_or_else(|| Error::InvalidStrategy(format!(
                "baseline run found no oscillation on path {i}"
            )))?;
        let mut periods = Vec::with_capacity(adaptive.len());
        let mut mean_steps = Vec::with_capacity(adaptive.len());
        for cfg in adaptive {
            let trajectory = simulate(&problem, cfg, &mut path, &options)?;
            let period = estimate_period(&trajectory, component, horizon).ok_or_else(|| {
                Error::InvalidStrategy(format!(
                    "{} run found no oscillation on path {i}",
                    cfg.kind
                ))
            })?;
            periods.push(period);
            mean_steps.push(trajectory.mean_step());
        }
        Ok(PassOne {
            baseline_period,
            periods,
            mean_steps,
        })
    })?;

    let n = n_paths as usize;
    let h_means: Vec<f64> = (0..adaptive.len())
        .map(|k| pass_one.iter().map(|p| p.mean_steps[k]).sum::<f64>() / n as f64)
        .collect();

    // Matched fixed-step runs on replayed paths.
    let matched_configs: Vec<StrategyConfig> = h_means
        .iter()
        .map(|&h| StrategyConfig::new(StrategyKind::FixedTamed, h, 1.0))
        .collect();
    let matched_periods = run_indexed(n_paths, workers, |i| {
        let problem = problem_for_realisation(name, params, seed, i)?;
        let mut path = BrownianPath::derive(seed, i, problem.noise_dim);
        simulate(&problem, &baseline_cfg, &mut path, &options)?;
        for cfg in adaptive {
            simulate(&problem, cfg, &mut path, &options)?;
        }
        let mut periods = Vec::with_capacity(matched_configs.len());
        for cfg in &matched_configs {
            let trajectory = simulate(&problem, cfg, &mut path, &options)?;
            let period = estimate_period(&trajectory, component, horizon).ok_or_else(|| {
                Error::InvalidStrategy(format!(
                    "matched fixed run at h={} found no oscillation on path {i}",
                    cfg.h_max
                ))
            })?;
            periods.push(period);
        }
        Ok(periods)
    })?;

    let baseline_sample: Vec<f64> = pass_one.iter().map(|p| p.baseline_period).collect();
    let baseline_stats = SampleStats::from_sample(&baseline_sample);
    let mut rows = vec![PeriodRow {
        method: "FIXED_TAMED_BASELINE".to_string(),
        rel_error: 0.0,
        mean: baseline_stats.mean,
        var: baseline_stats.var,
        min: baseline_stats.min,
        max: baseline_stats.max,
        h: baseline_h,
    }];
    let rel = |mean: f64| (mean - baseline_stats.mean).abs() / baseline_stats.mean;
    for (k, cfg) in adaptive.iter().enumerate() {
        let sample: Vec<f64> = pass_one.iter().map(|p| p.periods[k]).collect();
        let stats = SampleStats::from_sample(&sample);
        rows.push(PeriodRow {
            method: cfg.kind.name().to_string(),
            rel_error: rel(stats.mean),
            mean: stats.mean,
            var: stats.var,
            min: stats.min,
            max: stats.max,
            h: h_means[k],
        });
        let matched: Vec<f64> = matched_periods.iter().map(|p| p[k]).collect();
        let matched_stats = SampleStats::from_sample(&matched);
        rows.push(PeriodRow {
            method: format!("FIXED_TAMED@{}", cfg.kind.name()),
            rel_error: rel(matched_stats.mean),
            mean: matched_stats.mean,
            var: matched_stats.var,
            min: matched_stats.min,
            max: matched_stats.max,
            h: h_means[k],
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Divergence demonstration
// ---------------------------------------------------------------------------

/// One row of the divergence demonstration.
#[derive(Clone, Debug, Serialize)]
pub struct DivergenceRow {
    /// Scheme label.
    pub scheme: String,
    /// Fixed step used.
    pub h: f64,
    /// Number of simulated realisations.
    pub n_paths: usize,
    /// Realisations whose state or drift left the finite range.
    pub n_nonfinite: usize,
    /// Fraction of non-finite realisations.
    pub fraction: f64,
}

impl CsvRecord for DivergenceRow {
    fn header() -> &'static [&'static str] {
        &["scheme", "h", "n_paths", "n_nonfinite", "fraction"]
    }
    fn fields(&self) -> Vec<String> {
        vec![
            self.scheme.clone(),
            fmt_f64(self.h),
            self.n_paths.to_string(),
            self.n_nonfinite.to_string(),
            fmt_f64(self.fraction),
        ]
    }
}

/// Runs the plain and tamed fixed-step schemes at step `h` over the same
/// path family and counts the realisations that blow up to non-finite
/// values.
pub fn divergence_demo(
    name: &str,
    params: &ProblemParams,
    h: f64,
    horizon: Option<f64>,
    n_paths: u64,
    seed: u64,
    workers: usize,
) -> Result<Vec<DivergenceRow>> {
    let options = SimulationOptions {
        horizon,
        record_states: false,
    };
    let mut rows = Vec::with_capacity(2);
    for kind in [StrategyKind::FixedEm, StrategyKind::FixedTamed] {
        let cfg = StrategyConfig::new(kind, h, 1.0);
        let outcomes = run_indexed(n_paths, workers, |i| {
            let problem = problem_for_realisation(name, params, seed, i)?;
            let mut path = BrownianPath::derive(seed, i, problem.noise_dim);
            match simulate(&problem, &cfg, &mut path, &options) {
                Ok(_) => Ok(false),
                Err(Error::NonFinite { .. }) => Ok(true),
                Err(e) => Err(e),
            }
        })?;
        let n_nonfinite = outcomes.iter().filter(|&&b| b).count();
        rows.push(DivergenceRow {
            scheme: kind.name().to_string(),
            h,
            n_paths: n_paths as usize,
            n_nonfinite,
            fraction: n_nonfinite as f64 / n_paths.max(1) as f64,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stepping::Trajectory;

    fn synthetic_trajectory(times: Vec<f64>, component_values: Vec<f64>) -> Trajectory {
        let n = times.len();
        Trajectory {
            dim: 1,
            times,
            states: component_values,
            steps: vec![0.1; n - 1],
            tamed: vec![false; n - 1],
            truncated: vec![false; n - 1],
            terminal_state: vec![0.0],
            terminal_time: 0.0,
        }
    }

    #[test]
    fn period_counts_upward_crossings_and_skips_first_interval() {
        // Crossing in the first interval is skipped; two later upward
        // crossings are counted; the downward crossing is not.
        let times = vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let values = vec![-1.0, 1.0, -1.0, 1.0, 1.0, -1.0, 1.0];
        let trajectory = synthetic_trajectory(times, values);
        let period = estimate_period(&trajectory, 0, 12.0).unwrap();
        assert_eq!(period, 6.0);
    }

    #[test]
    fn period_returns_none_without_crossings() {
        let times = vec![0.0, 1.0, 2.0];
        let values = vec![1.0, 2.0, 3.0];
        let trajectory = synthetic_trajectory(times, values);
        assert!(estimate_period(&trajectory, 0, 2.0).is_none());
    }

    #[test]
    fn sample_stats_hand_values() {
        let stats = SampleStats::from_sample(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(stats.mean, 2.5);
        assert!((stats.var - 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(stats.min, 1.0);
        assert_eq!(stats.max, 4.0);
    }

    #[test]
    fn log_slope_recovers_exact_power_law() {
        let xs = [0.5, 0.25, 0.125, 0.0625];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(0.5)).collect();
        let slope = fit_log_slope(&xs, &ys);
        assert!((slope - 0.5).abs() < 1e-12);
    }

    #[test]
    fn step_statistics_row_shape_and_bounds() {
        let cfgs = vec![
            StrategyConfig::new(StrategyKind::At, 0.25, 100.0),
            StrategyConfig::new(StrategyKind::FixedTamed, 0.25, 1.0),
        ];
        let rows = step_statistics(
            "sgle-mult",
            &ProblemParams::new(),
            &cfgs,
            Some(2.0),
            8,
            42,
            1,
        )
        .unwrap();
        assert_eq!(rows.len(), 2);
        let at = &rows[0];
        assert_eq!(at.strategy, "AT");
        assert!(at.min >= 0.25 / 100.0 - 1e-15);
        assert!(at.max <= 0.25 + 1e-15);
        assert!(at.h_mean > 0.0 && at.h_mean <= 0.25);
        assert!((0.0..=100.0).contains(&at.pct_min));
        let fixed = &rows[1];
        assert!((fixed.h_mean - 0.25).abs() < 1e-2);
        assert!(fixed.var.abs() < 1e-20);
    }

    #[test]
    fn divergence_demo_separates_plain_and_tamed() {
        let params = ProblemParams::new().with("x0", 5.0);
        let rows = divergence_demo("sgle-mult", &params, 0.5, Some(10.0), 20, 7, 1).unwrap();
        let em = rows.iter().find(|r| r.scheme == "FIXED_EM").unwrap();
        let tamed = rows.iter().find(|r| r.scheme == "FIXED_TAMED").unwrap();
        assert!(em.n_nonfinite > 0);
        assert_eq!(tamed.n_nonfinite, 0);
    }

    #[test]
    fn convergence_study_on_exact_problem_decreases_error() {
        let template = StrategyConfig::new(StrategyKind::At, 0.25, 100.0);
        let study = convergence_study(
            "sgle-mult",
            &ProblemParams::new(),
            &template,
            &[0.25, 0.0625, 0.015625],
            24,
            11,
            ConvergenceReference::Exact { n_quad: 1 << 10 },
            1,
        )
        .unwrap();
        assert_eq!(study.rows.len(), 3);
        assert!(study.rows[0].rms_error > study.rows[2].rms_error);
        assert!(study.fitted_order.unwrap() > 0.0);
        for row in &study.rows {
            assert!(row.h_mean <= row.h_max + 1e-15);
            assert!(row.rms_error_fixed.is_finite() && row.rms_error_fixed > 0.0);
            assert_eq!(row.n_diverged, 0);
        }
    }

    #[test]
    fn workers_do_not_change_results() {
        let cfgs = vec![StrategyConfig::new(StrategyKind::At, 0.25, 10.0)];
        let sequential =
            step_statistics("vdp", &ProblemParams::new(), &cfgs, Some(10.0), 6, 9, 1).unwrap();
        let parallel =
            step_statistics("vdp", &ProblemParams::new(), &cfgs, Some(10.0), 6, 9, 3).unwrap();
        assert_eq!(sequential[0].h_mean, parallel[0].h_mean);
        assert_eq!(sequential[0].var, parallel[0].var);
        assert_eq!(sequential[0].pct_min, parallel[0].pct_min);
    }

    #[test]
    fn randomized_coefficients_vary_per_path_but_reproduce_per_seed() {
        let a = problem_for_realisation("sir", &ProblemParams::new(), 5, 0).unwrap();
        let b = problem_for_realisation("sir", &ProblemParams::new(), 5, 1).unwrap();
        let c = problem_for_realisation("sir", &ProblemParams::new(), 5, 0).unwrap();
        let x = [0.4, 0.3, 0.3];
        let mut fa = [0.0; 3];
        let mut fb = [0.0; 3];
        let mut fc = [0.0; 3];
        a.drift_into(&x, &mut fa);
        b.drift_into(&x, &mut fb);
        c.drift_into(&x, &mut fc);
        assert_ne!(fa, fb);
        assert_eq!(fa, fc);
    }
}
