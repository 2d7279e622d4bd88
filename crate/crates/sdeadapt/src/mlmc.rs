//! Multilevel Monte Carlo estimation over a geometric hierarchy of step
//! bounds. Level l runs the scheme with `h_max0 / k^l`; levels above zero
//! simulate a coupled fine/coarse pair on one shared Wiener path, so the
//! level differences telescope to the finest-level expectation while their
//! variances shrink with depth.

use rayon::prelude::*;
use serde::Serialize;

use crate::brownian::BrownianPath;
use crate::models::{make_problem, ProblemParams, SdeProblem};
use crate::report::{fmt_f64, CsvRecord};
use crate::rng::derive_seed;
use crate::stepping::{simulate, SimulationOptions, StrategyConfig};
use crate::{Error, Result};

/// Quantity of interest evaluated on the terminal state.
pub type Qoi = dyn Fn(&[f64]) -> f64 + Sync;

/// Default quantity of interest: the first component of the terminal state.
pub fn first_component(state: &[f64]) -> f64 {
    state[0]
}

/// How many samples to draw per level.
#[derive(Clone, Debug)]
pub enum SampleSchedule {
    /// Explicit sample counts, one per level (length L + 1).
    Fixed(Vec<usize>),
    /// Pilot run of `pilot` samples per level, then top up each level to the
    /// cost-optimal count for a root mean square target.
    TargetRms { target: f64, pilot: usize },
}

/// One level of the estimator.
#[derive(Clone, Debug, Serialize)]
pub struct MlmcLevelRow {
    /// Level index, 0 is the coarsest.
    pub level: usize,
    /// Step bound at this level.
    pub h_max_level: f64,
    /// Sample mean of the level difference (plain value at level 0).
    pub mean_diff: f64,
    /// Unbiased sample variance of the level difference.
    pub variance: f64,
    /// Samples drawn at this level.
    pub n_samples: usize,
    /// Total steps simulated at this level, fine and coarse runs combined.
    pub cost_steps: u64,
}

impl CsvRecord for MlmcLevelRow {
    fn header() -> &'static [&'static str] {
        &[
            "level",
            "h_max_level",
            "mean_diff",
            "variance",
            "n_samples",
            "cost_steps",
        ]
    }
    fn fields(&self) -> Vec<String> {
        vec![
            self.level.to_string(),
            fmt_f64(self.h_max_level),
            fmt_f64(self.mean_diff),
            fmt_f64(self.variance),
            self.n_samples.to_string(),
            self.cost_steps.to_string(),
        ]
    }
}

/// Full estimator output.
#[derive(Clone, Debug, Serialize)]
pub struct MlmcOutput {
    pub rows: Vec<MlmcLevelRow>,
    /// Telescoped estimate: sum of the level means.
    pub estimate: f64,
    /// Standard error of the estimate, `sqrt(sum V_l / N_l)`.
    pub standard_error: f64,
    /// Total steps over all levels.
    pub total_cost_steps: u64,
    /// Coupled pairs that hit a non-finite state and were redrawn on a fresh
    /// path.
    pub resampled_pairs: u64,
}

/// Builds the strategy for one level from the shared template.
fn level_config(template: &StrategyConfig, h_max0: f64, k_refine: f64, level: usize) -> StrategyConfig {
    let mut cfg = *template;
    cfg.h_max = h_max0 / k_refine.powi(level as i32);
    cfg
}

/// Packs (level, sample index, attempt) into a single path stream index.
fn path_stream_index(level: usize, sample: u64, attempt: u64) -> u64 {
    assert!(attempt < 1 << 12, "too many resample attempts");
    assert!(sample < 1 << 40, "sample index out of range");
    ((level as u64) << 52) | (sample << 12) | attempt
}

/// One sample of the level difference, with its simulation cost in steps.
struct LevelSample {
    diff: f64,
    cost_steps: u64,
}

/// Runs the fine strategy and then the coarse strategy on one shared Wiener
/// path and evaluates the quantity of interest on both terminal states.
///
/// The fine run goes first and lays down its mesh; the coarse run then reads
/// the same path through bridge queries, which is what couples the pair.
/// Returns `(q_fine, q_coarse, total_steps)`. A non-finite state in either
/// leg surfaces as [`Error::NonFinite`]; the caller decides whether to
/// resample.
pub fn coupled_pair(
    problem: &SdeProblem,
    fine: &StrategyConfig,
    coarse: &StrategyConfig,
    horizon: Option<f64>,
    qoi: &Qoi,
    path: &mut BrownianPath,
) -> Result<(f64, f64, u64)> {
    assert!(
        fine.h_max <= coarse.h_max,
        "fine step bound must not exceed the coarse one"
    );
    let options = SimulationOptions {
        horizon,
        record_states: false,
    };
    let fine_run = simulate(problem, fine, path, &options)?;
    let coarse_run = simulate(problem, coarse, path, &options)?;
    Ok((
        qoi(&fine_run.terminal_state),
        qoi(&coarse_run.terminal_state),
        (fine_run.n_steps() + coarse_run.n_steps()) as u64,
    ))
}

/// Draws one (possibly resampled) level sample. Level 0 runs a single
/// simulation; higher levels run the fine scheme then the coarse scheme on
/// the same path and return the difference of the quantity of interest.
#[allow(clippy::too_many_arguments)]
fn draw_level_sample(
    name: &str,
    params: &ProblemParams,
    fine: &StrategyConfig,
    coarse: Option<&StrategyConfig>,
    qoi: &Qoi,
    seed: u64,
    level: usize,
    sample: u64,
    resampled: &mut u64,
) -> Result<LevelSample> {
    const MAX_ATTEMPTS: u64 = 1000;
    let options = SimulationOptions {
        horizon: None,
        record_states: false,
    };
    for attempt in 0..MAX_ATTEMPTS {
        let stream = path_stream_index(level, sample, attempt);
        let problem = realisation_problem(name, params, seed, stream)?;
        let mut path = BrownianPath::derive(seed, stream, problem.noise_dim);

        let outcome = match coarse {
            None => match simulate(&problem, fine, &mut path, &options) {
                Ok(run) => Ok((qoi(&run.terminal_state), run.n_steps() as u64)),
                Err(e) => Err(e),
            },
            Some(coarse_cfg) => {
                match coupled_pair(&problem, fine, coarse_cfg, None, qoi, &mut path) {
                    Ok((q_fine, q_coarse, cost)) => Ok((q_fine - q_coarse, cost)),
                    Err(e) => Err(e),
                }
            }
        };
        let (diff, cost) = match outcome {
            Ok(pair) => pair,
            Err(Error::NonFinite { .. }) => {
                *resampled += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        if !diff.is_finite() {
            *resampled += 1;
            continue;
        }
        return Ok(LevelSample {
            diff,
            cost_steps: cost,
        });
    }
    Err(Error::InvalidStrategy(format!(
        "level {level} sample {sample} kept diverging after {MAX_ATTEMPTS} attempts"
    )))
}

/// Builds the problem for one stream, redrawing coefficients when the
/// problem randomizes them. Fine and coarse members of a pair share the
/// stream, hence the coefficients.
fn realisation_problem(
    name: &str,
    params: &ProblemParams,
    seed: u64,
    stream: u64,
) -> Result<SdeProblem> {
    let probe = make_problem(name, params)?;
    if !probe.randomized_coefficients {
        return Ok(probe);
    }
    let sampler_seed = derive_seed(derive_seed(seed, 0x6d6c_6d63_5f63_6f65), stream);
    make_problem(name, &params.clone().with_sampler_seed(sampler_seed))
}

/// Accumulated per-level sample set.
#[derive(Default)]
struct LevelAccumulator {
    diffs: Vec<f64>,
    cost_steps: u64,
    resampled: u64,
}

impl LevelAccumulator {
    fn mean(&self) -> f64 {
        self.diffs.iter().sum::<f64>() / self.diffs.len().max(1) as f64
    }
    fn variance(&self) -> f64 {
        if self.diffs.len() < 2 {
            return 0.0;
        }
        let mean = self.mean();
        self.diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>()
            / (self.diffs.len() - 1) as f64
    }
    fn mean_cost(&self) -> f64 {
        self.cost_steps as f64 / self.diffs.len().max(1) as f64
    }
}

/// Runs the multilevel estimator.
///
/// The template supplies the strategy kind and tolerances; its `h_max` is
/// replaced per level by `h_max0 / k_refine^level`. With a
/// [`SampleSchedule::TargetRms`] schedule the pilot samples are kept and each
/// level is topped up to `N_l = ceil(2 target^-2 sqrt(V_l / C_l) *
/// sum_j sqrt(V_j C_j))`, which drives the estimator variance below
/// `target^2 / 2`.
#[allow(clippy::too_many_arguments)]
pub fn mlmc_estimate(
    name: &str,
    params: &ProblemParams,
    template: &StrategyConfig,
    h_max0: f64,
    k_refine: f64,
    levels: usize,
    schedule: &SampleSchedule,
    qoi: &Qoi,
    seed: u64,
    workers: usize,
) -> Result<MlmcOutput> {
    assert!(k_refine > 1.0, "refinement factor must exceed 1");
    let n_levels = levels + 1;
    let configs: Vec<StrategyConfig> = (0..n_levels)
        .map(|l| level_config(template, h_max0, k_refine, l))
        .collect();
    for cfg in &configs {
        cfg.validate()?;
    }

    let initial: Vec<usize> = match schedule {
        SampleSchedule::Fixed(counts) => {
            if counts.len() != n_levels {
                return Err(Error::InvalidStrategy(format!(
                    "fixed schedule has {} entries for {} levels",
                    counts.len(),
                    n_levels
                )));
            }
            counts.clone()
        }
        SampleSchedule::TargetRms { target, pilot } => {
            if !(*target > 0.0) || *pilot < 2 {
                return Err(Error::InvalidStrategy(
                    "target must be positive and the pilot needs at least 2 samples".to_string(),
                ));
            }
            vec![*pilot; n_levels]
        }
    };

    let mut accumulators: Vec<LevelAccumulator> = Vec::new();
    for _ in 0..n_levels {
        accumulators.push(LevelAccumulator::default());
    }
    for (level, acc) in accumulators.iter_mut().enumerate() {
        extend_level(
            name, params, &configs, level, qoi, seed, initial[level], acc, workers,
        )?;
    }

    if let SampleSchedule::TargetRms { target, .. } = schedule {
        let sum_sqrt_vc: f64 = accumulators
            .iter()
            .map(|acc| (acc.variance() * acc.mean_cost()).sqrt())
            .sum();
        let targets: Vec<usize> = accumulators
            .iter()
            .map(|acc| {
                let n = 2.0 / (target * target)
                    * (acc.variance() / acc.mean_cost()).sqrt()
                    * sum_sqrt_vc;
                n.ceil() as usize
            })
            .collect();
        for (level, acc) in accumulators.iter_mut().enumerate() {
            let have = acc.diffs.len();
            if targets[level] > have {
                extend_level(
                    name,
                    params,
                    &configs,
                    level,
                    qoi,
                    seed,
                    targets[level] - have,
                    acc,
                    workers,
                )?;
            }
        }
    }

    let rows: Vec<MlmcLevelRow> = accumulators
        .iter()
        .enumerate()
        .map(|(level, acc)| MlmcLevelRow {
            level,
            h_max_level: configs[level].h_max,
            mean_diff: acc.mean(),
            variance: acc.variance(),
            n_samples: acc.diffs.len(),
            cost_steps: acc.cost_steps,
        })
        .collect();
    let estimate = rows.iter().map(|r| r.mean_diff).sum();
    let standard_error = rows
        .iter()
        .map(|r| r.variance / r.n_samples.max(1) as f64)
        .sum::<f64>()
        .sqrt();
    let total_cost_steps = rows.iter().map(|r| r.cost_steps).sum();
    let resampled_pairs = accumulators.iter().map(|a| a.resampled).sum();
    Ok(MlmcOutput {
        rows,
        estimate,
        standard_error,
        total_cost_steps,
        resampled_pairs,
    })
}

/// Draws `count` additional samples for one level into the accumulator.
#[allow(clippy::too_many_arguments)]
fn extend_level(
    name: &str,
    params: &ProblemParams,
    configs: &[StrategyConfig],
    level: usize,
    qoi: &Qoi,
    seed: u64,
    count: usize,
    acc: &mut LevelAccumulator,
    workers: usize,
) -> Result<()> {
    let fine = &configs[level];
    let coarse = if level == 0 {
        None
    } else {
        Some(&configs[level - 1])
    };
    let start = acc.diffs.len() as u64;
    let job = |i: u64| -> Result<(LevelSample, u64)> {
        let mut resampled = 0u64;
        let sample = draw_level_sample(
            name,
            params,
            fine,
            coarse,
            qoi,
            seed,
            level,
            start + i,
            &mut resampled,
        )?;
        Ok((sample, resampled))
    };
    let produced: Vec<(LevelSample, u64)> = if workers <= 1 {
        (0..count as u64).map(job).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .expect("worker pool");
        pool.install(|| {
            (0..count as u64)
                .into_par_iter()
                .map(job)
                .collect::<Result<_>>()
        })?
    };
    for (sample, resampled) in produced {
        acc.diffs.push(sample.diff);
        acc.cost_steps += sample.cost_steps;
        acc.resampled += resampled;
    }
    Ok(())
}

/// Plain Monte Carlo estimate of the quantity of interest at a single step
/// bound: mean, standard error, and total cost in steps.
#[allow(clippy::too_many_arguments)]
pub fn single_level_estimate(
    name: &str,
    params: &ProblemParams,
    cfg: &StrategyConfig,
    qoi: &Qoi,
    n_samples: usize,
    seed: u64,
    workers: usize,
) -> Result<(f64, f64, u64)> {
    let configs = [*cfg];
    let mut acc = LevelAccumulator::default();
    extend_level(name, params, &configs, 0, qoi, seed, n_samples, &mut acc, workers)?;
    let se = (acc.variance() / acc.diffs.len().max(1) as f64).sqrt();
    Ok((acc.mean(), se, acc.cost_steps))
}
