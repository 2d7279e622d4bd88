//! The adaptive Euler-Maruyama scheme and its step size strategies.
//!
//! Each strategy proposes a step from the current state, the proposal is
//! clamped to `[h_min, h_max]` with `h_min = h_max / rho`, and whenever the
//! clamp returns the lower bound the update is taken with a tamed drift
//! `f / (1 + h_min |f|)` instead of the plain Euler drift. The fixed-step
//! variants reuse the same machinery: FIXED_TAMED tames every step at scale
//! `h_max`, FIXED_EM never tames.

use crate::brownian::BrownianPath;
use crate::models::SdeProblem;
use crate::{Error, Result};

/// Relative slack when deciding that a step reaches the simulation horizon.
const HORIZON_SNAP: f64 = 1e-12;

/// Step size selection rules.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StrategyKind {
    /// Tolerance-based: `delta(eps) / |f(y)|`.
    At,
    /// Jacobian-based: `delta / |Df(y)|_F`.
    Ald,
    /// Basin-of-attraction bound: `delta / |y|^(beta-1)`.
    Basin,
    /// Admissible family: `delta / |f(y)|`.
    AdmI,
    /// Admissible family: `delta / (1 + |y|^(1+c))`.
    AdmII,
    /// Admissible family: `delta |y| / |f(y)|`.
    AdmIII,
    /// Admissible family: `delta |y| / (1 + |y|^(1+c))`.
    AdmIV,
    /// Growth-ratio bound: `delta |y|^2 / |f(y)|^2`.
    Fg,
    /// Fixed step `h_max`, plain Euler-Maruyama update.
    FixedEm,
    /// Fixed step `h_max`, tamed update at scale `h_max`.
    FixedTamed,
}

impl StrategyKind {
    /// All strategies in presentation order.
    pub fn all() -> &'static [StrategyKind] {
        use StrategyKind::*;
        &[
            At, Ald, Basin, AdmI, AdmII, AdmIII, AdmIV, Fg, FixedEm, FixedTamed,
        ]
    }

    /// Canonical name used by the CLI and report files.
    pub fn name(&self) -> &'static str {
        match self {
            StrategyKind::At => "AT",
            StrategyKind::Ald => "ALD",
            StrategyKind::Basin => "BASIN",
            StrategyKind::AdmI => "ADM_I",
            StrategyKind::AdmII => "ADM_II",
            StrategyKind::AdmIII => "ADM_III",
            StrategyKind::AdmIV => "ADM_IV",
            StrategyKind::Fg => "FG",
            StrategyKind::FixedEm => "FIXED_EM",
            StrategyKind::FixedTamed => "FIXED_TAMED",
        }
    }

    /// Parses a strategy name, case-insensitively, accepting `-` for `_`.
    pub fn parse(s: &str) -> Result<Self> {
        let normalized = s.to_ascii_uppercase().replace('-', "_");
        for kind in Self::all() {
            if kind.name() == normalized {
                return Ok(*kind);
            }
        }
        Err(Error::InvalidStrategy(format!(
            "unknown strategy '{s}'; valid strategies are {}",
            Self::all()
                .iter()
                .map(|k| k.name())
                .collect::<Vec<_>>()
                .join(", ")
        )))
    }

    /// True for the constant-step variants.
    pub fn is_fixed(&self) -> bool {
        matches!(self, StrategyKind::FixedEm | StrategyKind::FixedTamed)
    }

    /// True when proposals read the drift Jacobian.
    pub fn uses_jacobian(&self) -> bool {
        matches!(self, StrategyKind::Ald)
    }
}

impl std::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A fully specified stepping strategy.
#[derive(Clone, Copy, Debug)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    /// Upper step bound.
    pub h_max: f64,
    /// Bound ratio: `h_min = h_max / rho`.
    pub rho: f64,
    /// Tolerance for AT; `None` selects `0.9 h_max^2 / (1 + h_max)`.
    pub eps: Option<f64>,
    /// Scale for ALD/BASIN/ADM/FG; `None` selects `h_max`.
    pub delta: Option<f64>,
    /// Exponent for BASIN.
    pub beta_exp: f64,
    /// Growth exponent for ADM_II/ADM_IV.
    pub c_growth: f64,
}

impl StrategyConfig {
    /// Strategy with the published default tolerances and exponents.
    pub fn new(kind: StrategyKind, h_max: f64, rho: f64) -> Self {
        Self {
            kind,
            h_max,
            rho,
            eps: None,
            delta: None,
            beta_exp: 2.0,
            c_growth: 1.0,
        }
    }

    /// Lower step bound `h_max / rho`.
    pub fn h_min(&self) -> f64 {
        self.h_max / self.rho
    }

    /// Resolved AT tolerance.
    pub fn eps_value(&self) -> f64 {
        self.eps
            .unwrap_or(0.9 * self.h_max * self.h_max / (1.0 + self.h_max))
    }

    /// Resolved scale for the delta-based strategies.
    pub fn delta_value(&self) -> f64 {
        self.delta.unwrap_or(self.h_max)
    }

    /// Checks bounds on all fields.
    pub fn validate(&self) -> Result<()> {
        if !(self.h_max > 0.0 && self.h_max.is_finite()) {
            return Err(Error::InvalidStrategy(format!(
                "h_max must be positive and finite, got {}",
                self.h_max
            )));
        }
        if !(self.rho >= 1.0 && self.rho.is_finite()) {
            return Err(Error::InvalidStrategy(format!(
                "rho must be >= 1, got {}",
                self.rho
            )));
        }
        if let Some(eps) = self.eps {
            if !(eps > 0.0 && eps.is_finite()) {
                return Err(Error::InvalidStrategy(format!(
                    "eps must be positive, got {eps}"
                )));
            }
        }
        if let Some(delta) = self.delta {
            if !(delta > 0.0 && delta <= self.h_max) {
                return Err(Error::InvalidStrategy(format!(
                    "delta must lie in (0, h_max], got {delta}"
                )));
            }
        }
        if self.kind == StrategyKind::Basin && !(self.beta_exp > 1.0) {
            return Err(Error::InvalidStrategy(format!(
                "beta_exp must exceed 1, got {}",
                self.beta_exp
            )));
        }
        if matches!(self.kind, StrategyKind::AdmII | StrategyKind::AdmIV) && !(self.c_growth > 0.0)
        {
            return Err(Error::InvalidStrategy(format!(
                "c_growth must be positive, got {}",
                self.c_growth
            )));
        }
        Ok(())
    }
}

/// The tolerance-to-scale map for AT: the positive root of
/// `delta^2 / (1 + delta) = eps`, so a step `delta(eps)/|f|` makes the taming
/// correction of the backstop map no larger than `eps`.
pub fn delta_of_eps(eps: f64) -> f64 {
    0.5 * (eps + (eps * eps + 4.0 * eps).sqrt())
}

fn euclidean_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Frobenius norm of a row-major matrix buffer.
pub fn frobenius_norm(m: &[f64]) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Proposes the next step size from the current state and drift value,
/// clamped to `[h_min, h_max]`.
///
/// `jac_buf` must have length `dim * dim`; it is written only by the
/// Jacobian-based strategy. The function is pure: the result depends only on
/// the arguments, never on generator state.
pub fn propose_step(
    cfg: &StrategyConfig,
    problem: &SdeProblem,
    y: &[f64],
    f: &[f64],
    jac_buf: &mut [f64],
) -> f64 {
    let raw = match cfg.kind {
        StrategyKind::FixedEm | StrategyKind::FixedTamed => cfg.h_max,
        StrategyKind::At => delta_of_eps(cfg.eps_value()) / euclidean_norm(f),
        StrategyKind::Ald => {
            problem.jacobian_into(y, jac_buf);
            cfg.delta_value() / frobenius_norm(jac_buf)
        }
        StrategyKind::Basin => {
            cfg.delta_value() / euclidean_norm(y).powf(cfg.beta_exp - 1.0)
        }
        StrategyKind::AdmI => cfg.delta_value() / euclidean_norm(f),
        StrategyKind::AdmII => {
            cfg.delta_value() / (1.0 + euclidean_norm(y).powf(1.0 + cfg.c_growth))
        }
        StrategyKind::AdmIII => cfg.delta_value() * euclidean_norm(y) / euclidean_norm(f),
        StrategyKind::AdmIV => {
            let norm = euclidean_norm(y);
            cfg.delta_value() * norm / (1.0 + norm.powf(1.0 + cfg.c_growth))
        }
        StrategyKind::Fg => {
            let fy = euclidean_norm(f);
            cfg.delta_value() * euclidean_norm(y) * euclidean_norm(y) / (fy * fy)
        }
    };
    // Division by zero proposes +inf and lands on the upper clamp.
    if raw.is_nan() {
        return cfg.h_max;
    }
    raw.min(cfg.h_max).max(cfg.h_min())
}

/// Outcome of one accepted step.
#[derive(Clone, Copy, Debug)]
pub struct StepResult {
    /// Step size actually taken.
    pub h: f64,
    /// New time after the step.
    pub t_next: f64,
    /// True when the tamed backstop update was used.
    pub tamed: bool,
    /// True when the step was shortened to land exactly on the horizon.
    pub truncated: bool,
}

/// Advances the state by one step of the scheme.
///
/// `f` must hold the drift at the current state. The Wiener increment is
/// drawn from `path` over the accepted interval. The update is the plain
/// Euler map when the accepted step exceeds `h_min`, and the tamed map
/// otherwise; the taming scale is `h_min` for the adaptive strategies and
/// `h_max` for FIXED_TAMED, while FIXED_EM never tames.
#[allow(clippy::too_many_arguments)]
pub fn step(
    problem: &SdeProblem,
    cfg: &StrategyConfig,
    t: f64,
    horizon: f64,
    y: &mut [f64],
    f: &[f64],
    path: &mut BrownianPath,
    scratch: &mut StepScratch,
) -> StepResult {
    let mut h = propose_step(cfg, problem, y, f, &mut scratch.jac);
    let remaining = horizon - t;
    let mut truncated = false;
    let mut t_next = t + h;
    if remaining - h <= HORIZON_SNAP * horizon {
        h = remaining;
        t_next = horizon;
        truncated = true;
    }

    path.increment_into(t, t_next, &mut scratch.dw);
    problem.diffusion_apply(y, &scratch.dw, &mut scratch.gdw);

    let tamed = match cfg.kind {
        StrategyKind::FixedEm => false,
        StrategyKind::FixedTamed => true,
        _ => h <= cfg.h_min(),
    };
    if tamed {
        let scale = if cfg.kind == StrategyKind::FixedTamed {
            cfg.h_max
        } else {
            cfg.h_min()
        };
        let denom = 1.0 + scale * euclidean_norm(f);
        for i in 0..y.len() {
            y[i] += h * f[i] / denom + scratch.gdw[i];
        }
    } else {
        for i in 0..y.len() {
            y[i] += h * f[i] + scratch.gdw[i];
        }
    }

    StepResult {
        h,
        t_next,
        tamed,
        truncated,
    }
}

/// Reusable buffers for the stepping loop.
pub struct StepScratch {
    jac: Vec<f64>,
    dw: Vec<f64>,
    gdw: Vec<f64>,
}

impl StepScratch {
    /// Buffers sized for the given problem.
    pub fn for_problem(problem: &SdeProblem) -> Self {
        Self {
            jac: vec![0.0; problem.dim * problem.dim],
            dw: vec![0.0; problem.noise_dim],
            gdw: vec![0.0; problem.dim],
        }
    }
}

/// What to keep while simulating.
#[derive(Clone, Copy, Debug)]
pub struct SimulationOptions {
    /// Simulation horizon; `None` uses the problem default.
    pub horizon: Option<f64>,
    /// Record the full time grid and state history, not just step sizes.
    pub record_states: bool,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self {
            horizon: None,
            record_states: false,
        }
    }
}

/// One simulated path: step sizes, flags, and optionally the full history.
#[derive(Clone, Debug)]
pub struct Trajectory {
    /// State dimension.
    pub dim: usize,
    /// Mesh times `t_0..t_N`; empty unless states were recorded.
    pub times: Vec<f64>,
    /// Flat row-major states, `(N+1) * dim`; empty unless recorded.
    pub states: Vec<f64>,
    /// Accepted step sizes `h_1..h_N`.
    pub steps: Vec<f64>,
    /// Per-step flag: tamed backstop update used.
    pub tamed: Vec<bool>,
    /// Per-step flag: step truncated to land on the horizon.
    pub truncated: Vec<bool>,
    /// Final state `Y_N`.
    pub terminal_state: Vec<f64>,
    /// Final time (the horizon).
    pub terminal_time: f64,
}

impl Trajectory {
    /// Number of accepted steps.
    pub fn n_steps(&self) -> usize {
        self.steps.len()
    }

    /// Number of tamed updates taken.
    pub fn backstop_count(&self) -> usize {
        self.tamed.iter().filter(|&&b| b).count()
    }

    /// State at mesh index `idx` (requires recorded states).
    pub fn state_at(&self, idx: usize) -> &[f64] {
        &self.states[idx * self.dim..(idx + 1) * self.dim]
    }

    /// Mean accepted step size.
    pub fn mean_step(&self) -> f64 {
        if self.steps.is_empty() {
            0.0
        } else {
            self.steps.iter().sum::<f64>() / self.steps.len() as f64
        }
    }
}

/// Simulates one path of the scheme on the given Wiener path.
///
/// Fails with [`Error::NonFinite`] as soon as the state or its drift stops
/// being finite, reporting the time and step count reached.
pub fn simulate(
    problem: &SdeProblem,
    cfg: &StrategyConfig,
    path: &mut BrownianPath,
    options: &SimulationOptions,
) -> Result<Trajectory> {
    cfg.validate()?;
    assert_eq!(
        path.dim(),
        problem.noise_dim,
        "path dimension must match the problem noise dimension"
    );
    let horizon = options.horizon.unwrap_or(problem.horizon);
    assert!(horizon > 0.0, "horizon must be positive");

    let mut y = problem.initial_state.clone();
    let mut f = vec![0.0; problem.dim];
    let mut scratch = StepScratch::for_problem(problem);

    let mut trajectory = Trajectory {
        dim: problem.dim,
        times: Vec::new(),
        states: Vec::new(),
        steps: Vec::new(),
        tamed: Vec::new(),
        truncated: Vec::new(),
        terminal_state: Vec::new(),
        terminal_time: horizon,
    };
    if options.record_states {
        trajectory.times.push(0.0);
        trajectory.states.extend_from_slice(&y);
    }

    problem.drift_into(&y, &mut f);
    let mut t = 0.0;
    while t < horizon {
        if !f.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                t,
                steps: trajectory.steps.len(),
            });
        }
        let result = step(problem, cfg, t, horizon, &mut y, &f, path, &mut scratch);
        assert!(result.t_next > t, "step size underflow at t={t}");
        t = result.t_next;

        trajectory.steps.push(result.h);
        trajectory.tamed.push(result.tamed);
        trajectory.truncated.push(result.truncated);
        if options.record_states {
            trajectory.times.push(t);
            trajectory.states.extend_from_slice(&y);
        }
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                t,
                steps: trajectory.steps.len(),
            });
        }
        problem.drift_into(&y, &mut f);
    }

    trajectory.terminal_state = y;
    trajectory.terminal_time = t;
    Ok(trajectory)
}

/// Amplitude of the period-two cycle of the deterministic Euler map
/// `x -> x - h gamma x |x|^nu`: iterates starting beyond it are repelled
/// outward, which is the mechanism behind explicit-scheme divergence.
pub fn euler_two_cycle_amplitude(gamma: f64, nu: f64, h: f64) -> f64 {
    assert!(gamma > 0.0 && nu > 0.0 && h > 0.0);
    (2.0 / (h * gamma)).powf(1.0 / nu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{make_problem, ProblemParams};

    fn sgle() -> SdeProblem {
        make_problem("sgle-mult", &ProblemParams::new()).unwrap()
    }

    #[test]
    fn strategy_names_round_trip() {
        for kind in StrategyKind::all() {
            assert_eq!(StrategyKind::parse(kind.name()).unwrap(), *kind);
        }
        assert_eq!(
            StrategyKind::parse("fixed-tamed").unwrap(),
            StrategyKind::FixedTamed
        );
        assert!(StrategyKind::parse("bogus").is_err());
    }

    #[test]
    fn delta_of_eps_solves_its_defining_equation() {
        for &eps in &[1e-6, 1e-3, 0.0275, 0.45, 2.88] {
            let delta = delta_of_eps(eps);
            let residual = delta * delta / (1.0 + delta) - eps;
            assert!(residual.abs() < 1e-12 * eps.max(1.0), "eps={eps}");
        }
    }

    #[test]
    fn proposals_are_clamped_and_pure() {
        let problem = sgle();
        let cfg = StrategyConfig::new(StrategyKind::At, 0.25, 100.0);
        let mut jac = [0.0];
        for &x in &[0.0, 0.1, 1.0, 5.0, 80.0] {
            let y = [x];
            let mut f = [0.0];
            problem.drift_into(&y, &mut f);
            let h1 = propose_step(&cfg, &problem, &y, &f, &mut jac);
            let h2 = propose_step(&cfg, &problem, &y, &f, &mut jac);
            assert_eq!(h1, h2);
            assert!(h1 >= cfg.h_min() && h1 <= cfg.h_max);
        }
    }

    #[test]
    fn zero_drift_proposes_the_upper_bound() {
        let problem = sgle();
        // At the unstable equilibrium |f| = 0 for AT and for the state-scaled
        // rules at |y| = 0.
        let mut jac = [0.0];
        for kind in [
            StrategyKind::At,
            StrategyKind::AdmI,
            StrategyKind::AdmIII,
            StrategyKind::Fg,
            StrategyKind::Basin,
        ] {
            let cfg = StrategyConfig::new(kind, 0.5, 10.0);
            let h = propose_step(&cfg, &problem, &[0.0], &[0.0], &mut jac);
            assert_eq!(h, 0.5, "{kind} at the origin");
        }
    }

    #[test]
    fn fixed_variants_always_propose_h_max() {
        let problem = sgle();
        let mut jac = [0.0];
        for kind in [StrategyKind::FixedEm, StrategyKind::FixedTamed] {
            let cfg = StrategyConfig::new(kind, 0.125, 100.0);
            let h = propose_step(&cfg, &problem, &[3.0], &[-50.0], &mut jac);
            assert_eq!(h, 0.125);
        }
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let mut cfg = StrategyConfig::new(StrategyKind::At, 1.0, 100.0);
        cfg.rho = 0.5;
        assert!(cfg.validate().is_err());
        let mut cfg = StrategyConfig::new(StrategyKind::Ald, 1.0, 100.0);
        cfg.delta = Some(2.0);
        assert!(cfg.validate().is_err());
        let mut cfg = StrategyConfig::new(StrategyKind::Basin, 1.0, 100.0);
        cfg.beta_exp = 1.0;
        assert!(cfg.validate().is_err());
        assert!(StrategyConfig::new(StrategyKind::At, 1.0, 100.0)
            .validate()
            .is_ok());
    }

    #[test]
    fn simulate_lands_exactly_on_the_horizon() {
        let problem = sgle();
        let cfg = StrategyConfig::new(StrategyKind::At, 0.25, 100.0);
        let mut path = BrownianPath::new(21, 1);
        let trajectory = simulate(
            &problem,
            &cfg,
            &mut path,
            &SimulationOptions {
                horizon: Some(2.0),
                record_states: true,
            },
        )
        .unwrap();
        assert_eq!(trajectory.terminal_time, 2.0);
        assert_eq!(*trajectory.times.last().unwrap(), 2.0);
        let step_sum: f64 = trajectory.steps.iter().sum();
        assert!((step_sum - 2.0).abs() < 1e-9);
        assert_eq!(trajectory.truncated.iter().filter(|&&b| b).count(), 1);
        assert!(trajectory.truncated[trajectory.n_steps() - 1]);
    }

    #[test]
    fn steps_respect_bounds_along_a_path() {
        let problem = sgle();
        let cfg = StrategyConfig::new(StrategyKind::At, 0.25, 50.0);
        let mut path = BrownianPath::new(4, 1);
        let trajectory = simulate(
            &problem,
            &cfg,
            &mut path,
            &SimulationOptions::default(),
        )
        .unwrap();
        for (h, &truncated) in trajectory.steps.iter().zip(trajectory.truncated.iter()) {
            assert!(*h <= cfg.h_max + 1e-15);
            if !truncated {
                assert!(*h >= cfg.h_min() - 1e-15);
            }
        }
    }

    #[test]
    fn tamed_flag_tracks_the_lower_clamp() {
        // From x0 = 4 the drift is large enough that the first proposals
        // clamp to h_min and must be tamed.
        let params = ProblemParams::new().with("x0", 4.0);
        let problem = make_problem("sgle-mult", &params).unwrap();
        let cfg = StrategyConfig::new(StrategyKind::At, 0.25, 10.0);
        let mut path = BrownianPath::new(8, 1);
        let trajectory =
            simulate(&problem, &cfg, &mut path, &SimulationOptions::default()).unwrap();
        assert!(trajectory.tamed[0]);
        assert!(trajectory.backstop_count() > 0);
    }

    #[test]
    fn fixed_em_diverges_where_tamed_survives() {
        let params = ProblemParams::new().with("x0", 5.0).with("t_end", 10.0);
        let problem = make_problem("sgle-mult", &params).unwrap();
        let cfg_em = StrategyConfig::new(StrategyKind::FixedEm, 0.5, 1.0);
        let cfg_tamed = StrategyConfig::new(StrategyKind::FixedTamed, 0.5, 1.0);

        let mut path = BrownianPath::new(17, 1);
        let em = simulate(&problem, &cfg_em, &mut path, &SimulationOptions::default());
        assert!(matches!(em, Err(Error::NonFinite { .. })));

        let mut path = BrownianPath::new(17, 1);
        let tamed = simulate(&problem, &cfg_tamed, &mut path, &SimulationOptions::default());
        assert!(tamed.is_ok());
        assert!(tamed.unwrap().terminal_state[0].is_finite());
    }

    #[test]
    fn at_with_unit_rho_matches_fixed_tamed_bitwise() {
        let problem = sgle();
        let mut cfg_at = StrategyConfig::new(StrategyKind::At, 0.25, 1.0);
        cfg_at.eps = Some(0.01);
        let cfg_ft = StrategyConfig::new(StrategyKind::FixedTamed, 0.25, 1.0);

        let mut path_a = BrownianPath::new(33, 1);
        let mut path_b = BrownianPath::new(33, 1);
        let a = simulate(&problem, &cfg_at, &mut path_a, &SimulationOptions::default()).unwrap();
        let b = simulate(&problem, &cfg_ft, &mut path_b, &SimulationOptions::default()).unwrap();
        assert_eq!(a.terminal_state, b.terminal_state);
        assert_eq!(a.steps, b.steps);
        assert_eq!(a.tamed, b.tamed);
    }

    #[test]
    fn two_cycle_amplitude_hand_value_and_cycle_identity() {
        let amplitude = euler_two_cycle_amplitude(1.0, 2.0, 0.5);
        assert!((amplitude - 2.0).abs() < 1e-12);

        // F(x*) = -x* and F(F(x*)) = x* for the map x - h gamma x |x|^nu.
        let map = |x: f64| x - 0.5 * x * x.abs().powf(2.0);
        assert!((map(amplitude) + amplitude).abs() < 1e-12);
        assert!((map(map(amplitude)) - amplitude).abs() < 1e-12);

        // Iterates beyond the cycle amplitude grow in magnitude.
        let beyond = 1.1 * amplitude;
        assert!(map(beyond).abs() > beyond.abs());
    }
}
