//! Spectral Galerkin discretisation of the stochastic Allen-Cahn equation
//! `du = [D u_xx + u - u^3] dt + sigma dW` on the unit interval with periodic
//! boundary conditions. Truncating to J Fourier modes yields a J-dimensional
//! SDE system whose linear part is diagonal and whose cubic term is evaluated
//! by collocation: synthesise on a physical grid, cube pointwise, project
//! back.

use std::sync::Arc;

use serde::Serialize;

use crate::models::{DiffusionFn, DriftFn, JacobianFn, SdeProblem};
use crate::report::{fmt_f64, CsvRecord};
use crate::stepping::Trajectory;
use crate::{Error, Result};

/// Configuration of the spectral discretisation.
#[derive(Clone, Copy, Debug)]
pub struct GalerkinConfig {
    /// Number of retained basis coefficients J.
    pub j_modes: usize,
    /// Diffusion coefficient D of the linear operator.
    pub d_coeff: f64,
    /// Noise amplitude.
    pub sigma: f64,
    /// Covariance decay exponent: mode j carries variance
    /// `(1 + (2 pi j)^2)^(-q_decay)`.
    pub q_decay: f64,
    /// Physical collocation points for the cubic term; `None` selects `2 J`.
    pub collocation: Option<usize>,
    /// Simulation horizon.
    pub t_end: f64,
}

impl Default for GalerkinConfig {
    fn default() -> Self {
        Self {
            j_modes: 100,
            d_coeff: 0.01,
            sigma: 0.5,
            q_decay: 2.0,
            collocation: None,
            t_end: 10.0,
        }
    }
}

impl GalerkinConfig {
    /// Resolved collocation grid size.
    pub fn collocation_points(&self) -> usize {
        self.collocation.unwrap_or(2 * self.j_modes)
    }

    fn validate(&self) -> Result<()> {
        if self.j_modes < 3 {
            return Err(Error::InvalidStrategy(format!(
                "need at least 3 modes to represent the initial data, got {}",
                self.j_modes
            )));
        }
        if self.collocation_points() < self.j_modes {
            return Err(Error::InvalidStrategy(
                "collocation grid must be at least as fine as the mode count".to_string(),
            ));
        }
        if !(self.t_end > 0.0) || !(self.d_coeff >= 0.0) || !(self.q_decay >= 0.0) {
            return Err(Error::InvalidStrategy(
                "t_end must be positive, d_coeff and q_decay non-negative".to_string(),
            ));
        }
        Ok(())
    }
}

/// Spatial frequency of basis entry `k`: entry 0 is the constant mode, odd
/// entries are cosines, even entries sines, paired by frequency.
pub fn entry_frequency(k: usize) -> usize {
    if k == 0 {
        0
    } else if k % 2 == 1 {
        (k + 1) / 2
    } else {
        k / 2
    }
}

/// Value of basis entry `k` at spatial point `x`.
fn basis_value(k: usize, x: f64) -> f64 {
    let j = entry_frequency(k) as f64;
    let angle = 2.0 * std::f64::consts::PI * j * x;
    if k == 0 {
        1.0
    } else if k % 2 == 1 {
        std::f64::consts::SQRT_2 * angle.cos()
    } else {
        std::f64::consts::SQRT_2 * angle.sin()
    }
}

/// The `L^2(0,1)` norm of the represented function, which in this
/// orthonormal basis is the Euclidean norm of the coefficient vector.
pub fn l2_norm(coefficients: &[f64]) -> f64 {
    coefficients.iter().map(|c| c * c).sum::<f64>().sqrt()
}

/// Linear-part eigenvalue per basis entry: `1 - D (2 pi j_k)^2`.
pub fn linear_eigenvalues(cfg: &GalerkinConfig) -> Vec<f64> {
    (0..cfg.j_modes)
        .map(|k| {
            let freq = 2.0 * std::f64::consts::PI * entry_frequency(k) as f64;
            1.0 - cfg.d_coeff * freq * freq
        })
        .collect()
}

/// Evaluates the represented function on a uniform grid `x_i = i / points`.
pub fn to_physical(coefficients: &[f64], points: usize) -> Vec<f64> {
    (0..points)
        .map(|i| {
            let x = i as f64 / points as f64;
            coefficients
                .iter()
                .enumerate()
                .map(|(k, c)| c * basis_value(k, x))
                .sum()
        })
        .collect()
}

/// Recovers the leading `j_modes` coefficients from uniform-grid values,
/// the inverse of [`to_physical`] whenever the grid resolves every retained
/// frequency.
pub fn to_coefficients(values: &[f64], j_modes: usize) -> Vec<f64> {
    let p = values.len();
    assert!(p >= j_modes, "grid must be at least as fine as the mode count");
    (0..j_modes)
        .map(|k| {
            values
                .iter()
                .enumerate()
                .map(|(i, v)| v * basis_value(k, i as f64 / p as f64))
                .sum::<f64>()
                / p as f64
        })
        .collect()
}

/// Pearson correlation coefficient of two equal-length samples.
pub fn correlation(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    assert!(xs.len() > 1, "correlation needs at least two points");
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys.iter()) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Builds the J-mode Allen-Cahn system as an [`SdeProblem`].
///
/// State entries are coefficients in the orthonormal trigonometric basis.
/// The drift is `lambda_k u_k - (P_J (u^3))_k` with
/// `lambda_k = 1 - D (2 pi j_k)^2`; the noise is diagonal with mode variance
/// `sigma^2 (1 + (2 pi j)^2)^(-q_decay)`; the initial state is `sin(2 pi x)`.
pub fn build_allen_cahn(cfg: &GalerkinConfig) -> Result<SdeProblem> {
    cfg.validate()?;
    let j = cfg.j_modes;
    let p = cfg.collocation_points();

    // Synthesis matrix S (P x J): function values from coefficients on the
    // uniform grid x_p = p / P. The analysis operator is S^T / P.
    let mut synthesis = vec![0.0; p * j];
    for (row, chunk) in synthesis.chunks_mut(j).enumerate() {
        let x = row as f64 / p as f64;
        for (k, slot) in chunk.iter_mut().enumerate() {
            *slot = basis_value(k, x);
        }
    }
    let synthesis = Arc::new(synthesis);

    let eigenvalues: Vec<f64> = (0..j)
        .map(|k| {
            let freq = 2.0 * std::f64::consts::PI * entry_frequency(k) as f64;
            1.0 - cfg.d_coeff * freq * freq
        })
        .collect();
    let eigenvalues = Arc::new(eigenvalues);

    let noise_scale: Vec<f64> = (0..j)
        .map(|k| {
            let freq = 2.0 * std::f64::consts::PI * entry_frequency(k) as f64;
            cfg.sigma * (1.0 + freq * freq).powf(-cfg.q_decay / 2.0)
        })
        .collect();

    // Initial data sin(2 pi x): coefficient 1/sqrt(2) on the frequency-1
    // sine entry.
    let mut initial = vec![0.0; j];
    initial[2] = 1.0 / std::f64::consts::SQRT_2;

    let drift: DriftFn = {
        let synthesis = Arc::clone(&synthesis);
        let eigenvalues = Arc::clone(&eigenvalues);
        Box::new(move |u, out| {
            let mut physical = vec![0.0; p];
            for (row, value) in physical.iter_mut().enumerate() {
                let coeffs = &synthesis[row * j..(row + 1) * j];
                let mut acc = 0.0;
                for (c, s) in u.iter().zip(coeffs.iter()) {
                    acc += c * s;
                }
                *value = acc * acc * acc;
            }
            let scale = 1.0 / p as f64;
            for (k, slot) in out.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (row, v) in physical.iter().enumerate() {
                    acc += synthesis[row * j + k] * v;
                }
                *slot = eigenvalues[k] * u[k] - scale * acc;
            }
        })
    };

    let diffusion: DiffusionFn = {
        let noise_scale = noise_scale.clone();
        Box::new(move |_u, dw, out| {
            for ((slot, s), d) in out.iter_mut().zip(noise_scale.iter()).zip(dw.iter()) {
                *slot = s * d;
            }
        })
    };

    // D(u)[k][l] = lambda_k delta_kl - (1/P) sum_p S[p][k] 3 v_p^2 S[p][l].
    let jacobian: JacobianFn = {
        let synthesis = Arc::clone(&synthesis);
        let eigenvalues = Arc::clone(&eigenvalues);
        Box::new(move |u, out| {
            let mut squared = vec![0.0; p];
            for (row, value) in squared.iter_mut().enumerate() {
                let coeffs = &synthesis[row * j..(row + 1) * j];
                let mut acc = 0.0;
                for (c, s) in u.iter().zip(coeffs.iter()) {
                    acc += c * s;
                }
                *value = 3.0 * acc * acc;
            }
            let scale = 1.0 / p as f64;
            for k in 0..j {
                for l in 0..j {
                    let mut acc = 0.0;
                    for (row, sq) in squared.iter().enumerate() {
                        acc += synthesis[row * j + k] * sq * synthesis[row * j + l];
                    }
                    out[k * j + l] = -scale * acc;
                }
                out[k * j + k] += eigenvalues[k];
            }
        })
    };

    let mut problem = SdeProblem::custom(
        "allen-cahn",
        j,
        j,
        cfg.t_end,
        initial,
        drift,
        diffusion,
        Some(jacobian),
    );
    problem.within_theory = true;
    Ok(problem)
}

/// One mesh point of a coefficient-space trajectory, reduced to the solution
/// norm.
#[derive(Clone, Debug, Serialize)]
pub struct SpdeRow {
    /// Mesh index.
    pub n: usize,
    /// Mesh time.
    pub t: f64,
    /// Step that produced this state (0 for the initial row).
    pub h: f64,
    /// `L^2(0,1)` norm of the solution at this time.
    pub l2_norm: f64,
    /// 1 when the tamed backstop update produced this state.
    pub backstopped: u8,
}

impl CsvRecord for SpdeRow {
    fn header() -> &'static [&'static str] {
        &["n", "t", "h", "l2_norm", "backstopped"]
    }
    fn fields(&self) -> Vec<String> {
        vec![
            self.n.to_string(),
            fmt_f64(self.t),
            fmt_f64(self.h),
            fmt_f64(self.l2_norm),
            self.backstopped.to_string(),
        ]
    }
}

/// Reduces a recorded coefficient trajectory to norm-and-step rows.
pub fn norm_rows(trajectory: &Trajectory) -> Vec<SpdeRow> {
    assert!(
        !trajectory.times.is_empty(),
        "trajectory was simulated without state recording"
    );
    (0..trajectory.times.len())
        .map(|n| SpdeRow {
            n,
            t: trajectory.times[n],
            h: if n == 0 { 0.0 } else { trajectory.steps[n - 1] },
            l2_norm: l2_norm(trajectory.state_at(n)),
            backstopped: u8::from(n > 0 && trajectory.tamed[n - 1]),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::brownian::BrownianPath;
    use crate::stepping::{simulate, SimulationOptions, StrategyConfig, StrategyKind};
    use rand::{Rng, SeedableRng};

    #[test]
    fn frequency_mapping_pairs_sine_and_cosine() {
        let freqs: Vec<usize> = (0..9).map(entry_frequency).collect();
        assert_eq!(freqs, vec![0, 1, 1, 2, 2, 3, 3, 4, 4]);
    }

    #[test]
    fn eigenvalues_and_initial_data_match_the_discretisation() {
        let cfg = GalerkinConfig {
            j_modes: 8,
            ..GalerkinConfig::default()
        };
        let problem = build_allen_cahn(&cfg).unwrap();
        assert_eq!(problem.dim, 8);
        // Initial state is sin(2 pi x): single coefficient 1/sqrt(2).
        let expected = 1.0 / std::f64::consts::SQRT_2;
        assert_eq!(problem.initial_state[2], expected);
        assert_eq!(
            problem
                .initial_state
                .iter()
                .filter(|c| **c != 0.0)
                .count(),
            1
        );
        assert!((l2_norm(&problem.initial_state) - expected).abs() < 1e-15);

        // The drift of the zero state is zero; of a pure constant c it is the
        // scalar Allen-Cahn drift c - c^3 on the constant entry and zero
        // elsewhere.
        let mut f = vec![0.0; 8];
        problem.drift_into(&vec![0.0; 8], &mut f);
        assert!(f.iter().all(|v| v.abs() < 1e-14));
        let c = 0.3;
        let mut state = vec![0.0; 8];
        state[0] = c;
        problem.drift_into(&state, &mut f);
        assert!((f[0] - (c - c * c * c)).abs() < 1e-13);
        for v in &f[1..] {
            assert!(v.abs() < 1e-13);
        }
    }

    #[test]
    fn cubic_term_matches_trigonometric_identities() {
        // sin^3 = (3 sin - sin(3.)) / 4: with u = sin(2 pi x) the projected
        // cube has coefficient 3/(4 sqrt 2) on the frequency-1 sine entry and
        // -1/(4 sqrt 2) on the frequency-3 sine entry.
        let cfg = GalerkinConfig {
            j_modes: 8,
            collocation: Some(32),
            ..GalerkinConfig::default()
        };
        let problem = build_allen_cahn(&cfg).unwrap();
        let u = problem.initial_state.clone();
        let mut f = vec![0.0; 8];
        problem.drift_into(&u, &mut f);

        let lambda_1 = 1.0 - cfg.d_coeff * (2.0 * std::f64::consts::PI).powi(2);
        let s = 1.0 / std::f64::consts::SQRT_2;
        let expect_2 = lambda_1 * s - 3.0 / 4.0 * s;
        let expect_6 = 1.0 / 4.0 * s;
        assert!((f[2] - expect_2).abs() < 1e-10, "freq-1 sine: {}", f[2]);
        assert!((f[6] - expect_6).abs() < 1e-10, "freq-3 sine: {}", f[6]);
        for (k, v) in f.iter().enumerate() {
            if k != 2 && k != 6 {
                assert!(v.abs() < 1e-10, "entry {k} should vanish, got {v}");
            }
        }

        // The top retained frequency needs the finer grid: its cube's
        // frequency-12 part aliases back onto frequency 4 on the default
        // 2J-point grid, and cleanly separates on the 4J-point grid.
        let c = 0.7;
        let mut top = vec![0.0; 8];
        top[7] = c;
        problem.drift_into(&top, &mut f);
        let lambda_4 = 1.0 - cfg.d_coeff * (8.0 * std::f64::consts::PI).powi(2);
        let expect_7 = lambda_4 * c - 1.5 * c * c * c;
        assert!((f[7] - expect_7).abs() < 1e-10, "freq-4 cosine: {}", f[7]);
    }

    #[test]
    fn analytic_jacobian_matches_finite_differences() {
        let cfg = GalerkinConfig {
            j_modes: 6,
            collocation: Some(24),
            ..GalerkinConfig::default()
        };
        let problem = build_allen_cahn(&cfg).unwrap();
        let u: Vec<f64> = (0..6).map(|k| 0.4 - 0.15 * k as f64).collect();
        let mut analytic = vec![0.0; 36];
        let mut numeric = vec![0.0; 36];
        problem.jacobian_into(&u, &mut analytic);
        problem.fd_jacobian_into(&u, &mut numeric);
        for (a, n) in analytic.iter().zip(numeric.iter()) {
            assert!((a - n).abs() < 1e-4, "{a} vs {n}");
        }
    }

    #[test]
    fn noise_variance_decays_with_frequency() {
        let cfg = GalerkinConfig {
            j_modes: 8,
            ..GalerkinConfig::default()
        };
        let problem = build_allen_cahn(&cfg).unwrap();
        let u = vec![0.0; 8];
        let mut g_unit = vec![0.0; 8];
        // Applying the diffusion to unit increments exposes the diagonal.
        problem.diffusion_apply(&u, &vec![1.0; 8], &mut g_unit);
        assert!((g_unit[0] - cfg.sigma).abs() < 1e-15);
        assert!(g_unit[1] > g_unit[3] && g_unit[3] > g_unit[5]);
        let freq1 = (2.0 * std::f64::consts::PI).powi(2);
        let expected = cfg.sigma * (1.0 + freq1).powf(-cfg.q_decay / 2.0);
        assert!((g_unit[1] - expected).abs() < 1e-15);
        assert_eq!(g_unit[1], g_unit[2]);
    }

    #[test]
    fn adaptive_run_completes_and_reports_norms() {
        let cfg = GalerkinConfig {
            j_modes: 16,
            t_end: 0.5,
            ..GalerkinConfig::default()
        };
        let problem = build_allen_cahn(&cfg).unwrap();
        let strategy = StrategyConfig::new(StrategyKind::At, 0.05, 100.0);
        let mut path = BrownianPath::new(5, 16);
        let trajectory = simulate(
            &problem,
            &strategy,
            &mut path,
            &SimulationOptions {
                horizon: Some(cfg.t_end),
                record_states: true,
            },
        )
        .unwrap();
        let rows = norm_rows(&trajectory);
        assert_eq!(rows.len(), trajectory.times.len());
        assert!((rows[0].l2_norm - 1.0 / std::f64::consts::SQRT_2).abs() < 1e-12);
        assert!(rows.iter().all(|r| r.l2_norm.is_finite()));
        assert_eq!(rows.last().unwrap().t, 0.5);
    }

    #[test]
    fn correlation_hand_values() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let up = [2.0, 4.0, 6.0, 8.0];
        let down = [8.0, 6.0, 4.0, 2.0];
        assert!((correlation(&xs, &up) - 1.0).abs() < 1e-12);
        assert!((correlation(&xs, &down) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn frequency_one_eigenvalue_hand_value() {
        let cfg = GalerkinConfig {
            j_modes: 4,
            ..GalerkinConfig::default()
        };
        let lambda = linear_eigenvalues(&cfg);
        assert_eq!(lambda[0], 1.0);
        assert!((lambda[1] - 0.6052158239564257).abs() < 1e-10);
        assert_eq!(lambda[1], lambda[2]);
    }

    #[test]
    fn transform_round_trip_is_the_identity() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        let coeffs: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let values = to_physical(&coeffs, 32);
        let back = to_coefficients(&values, 8);
        for (a, b) in coeffs.iter().zip(back.iter()) {
            assert!((a - b).abs() < 1e-12 * a.abs().max(1.0), "{a} vs {b}");
        }
    }

    /// Projected cube of the represented function, computed by triple
    /// convolution of complex exponential coefficients. Entirely independent
    /// of the collocation transform used by the drift.
    fn convolution_cube(coeffs: &[f64]) -> Vec<f64> {
        let j = coeffs.len();
        let max_freq = entry_frequency(j - 1) as i64;
        let offset = 3 * max_freq;
        let size = (2 * offset + 1) as usize;
        let mut c = vec![(0.0, 0.0); size];
        let idx = |m: i64| (m + offset) as usize;
        let s = 1.0 / std::f64::consts::SQRT_2;
        c[idx(0)].0 = coeffs[0];
        for (k, &u) in coeffs.iter().enumerate().skip(1) {
            let m = entry_frequency(k) as i64;
            if k % 2 == 1 {
                c[idx(m)].0 += u * s;
                c[idx(-m)].0 += u * s;
            } else {
                c[idx(m)].1 -= u * s;
                c[idx(-m)].1 += u * s;
            }
        }
        let convolve = |a: &[(f64, f64)], b: &[(f64, f64)]| -> Vec<(f64, f64)> {
            let mut out = vec![(0.0, 0.0); size];
            for m in -offset..=offset {
                let mut acc = (0.0, 0.0);
                for p in -offset..=offset {
                    let q = m - p;
                    if q < -offset || q > offset {
                        continue;
                    }
                    let (ar, ai) = a[idx(p)];
                    let (br, bi) = b[idx(q)];
                    acc.0 += ar * br - ai * bi;
                    acc.1 += ar * bi + ai * br;
                }
                out[idx(m)] = acc;
            }
            out
        };
        let square = convolve(&c, &c);
        let cube = convolve(&square, &c);
        let mut out = vec![0.0; j];
        out[0] = cube[idx(0)].0;
        for (k, slot) in out.iter_mut().enumerate().skip(1) {
            let m = entry_frequency(k) as i64;
            let (re, im) = cube[idx(m)];
            *slot = if k % 2 == 1 {
                std::f64::consts::SQRT_2 * re
            } else {
                -std::f64::consts::SQRT_2 * im
            };
        }
        out
    }

    #[test]
    fn collocation_cube_matches_convolution_oracle() {
        let cfg = GalerkinConfig {
            j_modes: 8,
            collocation: Some(32),
            ..GalerkinConfig::default()
        };
        let problem = build_allen_cahn(&cfg).unwrap();
        let lambda = linear_eigenvalues(&cfg);
        let mut rng = rand::rngs::StdRng::seed_from_u64(11);
        let mut f = vec![0.0; 8];
        for _ in 0..20 {
            let u: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            problem.drift_into(&u, &mut f);
            let oracle = convolution_cube(&u);
            for k in 0..8 {
                let cube_k = lambda[k] * u[k] - f[k];
                assert!(
                    (cube_k - oracle[k]).abs() < 1e-10,
                    "entry {k}: {cube_k} vs {oracle_k}",
                    oracle_k = oracle[k]
                );
            }
        }
    }

    #[test]
    fn noiseless_zero_state_is_an_equilibrium() {
        let cfg = GalerkinConfig {
            j_modes: 8,
            sigma: 0.0,
            t_end: 1.0,
            ..GalerkinConfig::default()
        };
        let mut problem = build_allen_cahn(&cfg).unwrap();
        problem.initial_state = vec![0.0; 8];
        let strategy = StrategyConfig::new(StrategyKind::FixedEm, 0.01, 1.0);
        let mut path = BrownianPath::new(3, 8);
        let trajectory = simulate(
            &problem,
            &strategy,
            &mut path,
            &SimulationOptions::default(),
        )
        .unwrap();
        assert!(trajectory.terminal_state.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn noiseless_constant_mode_follows_the_scalar_ode() {
        let cfg = GalerkinConfig {
            j_modes: 8,
            sigma: 0.0,
            ..GalerkinConfig::default()
        };
        let mut problem = build_allen_cahn(&cfg).unwrap();
        problem.initial_state = vec![0.0; 8];
        problem.initial_state[0] = 0.5;
        let strategy = StrategyConfig::new(StrategyKind::FixedEm, 1e-3, 1.0);
        let mut path = BrownianPath::new(9, 8);
        let trajectory = simulate(
            &problem,
            &strategy,
            &mut path,
            &SimulationOptions::default(),
        )
        .unwrap();

        // Scalar oracle for u' = u - u^3, integrated with fourth-order
        // Runge-Kutta at a step far below the discretisation error of the
        // trajectory under test.
        let mut u = 0.5_f64;
        let h = 1e-4;
        let rhs = |v: f64| v - v * v * v;
        for _ in 0..100_000 {
            let k1 = rhs(u);
            let k2 = rhs(u + 0.5 * h * k1);
            let k3 = rhs(u + 0.5 * h * k2);
            let k4 = rhs(u + h * k3);
            u += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        assert!((trajectory.terminal_state[0] - u).abs() < 1e-3);
        for v in &trajectory.terminal_state[1..] {
            assert!(v.abs() < 1e-12);
        }
    }
}
