//! Registry of test problems: drift, diffusion, optional analytic Jacobian,
//! initial data, horizon, and (where available) an exact solution evaluator.
//! Every problem is addressable by name with a flat parameter map on top of
//! published defaults.

use std::collections::BTreeMap;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::brownian::BrownianPath;
use crate::rng::uniform_open01;
use crate::{Error, Result};

/// Evaluates the drift `f(x)` into a caller buffer of length `dim`.
pub type DriftFn = Box<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
/// Applies the diffusion to a noise increment, `out = g(x) * dw`.
pub type DiffusionFn = Box<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;
/// Evaluates the drift Jacobian row-major into a buffer of length `dim * dim`.
pub type JacobianFn = Box<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
/// Evaluates the exact solution at time `t` on a given Wiener path, using
/// `n_quad` quadrature subintervals where an integral is involved.
pub type ExactFn = Box<dyn Fn(&mut BrownianPath, f64, usize) -> Vec<f64> + Send + Sync>;

/// A d-dimensional SDE `dX = f(X) dt + g(X) dW` with m driving components.
pub struct SdeProblem {
    /// Registry name.
    pub name: String,
    /// State dimension d.
    pub dim: usize,
    /// Noise dimension m.
    pub noise_dim: usize,
    /// Default simulation horizon T.
    pub horizon: f64,
    /// Initial state X(0).
    pub initial_state: Vec<f64>,
    /// False for stress problems whose diffusion violates the global
    /// Lipschitz assumption of the convergence theory.
    pub within_theory: bool,
    /// True when coefficients are redrawn per realisation from a sampler seed.
    pub randomized_coefficients: bool,
    drift: DriftFn,
    diffusion: DiffusionFn,
    jacobian: Option<JacobianFn>,
    exact: Option<ExactFn>,
}

impl SdeProblem {
    /// Assembles a problem from closures, for systems built outside the
    /// registry (custom test equations, spectral discretisations).
    pub fn custom(
        name: &str,
        dim: usize,
        noise_dim: usize,
        horizon: f64,
        initial_state: Vec<f64>,
        drift: DriftFn,
        diffusion: DiffusionFn,
        jacobian: Option<JacobianFn>,
    ) -> Self {
        assert!(dim > 0 && noise_dim > 0, "dimensions must be positive");
        assert_eq!(initial_state.len(), dim, "initial state has wrong length");
        Self {
            name: name.to_string(),
            dim,
            noise_dim,
            horizon,
            initial_state,
            within_theory: true,
            randomized_coefficients: false,
            drift,
            diffusion,
            jacobian,
            exact: None,
        }
    }

    /// Evaluates `f(x)` into `out`.
    pub fn drift_into(&self, x: &[f64], out: &mut [f64]) {
        (self.drift)(x, out);
    }

    /// Evaluates `g(x) * dw` into `out`.
    pub fn diffusion_apply(&self, x: &[f64], dw: &[f64], out: &mut [f64]) {
        (self.diffusion)(x, dw, out);
    }

    /// True when an analytic Jacobian is registered.
    pub fn has_analytic_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }

    /// Evaluates the drift Jacobian row-major into `out`, falling back to
    /// central finite differences when no analytic form is registered.
    pub fn jacobian_into(&self, x: &[f64], out: &mut [f64]) {
        match &self.jacobian {
            Some(jac) => jac(x, out),
            None => self.fd_jacobian_into(x, out),
        }
    }

    /// Central finite-difference Jacobian with step `max(1e-6, 1e-6 * |x|)`.
    pub fn fd_jacobian_into(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let h = (1e-6_f64).max(1e-6 * norm);
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        let mut fp = vec![0.0; d];
        let mut fm = vec![0.0; d];
        for j in 0..d {
            xp[j] = x[j] + h;
            xm[j] = x[j] - h;
            (self.drift)(&xp, &mut fp);
            (self.drift)(&xm, &mut fm);
            for i in 0..d {
                out[i * d + j] = (fp[i] - fm[i]) / (2.0 * h);
            }
            xp[j] = x[j];
            xm[j] = x[j];
        }
    }

    /// True when an exact pathwise solution is available.
    pub fn has_exact_solution(&self) -> bool {
        self.exact.is_some()
    }

    /// Evaluates the exact solution at `t` on `path` with `n_quad` quadrature
    /// subintervals. Panics if the problem has no exact solution; check
    /// [`Self::has_exact_solution`] first.
    pub fn exact_solution(&self, path: &mut BrownianPath, t: f64, n_quad: usize) -> Vec<f64> {
        let exact = self
            .exact
            .as_ref()
            .expect("problem has no exact solution evaluator");
        exact(path, t, n_quad)
    }
}

/// Flat parameter map with per-problem defaults plus a sampler seed for the
/// problems that redraw coefficients each realisation.
#[derive(Clone, Debug, Default)]
pub struct ProblemParams {
    values: BTreeMap<String, f64>,
    /// Seed for the per-realisation coefficient sampler (sir, lv).
    pub sampler_seed: u64,
}

impl ProblemParams {
    /// Empty parameter set: every problem uses its published defaults.
    pub fn new() -> Self {
        Self::default()
    }

    /// Sets one named parameter, replacing any previous value.
    pub fn set(&mut self, key: &str, value: f64) -> &mut Self {
        self.values.insert(key.to_string(), value);
        self
    }

    /// Builder-style [`Self::set`].
    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.set(key, value);
        self
    }

    /// Builder-style sampler seed.
    pub fn with_sampler_seed(mut self, seed: u64) -> Self {
        self.sampler_seed = seed;
        self
    }

    /// Value of `key` if explicitly set.
    pub fn get(&self, key: &str) -> Option<f64> {
        self.values.get(key).copied()
    }

    fn resolve(&self, name: &str, defaults: &[(&str, f64)]) -> Result<BTreeMap<String, f64>> {
        for key in self.values.keys() {
            if !defaults.iter().any(|(k, _)| k == key) {
                return Err(Error::UnknownParameter {
                    key: key.clone(),
                    context: name.to_string(),
                });
            }
        }
        let mut resolved = BTreeMap::new();
        for (key, default) in defaults {
            let value = self.values.get(*key).copied().unwrap_or(*default);
            if !value.is_finite() {
                return Err(Error::InvalidParameter {
                    key: key.to_string(),
                    value,
                    context: name.to_string(),
                    reason: "must be finite".to_string(),
                });
            }
            resolved.insert(key.to_string(), value);
        }
        Ok(resolved)
    }
}

/// All registered problem names.
pub fn registry_names() -> &'static [&'static str] {
    &[
        "sgle-mult",
        "sgle-add",
        "vdp",
        "langevin",
        "sir",
        "lv",
        "pk",
        "poly2d",
        "cir",
    ]
}

fn require_positive(name: &str, key: &str, value: f64) -> Result<()> {
    if value <= 0.0 {
        return Err(Error::InvalidParameter {
            key: key.to_string(),
            value,
            context: name.to_string(),
            reason: "must be positive".to_string(),
        });
    }
    Ok(())
}

/// Exact solution of the Ginzburg-Landau SDE with multiplicative noise,
///
/// `X(t) = x0 exp(eta t + sigma W(t)) / sqrt(1 + 2 x0^2 lambda I(t))`,
///
/// where `I(t) = integral of exp(2 eta s + 2 sigma W(s)) ds` over `[0, t]` is
/// approximated by the composite trapezoid rule on `n_quad` uniform
/// subintervals, sampling `W` through bridge queries on the given path.
pub fn sgle_exact(
    eta: f64,
    lambda: f64,
    sigma: f64,
    x0: f64,
    path: &mut BrownianPath,
    t: f64,
    n_quad: usize,
) -> f64 {
    assert!(n_quad >= 2, "need at least two quadrature subintervals");
    assert!(t >= 0.0, "exact solution queried at negative time");
    if t == 0.0 {
        return x0;
    }
    let dt = t / n_quad as f64;
    let mut w = [0.0];
    let mut integral = 0.0;
    let mut prev = 1.0;
    for i in 1..=n_quad {
        // Pin the last node to t exactly so the terminal sample is reused.
        let s = if i == n_quad { t } else { i as f64 * dt };
        path.sample_into(s, &mut w);
        let value = (2.0 * eta * s + 2.0 * sigma * w[0]).exp();
        integral += 0.5 * dt * (prev + value);
        prev = value;
    }
    x0 * (eta * t + sigma * w[0]).exp() / (1.0 + 2.0 * x0 * x0 * lambda * integral).sqrt()
}

fn build_sgle(params: &ProblemParams, multiplicative: bool) -> Result<SdeProblem> {
    let name = if multiplicative { "sgle-mult" } else { "sgle-add" };
    let defaults = [
        ("eta", 0.1),
        ("lambda", 2.0),
        ("sigma", 0.5),
        ("x0", 1.0),
        ("t_end", 2.0),
    ];
    let p = params.resolve(name, &defaults)?;
    let (eta, lambda, sigma, x0, t_end) =
        (p["eta"], p["lambda"], p["sigma"], p["x0"], p["t_end"]);
    require_positive(name, "lambda", lambda)?;
    require_positive(name, "t_end", t_end)?;

    let a = eta + 0.5 * sigma * sigma;
    let drift: DriftFn = Box::new(move |x, out| {
        out[0] = a * x[0] - lambda * x[0] * x[0] * x[0];
    });
    let jacobian: JacobianFn = Box::new(move |x, out| {
        out[0] = a - 3.0 * lambda * x[0] * x[0];
    });
    let diffusion: DiffusionFn = if multiplicative {
        Box::new(move |x, dw, out| out[0] = sigma * x[0] * dw[0])
    } else {
        Box::new(move |_x, dw, out| out[0] = sigma * dw[0])
    };
    let exact: Option<ExactFn> = if multiplicative {
        Some(Box::new(move |path, t, n_quad| {
            vec![sgle_exact(eta, lambda, sigma, x0, path, t, n_quad)]
        }))
    } else {
        None
    };

    Ok(SdeProblem {
        name: name.to_string(),
        dim: 1,
        noise_dim: 1,
        horizon: t_end,
        initial_state: vec![x0],
        within_theory: true,
        randomized_coefficients: false,
        drift,
        diffusion,
        jacobian: Some(jacobian),
        exact,
    })
}

fn build_vdp(params: &ProblemParams) -> Result<SdeProblem> {
    let defaults = [("x0_1", 2.0), ("x0_2", 0.0), ("t_end", 100.0)];
    let p = params.resolve("vdp", &defaults)?;
    require_positive("vdp", "t_end", p["t_end"])?;

    let drift: DriftFn = Box::new(|x, out| {
        out[0] = x[1];
        out[1] = (1.0 - x[0] * x[0]) * x[1] - x[0];
    });
    let jacobian: JacobianFn = Box::new(|x, out| {
        out[0] = 0.0;
        out[1] = 1.0;
        out[2] = -2.0 * x[0] * x[1] - 1.0;
        out[3] = 1.0 - x[0] * x[0];
    });
    let diffusion: DiffusionFn = Box::new(|_x, dw, out| {
        out[0] = 0.0;
        out[1] = dw[0];
    });

    Ok(SdeProblem {
        name: "vdp".to_string(),
        dim: 2,
        noise_dim: 1,
        horizon: p["t_end"],
        initial_state: vec![p["x0_1"], p["x0_2"]],
        within_theory: true,
        randomized_coefficients: false,
        drift,
        diffusion,
        jacobian: Some(jacobian),
        exact: None,
    })
}

fn build_langevin(params: &ProblemParams) -> Result<SdeProblem> {
    let defaults = [("x0_1", 1.0), ("x0_2", 1.0), ("t_end", 20.0)];
    let p = params.resolve("langevin", &defaults)?;
    require_positive("langevin", "t_end", p["t_end"])?;

    fn phi(x: f64) -> f64 {
        4.0 * (5.0 * x * x + 1.0) / (5.0 * (x * x + 1.0))
    }
    fn phi_prime(x: f64) -> f64 {
        32.0 * x / (5.0 * (x * x + 1.0) * (x * x + 1.0))
    }

    let drift: DriftFn = Box::new(|x, out| {
        let p = phi(x[0]);
        out[0] = x[1];
        out[1] = -0.5 * x[1] * p * p;
    });
    let jacobian: JacobianFn = Box::new(|x, out| {
        let p = phi(x[0]);
        out[0] = 0.0;
        out[1] = 1.0;
        out[2] = -x[1] * p * phi_prime(x[0]);
        out[3] = -0.5 * p * p;
    });
    let diffusion: DiffusionFn = Box::new(|x, dw, out| {
        out[0] = 0.0;
        out[1] = phi(x[0]) * dw[0];
    });

    Ok(SdeProblem {
        name: "langevin".to_string(),
        dim: 2,
        noise_dim: 1,
        horizon: p["t_end"],
        initial_state: vec![p["x0_1"], p["x0_2"]],
        within_theory: true,
        randomized_coefficients: false,
        drift,
        diffusion,
        jacobian: Some(jacobian),
        exact: None,
    })
}

/// Draws `n` uniforms on (0, hi) from a dedicated coefficient stream.
fn sample_uniform_coefficients(seed: u64, hi: f64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    (0..n).map(|_| hi * uniform_open01(rng.next_u64())).collect()
}

fn build_sir(params: &ProblemParams) -> Result<SdeProblem> {
    let defaults = [
        ("x0_1", 0.5),
        ("x0_2", 0.3),
        ("x0_3", 0.2),
        ("t_end", 2.0),
    ];
    let p = params.resolve("sir", &defaults)?;
    require_positive("sir", "t_end", p["t_end"])?;

    // Coefficient draw order: alpha, beta, gamma, delta, each U[0, 10].
    let c = sample_uniform_coefficients(params.sampler_seed, 10.0, 4);
    let (alpha, beta, gamma, delta) = (c[0], c[1], c[2], c[3]);

    let drift: DriftFn = Box::new(move |x, out| {
        out[0] = -alpha * x[0] * x[1] - delta * x[0] + delta;
        out[1] = alpha * x[0] * x[1] - (gamma + delta) * x[1];
        out[2] = gamma * x[1] - delta * x[2];
    });
    let jacobian: JacobianFn = Box::new(move |x, out| {
        out[0] = -alpha * x[1] - delta;
        out[1] = -alpha * x[0];
        out[2] = 0.0;
        out[3] = alpha * x[1];
        out[4] = alpha * x[0] - gamma - delta;
        out[5] = 0.0;
        out[6] = 0.0;
        out[7] = gamma;
        out[8] = -delta;
    });
    let diffusion: DiffusionFn = Box::new(move |x, dw, out| {
        let coupling = beta * x[0] * x[1];
        out[0] = -coupling * dw[0];
        out[1] = coupling * dw[1];
        out[2] = 0.0;
    });

    Ok(SdeProblem {
        name: "sir".to_string(),
        dim: 3,
        noise_dim: 2,
        horizon: p["t_end"],
        initial_state: vec![p["x0_1"], p["x0_2"], p["x0_3"]],
        within_theory: true,
        randomized_coefficients: true,
        drift,
        diffusion,
        jacobian: Some(jacobian),
        exact: None,
    })
}

fn build_lv(params: &ProblemParams) -> Result<SdeProblem> {
    let defaults = [
        ("x0_1", 5.0),
        ("x0_2", 10.0),
        ("sigma1", 0.01),
        ("sigma2", 0.01),
        ("t_end", 20.0),
    ];
    let p = params.resolve("lv", &defaults)?;
    require_positive("lv", "t_end", p["t_end"])?;
    let (sigma1, sigma2) = (p["sigma1"], p["sigma2"]);

    // Coefficient draw order: alpha, beta, gamma, delta, each U[0, 1].
    let c = sample_uniform_coefficients(params.sampler_seed, 1.0, 4);
    let (alpha, beta, gamma, delta) = (c[0], c[1], c[2], c[3]);

    let drift: DriftFn = Box::new(move |x, out| {
        out[0] = x[0] * (alpha - beta * x[1]);
        out[1] = x[1] * (gamma * x[0] - delta);
    });
    let jacobian: JacobianFn = Box::new(move |x, out| {
        out[0] = alpha - beta * x[1];
        out[1] = -beta * x[0];
        out[2] = gamma * x[1];
        out[3] = gamma * x[0] - delta;
    });
    let diffusion: DiffusionFn = Box::new(move |x, dw, out| {
        out[0] = sigma1 * x[0] * dw[0];
        out[1] = sigma2 * x[1] * dw[1];
    });

    Ok(SdeProblem {
        name: "lv".to_string(),
        dim: 2,
        noise_dim: 2,
        horizon: p["t_end"],
        initial_state: vec![p["x0_1"], p["x0_2"]],
        within_theory: true,
        randomized_coefficients: true,
        drift,
        diffusion,
        jacobian: Some(jacobian),
        exact: None,
    })
}

fn build_pk(params: &ProblemParams) -> Result<SdeProblem> {
    let defaults = [("x0", 0.5), ("t_end", 100.0)];
    let p = params.resolve("pk", &defaults)?;
    require_positive("pk", "t_end", p["t_end"])?;

    let drift: DriftFn = Box::new(|x, out| {
        let v = x[0];
        out[0] = 0.5 - v + v * (1.0 - v) + 0.5 * v * (1.0 - v) * (1.0 - 2.0 * v);
    });
    let jacobian: JacobianFn = Box::new(|x, out| {
        let v = x[0];
        let one_minus_2v = 1.0 - 2.0 * v;
        out[0] = -1.0 + one_minus_2v + 0.5 * (one_minus_2v * one_minus_2v - 2.0 * v * (1.0 - v));
    });
    let diffusion: DiffusionFn = Box::new(|x, dw, out| {
        out[0] = x[0] * (1.0 - x[0]) * dw[0];
    });

    Ok(SdeProblem {
        name: "pk".to_string(),
        dim: 1,
        noise_dim: 1,
        horizon: p["t_end"],
        initial_state: vec![p["x0"]],
        within_theory: true,
        randomized_coefficients: false,
        drift,
        diffusion,
        jacobian: Some(jacobian),
        exact: None,
    })
}

fn build_poly2d(params: &ProblemParams) -> Result<SdeProblem> {
    let defaults = [("nu", 2.0), ("x0_1", -1.0), ("x0_2", -1.0), ("t_end", 10.0)];
    let p = params.resolve("poly2d", &defaults)?;
    require_positive("poly2d", "t_end", p["t_end"])?;
    require_positive("poly2d", "nu", p["nu"])?;
    let nu = p["nu"];

    const A: [[f64; 2]; 2] = [[0.807019, 0.589848], [0.080506, 0.477723]];
    const B: [[f64; 2]; 2] = [[0.99133, 0.60672], [0.29234, 0.96434]];
    const G: f64 = 0.5;

    let drift: DriftFn = Box::new(move |x, out| {
        let norm_pow = (x[0] * x[0] + x[1] * x[1]).sqrt().powf(nu);
        for i in 0..2 {
            let ax = A[i][0] * x[0] + A[i][1] * x[1];
            let bx = B[i][0] * x[0] + B[i][1] * x[1];
            out[i] = ax - norm_pow * bx;
        }
    });
    let jacobian: JacobianFn = Box::new(move |x, out| {
        let norm = (x[0] * x[0] + x[1] * x[1]).sqrt();
        let norm_pow = norm.powf(nu);
        let scale = if norm > 0.0 {
            nu * norm.powf(nu - 2.0)
        } else {
            0.0
        };
        for i in 0..2 {
            let bx = B[i][0] * x[0] + B[i][1] * x[1];
            for j in 0..2 {
                out[i * 2 + j] = A[i][j] - norm_pow * B[i][j] - scale * bx * x[j];
            }
        }
    });
    let diffusion: DiffusionFn = Box::new(|_x, dw, out| {
        out[0] = G * dw[0];
        out[1] = G * dw[1];
    });

    Ok(SdeProblem {
        name: "poly2d".to_string(),
        dim: 2,
        noise_dim: 2,
        horizon: p["t_end"],
        initial_state: vec![p["x0_1"], p["x0_2"]],
        within_theory: true,
        randomized_coefficients: false,
        drift,
        diffusion,
        jacobian: Some(jacobian),
        exact: None,
    })
}

fn build_cir(params: &ProblemParams) -> Result<SdeProblem> {
    let defaults = [
        ("kappa", 0.1),
        ("theta", 0.5),
        ("sigma", 0.5),
        ("x0", 1.0),
        ("t_end", 200.0),
    ];
    let p = params.resolve("cir", &defaults)?;
    require_positive("cir", "t_end", p["t_end"])?;
    let (kappa, theta, sigma) = (p["kappa"], p["theta"], p["sigma"]);

    let drift: DriftFn = Box::new(move |x, out| {
        out[0] = kappa * (theta - x[0]);
    });
    let jacobian: JacobianFn = Box::new(move |_x, out| {
        out[0] = -kappa;
    });
    let diffusion: DiffusionFn = Box::new(move |x, dw, out| {
        out[0] = sigma * x[0].abs().sqrt() * dw[0];
    });

    Ok(SdeProblem {
        name: "cir".to_string(),
        dim: 1,
        noise_dim: 1,
        horizon: p["t_end"],
        initial_state: vec![p["x0"]],
        within_theory: false,
        randomized_coefficients: false,
        drift,
        diffusion,
        jacobian: Some(jacobian),
        exact: None,
    })
}

/// Builds a registry problem by name with the given parameter overrides.
///
/// For the randomized-coefficient problems (sir, lv) the coefficients are
/// drawn once from `params.sampler_seed`; rebuild with a fresh seed to get a
/// new realisation of the coefficients.
pub fn make_problem(name: &str, params: &ProblemParams) -> Result<SdeProblem> {
    match name {
        "sgle-mult" => build_sgle(params, true),
        "sgle-add" => build_sgle(params, false),
        "vdp" => build_vdp(params),
        "langevin" => build_langevin(params),
        "sir" => build_sir(params),
        "lv" => build_lv(params),
        "pk" => build_pk(params),
        "poly2d" => build_poly2d(params),
        "cir" => build_cir(params),
        other => Err(Error::UnknownProblem {
            name: other.to_string(),
            valid: registry_names().join(", "),
        }),
    }
}
