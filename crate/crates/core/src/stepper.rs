//! Backward Euler time stepping for `∂_t ψ(w) = -(-Δ)^s w` with lumped mass.
//!
//! Each step minimizes the strictly convex energy
//! `E(w) = Σ M_i Ψ(w_i) - Σ M_i ψ(w_prev,i) w_i + (τ/2) wᵀ A w`
//! by Newton's method with backtracking on `E`.

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::assembly::NonlocalSystem;
use crate::error::{Error, Result};
use crate::mesh::Mesh;

/// `ψ(y) = |y|^{1/m - 1} y`.
#[inline]
pub fn psi(y: f64, m: f64) -> f64 {
    if m == 1.0 {
        return y;
    }
    y.signum() * y.abs().powf(1.0 / m)
}

/// Inverse of [`psi`], `|y|^{m - 1} y`.
#[inline]
pub fn psi_inv(y: f64, m: f64) -> f64 {
    if m == 1.0 {
        return y;
    }
    if y == 0.0 {
        0.0
    } else {
        y.signum() * y.abs().powf(m)
    }
}

/// `Ψ(y) = m/(m+1) |y|^{(m+1)/m}`, the convex antiderivative of [`psi`].
#[inline]
pub fn psi_antiderivative(y: f64, m: f64) -> f64 {
    m / (m + 1.0) * y.abs().powf((m + 1.0) / m)
}

/// Smallest magnitude at which `ψ'` is evaluated when it is singular at 0.
const PSI_PRIME_FLOOR: f64 = 1e-14;

/// `ψ'(y) = |y|^{1/m - 1} / m`. Zero at the origin for `m < 1`; for `m > 1`
/// the argument is clamped away from zero.
#[inline]
pub fn psi_derivative(y: f64, m: f64) -> f64 {
    let e = 1.0 / m - 1.0;
    if e == 0.0 {
        return 1.0;
    }
    let a = y.abs();
    if e > 0.0 {
        if a == 0.0 {
            0.0
        } else {
            a.powf(e) / m
        }
    } else {
        a.max(PSI_PRIME_FLOOR).powf(e) / m
    }
}

/// `Ψ(w + d) - Ψ(w) - ψ(w) d`, accurate when `d` is small relative to `w`.
fn bregman(w: f64, d: f64, m: f64) -> f64 {
    let p = 1.0 + 1.0 / m;
    if w != 0.0 && d.abs() < 0.1 * w.abs() {
        // |w|^p/p * Σ_{k>=2} binom(p, k) t^k with t = d/w
        let t = d / w;
        let mut coef = p * (p - 1.0) / 2.0;
        let mut tk = t * t;
        let mut sum = 0.0;
        for k in 2..60 {
            let term = coef * tk;
            sum += term;
            if term.abs() <= 1e-18 * sum.abs() {
                break;
            }
            coef *= (p - k as f64) / (k as f64 + 1.0);
            tk *= t;
        }
        w.abs().powf(p) / p * sum
    } else {
        let v = psi_antiderivative(w + d, m) - psi_antiderivative(w, m) - psi(w, m) * d;
        v.max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepConfig {
    pub m: f64,
    pub tau: f64,
    pub n_steps: usize,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub line_search_beta: f64,
}

impl StepConfig {
    pub const DEFAULT_NEWTON_TOL: f64 = 1e-10;
    pub const DEFAULT_NEWTON_MAX_ITER: usize = 100;
    pub const DEFAULT_LINE_SEARCH_BETA: f64 = 0.5;

    pub fn new(m: f64, tau: f64, n_steps: usize) -> Result<Self> {
        let cfg = Self {
            m,
            tau,
            n_steps,
            newton_tol: Self::DEFAULT_NEWTON_TOL,
            newton_max_iter: Self::DEFAULT_NEWTON_MAX_ITER,
            line_search_beta: Self::DEFAULT_LINE_SEARCH_BETA,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidInput(what.to_string()));
        if !(self.m > 0.0 && self.m.is_finite()) {
            return bad("m must be positive");
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad("tau must be positive");
        }
        if !(self.newton_tol > 0.0) {
            return bad("newton_tol must be positive");
        }
        if self.newton_max_iter == 0 {
            return bad("newton_max_iter must be at least 1");
        }
        if !(self.line_search_beta > 0.0 && self.line_search_beta < 1.0) {
            return bad("line_search_beta must lie in (0, 1)");
        }
        Ok(())
    }

    pub fn final_time(&self) -> f64 {
        self.n_steps as f64 * self.tau
    }
}

/// Record of one Newton solve.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepDiagnostics {
    pub iterations: usize,
    pub residual: f64,
    /// Stopping threshold is `newton_tol * scale`.
    pub scale: f64,
    /// Energy at the initial guess and after every accepted iterate.
    pub energies: Vec<f64>,
    /// `E(w_{k+1}) - E(w_k)` for each accepted iterate, evaluated without
    /// cancellation between the two absolute energies.
    pub decrements: Vec<f64>,
    /// Accepted step lengths.
    pub step_lengths: Vec<f64>,
}

impl StepDiagnostics {
    pub fn strictly_decreasing(&self) -> bool {
        self.decrements.iter().all(|&d| d < 0.0)
    }
}

/// `Σ M_i Ψ(w_i) - bᵀw + (c/2) wᵀ A w` with `b` a fixed load.
struct ConvexEnergy<'a> {
    mass: &'a DVector<f64>,
    stiffness: &'a DMatrix<f64>,
    load: DVector<f64>,
    weight: f64,
    m: f64,
}

impl ConvexEnergy<'_> {
    fn value(&self, w: &DVector<f64>, aw: &DVector<f64>) -> f64 {
        let mut e = 0.0;
        for i in 0..w.len() {
            e += self.mass[i] * psi_antiderivative(w[i], self.m) - self.load[i] * w[i];
        }
        e + 0.5 * self.weight * w.dot(aw)
    }

    fn gradient(&self, w: &DVector<f64>, aw: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(w.len(), |i, _| {
            self.mass[i] * psi(w[i], self.m) - self.load[i] + self.weight * aw[i]
        })
    }

    /// `E(w + d) - E(w)` given the gradient at `w` and `A d`.
    fn difference(&self, w: &DVector<f64>, d: &DVector<f64>, grad: &DVector<f64>, ad: &DVector<f64>) -> f64 {
        let mut sep = 0.0;
        for i in 0..w.len() {
            sep += self.mass[i] * bregman(w[i], d[i], self.m);
        }
        sep + grad.dot(d) + 0.5 * self.weight * d.dot(ad)
    }

    fn minimize(
        &self,
        guess: DVector<f64>,
        tol: f64,
        max_iter: usize,
        beta: f64,
    ) -> Result<(DVector<f64>, StepDiagnostics)> {
        let n = guess.len();
        let scaled = self.stiffness * self.weight;
        let scale = self.load.amax().max(1.0);
        let mut w = guess;
        let mut aw = self.stiffness * &w;
        let mut diag = StepDiagnostics {
            scale,
            ..Default::default()
        };
        let e0 = self.value(&w, &aw);
        if !e0.is_finite() {
            return Err(Error::NonFiniteEnergy);
        }
        diag.energies.push(e0);

        for it in 0..=max_iter {
            let grad = self.gradient(&w, &aw);
            let res = grad.amax();
            diag.residual = res;
            diag.iterations = it;
            if !res.is_finite() {
                return Err(Error::NonFiniteEnergy);
            }
            if res <= tol * scale {
                return Ok((w, diag));
            }
            if it == max_iter {
                break;
            }
            let mut jac = scaled.clone();
            for i in 0..n {
                jac[(i, i)] += self.mass[i] * psi_derivative(w[i], self.m);
            }
            let chol = Cholesky::new(jac).ok_or(Error::NotPositiveDefinite)?;
            let d = -chol.solve(&grad);
            let ad = self.stiffness * &d;
            let slope = grad.dot(&d);

            let mut alpha = 1.0;
            let accepted = loop {
                let step = &d * alpha;
                let astep = &ad * alpha;
                let delta = self.difference(&w, &step, &grad, &astep);
                if delta.is_finite() && delta < 0.0 && delta <= 1e-4 * alpha * slope {
                    break Some((step, delta));
                }
                alpha *= beta;
                if alpha < 1e-30 {
                    break None;
                }
            };
            let Some((step, delta)) = accepted else {
                break;
            };
            w += step;
            aw = self.stiffness * &w;
            diag.decrements.push(delta);
            diag.step_lengths.push(alpha);
            diag.energies.push(self.value(&w, &aw));
        }
        Err(Error::NewtonDiverged {
            iterations: diag.iterations,
            residual: diag.residual,
        })
    }
}

fn check_len(v: &DVector<f64>, sys: &NonlocalSystem) -> Result<()> {
    if v.len() != sys.n_free() {
        return Err(Error::DimensionMismatch {
            expected: sys.n_free(),
            got: v.len(),
        });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("coefficient vector is not finite".into()));
    }
    Ok(())
}

/// Gradient of the step energy, `M∘(ψ(w) - ψ(w_prev)) + τ A w`.
pub fn step_residual(w: &DVector<f64>, w_prev: &DVector<f64>, sys: &NonlocalSystem, cfg: &StepConfig) -> DVector<f64> {
    step_energy(w_prev, sys, cfg).gradient(w, &(&sys.stiffness * w))
}

/// Value of the step energy at `w`.
pub fn step_energy_value(w: &DVector<f64>, w_prev: &DVector<f64>, sys: &NonlocalSystem, cfg: &StepConfig) -> f64 {
    step_energy(w_prev, sys, cfg).value(w, &(&sys.stiffness * w))
}

fn step_energy<'a>(w_prev: &DVector<f64>, sys: &'a NonlocalSystem, cfg: &StepConfig) -> ConvexEnergy<'a> {
    let load = DVector::from_fn(w_prev.len(), |i, _| sys.lumped_mass[i] * psi(w_prev[i], cfg.m));
    ConvexEnergy {
        mass: &sys.lumped_mass,
        stiffness: &sys.stiffness,
        load,
        weight: cfg.tau,
        m: cfg.m,
    }
}

/// One backward Euler step started from `w_prev`.
pub fn backward_euler_step(
    w_prev: &DVector<f64>,
    sys: &NonlocalSystem,
    cfg: &StepConfig,
) -> Result<(DVector<f64>, StepDiagnostics)> {
    backward_euler_step_from(w_prev, w_prev.clone(), sys, cfg)
}

/// One backward Euler step with an explicit initial Newton guess.
pub fn backward_euler_step_from(
    w_prev: &DVector<f64>,
    guess: DVector<f64>,
    sys: &NonlocalSystem,
    cfg: &StepConfig,
) -> Result<(DVector<f64>, StepDiagnostics)> {
    cfg.validate()?;
    check_len(w_prev, sys)?;
    check_len(&guess, sys)?;
    step_energy(w_prev, sys, cfg).minimize(guess, cfg.newton_tol, cfg.newton_max_iter, cfg.line_search_beta)
}

/// Solves `M∘ψ(V) + A V = M∘f` for the lumped elliptic problem.
pub fn elliptic_solve(f_values: &DVector<f64>, sys: &NonlocalSystem, m: f64, tol: f64) -> Result<DVector<f64>> {
    elliptic_solve_with_diagnostics(f_values, sys, m, tol).map(|(v, _)| v)
}

pub fn elliptic_solve_with_diagnostics(
    f_values: &DVector<f64>,
    sys: &NonlocalSystem,
    m: f64,
    tol: f64,
) -> Result<(DVector<f64>, StepDiagnostics)> {
    if !(m > 0.0) || !(tol > 0.0) {
        return Err(Error::InvalidInput("m and tol must be positive".into()));
    }
    check_len(f_values, sys)?;
    let energy = ConvexEnergy {
        mass: &sys.lumped_mass,
        stiffness: &sys.stiffness,
        load: sys.lumped_mass.component_mul(f_values),
        weight: 1.0,
        m,
    };
    let guess = DVector::zeros(f_values.len());
    energy.minimize(
        guess,
        tol,
        StepConfig::DEFAULT_NEWTON_MAX_ITER,
        StepConfig::DEFAULT_LINE_SEARCH_BETA,
    )
}

/// Which variable the initial nodal values describe.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialValues {
    /// Values of `w_0 = |u_0|^{m-1} u_0`.
    W(Vec<f64>),
    /// Values of `u_0`.
    U(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    mesh: Arc<Mesh>,
    m: f64,
    tau: f64,
    times: Vec<f64>,
    steps: Vec<DVector<f64>>,
    diagnostics: Vec<StepDiagnostics>,
}

/// Both sides of the discrete energy inequality
/// `Σ M|W_M|^p/(m+1) + τ Σ_n W_nᵀ A W_n <= Σ M|W_0|^p/(m+1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityCheck {
    pub left: f64,
    pub right: f64,
}

impl StabilityCheck {
    pub fn slack(&self) -> f64 {
        self.right - self.left
    }

    pub fn holds(&self, relative: f64) -> bool {
        self.slack() >= -relative * self.right.abs()
    }
}

impl Trajectory {
    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn mesh_arc(&self) -> Arc<Mesh> {
        Arc::clone(&self.mesh)
    }

    pub fn m(&self) -> f64 {
        self.m
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn n_steps(&self) -> usize {
        self.steps.len() - 1
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn steps(&self) -> &[DVector<f64>] {
        &self.steps
    }

    pub fn step(&self, n: usize) -> &DVector<f64> {
        &self.steps[n]
    }

    /// Diagnostics of steps `1..=M`.
    pub fn diagnostics(&self) -> &[StepDiagnostics] {
        &self.diagnostics
    }

    /// Index `n` with `t ∈ (t_{n-1}, t_n]`; `0` for `t <= 0`.
    pub fn index_at(&self, t: f64) -> usize {
        if t <= 0.0 {
            return 0;
        }
        let n = (t / self.tau - 1e-9).ceil() as usize;
        n.min(self.n_steps())
    }

    /// Piecewise-constant-in-time reconstruction.
    pub fn at_time(&self, t: f64) -> &DVector<f64> {
        &self.steps[self.index_at(t)]
    }

    pub fn stability_check(&self, sys: &NonlocalSystem) -> StabilityCheck {
        let p = (self.m + 1.0) / self.m;
        let mass = &sys.lumped_mass;
        let lp = |w: &DVector<f64>| -> f64 {
            w.iter().zip(mass.iter()).map(|(x, mi)| mi * x.abs().powf(p)).sum::<f64>() / (self.m + 1.0)
        };
        let dissipation: f64 = self.steps[1..].iter().map(|w| sys.energy(w)).sum();
        StabilityCheck {
            left: lp(self.steps.last().unwrap()) + self.tau * dissipation,
            right: lp(&self.steps[0]),
        }
    }

    /// CSV with header `time,node_index,coordinate,W,U`, one row per free
    /// node and time level.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRAJECTORY_HEADER);
        out.push('\n');
        for (t, w) in self.times.iter().zip(&self.steps) {
            out.push_str(&csv_slice(&self.mesh, *t, w, self.m));
        }
        out
    }
}

pub const TRAJECTORY_HEADER: &str = "time,node_index,coordinate,W,U";

/// Trajectory CSV rows of one time level.
pub fn csv_slice(mesh: &Mesh, t: f64, w: &DVector<f64>, m: f64) -> String {
    let mut out = String::new();
    let nodes = mesh.nodes();
    for (k, &node) in mesh.free_nodes().iter().enumerate() {
        let _ = writeln!(out, "{t:?},{node},{:?},{:?},{:?}", nodes[node], w[k], psi(w[k], m));
    }
    out
}

/// Runs `cfg.n_steps` backward Euler steps from nodal initial values over
/// the free nodes.
pub fn run_simulation(initial: &InitialValues, sys: &NonlocalSystem, cfg: &StepConfig) -> Result<Trajectory> {
    run_simulation_observed(initial, sys, cfg, |_, _, _| Ok(()))
}

/// As [`run_simulation`], calling `observe(n, t_n, W_n)` for every time
/// level as soon as it is available.
pub fn run_simulation_observed(
    initial: &InitialValues,
    sys: &NonlocalSystem,
    cfg: &StepConfig,
    mut observe: impl FnMut(usize, f64, &DVector<f64>) -> Result<()>,
) -> Result<Trajectory> {
    cfg.validate()?;
    let w0: Vec<f64> = match initial {
        InitialValues::W(w) => w.clone(),
        InitialValues::U(u) => u.iter().map(|&x| psi_inv(x, cfg.m)).collect(),
    };
    let w0 = DVector::from_vec(w0);
    check_len(&w0, sys)?;
    observe(0, 0.0, &w0)?;
    let mut steps = vec![w0];
    let mut times = vec![0.0];
    let mut diagnostics = Vec::with_capacity(cfg.n_steps);
    for n in 1..=cfg.n_steps {
        let (w, d) = backward_euler_step(&steps[n - 1], sys, cfg).map_err(|e| Error::StepFailed {
            step: n,
            source: Box::new(e),
        })?;
        let t = n as f64 * cfg.tau;
        observe(n, t, &w)?;
        steps.push(w);
        times.push(t);
        diagnostics.push(d);
    }
    Ok(Trajectory {
        mesh: sys.mesh_arc(),
        m: cfg.m,
        tau: cfg.tau,
        times,
        steps,
        diagnostics,
    })
}
