//! Error measures for discrete solutions compared against finer reference
//! solutions on nested meshes, and convergence-order estimates.

use std::fmt::Write as _;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::assembly::{assemble_load, NonlocalSystem};
use crate::error::{Error, Result};
use crate::mesh::{prolongate_free, prolongation_matrix, restrict_nested_free, Mesh};
use crate::quadrature::{gauss_legendre, Rule};
use crate::stepper::{psi, Trajectory};

/// Gauss points per element used by the error integrals unless told otherwise.
pub const DEFAULT_ERROR_QUADRATURE: usize = 8;

/// `(|a| + |b|)^{p-2} b^2`, with the value `0` where both vanish.
#[inline]
fn quasi_integrand(a: f64, b: f64, p: f64) -> f64 {
    let s = a.abs() + b.abs();
    if s == 0.0 {
        0.0
    } else {
        s.powf(p - 2.0) * b * b
    }
}

fn check_quasi_args(p: f64, quad_order: usize) -> Result<()> {
    if !(p > 1.0) {
        return Err(Error::InvalidInput(format!("quasi-norm exponent must exceed 1, got {p}")));
    }
    if quad_order == 0 {
        return Err(Error::InvalidInput("quadrature order must be positive".into()));
    }
    Ok(())
}

/// Elementwise Gauss quadrature of `g` over the solution domain.
pub fn integrate_over_domain(mesh: &Mesh, quad_order: usize, g: impl Fn(f64) -> f64) -> f64 {
    let rule = gauss_legendre(quad_order);
    let (a, b) = mesh.domain();
    let mut total = 0.0;
    for e in 0..mesh.n_elements() {
        let (xl, xr) = mesh.element(e);
        if xl < a || xr > b {
            continue;
        }
        total += rule.mapped(xl, xr).map(|(x, w)| w * g(x)).sum::<f64>();
    }
    total
}

/// `‖v2‖_{(v1, p)} = (∫ (|v1| + |v2|)^{p-2} |v2|^2)^{1/2}` over the domain.
pub fn quasi_norm(
    v1: impl Fn(f64) -> f64,
    v2: impl Fn(f64) -> f64,
    p: f64,
    mesh: &Mesh,
    quad_order: usize,
) -> Result<f64> {
    check_quasi_args(p, quad_order)?;
    Ok(integrate_over_domain(mesh, quad_order, |x| quasi_integrand(v1(x), v2(x), p)).sqrt())
}

/// `∫ g(a(x), b(x)) dx` for two P1 functions given by free coefficients.
pub fn integrate_pair(mesh: &Mesh, a: &[f64], b: &[f64], rule: &Rule, g: impl Fn(f64, f64) -> f64) -> f64 {
    let na = mesh.expand_free(a);
    let nb = mesh.expand_free(b);
    let (lo, hi) = mesh.domain();
    let mut total = 0.0;
    for e in 0..mesh.n_elements() {
        let (xl, xr) = mesh.element(e);
        if xl < lo || xr > hi {
            continue;
        }
        let len = xr - xl;
        let (a0, a1, b0, b1) = (na[e], na[e + 1], nb[e], nb[e + 1]);
        if a0 == 0.0 && a1 == 0.0 && b0 == 0.0 && b1 == 0.0 && g(0.0, 0.0) == 0.0 {
            continue;
        }
        for (&t, &w) in rule.nodes.iter().zip(&rule.weights) {
            total += w * len * g(a0 + (a1 - a0) * t, b0 + (b1 - b0) * t);
        }
    }
    total
}

/// Squared quasi-norm of two P1 functions given by free coefficients.
pub fn quasi_norm_sq_p1(v1: &[f64], v2: &[f64], p: f64, mesh: &Mesh, rule: &Rule) -> f64 {
    integrate_pair(mesh, v1, v2, rule, |a, b| quasi_integrand(a, b, p))
}

/// Exact `‖v‖²_{L²}` of a P1 function.
pub fn l2_norm_sq_p1(coeffs: &[f64], mesh: &Mesh) -> f64 {
    let nodal = mesh.expand_free(coeffs);
    (0..mesh.n_elements())
        .map(|e| {
            let (a, b) = (nodal[e], nodal[e + 1]);
            mesh.element_length(e) / 3.0 * (a * a + a * b + b * b)
        })
        .sum()
}

fn check_len(v: &DVector<f64>, n: usize) -> Result<()> {
    if v.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: v.len(),
        });
    }
    Ok(())
}

/// Gagliardo seminorm squared of a member of `S_h`, `vᵀ A v`.
pub fn hs_seminorm_sq(coeffs: &DVector<f64>, sys: &NonlocalSystem) -> Result<f64> {
    check_len(coeffs, sys.n_free())?;
    Ok(sys.energy(coeffs))
}

/// Galerkin projection onto `S_h` in the bilinear form: solves `A p = b`
/// with `b_i = a(v, φ_i)`.
pub fn hs_projection(
    v: &(dyn Fn(f64) -> f64 + Sync),
    sys: &NonlocalSystem,
    quad_order: usize,
) -> Result<DVector<f64>> {
    let load = assemble_load(sys.mesh(), sys.kernel(), quad_order, v)?;
    Ok(sys.cholesky()?.solve(&load))
}

/// Projection from a fine space onto a nested coarse space in the fine
/// bilinear form, `(Pᵀ A P)^{-1} Pᵀ A v`, exact for P1 inputs.
pub struct NestedProjector {
    prolongation: DMatrix<f64>,
    pt_a: DMatrix<f64>,
    coarse: Cholesky<f64, Dyn>,
}

impl NestedProjector {
    pub fn new(fine_sys: &NonlocalSystem, coarse: &Mesh) -> Result<Self> {
        let prolongation = prolongation_matrix(coarse, fine_sys.mesh())?;
        let pt_a = prolongation.transpose() * &fine_sys.stiffness;
        let galerkin = &pt_a * &prolongation;
        let coarse = Cholesky::new(galerkin).ok_or(Error::NotPositiveDefinite)?;
        Ok(Self {
            prolongation,
            pt_a,
            coarse,
        })
    }

    /// Coarse coefficients of the projection.
    pub fn project(&self, fine: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(fine, self.prolongation.nrows())?;
        Ok(self.coarse.solve(&(&self.pt_a * fine)))
    }

    /// The projection expressed in the fine space.
    pub fn project_fine(&self, fine: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(&self.prolongation * self.project(fine)?)
    }
}

/// `eoc_k = log(e_k / e_{k+1}) / log(s_k / s_{k+1})`.
pub fn estimate_eoc(errors: &[f64], steps: &[f64]) -> Result<Vec<f64>> {
    if errors.len() != steps.len() || errors.len() < 2 {
        return Err(Error::InvalidInput(
            "need at least two errors and as many step sizes".into(),
        ));
    }
    if errors.iter().chain(steps).any(|&x| !(x > 0.0 && x.is_finite())) {
        return Err(Error::InvalidInput("errors and step sizes must be positive".into()));
    }
    if steps.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidInput("step sizes must decrease strictly".into()));
    }
    Ok(errors
        .windows(2)
        .zip(steps.windows(2))
        .map(|(e, s)| (e[0] / e[1]).ln() / (s[0] / s[1]).ln())
        .collect())
}

/// The four right-hand terms and the left side of the a priori estimate
/// for the time-discrete error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AprioriCheck {
    /// `∫‖w - W‖²_{(w,p)} + |w̄ - W̄|²_{H^s}`.
    pub left: f64,
    /// `Σ_n ∫_{I_n} ‖w_n - w‖²_{(w,p)}`.
    pub time_term: f64,
    /// `∫‖w - P_h w‖²_{(w,p)}` sampled at the coarse time nodes.
    pub projection_term: f64,
    /// `‖ψ(w_0) - Π_h ψ(w_0)‖²_{L²}`.
    pub initial_term: f64,
    /// `|w̄ - P_h w̄|²_{H^s}`.
    pub integrated_projection_term: f64,
}

impl AprioriCheck {
    pub fn right(&self) -> f64 {
        self.time_term + self.projection_term + self.initial_term + self.integrated_projection_term
    }

    pub fn ratio(&self) -> f64 {
        self.left / self.right()
    }
}

/// A coarse trajectory measured against a reference on a nested finer mesh
/// whose time step divides the coarse one.
pub struct TrajectoryComparison<'a> {
    reference: &'a Trajectory,
    coarse: &'a Trajectory,
    fine_sys: &'a NonlocalSystem,
    ratio: usize,
    prolongated: Vec<DVector<f64>>,
    rule: Rule,
}

impl<'a> TrajectoryComparison<'a> {
    pub fn new(
        reference: &'a Trajectory,
        coarse: &'a Trajectory,
        fine_sys: &'a NonlocalSystem,
        quad_order: usize,
    ) -> Result<Self> {
        if !fine_sys.mesh().same_nodes(reference.mesh()) {
            return Err(Error::InvalidInput(
                "reference trajectory and fine system live on different meshes".into(),
            ));
        }
        if reference.m() != coarse.m() {
            return Err(Error::InvalidInput("trajectories use different m".into()));
        }
        let ratio = (coarse.tau() / reference.tau()).round();
        if ratio < 1.0 || (ratio * reference.tau() - coarse.tau()).abs() > 1e-9 * coarse.tau() {
            return Err(Error::InvalidInput(format!(
                "coarse step {} is not a multiple of the reference step {}",
                coarse.tau(),
                reference.tau()
            )));
        }
        let ratio = ratio as usize;
        if reference.n_steps() != ratio * coarse.n_steps() {
            return Err(Error::InvalidInput("trajectories end at different times".into()));
        }
        let prolongated = coarse
            .steps()
            .iter()
            .map(|w| prolongate_free(w.as_slice(), coarse.mesh(), reference.mesh()).map(DVector::from_vec))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            reference,
            coarse,
            fine_sys,
            ratio,
            prolongated,
            rule: gauss_legendre(quad_order.max(1)),
        })
    }

    fn p(&self) -> f64 {
        (self.reference.m() + 1.0) / self.reference.m()
    }

    /// Coarse index `n` with fine step `j` in `(t_{n-1}, t_n]`.
    fn coarse_index(&self, j: usize) -> usize {
        j.div_ceil(self.ratio)
    }

    fn fine_mesh(&self) -> &Mesh {
        self.reference.mesh()
    }

    /// `∫_0^T ‖w - W‖²_{(w,(m+1)/m)}`, piecewise constant in time.
    pub fn quasi_error(&self) -> f64 {
        let tau = self.reference.tau();
        let p = self.p();
        (1..=self.reference.n_steps())
            .map(|j| {
                let w = self.reference.step(j);
                let diff = w - &self.prolongated[self.coarse_index(j)];
                tau * quasi_norm_sq_p1(w.as_slice(), diff.as_slice(), p, self.fine_mesh(), &self.rule)
            })
            .sum()
    }

    /// Running integrals `∫_0^{t_n} (w - W)` at the coarse time nodes.
    fn integrated_differences(&self) -> Vec<DVector<f64>> {
        let n = self.fine_sys.n_free();
        let tf = self.reference.tau();
        let tc = self.coarse.tau();
        let mut acc = DVector::zeros(n);
        let mut out = Vec::with_capacity(self.coarse.n_steps());
        for c in 1..=self.coarse.n_steps() {
            for j in (c - 1) * self.ratio + 1..=c * self.ratio {
                acc.axpy(tf, self.reference.step(j), 1.0);
            }
            acc.axpy(-tc, &self.prolongated[c], 1.0);
            out.push(acc.clone());
        }
        out
    }

    /// `sup_n ‖∫_0^{t_n} (w - W)‖_{H^s}` with the full norm
    /// `(|·|²_{H^s} + ‖·‖²_{L²})^{1/2}`.
    pub fn time_integrated_hs_error(&self) -> f64 {
        self.integrated_differences()
            .iter()
            .map(|e| (self.fine_sys.energy(e) + l2_norm_sq_p1(e.as_slice(), self.fine_mesh())).sqrt())
            .fold(0.0, f64::max)
    }

    /// `‖u - U‖_{L^{m+1}}` over space and time with `u = ψ(w)` pointwise.
    pub fn lmplus1_error(&self) -> f64 {
        let m = self.reference.m();
        let tau = self.reference.tau();
        let total: f64 = (1..=self.reference.n_steps())
            .map(|j| {
                let w = self.reference.step(j);
                let v = &self.prolongated[self.coarse_index(j)];
                tau * integrate_pair(self.fine_mesh(), w.as_slice(), v.as_slice(), &self.rule, |a, b| {
                    (psi(a, m) - psi(b, m)).abs().powf(m + 1.0)
                })
            })
            .sum();
        total.powf(1.0 / (m + 1.0))
    }

    /// `Σ τ Σ_i M_i (ψ(w_i) - ψ(W_i)) (w_i - W_i)` on the fine mesh.
    pub fn lumped_pairing(&self) -> f64 {
        let m = self.reference.m();
        let tau = self.reference.tau();
        let mass = &self.fine_sys.lumped_mass;
        (1..=self.reference.n_steps())
            .map(|j| {
                let w = self.reference.step(j);
                let v = &self.prolongated[self.coarse_index(j)];
                tau * (0..w.len())
                    .map(|i| mass[i] * (psi(w[i], m) - psi(v[i], m)) * (w[i] - v[i]))
                    .sum::<f64>()
            })
            .sum()
    }

    /// Both sides of the a priori estimate, with the reference trajectory
    /// standing in for the exact solution.
    pub fn apriori_check(&self) -> Result<AprioriCheck> {
        let fine = self.fine_mesh();
        let coarse = self.coarse.mesh();
        let p = self.p();
        let m = self.reference.m();
        let tf = self.reference.tau();
        let tc = self.coarse.tau();
        let projector = NestedProjector::new(self.fine_sys, coarse)?;

        let total_integral = self.integrated_differences().pop().unwrap_or_else(|| DVector::zeros(self.fine_sys.n_free()));
        let left = self.quasi_error() + self.fine_sys.energy(&total_integral);

        let mut time_term = 0.0;
        let mut projection_term = 0.0;
        let mut w_bar = DVector::zeros(self.fine_sys.n_free());
        for c in 1..=self.coarse.n_steps() {
            let node = self.reference.step(c * self.ratio);
            for j in (c - 1) * self.ratio + 1..=c * self.ratio {
                let w = self.reference.step(j);
                let diff = node - w;
                time_term += tf * quasi_norm_sq_p1(w.as_slice(), diff.as_slice(), p, fine, &self.rule);
                w_bar.axpy(tf, w, 1.0);
            }
            let diff = node - projector.project_fine(node)?;
            projection_term += tc * quasi_norm_sq_p1(node.as_slice(), diff.as_slice(), p, fine, &self.rule);
        }

        let u0: Vec<f64> = self.reference.step(0).iter().map(|&w| psi(w, m)).collect();
        let interp = restrict_nested_free(&u0, fine, coarse)?;
        let interp = prolongate_free(&interp, coarse, fine)?;
        let d0: Vec<f64> = u0.iter().zip(&interp).map(|(a, b)| a - b).collect();
        let initial_term = l2_norm_sq_p1(&d0, fine);

        let integrated_projection_term = self.fine_sys.energy(&(&w_bar - projector.project_fine(&w_bar)?));
        Ok(AprioriCheck {
            left,
            time_term,
            projection_term,
            initial_term,
            integrated_projection_term,
        })
    }

    pub fn level_errors(&self, level: usize) -> LevelErrors {
        LevelErrors {
            level,
            h: self.coarse.mesh().h(),
            tau: self.coarse.tau(),
            quasi_err: self.quasi_error(),
            hs_int_err: self.time_integrated_hs_error(),
            lmplus1_err: self.lmplus1_error(),
        }
    }
}

/// See [`TrajectoryComparison::time_integrated_hs_error`].
pub fn time_integrated_hs_error(reference: &Trajectory, coarse: &Trajectory, fine_sys: &NonlocalSystem) -> Result<f64> {
    Ok(TrajectoryComparison::new(reference, coarse, fine_sys, DEFAULT_ERROR_QUADRATURE)?.time_integrated_hs_error())
}

/// See [`TrajectoryComparison::quasi_error`].
pub fn quasi_norm_error_time(
    reference: &Trajectory,
    coarse: &Trajectory,
    fine_sys: &NonlocalSystem,
    quad_order: usize,
) -> Result<f64> {
    Ok(TrajectoryComparison::new(reference, coarse, fine_sys, quad_order)?.quasi_error())
}

/// Errors of one refinement level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelErrors {
    pub level: usize,
    pub h: f64,
    pub tau: f64,
    pub quasi_err: f64,
    pub hs_int_err: f64,
    pub lmplus1_err: f64,
}

impl LevelErrors {
    /// `(∫‖w - W‖²_{(w,p)} + sup_n ‖∫_0^{t_n}(w - W)‖²_{H^s})^{1/2}`.
    pub fn combined(&self) -> f64 {
        (self.quasi_err + self.hs_int_err * self.hs_int_err).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub levels: Vec<LevelErrors>,
    /// Orders between level `k - 1` and `k` at index `k`; `None` at `0` or
    /// when the study did not vary that parameter.
    pub eoc_h: Vec<Option<f64>>,
    pub eoc_tau: Vec<Option<f64>>,
}

impl ErrorReport {
    /// Levels with a common time step and shrinking `h`.
    pub fn spatial(levels: Vec<LevelErrors>) -> Result<Self> {
        if levels.iter().any(|l| l.tau != levels[0].tau) {
            return Err(Error::InvalidInput("spatial study levels must share tau".into()));
        }
        let eoc = Self::orders(&levels, |l| l.h)?;
        let n = levels.len();
        Ok(Self {
            levels,
            eoc_h: eoc,
            eoc_tau: vec![None; n],
        })
    }

    /// Levels on a common mesh with shrinking `tau`.
    pub fn temporal(levels: Vec<LevelErrors>) -> Result<Self> {
        if levels.iter().any(|l| l.h != levels[0].h) {
            return Err(Error::InvalidInput("temporal study levels must share h".into()));
        }
        let eoc = Self::orders(&levels, |l| l.tau)?;
        let n = levels.len();
        Ok(Self {
            levels,
            eoc_h: vec![None; n],
            eoc_tau: eoc,
        })
    }

    fn orders(levels: &[LevelErrors], step: impl Fn(&LevelErrors) -> f64) -> Result<Vec<Option<f64>>> {
        if levels.is_empty() {
            return Err(Error::InvalidInput("empty study".into()));
        }
        let mut out = vec![None];
        if levels.len() >= 2 {
            let errors: Vec<f64> = levels.iter().map(LevelErrors::combined).collect();
            let steps: Vec<f64> = levels.iter().map(step).collect();
            out.extend(estimate_eoc(&errors, &steps)?.into_iter().map(Some));
        }
        Ok(out)
    }

    /// CSV with header `level,h,tau,quasi_err,hs_int_err,lmplus1_err,eoc_h,eoc_tau`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("level,h,tau,quasi_err,hs_int_err,lmplus1_err,eoc_h,eoc_tau\n");
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
        for (k, l) in self.levels.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{:?},{:?},{:?},{:?},{:?},{},{}",
                l.level,
                l.h,
                l.tau,
                l.quasi_err,
                l.hs_int_err,
                l.lmplus1_err,
                fmt(self.eoc_h[k]),
                fmt(self.eoc_tau[k])
            );
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CeaOutcome {
    Ratio(f64),
    /// The reference already lies in the coarse space.
    Exact,
}

impl CeaOutcome {
    pub fn value(&self) -> Option<f64> {
        match self {
            CeaOutcome::Ratio(r) => Some(*r),
            CeaOutcome::Exact => None,
        }
    }
}

/// Discrete elliptic error over the interpolation error, both measured by
/// `‖·‖²_{(v,(m+1)/m)} + |·|²_{H^s}` on the fine mesh.
pub fn cea_ratio(
    v_fine: &DVector<f64>,
    fine_sys: &NonlocalSystem,
    v_coarse: &DVector<f64>,
    coarse: &Mesh,
    m: f64,
    quad_order: usize,
) -> Result<CeaOutcome> {
    let fine = fine_sys.mesh();
    check_len(v_fine, fine_sys.n_free())?;
    check_len(v_coarse, coarse.n_free())?;
    let p = (m + 1.0) / m;
    check_quasi_args(p, quad_order)?;
    let rule = gauss_legendre(quad_order);
    let measure = |other: &[f64]| -> f64 {
        let diff: DVector<f64> = v_fine - DVector::from_column_slice(other);
        quasi_norm_sq_p1(v_fine.as_slice(), diff.as_slice(), p, fine, &rule) + fine_sys.energy(&diff)
    };
    let galerkin = prolongate_free(v_coarse.as_slice(), coarse, fine)?;
    let interp = restrict_nested_free(v_fine.as_slice(), fine, coarse)?;
    let interp = prolongate_free(&interp, coarse, fine)?;
    let num = measure(&galerkin);
    let den = measure(&interp);
    let scale = quasi_norm_sq_p1(v_fine.as_slice(), v_fine.as_slice(), p, fine, &rule) + fine_sys.energy(v_fine);
    if den <= 1e-24 * scale {
        return Ok(CeaOutcome::Exact);
    }
    Ok(CeaOutcome::Ratio(num / den))
}
