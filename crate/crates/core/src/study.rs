//! Self-convergence studies on nested meshes and time grids.

use std::sync::Arc;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::analysis::{cea_ratio, AprioriCheck, CeaOutcome, ErrorReport, LevelErrors, TrajectoryComparison};
use crate::assembly::{assemble_stiffness, NonlocalSystem};
use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::mesh::Mesh;
use crate::stepper::{elliptic_solve, run_simulation, InitialValues, StabilityCheck, StepConfig, Trajectory};

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Reference solutions live this many bisections below each study level.
pub const REFERENCE_LEVELS: usize = 2;

#[derive(Clone)]
pub struct Problem {
    pub domain: (f64, f64),
    pub collar_width: f64,
    pub kernel: Kernel,
    pub quadrature_order: usize,
    pub m: f64,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// Initial datum, read as `u_0` when `initial_is_u` and as `w_0` otherwise.
    pub initial: ScalarFn,
    pub initial_is_u: bool,
    pub error_quadrature: usize,
}

impl Problem {
    pub fn mesh(&self, n_elements: usize) -> Result<Mesh> {
        Mesh::uniform(self.domain.0, self.domain.1, n_elements, self.collar_width)
    }

    pub fn assemble(&self, mesh: &Mesh) -> Result<NonlocalSystem> {
        assemble_stiffness(mesh, &self.kernel, self.quadrature_order)
    }

    pub fn step_config(&self, tau: f64, n_steps: usize) -> Result<StepConfig> {
        let mut cfg = StepConfig::new(self.m, tau, n_steps)?;
        cfg.newton_tol = self.newton_tol;
        cfg.newton_max_iter = self.newton_max_iter;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn initial_values(&self, mesh: &Mesh) -> InitialValues {
        let values = mesh.interpolate_free(|x| (self.initial)(x));
        if self.initial_is_u {
            InitialValues::U(values)
        } else {
            InitialValues::W(values)
        }
    }

    pub fn simulate(&self, sys: &NonlocalSystem, tau: f64, n_steps: usize) -> Result<Trajectory> {
        run_simulation(&self.initial_values(sys.mesh()), sys, &self.step_config(tau, n_steps)?)
    }
}

/// Per-level quantities beyond the error report.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyLevel {
    pub errors: LevelErrors,
    /// `Σ τ Σ_i M_i (ψ(w_i) - ψ(W_i)) (w_i - W_i)`.
    pub lumped_pairing: f64,
    pub apriori: AprioriCheck,
    pub stability: StabilityCheck,
    /// Every Newton solve of the coarse run decreased the energy strictly.
    pub monotone_newton: bool,
}

impl StudyLevel {
    /// Quasi-norm error over the lumped pairing.
    pub fn equivalence_ratio(&self) -> f64 {
        self.errors.quasi_err / self.lumped_pairing
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyOutcome {
    pub report: ErrorReport,
    pub levels: Vec<StudyLevel>,
}

fn measure(
    level: usize,
    reference: &Trajectory,
    coarse: &Trajectory,
    fine_sys: &NonlocalSystem,
    coarse_sys: &NonlocalSystem,
    quad_order: usize,
) -> Result<StudyLevel> {
    let cmp = TrajectoryComparison::new(reference, coarse, fine_sys, quad_order)?;
    Ok(StudyLevel {
        errors: cmp.level_errors(level),
        lumped_pairing: cmp.lumped_pairing(),
        apriori: cmp.apriori_check()?,
        stability: coarse.stability_check(coarse_sys),
        monotone_newton: coarse.diagnostics().iter().all(|d| d.strictly_decreasing()),
    })
}

fn level_err(level: usize) -> impl Fn(Error) -> Error {
    move |e| Error::LevelFailed {
        level,
        source: Box::new(e),
    }
}

/// Levels `n0 · 2^k`, `k < levels`, each compared with the run two
/// bisections finer at the same time step.
pub fn spatial_study(problem: &Problem, n0: usize, levels: usize, tau: f64, n_steps: usize) -> Result<StudyOutcome> {
    if levels < 2 {
        return Err(Error::InvalidInput("a spatial study needs at least two levels".into()));
    }
    let mut meshes = vec![problem.mesh(n0)?];
    for _ in 1..levels + REFERENCE_LEVELS {
        let next = meshes.last().unwrap().refine();
        meshes.push(next);
    }
    let runs: Vec<(NonlocalSystem, Trajectory)> = meshes
        .par_iter()
        .enumerate()
        .map(|(k, mesh)| {
            let sys = problem.assemble(mesh).map_err(level_err(k))?;
            let traj = problem.simulate(&sys, tau, n_steps).map_err(level_err(k))?;
            Ok((sys, traj))
        })
        .collect::<Result<_>>()?;
    let measured: Vec<StudyLevel> = (0..levels)
        .into_par_iter()
        .map(|k| {
            let (fine_sys, reference) = &runs[k + REFERENCE_LEVELS];
            let (coarse_sys, coarse) = &runs[k];
            measure(k, reference, coarse, fine_sys, coarse_sys, problem.error_quadrature).map_err(level_err(k))
        })
        .collect::<Result<_>>()?;
    Ok(StudyOutcome {
        report: ErrorReport::spatial(measured.iter().map(|l| l.errors).collect())?,
        levels: measured,
    })
}

/// Time steps `taus` (decreasing) on one mesh, each compared with a run
/// at `taus.last() / reference_divisor`, all ending at `final_time`.
pub fn temporal_study(
    problem: &Problem,
    n_elements: usize,
    taus: &[f64],
    reference_divisor: usize,
    final_time: f64,
) -> Result<StudyOutcome> {
    if taus.len() < 2 || reference_divisor == 0 {
        return Err(Error::InvalidInput("a temporal study needs two time steps".into()));
    }
    let steps_for = |tau: f64| -> Result<usize> {
        let n = (final_time / tau).round();
        if n < 1.0 || (n * tau - final_time).abs() > 1e-9 * final_time {
            return Err(Error::InvalidInput(format!("final time {final_time} is not a multiple of tau = {tau}")));
        }
        Ok(n as usize)
    };
    let mesh = problem.mesh(n_elements)?;
    let sys = problem.assemble(&mesh)?;
    let ref_tau = taus[taus.len() - 1] / reference_divisor as f64;
    let reference = problem.simulate(&sys, ref_tau, steps_for(ref_tau)?)?;
    let measured: Vec<StudyLevel> = taus
        .par_iter()
        .enumerate()
        .map(|(k, &tau)| {
            let run = || -> Result<StudyLevel> {
                let coarse = problem.simulate(&sys, tau, steps_for(tau)?)?;
                measure(k, &reference, &coarse, &sys, &sys, problem.error_quadrature)
            };
            run().map_err(level_err(k))
        })
        .collect::<Result<_>>()?;
    Ok(StudyOutcome {
        report: ErrorReport::temporal(measured.iter().map(|l| l.errors).collect())?,
        levels: measured,
    })
}

/// Céa ratios of the lumped elliptic problem `ψ(v) + (-Δ)^s v = f` on
/// levels `n0 · 2^k`, each against the solution two bisections finer.
pub fn cea_study(problem: &Problem, f: &ScalarFn, n0: usize, levels: usize) -> Result<Vec<CeaOutcome>> {
    let mut meshes = vec![problem.mesh(n0)?];
    for _ in 1..levels + REFERENCE_LEVELS {
        let next = meshes.last().unwrap().refine();
        meshes.push(next);
    }
    let solved: Vec<(NonlocalSystem, DVector<f64>)> = meshes
        .par_iter()
        .enumerate()
        .map(|(k, mesh)| {
            let sys = problem.assemble(mesh).map_err(level_err(k))?;
            let rhs = DVector::from_vec(mesh.interpolate_free(|x| f(x)));
            let v = elliptic_solve(&rhs, &sys, problem.m, problem.newton_tol).map_err(level_err(k))?;
            Ok((sys, v))
        })
        .collect::<Result<_>>()?;
    (0..levels)
        .map(|k| {
            let (fine_sys, v_fine) = &solved[k + REFERENCE_LEVELS];
            let (coarse_sys, v_coarse) = &solved[k];
            cea_ratio(v_fine, fine_sys, v_coarse, coarse_sys.mesh(), problem.m, problem.error_quadrature)
                .map_err(level_err(k))
        })
        .collect()
}
