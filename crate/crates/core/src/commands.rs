//! The `simulate`, `elliptic`, `study` and `validate` commands.
//!
//! Each command writes its report lines to `out` and returns whether every
//! enabled check passed.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analysis::CeaOutcome;
use crate::assembly::{assemble_stiffness, oracle_assemble};
use crate::config::{RunConfig, StudyKind};
use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::mesh::Mesh;
use crate::stepper::{
    csv_slice, elliptic_solve, psi, psi_inv, run_simulation_observed, step_energy_value, step_residual,
    StepConfig, TRAJECTORY_HEADER,
};
use crate::study::{cea_study, spatial_study, temporal_study, StudyOutcome};

/// Relative slack allowed in the discrete energy inequality.
pub const STABILITY_SLACK: f64 = 1e-9;
/// Largest acceptable Céa ratio.
pub const CEA_BOUND: f64 = 10.0;
/// Accepted band for the quasi-norm / lumped-pairing ratio.
pub const EQUIVALENCE_BAND: (f64, f64) = (0.1, 10.0);
pub const GRADIENT_TOLERANCE: f64 = 1e-5;
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Writes `body` to `path`, or to `out` when no path is configured.
fn emit(path: Option<&Path>, out: &mut dyn Write, body: &str) -> Result<()> {
    match path {
        Some(p) => {
            let mut f = create(p)?;
            f.write_all(body.as_bytes())?;
            f.flush()?;
        }
        None => out.write_all(body.as_bytes())?,
    }
    Ok(())
}

/// Writes `partial` followed by a `FAILED` marker, then hands `error` back.
fn emit_failure(path: Option<&Path>, out: &mut dyn Write, partial: &str, error: Error) -> Error {
    let body = format!("{partial}FAILED: {error}\n");
    if let Err(e) = emit(path, out, &body) {
        return e;
    }
    error
}

fn mesh_for(cfg: &RunConfig, n_elements: usize) -> Result<Mesh> {
    Mesh::uniform(cfg.domain.0, cfg.domain.1, n_elements, cfg.collar_width)
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

pub fn cmd_simulate(cfg: &RunConfig, out: &mut dyn Write) -> Result<bool> {
    let step_cfg = cfg.step_config()?;
    let mesh = mesh_for(cfg, cfg.n_elements)?;
    let sys = assemble_stiffness(&mesh, &cfg.kernel, cfg.quadrature_order)?;
    if let Some(p) = &cfg.output.matrix {
        emit(Some(p), out, &sys.dump_matrix())?;
    }
    let problem = cfg.problem();
    let initial = problem.initial_values(&mesh);

    let mut file = cfg.output.trajectory.as_deref().map(create).transpose()?;
    let mut sink = |text: &str, out: &mut dyn Write| -> Result<()> {
        match file.as_mut() {
            Some(f) => f.write_all(text.as_bytes())?,
            None => out.write_all(text.as_bytes())?,
        }
        Ok(())
    };
    sink(&format!("{TRAJECTORY_HEADER}\n"), out)?;
    let run = run_simulation_observed(&initial, &sys, &step_cfg, |_, t, w| {
        sink(&csv_slice(&mesh, t, w, cfg.m), out)
    });
    let traj = match run {
        Ok(t) => t,
        Err(e) => {
            sink(&format!("FAILED: {e}\n"), out)?;
            if let Some(f) = file.as_mut() {
                f.flush()?;
            }
            return Err(e);
        }
    };
    if let Some(f) = file.as_mut() {
        f.flush()?;
    }

    let check = traj.stability_check(&sys);
    let ok = check.holds(STABILITY_SLACK);
    writeln!(
        out,
        "stability: left = {:e}, right = {:e}, slack = {:e} ... {}",
        check.left,
        check.right,
        check.slack(),
        verdict(ok)
    )?;
    Ok(ok)
}

fn not_strictly_increasing(values: &[f64]) -> bool {
    values.len() < 2 || values.windows(2).any(|w| w[1] <= w[0])
}

pub fn cmd_elliptic(cfg: &RunConfig, out: &mut dyn Write) -> Result<bool> {
    let mesh = mesh_for(cfg, cfg.n_elements)?;
    let sys = assemble_stiffness(&mesh, &cfg.kernel, cfg.quadrature_order)?;
    let f = cfg.initial_function();
    let rhs = DVector::from_vec(mesh.interpolate_free(|x| f(x)));
    let v = elliptic_solve(&rhs, &sys, cfg.m, cfg.newton_tol)?;
    let mut csv = String::from("node_index,coordinate,V\n");
    for (k, &node) in mesh.free_nodes().iter().enumerate() {
        csv.push_str(&format!("{node},{:?},{:?}\n", mesh.nodes()[node], v[k]));
    }
    emit(cfg.output.solution.as_deref(), out, &csv)?;
    if cfg.levels < 2 {
        return Ok(true);
    }

    let header = "level,n_elements,cea_ratio\n";
    let outcomes = match cea_study(&cfg.problem(), &f, cfg.n_elements, cfg.levels) {
        Ok(o) => o,
        Err(e) => return Err(emit_failure(cfg.output.errors.as_deref(), out, header, e)),
    };
    let mut report = String::from(header);
    let mut ratios = Vec::new();
    for (k, o) in outcomes.iter().enumerate() {
        let text = match o {
            CeaOutcome::Ratio(r) => {
                ratios.push(*r);
                format!("{r:?}")
            }
            CeaOutcome::Exact => "exact".to_string(),
        };
        report.push_str(&format!("{k},{},{text}\n", cfg.n_elements << k));
    }
    emit(cfg.output.errors.as_deref(), out, &report)?;
    let ok = ratios.iter().all(|&r| r <= CEA_BOUND) && not_strictly_increasing(&ratios);
    writeln!(out, "cea ratio <= {CEA_BOUND} with no upward trend ... {}", verdict(ok))?;
    Ok(ok)
}

fn run_study(cfg: &RunConfig) -> Result<StudyOutcome> {
    let problem = cfg.problem();
    match cfg.study.kind {
        StudyKind::Spatial => spatial_study(&problem, cfg.n_elements, cfg.levels, cfg.tau, cfg.n_steps),
        StudyKind::Temporal => {
            let taus: Vec<f64> = (0..cfg.levels).map(|k| cfg.tau / (1u64 << k) as f64).collect();
            let final_time = cfg.n_steps as f64 * cfg.tau;
            temporal_study(&problem, cfg.n_elements, &taus, cfg.study.reference_divisor, final_time)
        }
    }
}

pub fn cmd_study(cfg: &RunConfig, out: &mut dyn Write) -> Result<bool> {
    if cfg.levels < 2 {
        return Err(Error::Config {
            key: "mesh.levels".into(),
            message: "a study needs at least two levels".into(),
        });
    }
    let header = "level,h,tau,quasi_err,hs_int_err,lmplus1_err,eoc_h,eoc_tau\n";
    let outcome = match run_study(cfg) {
        Ok(o) => o,
        Err(e) => return Err(emit_failure(cfg.output.errors.as_deref(), out, header, e)),
    };
    emit(cfg.output.errors.as_deref(), out, &outcome.report.to_csv())?;

    let (orders, default_target, default_tol, name) = match cfg.study.kind {
        StudyKind::Spatial => (&outcome.report.eoc_h, cfg.kernel.s(), 0.15, "eoc_h"),
        StudyKind::Temporal => (&outcome.report.eoc_tau, 1.0, 0.2, "eoc_tau"),
    };
    let target = cfg.study.rate_target.unwrap_or(default_target);
    let tol = cfg.study.rate_tolerance.unwrap_or(default_tol);
    let (lo, hi) = (target - tol, target + tol);
    let rate_ok = orders.iter().flatten().all(|&r| r >= lo && r <= hi);

    for l in &outcome.levels {
        writeln!(
            out,
            "level {}: quasi/pairing = {:.4}, a priori ratio = {:.4e}, stability slack = {:e}",
            l.errors.level,
            l.equivalence_ratio(),
            l.apriori.ratio(),
            l.stability.slack()
        )?;
    }
    let band_ok = outcome.levels.iter().all(|l| {
        let r = l.equivalence_ratio();
        r >= EQUIVALENCE_BAND.0 && r <= EQUIVALENCE_BAND.1
    });
    writeln!(out, "{name} within [{lo:.3}, {hi:.3}] ... {}", verdict(rate_ok))?;
    writeln!(
        out,
        "quasi-norm / lumped pairing within [{}, {}] ... {}",
        EQUIVALENCE_BAND.0,
        EQUIVALENCE_BAND.1,
        verdict(band_ok)
    )?;
    Ok(rate_ok && band_ok)
}

/// Largest relative deviation between the fast and the reference assembly.
pub fn oracle_deviation(mesh: &Mesh, kernel: &Kernel, order: usize, tolerance: f64) -> Result<(f64, f64, bool)> {
    let fast = assemble_stiffness(mesh, kernel, order)?;
    let oracle = oracle_assemble(mesh, kernel, tolerance)?;
    let mut worst: f64 = 0.0;
    for (a, b) in fast.stiffness.iter().zip(oracle.iter()) {
        worst = worst.max((a - b).abs() / b.abs());
    }
    Ok((worst, fast.asymmetry(), fast.cholesky().is_ok()))
}

/// `max_i |g_i - fd_i| / max_i |g_i|` for the step-energy gradient against
/// central differences, at a seeded point with entries away from zero.
pub fn gradient_check(cfg: &RunConfig, seed: u64) -> Result<f64> {
    let mesh = mesh_for(cfg, cfg.n_elements)?;
    let sys = assemble_stiffness(&mesh, &cfg.kernel, cfg.quadrature_order)?;
    let step = StepConfig::new(cfg.m, cfg.tau, 1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = sys.n_free();
    let mut away = || {
        let mag: f64 = rng.gen_range(0.2..1.0);
        if rng.gen::<bool>() {
            mag
        } else {
            -mag
        }
    };
    let w = DVector::from_fn(n, |_, _| away());
    let prev = DVector::from_fn(n, |_, _| away());
    let grad = step_residual(&w, &prev, &sys, &step);
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let h = 1e-6;
        let mut up = w.clone();
        up[i] += h;
        let mut down = w.clone();
        down[i] -= h;
        let fd = (step_energy_value(&up, &prev, &sys, &step) - step_energy_value(&down, &prev, &sys, &step)) / (2.0 * h);
        worst = worst.max((fd - grad[i]).abs());
    }
    Ok(worst / grad.amax())
}

/// Largest `|ψ^{-1}(ψ(y)) - y| / max(1, |y|)` over seeded samples.
pub fn psi_round_trip(m: f64, seed: u64, samples: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..samples)
        .map(|_| {
            let y: f64 = rng.gen_range(-10.0..10.0);
            (psi_inv(psi(y, m), m) - y).abs() / y.abs().max(1.0)
        })
        .fold(0.0, f64::max)
}

pub fn cmd_validate(cfg: &RunConfig, out: &mut dyn Write) -> Result<bool> {
    let v = &cfg.validate;
    let mut table = String::from("check,n_elements,s,m,value,limit,verdict\n");
    let mut all_ok = true;
    let mut row = |table: &mut String, check: &str, n: String, s: String, m: String, value: f64, limit: f64, ok: bool| {
        all_ok &= ok;
        table.push_str(&format!("{check},{n},{s},{m},{value:e},{limit:e},{}\n", verdict(ok)));
    };
    for &n in &v.n_elements {
        for &s in &v.s_values {
            let kernel = Kernel::new(cfg.kernel.kind(), s, cfg.kernel.epsilon(), cfg.kernel.constant())?;
            let mesh = mesh_for(cfg, n)?;
            let result = oracle_deviation(&mesh, &kernel, cfg.quadrature_order, v.oracle_tolerance);
            let (dev, asym, chol) = match result {
                Ok(r) => r,
                Err(e) => return Err(emit_failure(cfg.output.validation.as_deref(), out, &table, e)),
            };
            row(&mut table, "oracle_deviation", n.to_string(), s.to_string(), String::new(), dev, v.max_deviation, dev <= v.max_deviation);
            row(&mut table, "asymmetry", n.to_string(), s.to_string(), String::new(), asym, SYMMETRY_TOLERANCE, asym <= SYMMETRY_TOLERANCE);
            row(&mut table, "cholesky", n.to_string(), s.to_string(), String::new(), if chol { 0.0 } else { 1.0 }, 0.0, chol);
        }
    }
    let grad = gradient_check(cfg, cfg.initial.seed)?;
    row(
        &mut table,
        "gradient",
        cfg.n_elements.to_string(),
        cfg.kernel.s().to_string(),
        cfg.m.to_string(),
        grad,
        GRADIENT_TOLERANCE,
        grad <= GRADIENT_TOLERANCE,
    );
    for m in [0.3, 0.5, 0.8, 1.0, 2.0] {
        let err = psi_round_trip(m, cfg.initial.seed, 1000);
        row(&mut table, "psi_round_trip", String::new(), String::new(), m.to_string(), err, 1e-12, err <= 1e-12);
    }
    emit(cfg.output.validation.as_deref(), out, &table)?;
    writeln!(out, "validation ... {}", verdict(all_ok))?;
    Ok(all_ok)
}
