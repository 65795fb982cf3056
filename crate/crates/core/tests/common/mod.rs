#![allow(dead_code)]

use fracdiff::assembly::{assemble_stiffness, NonlocalSystem};
use fracdiff::kernel::Kernel;
use fracdiff::mesh::Mesh;
use fracdiff::stepper::psi;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `(1 - ξ²)²` on `|ξ| < 1` with `ξ = (x - 0.5) / 0.25`.
pub fn bump(x: f64) -> f64 {
    let xi = (x - 0.5) / 0.25;
    if xi.abs() < 1.0 {
        (1.0 - xi * xi).powi(2)
    } else {
        0.0
    }
}

pub fn fractional_system(n: usize, s: f64) -> NonlocalSystem {
    let mesh = Mesh::uniform(0.0, 1.0, n, 0.0).unwrap();
    assemble_stiffness(&mesh, &Kernel::fractional(s).unwrap(), 8).unwrap()
}

pub fn random_vector(n: usize, seed: u64, lo: f64, hi: f64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DVector::from_fn(n, |_, _| rng.gen_range(lo..hi))
}

/// Minimizer of `Σ M Ψ(w) - Σ M ψ(w_prev) w + (τ/2) wᵀAw` by Nesterov's
/// accelerated gradient method with a fixed step and gradient restarts.
/// Uses only gradients, valid for `m <= 1` where `ψ'` is bounded on
/// bounded sets.
pub fn accelerated_gradient_step(w_prev: &DVector<f64>, sys: &NonlocalSystem, m: f64, tau: f64) -> DVector<f64> {
    let mass = &sys.lumped_mass;
    let a = &sys.stiffness;
    let load = DVector::from_fn(w_prev.len(), |i, _| mass[i] * psi(w_prev[i], m));
    let grad = |w: &DVector<f64>| -> DVector<f64> {
        DVector::from_fn(w.len(), |i, _| mass[i] * psi(w[i], m)) - &load + a * w * tau
    };
    // Iterates stay in the ball |w|_∞ <= 2 max|w_prev| by the maximum
    // principle of the step; bound ψ' there.
    let r = 2.0 * w_prev.amax().max(1e-3);
    let psi_slope = if m == 1.0 { 1.0 } else { (1.0 / m) * r.powf(1.0 / m - 1.0) };
    let lipschitz = tau * a.clone().symmetric_eigen().eigenvalues.max() + mass.max() * psi_slope;
    let step = 1.0 / lipschitz;

    let mut x = w_prev.clone();
    let mut y = x.clone();
    let mut t = 1.0f64;
    for _ in 0..2_000_000 {
        let g = grad(&y);
        let next = &y - &g * step;
        if g.amax() < 1e-17 {
            return next;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let restart = g.dot(&(&next - &x)) > 0.0;
        y = if restart {
            t = 1.0;
            next.clone()
        } else {
            &next + (&next - &x) * ((t - 1.0) / t_next)
        };
        if !restart {
            t = t_next;
        }
        x = next;
    }
    x
}

/// `n`-element unit mesh and its `levels`-times bisected descendant.
pub fn nested_pair(n: usize, levels: usize) -> (Mesh, Mesh) {
    let coarse = Mesh::uniform(0.0, 1.0, n, 0.0).unwrap();
    let mut fine = coarse.clone();
    for _ in 0..levels {
        fine = fine.refine();
    }
    (coarse, fine)
}

pub fn system_on(mesh: &Mesh, s: f64) -> NonlocalSystem {
    assemble_stiffness(mesh, &Kernel::fractional(s).unwrap(), 8).unwrap()
}
