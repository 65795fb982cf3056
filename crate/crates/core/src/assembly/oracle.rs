//! Brute-force reference assembly.
//!
//! Each entry is computed as an iterated adaptive Gauss-Kronrod integral.
//! The inner integral over `z` is split at every node and at `x`; on the two
//! pieces next to `x` the hats are linear in `z`, so the integrand reduces
//! to `g_i g_j (z - x)^2 k(z - x)` and is integrated in closed form. Nothing
//! here shares code with the pair-class quadrature of the fast assembly.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::{Kernel, KernelKind};
use crate::mesh::Mesh;
use crate::quadrature::adaptive;

const MAX_FREE: usize = 64;
const OUTER_SEGMENTS: usize = 20_000;
const INNER_SEGMENTS: usize = 20_000;

struct Hat<'a> {
    nodes: &'a [f64],
    node: usize,
}

impl Hat<'_> {
    fn value(&self, x: f64) -> f64 {
        let c = self.nodes[self.node];
        let l = self.nodes[self.node - 1];
        let r = self.nodes[self.node + 1];
        if x <= l || x >= r {
            0.0
        } else if x <= c {
            (x - l) / (c - l)
        } else {
            (r - x) / (r - c)
        }
    }

    /// Slope on the element `[nodes[e], nodes[e + 1]]`.
    fn slope(&self, e: usize) -> f64 {
        let len = self.nodes[e + 1] - self.nodes[e];
        if e + 1 == self.node {
            1.0 / len
        } else if e == self.node {
            -1.0 / len
        } else {
            0.0
        }
    }
}

/// `∫_0^δ r^2 k(r) dr`.
fn near_diagonal_moment(kernel: &Kernel, delta: f64) -> f64 {
    let c = kernel.constant();
    let p = 2.0 - 2.0 * kernel.s();
    match kernel.kind() {
        KernelKind::Fractional => c * delta.powf(p) / p,
        KernelKind::TruncatedFractional => c * delta.min(kernel.epsilon()).powf(p) / p,
        KernelKind::ConstantBall => c * delta.min(kernel.epsilon()).powi(3) / 3.0,
    }
}

fn entry(mesh: &Mesh, kernel: &Kernel, i: usize, j: usize, tolerance: f64) -> Result<f64> {
    let nodes = mesh.nodes();
    let hi_hat = Hat { nodes, node: i };
    let hj_hat = Hat { nodes, node: j };
    let region = mesh.meshed_region();
    let eps = kernel.epsilon();
    let inner_tol = 0.01 * tolerance;
    let mut failure = None;

    let g = |x: f64| -> f64 {
        let e = mesh.locate(x);
        let (xl, xr) = (nodes[e], nodes[e + 1]);
        let (fi_x, fj_x) = (hi_hat.value(x), hj_hat.value(x));
        let near = hi_hat.slope(e)
            * hj_hat.slope(e)
            * (near_diagonal_moment(kernel, x - xl) + near_diagonal_moment(kernel, xr - x));

        let integrand = |z: f64| {
            let k = kernel.radial(z - x);
            if k == 0.0 {
                return 0.0;
            }
            (fi_x - hi_hat.value(z)) * (fj_x - hj_hat.value(z)) * k
        };
        let mut total = near;
        // Left of the element containing x, then right of it.
        for side in [&nodes[..=e], &nodes[e + 1..]] {
            if side.len() < 2 {
                continue;
            }
            let mut bp = side.to_vec();
            for cut in [x - eps, x + eps] {
                if cut > bp[0] && cut < *bp.last().unwrap() {
                    bp.push(cut);
                }
            }
            bp.sort_by(f64::total_cmp);
            match adaptive(integrand, &bp, 1e-300, inner_tol, INNER_SEGMENTS) {
                Ok(v) => total += v,
                Err(err) => {
                    failure.get_or_insert(err);
                    return f64::NAN;
                }
            }
        }
        let tail = if kernel.kind() == KernelKind::Fractional && fi_x != 0.0 && fj_x != 0.0 {
            2.0 * fi_x * fj_x * kernel.tail_integral(x, region).unwrap_or(0.0)
        } else {
            0.0
        };
        total + tail
    };
    let value = adaptive(g, nodes, 1e-300, tolerance, OUTER_SEGMENTS);
    if let Some(err) = failure {
        return Err(err);
    }
    value
}

/// Reference stiffness matrix over the free nodes, each entry refined until
/// its adaptive error estimate is below `tolerance` relative.
pub fn oracle_assemble(mesh: &Mesh, kernel: &Kernel, tolerance: f64) -> Result<DMatrix<f64>> {
    let n = mesh.n_free();
    if n > MAX_FREE {
        return Err(Error::InvalidInput(format!(
            "oracle assembly is limited to {MAX_FREE} free nodes, mesh has {n}"
        )));
    }
    if !(tolerance > 0.0) {
        return Err(Error::InvalidInput("oracle tolerance must be positive".into()));
    }
    let free = mesh.free_nodes();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (0..=a).map(move |b| (a, b))).collect();
    let values: Vec<Result<f64>> = pairs
        .par_iter()
        .map(|&(a, b)| entry(mesh, kernel, free[a], free[b], tolerance))
        .collect();
    let mut matrix = DMatrix::zeros(n, n);
    for (&(a, b), v) in pairs.iter().zip(values) {
        let v = v?;
        matrix[(a, b)] = v;
        matrix[(b, a)] = v;
    }
    Ok(matrix)
}
