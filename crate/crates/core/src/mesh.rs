//! One-dimensional meshes of the solution domain `(a, b)` plus an optional
//! interaction collar on either side.
//!
//! Nodes outside the open interval `(a, b)` carry the zero volume constraint;
//! only the interior nodes are degrees of freedom. Meshes produced by
//! [`Mesh::refine`] keep a link to their parent so that coarse P1 functions
//! can be prolongated exactly.

use std::fmt::Write as _;
use std::sync::Arc;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Mesh {
    nodes: Vec<f64>,
    free: Vec<bool>,
    free_index: Vec<Option<usize>>,
    free_nodes: Vec<usize>,
    constrained_nodes: Vec<usize>,
    domain: (f64, f64),
    collar_width: f64,
    parent: Option<Arc<Mesh>>,
}

impl Mesh {
    /// Uniform mesh of `(a, b)` with `n_elements` elements. A positive
    /// `collar_width` appends constrained elements on both sides, no longer
    /// than the interior element length.
    pub fn uniform(a: f64, b: f64, n_elements: usize, collar_width: f64) -> Result<Self> {
        if !a.is_finite() || !b.is_finite() {
            return Err(Error::InvalidMesh("non-finite endpoint".into()));
        }
        if a >= b {
            return Err(Error::InvalidMesh(format!("empty interval ({a}, {b})")));
        }
        if n_elements == 0 {
            return Err(Error::InvalidMesh("zero elements".into()));
        }
        if !collar_width.is_finite() || collar_width < 0.0 {
            return Err(Error::InvalidMesh(format!(
                "collar width must be finite and nonnegative, got {collar_width}"
            )));
        }

        let h = (b - a) / n_elements as f64;
        let n_collar = if collar_width > 0.0 {
            ((collar_width / h) - 1e-9).ceil().max(1.0) as usize
        } else {
            0
        };
        let hc = if n_collar > 0 {
            collar_width / n_collar as f64
        } else {
            0.0
        };

        let mut nodes = Vec::with_capacity(n_elements + 2 * n_collar + 1);
        for k in 0..n_collar {
            nodes.push(a - collar_width + k as f64 * hc);
        }
        for i in 0..n_elements {
            nodes.push(a + i as f64 * h);
        }
        nodes.push(b);
        for k in 1..=n_collar {
            if k == n_collar {
                nodes.push(b + collar_width);
            } else {
                nodes.push(b + k as f64 * hc);
            }
        }

        let first_free = n_collar + 1;
        let last_free = n_collar + n_elements - 1;
        let free = (0..nodes.len())
            .map(|i| i >= first_free && i <= last_free)
            .collect();
        Ok(Self::from_parts(nodes, free, (a, b), collar_width, None))
    }

    fn from_parts(
        nodes: Vec<f64>,
        free: Vec<bool>,
        domain: (f64, f64),
        collar_width: f64,
        parent: Option<Arc<Mesh>>,
    ) -> Self {
        let mut free_index = vec![None; nodes.len()];
        let mut free_nodes = Vec::new();
        let mut constrained_nodes = Vec::new();
        for (i, &is_free) in free.iter().enumerate() {
            if is_free {
                free_index[i] = Some(free_nodes.len());
                free_nodes.push(i);
            } else {
                constrained_nodes.push(i);
            }
        }
        Self {
            nodes,
            free,
            free_index,
            free_nodes,
            constrained_nodes,
            domain,
            collar_width,
            parent,
        }
    }

    /// Bisects every element. The result links back to `self`.
    pub fn refine(&self) -> Mesh {
        let (a, b) = self.domain;
        let mut nodes = Vec::with_capacity(2 * self.nodes.len() - 1);
        let mut free = Vec::with_capacity(2 * self.nodes.len() - 1);
        for e in 0..self.n_elements() {
            let (xl, xr) = self.element(e);
            nodes.push(xl);
            free.push(self.free[e]);
            nodes.push(0.5 * (xl + xr));
            free.push(xl >= a && xr <= b);
        }
        nodes.push(*self.nodes.last().unwrap());
        free.push(*self.free.last().unwrap());
        Self::from_parts(
            nodes,
            free,
            self.domain,
            self.collar_width,
            Some(Arc::new(self.clone())),
        )
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_elements(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Endpoints of element `e`, which joins nodes `e` and `e + 1`.
    pub fn element(&self, e: usize) -> (f64, f64) {
        (self.nodes[e], self.nodes[e + 1])
    }

    pub fn element_length(&self, e: usize) -> f64 {
        self.nodes[e + 1] - self.nodes[e]
    }

    pub fn elements(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n_elements()).map(|e| (e, e + 1))
    }

    pub fn is_free(&self, node: usize) -> bool {
        self.free[node]
    }

    /// Position of `node` among the free nodes.
    pub fn free_index(&self, node: usize) -> Option<usize> {
        self.free_index[node]
    }

    pub fn free_nodes(&self) -> &[usize] {
        &self.free_nodes
    }

    pub fn n_free(&self) -> usize {
        self.free_nodes.len()
    }

    pub fn constrained_nodes(&self) -> &[usize] {
        &self.constrained_nodes
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    pub fn collar_width(&self) -> f64 {
        self.collar_width
    }

    /// Endpoints of the meshed region, collar included.
    pub fn meshed_region(&self) -> (f64, f64) {
        (self.nodes[0], *self.nodes.last().unwrap())
    }

    pub fn parent(&self) -> Option<&Mesh> {
        self.parent.as_deref()
    }

    pub fn max_element_length(&self) -> f64 {
        (0..self.n_elements())
            .map(|e| self.element_length(e))
            .fold(0.0, f64::max)
    }

    pub fn min_element_length(&self) -> f64 {
        (0..self.n_elements())
            .map(|e| self.element_length(e))
            .fold(f64::INFINITY, f64::min)
    }

    /// Interior mesh size, i.e. the largest element inside `(a, b)`.
    pub fn h(&self) -> f64 {
        let (a, b) = self.domain;
        (0..self.n_elements())
            .filter(|&e| {
                let (xl, xr) = self.element(e);
                xl >= a && xr <= b
            })
            .map(|e| self.element_length(e))
            .fold(0.0, f64::max)
    }

    pub fn shape_ratio(&self) -> f64 {
        self.min_element_length() / self.max_element_length()
    }

    pub fn check_shape_regularity(&self, c: f64) -> Result<()> {
        let ratio = self.shape_ratio();
        if ratio < c {
            return Err(Error::InvalidMesh(format!(
                "shape ratio {ratio} below required {c}"
            )));
        }
        Ok(())
    }

    /// Checks ordering, the free/constrained partition and nestedness.
    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.domain;
        if self.nodes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidMesh("nodes not strictly increasing".into()));
        }
        let (lo, hi) = self.meshed_region();
        if lo != a - self.collar_width || hi != b + self.collar_width {
            return Err(Error::InvalidMesh("meshed region does not match collar".into()));
        }
        for (i, &x) in self.nodes.iter().enumerate() {
            let inside = x > a && x < b;
            if self.free[i] != inside {
                return Err(Error::InvalidMesh(format!(
                    "node {i} at {x} has wrong free/constrained status"
                )));
            }
        }
        if self.free_nodes.len() + self.constrained_nodes.len() != self.nodes.len() {
            return Err(Error::InvalidMesh("free/constrained sets overlap".into()));
        }
        if let Some(parent) = &self.parent {
            let mut j = 0;
            for &x in parent.nodes() {
                while j < self.nodes.len() && self.nodes[j] < x {
                    j += 1;
                }
                if j == self.nodes.len() || self.nodes[j] != x {
                    return Err(Error::NotNested);
                }
            }
        }
        Ok(())
    }

    /// Same node coordinates and domain.
    pub fn same_nodes(&self, other: &Mesh) -> bool {
        self.domain == other.domain && self.nodes == other.nodes
    }

    /// Number of bisection levels separating `coarse` from `self`.
    pub fn levels_above(&self, coarse: &Mesh) -> Result<usize> {
        let mut current = self;
        let mut levels = 0;
        loop {
            if current.same_nodes(coarse) {
                return Ok(levels);
            }
            match current.parent() {
                Some(p) => {
                    current = p;
                    levels += 1;
                }
                None => return Err(Error::NotNested),
            }
        }
    }

    /// Evaluates the P1 function with the given nodal values at `x`; zero
    /// outside the meshed region.
    pub fn evaluate(&self, nodal: &[f64], x: f64) -> f64 {
        let (lo, hi) = self.meshed_region();
        if x < lo || x > hi {
            return 0.0;
        }
        let e = self.locate(x);
        let (xl, xr) = self.element(e);
        let t = (x - xl) / (xr - xl);
        nodal[e] * (1.0 - t) + nodal[e + 1] * t
    }

    /// Element containing `x`, which must lie in the meshed region.
    pub fn locate(&self, x: f64) -> usize {
        let idx = self.nodes.partition_point(|&n| n <= x);
        idx.saturating_sub(1).min(self.n_elements() - 1)
    }

    /// Scatters free-node coefficients into a full nodal vector.
    pub fn expand_free(&self, coeffs: &[f64]) -> Vec<f64> {
        let mut nodal = vec![0.0; self.nodes.len()];
        for (k, &node) in self.free_nodes.iter().enumerate() {
            nodal[node] = coeffs[k];
        }
        nodal
    }

    pub fn restrict_free(&self, nodal: &[f64]) -> Vec<f64> {
        self.free_nodes.iter().map(|&node| nodal[node]).collect()
    }

    /// Nodal values of `f` on the free nodes (the interpolant in `S_h`).
    pub fn interpolate_free(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.free_nodes.iter().map(|&i| f(self.nodes[i])).collect()
    }

    /// Plain-text dump, one `node <index> <coordinate> <free|constrained>`
    /// line per node.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (i, &x) in self.nodes.iter().enumerate() {
            let status = if self.free[i] { "free" } else { "constrained" };
            let _ = writeln!(out, "node {i} {x:?} {status}");
        }
        out
    }
}

/// Prolongates nodal values on `coarse` onto the nested mesh `fine`.
///
/// The represented P1 function is unchanged; new midpoint values are the
/// averages of their endpoint values.
pub fn prolongate(coarse_nodal: &[f64], coarse: &Mesh, fine: &Mesh) -> Result<Vec<f64>> {
    if coarse_nodal.len() != coarse.n_nodes() {
        return Err(Error::DimensionMismatch {
            expected: coarse.n_nodes(),
            got: coarse_nodal.len(),
        });
    }
    let levels = fine.levels_above(coarse)?;
    let mut values = coarse_nodal.to_vec();
    for _ in 0..levels {
        values = bisect_values(&values);
    }
    Ok(values)
}

/// Prolongation of free-node coefficients.
pub fn prolongate_free(coarse_coeffs: &[f64], coarse: &Mesh, fine: &Mesh) -> Result<Vec<f64>> {
    if coarse_coeffs.len() != coarse.n_free() {
        return Err(Error::DimensionMismatch {
            expected: coarse.n_free(),
            got: coarse_coeffs.len(),
        });
    }
    let nodal = prolongate(&coarse.expand_free(coarse_coeffs), coarse, fine)?;
    Ok(fine.restrict_free(&nodal))
}

/// Nodal restriction of fine free coefficients onto a coarser nested mesh,
/// the interpolant of the fine function in the coarse space.
pub fn restrict_nested_free(fine_coeffs: &[f64], fine: &Mesh, coarse: &Mesh) -> Result<Vec<f64>> {
    if fine_coeffs.len() != fine.n_free() {
        return Err(Error::DimensionMismatch {
            expected: fine.n_free(),
            got: fine_coeffs.len(),
        });
    }
    let stride = 1usize << fine.levels_above(coarse)?;
    let nodal = fine.expand_free(fine_coeffs);
    let coarse_nodal: Vec<f64> = (0..coarse.n_nodes()).map(|i| nodal[i * stride]).collect();
    Ok(coarse.restrict_free(&coarse_nodal))
}

fn bisect_values(values: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * values.len() - 1);
    for w in values.windows(2) {
        out.push(w[0]);
        out.push(0.5 * (w[0] + w[1]));
    }
    out.push(*values.last().unwrap());
    out
}

/// Dense prolongation operator from coarse free coefficients to fine free
/// coefficients (`n_free(fine) x n_free(coarse)`).
pub fn prolongation_matrix(coarse: &Mesh, fine: &Mesh) -> Result<nalgebra::DMatrix<f64>> {
    let nc = coarse.n_free();
    let nf = fine.n_free();
    let mut p = nalgebra::DMatrix::zeros(nf, nc);
    let mut unit = vec![0.0; nc];
    for j in 0..nc {
        unit[j] = 1.0;
        let col = prolongate_free(&unit, coarse, fine)?;
        for (i, v) in col.into_iter().enumerate() {
            p[(i, j)] = v;
        }
        unit[j] = 0.0;
    }
    Ok(p)
}
