//! Assembly of the nonlocal stiffness matrix
//! `a(u, v) = ∬ (u(x) - u(z)) (v(x) - v(z)) k(x, z) dz dx`
//! over P1 hat functions that vanish outside `(a, b)`, plus the lumped mass.
//!
//! The double integral over the line splits into the meshed region `D` and
//! its complement: `a(φ_i, φ_j) = ∬_{D x D} ... + 2 ∫_D φ_i φ_j tail(x) dx`
//! with `tail(x) = ∫_{R \ D} k(x, z) dz`.

mod oracle;
mod pairs;

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::{Kernel, KernelKind};
use crate::mesh::Mesh;

pub use oracle::oracle_assemble;
pub use pairs::{PairClass, PairRules};

pub const DEFAULT_QUADRATURE_ORDER: usize = 8;

/// Outer elements processed per parallel batch; keeps the buffered pair
/// contributions bounded while the merge order stays fixed.
const BATCH: usize = 32;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AssemblyDiagnostics {
    pub identical_pairs: usize,
    pub adjacent_pairs: usize,
    pub disjoint_pairs: usize,
    pub straddling_pairs: usize,
    pub out_of_range_pairs: usize,
    /// Trace of the complement-tail matrix.
    pub tail_trace: f64,
}

/// Stiffness matrix and lumped mass over the free nodes of a mesh.
#[derive(Debug, Clone)]
pub struct NonlocalSystem {
    pub stiffness: DMatrix<f64>,
    pub lumped_mass: DVector<f64>,
    mesh: Arc<Mesh>,
    kernel: Kernel,
    quadrature_order: usize,
    diagnostics: AssemblyDiagnostics,
}

impl NonlocalSystem {
    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn mesh_arc(&self) -> Arc<Mesh> {
        Arc::clone(&self.mesh)
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn quadrature_order(&self) -> usize {
        self.quadrature_order
    }

    pub fn diagnostics(&self) -> &AssemblyDiagnostics {
        &self.diagnostics
    }

    pub fn n_free(&self) -> usize {
        self.lumped_mass.len()
    }

    pub fn cholesky(&self) -> Result<Cholesky<f64, nalgebra::Dyn>> {
        Cholesky::new(self.stiffness.clone()).ok_or(Error::NotPositiveDefinite)
    }

    /// `v^T A v`.
    pub fn energy(&self, v: &DVector<f64>) -> f64 {
        v.dot(&(&self.stiffness * v))
    }

    /// Smallest `λ` with `A v = λ M v`.
    pub fn smallest_generalized_eigenvalue(&self) -> f64 {
        let inv_sqrt = self.lumped_mass.map(|m| 1.0 / m.sqrt());
        let n = self.n_free();
        let scaled = DMatrix::from_fn(n, n, |i, j| {
            inv_sqrt[i] * self.stiffness[(i, j)] * inv_sqrt[j]
        });
        SymmetricEigen::new(scaled).eigenvalues.min()
    }

    /// Lower triangle in coordinate form, preceded by `symmetric <n_free>`.
    pub fn dump_matrix(&self) -> String {
        dump_symmetric(&self.stiffness)
    }

    /// Relative asymmetry `max |A_ij - A_ji| / max |A_ij|`.
    pub fn asymmetry(&self) -> f64 {
        relative_asymmetry(&self.stiffness)
    }
}

pub fn relative_asymmetry(a: &DMatrix<f64>) -> f64 {
    let scale = a.amax();
    let mut worst: f64 = 0.0;
    for i in 0..a.nrows() {
        for j in 0..i {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    if scale > 0.0 {
        worst / scale
    } else {
        worst
    }
}

pub fn dump_symmetric(a: &DMatrix<f64>) -> String {
    let n = a.nrows();
    let mut out = format!("symmetric {n}\n");
    for i in 0..n {
        for j in 0..=i {
            let _ = writeln!(out, "{i} {j} {:.16e}", a[(i, j)]);
        }
    }
    out
}

fn check_order(order: usize) -> Result<()> {
    if order < 2 {
        return Err(Error::Assembly(format!(
            "quadrature order must be at least 2, got {order}"
        )));
    }
    Ok(())
}

fn check_collar(mesh: &Mesh, kernel: &Kernel) -> Result<()> {
    if kernel.kind() != KernelKind::Fractional && mesh.collar_width() < kernel.epsilon() {
        return Err(Error::Assembly(format!(
            "collar width {} is smaller than the horizon {}",
            mesh.collar_width(),
            kernel.epsilon()
        )));
    }
    Ok(())
}

/// Full stiffness matrix, lumped mass and diagnostics.
pub fn assemble_stiffness(
    mesh: &Mesh,
    kernel: &Kernel,
    quadrature_order: usize,
) -> Result<NonlocalSystem> {
    check_order(quadrature_order)?;
    check_collar(mesh, kernel)?;
    let (mut stiffness, mut diagnostics) = interaction_matrix(mesh, kernel, quadrature_order)?;
    if kernel.kind() == KernelKind::Fractional {
        let tail = assemble_tail(mesh, kernel, quadrature_order)?;
        diagnostics.tail_trace = tail.trace();
        stiffness += tail;
    }
    if let Some(bad) = stiffness.iter().find(|v| !v.is_finite()) {
        return Err(Error::Assembly(format!("non-finite stiffness entry {bad}")));
    }
    Ok(NonlocalSystem {
        stiffness,
        lumped_mass: assemble_lumped_mass(mesh),
        mesh: Arc::new(mesh.clone()),
        kernel: *kernel,
        quadrature_order,
        diagnostics,
    })
}

/// `∬_{D x D} (φ_i(x) - φ_i(z)) (φ_j(x) - φ_j(z)) k(x, z)` without the
/// complement tail and without the collar check.
pub fn assemble_interaction(
    mesh: &Mesh,
    kernel: &Kernel,
    quadrature_order: usize,
) -> Result<DMatrix<f64>> {
    check_order(quadrature_order)?;
    Ok(interaction_matrix(mesh, kernel, quadrature_order)?.0)
}

/// Local hat-function data of one element.
#[derive(Clone, Copy)]
struct LocalElement {
    x0: f64,
    x1: f64,
    /// Free indices of the left and right vertex.
    dofs: [Option<usize>; 2],
}

impl LocalElement {
    fn new(mesh: &Mesh, e: usize) -> Self {
        let (x0, x1) = mesh.element(e);
        Self {
            x0,
            x1,
            dofs: [mesh.free_index(e), mesh.free_index(e + 1)],
        }
    }

    fn has_dof(&self) -> bool {
        self.dofs[0].is_some() || self.dofs[1].is_some()
    }

    #[inline]
    fn shape(&self, x: f64) -> [f64; 2] {
        let t = (x - self.x0) / (self.x1 - self.x0);
        [1.0 - t, t]
    }
}

/// Up to four free dofs touched by an element pair, with the local slot of
/// each in `e` and `f`.
struct PairDofs {
    dofs: Vec<usize>,
    in_e: Vec<Option<usize>>,
    in_f: Vec<Option<usize>>,
}

impl PairDofs {
    fn new(e: &LocalElement, f: &LocalElement) -> Self {
        let mut dofs = Vec::with_capacity(4);
        let mut in_e = Vec::with_capacity(4);
        let mut in_f = Vec::with_capacity(4);
        for (slot, d) in e.dofs.iter().enumerate() {
            if let Some(d) = *d {
                dofs.push(d);
                in_e.push(Some(slot));
                in_f.push(f.dofs.iter().position(|&g| g == Some(d)));
            }
        }
        for (slot, d) in f.dofs.iter().enumerate() {
            if let Some(d) = *d {
                if !dofs.contains(&d) {
                    dofs.push(d);
                    in_e.push(None);
                    in_f.push(Some(slot));
                }
            }
        }
        Self { dofs, in_e, in_f }
    }
}

fn interaction_matrix(
    mesh: &Mesh,
    kernel: &Kernel,
    order: usize,
) -> Result<(DMatrix<f64>, AssemblyDiagnostics)> {
    let rules = PairRules::new(*kernel, order);
    let elements: Vec<LocalElement> = (0..mesh.n_elements())
        .map(|e| LocalElement::new(mesh, e))
        .collect();
    let n = mesh.n_free();
    let mut matrix = DMatrix::zeros(n, n);
    let mut diagnostics = AssemblyDiagnostics::default();

    let outer: Vec<usize> = (0..elements.len()).collect();
    for batch in outer.chunks(BATCH) {
        let results: Vec<(Vec<(usize, usize, f64)>, [usize; 5])> = batch
            .par_iter()
            .map(|&ei| pair_row(&rules, &elements, ei))
            .collect();
        for (entries, counts) in results {
            for (i, j, v) in entries {
                matrix[(i, j)] += v;
                if i != j {
                    matrix[(j, i)] += v;
                }
            }
            diagnostics.identical_pairs += counts[0];
            diagnostics.adjacent_pairs += counts[1];
            diagnostics.disjoint_pairs += counts[2];
            diagnostics.straddling_pairs += counts[3];
            diagnostics.out_of_range_pairs += counts[4];
        }
    }
    Ok((matrix, diagnostics))
}

/// Contributions of the pairs `(ei, fi)` with `fi >= ei`, as lower-triangle
/// entries `(i, j, value)` with `i >= j`.
fn pair_row(
    rules: &PairRules,
    elements: &[LocalElement],
    ei: usize,
) -> (Vec<(usize, usize, f64)>, [usize; 5]) {
    let e = &elements[ei];
    let mut entries = Vec::new();
    let mut counts = [0usize; 5];
    for fi in ei..elements.len() {
        let f = &elements[fi];
        if !e.has_dof() && !f.has_dof() {
            continue;
        }
        let class = rules.classify(ei, (e.x0, e.x1), fi, (f.x0, f.x1));
        counts[match class {
            PairClass::Identical => 0,
            PairClass::Adjacent => 1,
            PairClass::Disjoint => 2,
            PairClass::Straddling => 3,
            PairClass::OutOfRange => 4,
        }] += 1;
        if class == PairClass::OutOfRange {
            continue;
        }
        let pd = PairDofs::new(e, f);
        let nd = pd.dofs.len();
        let mut local = [[0.0f64; 4]; 4];
        rules.visit(class, (e.x0, e.x1), (f.x0, f.x1), |x, z, w| {
            let se = e.shape(x);
            let sf = f.shape(z);
            let mut d = [0.0; 4];
            for a in 0..nd {
                let ve = pd.in_e[a].map_or(0.0, |s| se[s]);
                let vf = pd.in_f[a].map_or(0.0, |s| sf[s]);
                d[a] = ve - vf;
            }
            for a in 0..nd {
                let wa = w * d[a];
                for b in 0..=a {
                    local[a][b] += wa * d[b];
                }
            }
        });
        // ∬_{f x e} equals ∬_{e x f} by symmetry of the integrand.
        let mult = if fi == ei { 1.0 } else { 2.0 };
        for a in 0..nd {
            for b in 0..=a {
                let (i, j) = (pd.dofs[a], pd.dofs[b]);
                let v = mult * local[a][b];
                if i >= j {
                    entries.push((i, j, v));
                } else {
                    entries.push((j, i, v));
                }
            }
        }
    }
    (entries, counts)
}

/// `2 ∫_D φ_i φ_j tail(x) dx` with the tail over the complement of the
/// meshed region.
pub fn assemble_tail(mesh: &Mesh, kernel: &Kernel, quadrature_order: usize) -> Result<DMatrix<f64>> {
    check_order(quadrature_order)?;
    let rules = PairRules::new(*kernel, quadrature_order);
    let (lo, hi) = mesh.meshed_region();
    let n = mesh.n_free();
    let mut matrix = DMatrix::zeros(n, n);
    for ei in 0..mesh.n_elements() {
        let e = LocalElement::new(mesh, ei);
        if !e.has_dof() {
            continue;
        }
        let mut local = [[0.0f64; 2]; 2];
        for end in [lo, hi] {
            rules.visit_tail((e.x0, e.x1), end, |x, w| {
                let s = e.shape(x);
                for a in 0..2 {
                    for b in 0..=a {
                        local[a][b] += 2.0 * w * s[a] * s[b];
                    }
                }
            });
        }
        for a in 0..2 {
            for b in 0..=a {
                if let (Some(i), Some(j)) = (e.dofs[a], e.dofs[b]) {
                    matrix[(i, j)] += local[a][b];
                    if i != j {
                        matrix[(j, i)] += local[a][b];
                    }
                }
            }
        }
    }
    Ok(matrix)
}

/// Vertex-rule mass: entry `i` is `∫ φ_i`, half the support length.
pub fn assemble_lumped_mass(mesh: &Mesh) -> DVector<f64> {
    DVector::from_iterator(
        mesh.n_free(),
        mesh.free_nodes()
            .iter()
            .map(|&i| 0.5 * (mesh.nodes()[i + 1] - mesh.nodes()[i - 1])),
    )
}

/// Load vector `b_i = a(v, φ_i)` for a function `v` that is taken to vanish
/// outside `(a, b)`.
pub fn assemble_load(
    mesh: &Mesh,
    kernel: &Kernel,
    quadrature_order: usize,
    v: &(dyn Fn(f64) -> f64 + Sync),
) -> Result<DVector<f64>> {
    check_order(quadrature_order)?;
    check_collar(mesh, kernel)?;
    let (a, b) = mesh.domain();
    let v = |x: f64| if x > a && x < b { v(x) } else { 0.0 };
    let rules = PairRules::new(*kernel, quadrature_order);
    let elements: Vec<LocalElement> = (0..mesh.n_elements())
        .map(|e| LocalElement::new(mesh, e))
        .collect();
    let n = mesh.n_free();
    let mut load = DVector::<f64>::zeros(n);

    let outer: Vec<usize> = (0..elements.len()).collect();
    for batch in outer.chunks(BATCH) {
        let results: Vec<Vec<(usize, f64)>> = batch
            .par_iter()
            .map(|&ei| {
                let e = &elements[ei];
                let mut entries = Vec::new();
                for (fi, f) in elements.iter().enumerate() {
                    if !e.has_dof() && !f.has_dof() {
                        continue;
                    }
                    let class = rules.classify(ei, (e.x0, e.x1), fi, (f.x0, f.x1));
                    let pd = PairDofs::new(e, f);
                    let mut local = [0.0f64; 4];
                    rules.visit(class, (e.x0, e.x1), (f.x0, f.x1), |x, z, w| {
                        let se = e.shape(x);
                        let sf = f.shape(z);
                        let dv = w * (v(x) - v(z));
                        for slot in 0..pd.dofs.len() {
                            let ve = pd.in_e[slot].map_or(0.0, |s| se[s]);
                            let vf = pd.in_f[slot].map_or(0.0, |s| sf[s]);
                            local[slot] += dv * (ve - vf);
                        }
                    });
                    for (slot, &d) in pd.dofs.iter().enumerate() {
                        entries.push((d, local[slot]));
                    }
                }
                entries
            })
            .collect();
        for entries in results {
            for (i, val) in entries {
                load[i] += val;
            }
        }
    }

    if kernel.kind() == KernelKind::Fractional {
        let (lo, hi) = mesh.meshed_region();
        for ei in 0..mesh.n_elements() {
            let e = LocalElement::new(mesh, ei);
            if !e.has_dof() {
                continue;
            }
            for end in [lo, hi] {
                rules.visit_tail((e.x0, e.x1), end, |x, w| {
                    let s = e.shape(x);
                    for a in 0..2 {
                        if let Some(i) = e.dofs[a] {
                            load[i] += 2.0 * w * v(x) * s[a];
                        }
                    }
                });
            }
        }
    }
    if load.iter().any(|x| !x.is_finite()) {
        return Err(Error::Assembly("non-finite load entry".into()));
    }
    Ok(load)
}
