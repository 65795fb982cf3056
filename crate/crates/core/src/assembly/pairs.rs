//! Quadrature over pairs of elements `e x f` for integrands of the form
//! `F(x, z) k(x, z)`.
//!
//! Disjoint pairs well inside the horizon use a tensor Gauss rule. Pairs that
//! touch, coincide, or straddle the horizon are integrated in relative
//! coordinates `(x, r = z - x)`: the `r` range is split at the breakpoints of
//! the overlap length, at `0` and at `±ε`, and pieces ending at `r = 0` use
//! a Gauss-Jacobi rule that absorbs `|r|^{1-2s}`. This relies on `F`
//! vanishing quadratically on the diagonal, which holds for differences of
//! functions that are Lipschitz inside each element.

use crate::kernel::Kernel;
use crate::quadrature::{gauss_jacobi_left, gauss_legendre, Rule};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairClass {
    Identical,
    Adjacent,
    Disjoint,
    /// Disjoint, partially beyond the horizon.
    Straddling,
    /// Entirely beyond the horizon.
    OutOfRange,
}

#[derive(Debug, Clone)]
pub struct PairRules {
    kernel: Kernel,
    tensor: Rule,
    relative: Rule,
    inner: Rule,
    singular: Rule,
}

impl PairRules {
    pub fn new(kernel: Kernel, order: usize) -> Self {
        let singular = if kernel.is_singular() {
            gauss_jacobi_left(order, 1.0 - 2.0 * kernel.s())
        } else {
            gauss_legendre(order)
        };
        Self {
            kernel,
            tensor: gauss_legendre(order),
            relative: gauss_legendre(order),
            inner: gauss_legendre(order),
            singular,
        }
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn classify(&self, ei: usize, e: (f64, f64), fi: usize, f: (f64, f64)) -> PairClass {
        if ei == fi {
            return PairClass::Identical;
        }
        if ei.abs_diff(fi) == 1 {
            return PairClass::Adjacent;
        }
        let gap = (f.0 - e.1).max(e.0 - f.1);
        let span = (f.1 - e.0).max(e.1 - f.0);
        let eps = self.kernel.epsilon();
        if gap >= eps {
            PairClass::OutOfRange
        } else if span > eps {
            PairClass::Straddling
        } else {
            PairClass::Disjoint
        }
    }

    /// Calls `visit(x, z, weight)` for every quadrature point of
    /// `∬_{e x f} F(x, z) k(x, z) dz dx ≈ Σ weight F(x, z)`.
    pub fn visit(
        &self,
        class: PairClass,
        e: (f64, f64),
        f: (f64, f64),
        mut visit: impl FnMut(f64, f64, f64),
    ) {
        match class {
            PairClass::OutOfRange => {}
            PairClass::Disjoint => {
                for (x, wx) in self.tensor.mapped(e.0, e.1) {
                    for (z, wz) in self.tensor.mapped(f.0, f.1) {
                        visit(x, z, wx * wz * self.kernel.radial(z - x));
                    }
                }
            }
            PairClass::Identical | PairClass::Adjacent | PairClass::Straddling => {
                self.visit_relative(e, f, &mut visit)
            }
        }
    }

    fn visit_relative(&self, e: (f64, f64), f: (f64, f64), visit: &mut impl FnMut(f64, f64, f64)) {
        let (x0, x1) = e;
        let (z0, z1) = f;
        let lo = z0 - x1;
        let hi = z1 - x0;
        let eps = self.kernel.epsilon();

        let mut breaks = [lo, hi, z0 - x0, z1 - x1, 0.0, -eps, eps];
        breaks.sort_by(f64::total_cmp);
        let mut pieces: Vec<(f64, f64)> = Vec::with_capacity(6);
        let mut prev = lo;
        for &b in &breaks {
            if b > prev && b <= hi {
                pieces.push((prev, b));
                prev = b;
            }
        }

        for (p, q) in pieces {
            let mid = 0.5 * (p + q);
            if mid.abs() > eps {
                continue;
            }
            if self.kernel.is_singular() && (p == 0.0 || q == 0.0) {
                let (len, sign) = if p == 0.0 { (q, 1.0) } else { (-p, -1.0) };
                // ∫_0^len ρ^{-1-2s} Q(±ρ) dρ = len^{-2s} ∫_0^1 t^{1-2s} Q(±len t)/t² dt
                let scale = self.kernel.constant() * len.powf(-2.0 * self.kernel.s());
                for (&t, &wt) in self.singular.nodes.iter().zip(&self.singular.weights) {
                    let r = sign * len * t;
                    self.visit_overlap(e, f, r, scale * wt / (t * t), visit);
                }
            } else {
                for (r, wr) in self.relative.mapped(p, q) {
                    let k = self.kernel.radial(r);
                    if k != 0.0 {
                        self.visit_overlap(e, f, r, wr * k, visit);
                    }
                }
            }
        }
    }

    /// Quadrature in `x` over `{x ∈ e : x + r ∈ f}`.
    fn visit_overlap(
        &self,
        e: (f64, f64),
        f: (f64, f64),
        r: f64,
        weight: f64,
        visit: &mut impl FnMut(f64, f64, f64),
    ) {
        let a = e.0.max(f.0 - r);
        let b = e.1.min(f.1 - r);
        if b <= a {
            return;
        }
        for (x, wx) in self.inner.mapped(a, b) {
            visit(x, x + r, weight * wx);
        }
    }

    /// Points and weights for `∫_e F(x) T(x) dx` where `T` is the one-sided
    /// tail toward `end`, singular like `|x - end|^{-2s}` when `e` touches
    /// `end`. `F` must vanish quadratically at `end` in that case.
    pub fn visit_tail(&self, e: (f64, f64), end: f64, mut visit: impl FnMut(f64, f64)) {
        let touches = e.0 == end || e.1 == end;
        if touches && self.kernel.is_singular() {
            let len = e.1 - e.0;
            let s = self.kernel.s();
            let rule = gauss_jacobi_left(self.tensor.len(), 2.0 - 2.0 * s);
            for (&t, &wt) in rule.nodes.iter().zip(&rule.weights) {
                let d = len * t;
                let x = if e.0 == end { e.0 + d } else { e.1 - d };
                let tail = self.kernel.one_sided_tail(d);
                visit(x, len * wt * tail * t.powf(2.0 * s - 2.0));
            }
        } else {
            for (x, w) in self.tensor.mapped(e.0, e.1) {
                let d = (x - end).abs();
                visit(x, w * self.kernel.one_sided_tail(d));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn integrate(rules: &PairRules, e: (f64, f64), f: (f64, f64), ei: usize, fi: usize, g: impl Fn(f64, f64) -> f64) -> f64 {
        let class = rules.classify(ei, e, fi, f);
        let mut sum = 0.0;
        rules.visit(class, e, f, |x, z, w| sum += w * g(x, z));
        sum
    }

    #[test]
    fn identical_pair_of_squared_difference() {
        // ∬_{[0,1]^2} (x - z)^2 |x - z|^{-1-2s} = 2 / ((2 - 2s)(3 - 2s))
        for &s in &[0.2, 0.5, 0.8] {
            let k = Kernel::fractional(s).unwrap();
            let rules = PairRules::new(k, 6);
            let v = integrate(&rules, (0.0, 1.0), (0.0, 1.0), 0, 0, |x, z| (x - z).powi(2));
            let exact = 2.0 / ((2.0 - 2.0 * s) * (3.0 - 2.0 * s));
            assert_relative_eq!(v, exact, max_relative = 1e-12);
        }
    }

    #[test]
    fn adjacent_pair_of_squared_difference() {
        // ∫_0^1∫_1^2 (z - x)^{1-2s} dz dx, exact value from the r-profile
        // min(r, 2 - r) on [0, 2].
        let s = 0.7;
        let k = Kernel::fractional(s).unwrap();
        // r^{-0.4} on [1, 2] is smooth but not polynomial, hence the order.
        let rules = PairRules::new(k, 12);
        let v = integrate(&rules, (0.0, 1.0), (1.0, 2.0), 0, 1, |x, z| (x - z).powi(2));
        let p = 2.0 - 2.0 * s;
        // ∫_0^1 r^{p} dr + ∫_1^2 (2 - r) r^{p-1} dr
        let exact = 1.0 / (p + 1.0) + 2.0 * (2f64.powf(p) - 1.0) / p - (2f64.powf(p + 1.0) - 1.0) / (p + 1.0);
        assert_relative_eq!(v, exact, max_relative = 1e-12);
    }

    #[test]
    fn straddling_pair_respects_horizon() {
        // constant kernel, F = 1: measure of {|x - z| <= 0.5} in [0,1]x[1.2,2]
        let k = Kernel::constant_ball(0.5, 0.5).unwrap();
        let rules = PairRules::new(k, 4);
        let class = rules.classify(0, (0.0, 1.0), 3, (1.2, 2.0));
        assert_eq!(class, PairClass::Straddling);
        let v = integrate(&rules, (0.0, 1.0), (1.2, 2.0), 0, 3, |_, _| 1.0);
        // triangle with legs 0.3
        assert_relative_eq!(v, 0.045, max_relative = 1e-12);
    }

    #[test]
    fn tail_on_boundary_element() {
        // ∫_0^h (x/h)^2 (1/2s) x^{-2s} dx = h^{1-2s} / (2s (3 - 2s))
        let s = 0.7;
        let h = 0.25;
        let rules = PairRules::new(Kernel::fractional(s).unwrap(), 5);
        let mut v = 0.0;
        rules.visit_tail((0.0, h), 0.0, |x, w| v += w * (x / h).powi(2));
        assert_relative_eq!(v, h.powf(1.0 - 2.0 * s) / (2.0 * s * (3.0 - 2.0 * s)), max_relative = 1e-12);
    }
}
