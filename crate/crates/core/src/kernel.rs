//! Interaction kernels of the nonlocal operator.

use statrs::function::gamma::gamma;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    /// `constant * |x - z|^{-(1 + 2s)}` on the whole line.
    Fractional,
    /// The fractional kernel cut off beyond the horizon.
    TruncatedFractional,
    /// `constant` inside the horizon, zero outside.
    ConstantBall,
}

impl KernelKind {
    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Fractional => "fractional",
            KernelKind::TruncatedFractional => "truncated_fractional",
            KernelKind::ConstantBall => "constant_ball",
        }
    }

    pub fn parse(text: &str) -> Option<Self> {
        match text {
            "fractional" => Some(KernelKind::Fractional),
            "truncated_fractional" => Some(KernelKind::TruncatedFractional),
            "constant_ball" => Some(KernelKind::ConstantBall),
            _ => None,
        }
    }
}

/// Symmetric, nonnegative interaction kernel in one dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernel {
    kind: KernelKind,
    s: f64,
    epsilon: f64,
    constant: f64,
}

impl Kernel {
    pub fn fractional(s: f64) -> Result<Self> {
        Self::new(KernelKind::Fractional, s, f64::INFINITY, 1.0)
    }

    pub fn truncated_fractional(s: f64, epsilon: f64) -> Result<Self> {
        Self::new(KernelKind::TruncatedFractional, s, epsilon, 1.0)
    }

    pub fn constant_ball(s: f64, epsilon: f64) -> Result<Self> {
        Self::new(KernelKind::ConstantBall, s, epsilon, 1.0)
    }

    pub fn new(kind: KernelKind, s: f64, epsilon: f64, constant: f64) -> Result<Self> {
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::InvalidKernel(format!("s = {s} outside (0, 1)")));
        }
        if !(constant > 0.0 && constant.is_finite()) {
            return Err(Error::InvalidKernel(format!(
                "constant must be positive, got {constant}"
            )));
        }
        let epsilon = match kind {
            KernelKind::Fractional => f64::INFINITY,
            _ => {
                if !(epsilon > 0.0 && epsilon.is_finite()) {
                    return Err(Error::InvalidKernel(format!(
                        "horizon must be positive and finite, got {epsilon}"
                    )));
                }
                epsilon
            }
        };
        Ok(Self {
            kind,
            s,
            epsilon,
            constant,
        })
    }

    pub fn with_constant(self, constant: f64) -> Result<Self> {
        Self::new(self.kind, self.s, self.epsilon, constant)
    }

    /// Replaces the constant by the 1D normalization constant of the
    /// fractional Laplacian.
    pub fn normalized(self) -> Result<Self> {
        self.with_constant(normalization_constant(self.s)?)
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    /// Horizon; infinite for the untruncated kernel.
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn constant(&self) -> f64 {
        self.constant
    }

    /// Whether the kernel blows up like `|r|^{-1-2s}` at the origin.
    pub fn is_singular(&self) -> bool {
        self.kind != KernelKind::ConstantBall
    }

    /// Kernel as a function of the separation `r = z - x`, `r != 0`.
    #[inline]
    pub fn radial(&self, r: f64) -> f64 {
        let d = r.abs();
        match self.kind {
            KernelKind::Fractional => self.constant * d.powf(-1.0 - 2.0 * self.s),
            KernelKind::TruncatedFractional => {
                if d <= self.epsilon {
                    self.constant * d.powf(-1.0 - 2.0 * self.s)
                } else {
                    0.0
                }
            }
            KernelKind::ConstantBall => {
                if d <= self.epsilon {
                    self.constant
                } else {
                    0.0
                }
            }
        }
    }

    pub fn eval(&self, x: f64, z: f64) -> Result<f64> {
        if x == z {
            return Err(Error::SingularEvaluation(x));
        }
        Ok(self.radial(z - x))
    }

    /// `∫_{R \ (a, b)} k(x, z) dz` for `a < x < b`.
    pub fn tail_integral(&self, x: f64, domain: (f64, f64)) -> Result<f64> {
        let (a, b) = domain;
        if !(x > a && x < b) {
            return Err(Error::OutsideDomain { x, a, b });
        }
        Ok(self.one_sided_tail(x - a) + self.one_sided_tail(b - x))
    }

    /// `∫_d^∞ k(r) dr` for `d > 0`.
    pub(crate) fn one_sided_tail(&self, d: f64) -> f64 {
        let two_s = 2.0 * self.s;
        match self.kind {
            KernelKind::Fractional => self.constant / two_s * d.powf(-two_s),
            KernelKind::TruncatedFractional => {
                if d >= self.epsilon {
                    0.0
                } else {
                    self.constant / two_s * (d.powf(-two_s) - self.epsilon.powf(-two_s))
                }
            }
            KernelKind::ConstantBall => self.constant * (self.epsilon - d).max(0.0),
        }
    }
}

/// `4^s s Γ(s + 1/2) / (√π Γ(1 - s))`, the constant that makes the kernel
/// reproduce the Fourier symbol `|ξ|^{2s}` in one dimension.
pub fn normalization_constant(s: f64) -> Result<f64> {
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::InvalidKernel(format!("s = {s} outside (0, 1)")));
    }
    Ok(4f64.powf(s) * s * gamma(s + 0.5) / (std::f64::consts::PI.sqrt() * gamma(1.0 - s)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn fractional_value() {
        let k = Kernel::fractional(0.5).unwrap();
        assert_eq!(k.eval(0.0, 2.0).unwrap(), 0.25);
        assert_eq!(k.constant(), 1.0);
    }

    #[test]
    fn truncated_vanishes_outside_horizon() {
        let k = Kernel::truncated_fractional(0.5, 1.0).unwrap();
        assert_eq!(k.eval(0.0, 2.0).unwrap(), 0.0);
        assert_eq!(k.eval(0.0, 0.5).unwrap(), 4.0);
        let c = Kernel::constant_ball(0.5, 1.0).unwrap().with_constant(3.0).unwrap();
        assert_eq!(c.eval(0.0, 1.0).unwrap(), 3.0);
        assert_eq!(c.eval(0.0, 1.5).unwrap(), 0.0);
    }

    #[test]
    fn diagonal_is_an_error() {
        let k = Kernel::fractional(0.3).unwrap();
        assert!(matches!(k.eval(0.2, 0.2), Err(Error::SingularEvaluation(_))));
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(Kernel::fractional(0.0).is_err());
        assert!(Kernel::fractional(1.0).is_err());
        assert!(Kernel::truncated_fractional(0.5, 0.0).is_err());
        assert!(Kernel::fractional(0.5).unwrap().with_constant(-1.0).is_err());
    }

    #[test]
    fn tail_at_midpoint() {
        let k = Kernel::fractional(0.5).unwrap();
        assert_relative_eq!(k.tail_integral(0.5, (0.0, 1.0)).unwrap(), 4.0, epsilon = 1e-15);
        assert!(k.tail_integral(1.5, (0.0, 1.0)).is_err());
        assert!(k.tail_integral(0.0, (0.0, 1.0)).is_err());
    }

    #[test]
    fn tail_grows_toward_boundary() {
        let k = Kernel::fractional(0.4).unwrap();
        let mut prev = 0.0;
        for j in 1..12 {
            let t = k.tail_integral(10f64.powi(-j), (0.0, 1.0)).unwrap();
            assert!(t.is_finite() && t > prev);
            prev = t;
        }
    }

    #[test]
    fn truncated_tail_vanishes_far_from_complement() {
        let k = Kernel::truncated_fractional(0.5, 0.1).unwrap();
        assert_eq!(k.tail_integral(0.5, (0.0, 1.0)).unwrap(), 0.0);
        assert_eq!(k.tail_integral(0.1, (0.0, 1.0)).unwrap(), 0.0);
        assert!(k.tail_integral(0.05, (0.0, 1.0)).unwrap() > 0.0);
    }

    #[test]
    fn normalization_at_half() {
        assert_relative_eq!(
            normalization_constant(0.5).unwrap(),
            std::f64::consts::FRAC_1_PI,
            max_relative = 1e-13
        );
        for i in 1..10 {
            assert!(normalization_constant(i as f64 / 10.0).unwrap() > 0.0);
        }
        assert!(normalization_constant(1.0).is_err());
    }

    #[test]
    fn wide_truncation_matches_fractional() {
        let f = Kernel::fractional(0.3).unwrap();
        let t = Kernel::truncated_fractional(0.3, 3.0).unwrap();
        for i in 0..50 {
            let x = -1.0 + 0.06 * i as f64;
            let z = 2.0 - 0.05 * i as f64;
            if x != z {
                assert_eq!(f.eval(x, z).unwrap(), t.eval(x, z).unwrap());
            }
        }
    }

    proptest! {
        #[test]
        fn symmetric_and_nonnegative(
            x in -5.0f64..5.0,
            z in -5.0f64..5.0,
            s in 0.05f64..0.95,
            kind in 0usize..3,
        ) {
            prop_assume!(x != z);
            let kind = [KernelKind::Fractional, KernelKind::TruncatedFractional, KernelKind::ConstantBall][kind];
            let k = Kernel::new(kind, s, 1.5, 2.0).unwrap();
            let a = k.eval(x, z).unwrap();
            prop_assert_eq!(a, k.eval(z, x).unwrap());
            prop_assert!(a >= 0.0);
            if kind != KernelKind::Fractional && (x - z).abs() > 1.5 {
                prop_assert_eq!(a, 0.0);
            }
        }
    }
}
