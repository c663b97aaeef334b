//! Symmetric 2×2 matrices: the per-node Hessian, cofactor and coefficient type.

use std::ops::{Add, Mul};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Sym2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Sym2 {
    pub const IDENTITY: Sym2 = Sym2 {
        xx: 1.0,
        xy: 0.0,
        yy: 1.0,
    };

    pub const fn new(xx: f64, xy: f64, yy: f64) -> Self {
        Sym2 { xx, xy, yy }
    }

    pub fn diag(a: f64, b: f64) -> Self {
        Sym2::new(a, 0.0, b)
    }

    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy
    }

    /// det(M)·M⁻¹, which in two dimensions is a pure rearrangement.
    pub fn cofactor(&self) -> Sym2 {
        Sym2::new(self.yy, -self.xy, self.xx)
    }

    pub fn inverse(&self) -> Option<Sym2> {
        let d = self.det();
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        Some(Sym2::new(self.yy / d, -self.xy / d, self.xx / d))
    }

    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        [
            self.xx * v[0] + self.xy * v[1],
            self.xy * v[0] + self.yy * v[1],
        ]
    }

    /// `vᵀ M w`.
    pub fn form(&self, v: [f64; 2], w: [f64; 2]) -> f64 {
        let mw = self.apply(w);
        v[0] * mw[0] + v[1] * mw[1]
    }

    /// Eigenvalues in ascending order, closed form.
    pub fn eigenvalues(&self) -> [f64; 2] {
        let m = 0.5 * self.trace();
        let r = (0.25 * (self.xx - self.yy).powi(2) + self.xy * self.xy).sqrt();
        [m - r, m + r]
    }

    /// Eigen-decomposition by a single Jacobi rotation.
    ///
    /// Returns `(λ₁, λ₂, c, s)` with eigenvectors `(c, -s)` for `λ₁` and
    /// `(s, c)` for `λ₂`. Off-diagonal entries below `tol` relative to
    /// the diagonal scale are treated as already diagonal.
    pub fn jacobi(&self, tol: f64) -> (f64, f64, f64, f64) {
        let scale = self.xx.abs().max(self.yy.abs()).max(f64::MIN_POSITIVE);
        if self.xy.abs() <= tol * scale {
            return (self.xx, self.yy, 1.0, 0.0);
        }
        let theta = (self.yy - self.xx) / (2.0 * self.xy);
        let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
        let t = if theta == 0.0 { 1.0 } else { t };
        let c = 1.0 / (t * t + 1.0).sqrt();
        let s = t * c;
        let l1 = self.xx - t * self.xy;
        let l2 = self.yy + t * self.xy;
        (l1, l2, c, s)
    }

    /// Symmetric positive square root via [`Sym2::jacobi`]; `None` unless SPD.
    pub fn sqrt_spd(&self, tol: f64) -> Option<Sym2> {
        let (l1, l2, c, s) = self.jacobi(tol);
        if !(l1 > 0.0 && l2 > 0.0) {
            return None;
        }
        let (r1, r2) = (l1.sqrt(), l2.sqrt());
        Some(Sym2::new(
            c * c * r1 + s * s * r2,
            c * s * (r2 - r1),
            s * s * r1 + c * c * r2,
        ))
    }

    pub fn square(&self) -> Sym2 {
        Sym2::new(
            self.xx * self.xx + self.xy * self.xy,
            self.xy * (self.xx + self.yy),
            self.xy * self.xy + self.yy * self.yy,
        )
    }

    pub fn is_finite(&self) -> bool {
        self.xx.is_finite() && self.xy.is_finite() && self.yy.is_finite()
    }

    pub fn max_abs_diff(&self, o: &Sym2) -> f64 {
        (self.xx - o.xx)
            .abs()
            .max((self.xy - o.xy).abs())
            .max((self.yy - o.yy).abs())
    }
}

impl Add for Sym2 {
    type Output = Sym2;
    fn add(self, o: Sym2) -> Sym2 {
        Sym2::new(self.xx + o.xx, self.xy + o.xy, self.yy + o.yy)
    }
}

impl Mul<f64> for Sym2 {
    type Output = Sym2;
    fn mul(self, s: f64) -> Sym2 {
        Sym2::new(self.xx * s, self.xy * s, self.yy * s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cofactor_is_det_times_inverse() {
        let m = Sym2::new(2.0, 0.3, 0.7);
        let inv = m.inverse().unwrap() * m.det();
        assert!(m.cofactor().max_abs_diff(&inv) < 1e-15);
    }

    proptest! {
        #[test]
        fn sqrt_squares_back(a in 0.05f64..5.0, b in 0.05f64..5.0, th in 0.0f64..3.2) {
            let (c, s) = (th.cos(), th.sin());
            let m = Sym2::new(c*c*a + s*s*b, c*s*(a-b), s*s*a + c*c*b);
            let r = m.sqrt_spd(1e-14).unwrap();
            prop_assert!(r.square().max_abs_diff(&m) < 1e-12 * (1.0 + a.max(b)));
            let ev = r.eigenvalues();
            prop_assert!(ev[0] > 0.0);
        }

        #[test]
        fn jacobi_eigs_match_closed_form(xx in -3.0f64..3.0, xy in -3.0f64..3.0, yy in -3.0f64..3.0) {
            let m = Sym2::new(xx, xy, yy);
            let (l1, l2, _, _) = m.jacobi(1e-14);
            let (lo, hi) = (l1.min(l2), l1.max(l2));
            let ev = m.eigenvalues();
            prop_assert!((lo - ev[0]).abs() < 1e-12 && (hi - ev[1]).abs() < 1e-12);
        }
    }
}
