//! Symmetric 2×2 tensors and tensor fields.

use crate::error::{Error, Result};

/// Symmetric 2×2 matrix [[a11, a12], [a12, a22]].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Sym2 {
    pub a11: f64,
    pub a12: f64,
    pub a22: f64,
}

impl Sym2 {
    pub const IDENTITY: Sym2 = Sym2 {
        a11: 1.0,
        a12: 0.0,
        a22: 1.0,
    };

    pub fn new(a11: f64, a12: f64, a22: f64) -> Self {
        Self { a11, a12, a22 }
    }

    pub fn diag(a11: f64, a22: f64) -> Self {
        Self { a11, a12: 0.0, a22 }
    }

    pub fn scaled(c: f64) -> Self {
        Self::diag(c, c)
    }

    pub fn mul_vec(&self, v: [f64; 2]) -> [f64; 2] {
        [
            self.a11 * v[0] + self.a12 * v[1],
            self.a12 * v[0] + self.a22 * v[1],
        ]
    }

    pub fn quad_form(&self, v: [f64; 2]) -> f64 {
        let w = self.mul_vec(v);
        w[0] * v[0] + w[1] * v[1]
    }

    pub fn bilinear(&self, u: [f64; 2], v: [f64; 2]) -> f64 {
        let w = self.mul_vec(u);
        w[0] * v[0] + w[1] * v[1]
    }

    pub fn trace(&self) -> f64 {
        self.a11 + self.a22
    }

    pub fn det(&self) -> f64 {
        self.a11 * self.a22 - self.a12 * self.a12
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> [f64; 2] {
        let m = 0.5 * self.trace();
        let d = (0.25 * (self.a11 - self.a22).powi(2) + self.a12 * self.a12).sqrt();
        [m - d, m + d]
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    pub fn add(&self, o: &Sym2) -> Sym2 {
        Sym2::new(self.a11 + o.a11, self.a12 + o.a12, self.a22 + o.a22)
    }

    pub fn sub(&self, o: &Sym2) -> Sym2 {
        Sym2::new(self.a11 - o.a11, self.a12 - o.a12, self.a22 - o.a22)
    }

    pub fn scale(&self, c: f64) -> Sym2 {
        Sym2::new(c * self.a11, c * self.a12, c * self.a22)
    }

    /// Spectral norm.
    pub fn norm(&self) -> f64 {
        let [l0, l1] = self.eigenvalues();
        l0.abs().max(l1.abs())
    }

    /// Fails unless the matrix is finite and positive definite.
    pub fn check_elliptic(&self, x: [f64; 2]) -> Result<()> {
        let ok = self.a11.is_finite()
            && self.a12.is_finite()
            && self.a22.is_finite()
            && self.a11 > 0.0
            && self.det() > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::EllipticityViolation {
                x,
                a11: self.a11,
                a12: self.a12,
                a22: self.a22,
            })
        }
    }
}

/// Spatially varying symmetric tensor.
pub trait TensorField: Sync {
    fn eval(&self, x: [f64; 2]) -> Sym2;
}

impl TensorField for Sym2 {
    fn eval(&self, _x: [f64; 2]) -> Sym2 {
        *self
    }
}

/// Tensor field given by a closure.
pub struct FnTensor<F>(pub F);

impl<F> TensorField for FnTensor<F>
where
    F: Fn([f64; 2]) -> Sym2 + Sync,
{
    fn eval(&self, x: [f64; 2]) -> Sym2 {
        (self.0)(x)
    }
}

impl<T: TensorField + ?Sized> TensorField for &T {
    fn eval(&self, x: [f64; 2]) -> Sym2 {
        (**self).eval(x)
    }
}
