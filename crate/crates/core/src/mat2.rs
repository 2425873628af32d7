use std::ops::{Mul, Sub};

use serde::{Deserialize, Serialize};

/// Real 2x2 matrix `[[a11, a12], [a21, a22]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mat2 {
    pub a11: f64,
    pub a12: f64,
    pub a21: f64,
    pub a22: f64,
}

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2::new(1.0, 0.0, 0.0, 1.0);
    pub const ZERO: Mat2 = Mat2::new(0.0, 0.0, 0.0, 0.0);

    pub const fn new(a11: f64, a12: f64, a21: f64, a22: f64) -> Self {
        Self { a11, a12, a21, a22 }
    }

    pub const fn diag(d1: f64, d2: f64) -> Self {
        Self::new(d1, 0.0, 0.0, d2)
    }

    /// Kahan's compensated `a11 a22 - a12 a21`.
    pub fn det(&self) -> f64 {
        diff_of_products(self.a11, self.a22, self.a12, self.a21)
    }

    pub fn trace(&self) -> f64 {
        self.a11 + self.a22
    }

    /// Largest singular value, closed form.
    pub fn norm(&self) -> f64 {
        let s = (self.a11 + self.a22).hypot(self.a21 - self.a12);
        let d = (self.a11 - self.a22).hypot(self.a12 + self.a21);
        0.5 * (s + d)
    }

    pub fn max_abs(&self) -> f64 {
        self.a11.abs().max(self.a12.abs()).max(self.a21.abs()).max(self.a22.abs())
    }

    pub fn scale(&self, k: f64) -> Mat2 {
        Mat2::new(self.a11 * k, self.a12 * k, self.a21 * k, self.a22 * k)
    }

    /// Inverse of a unimodular matrix (adjugate).
    pub fn inverse_sl2(&self) -> Mat2 {
        Mat2::new(self.a22, -self.a12, -self.a21, self.a11)
    }

    pub fn inverse(&self) -> Mat2 {
        self.inverse_sl2().scale(1.0 / self.det())
    }

    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        [self.a11 * v[0] + self.a12 * v[1], self.a21 * v[0] + self.a22 * v[1]]
    }

    pub fn commutator(&self, other: &Mat2) -> Mat2 {
        *self * *other - *other * *self
    }

    pub fn is_finite(&self) -> bool {
        self.a11.is_finite() && self.a12.is_finite() && self.a21.is_finite() && self.a22.is_finite()
    }
}

impl Mul for Mat2 {
    type Output = Mat2;
    fn mul(self, r: Mat2) -> Mat2 {
        Mat2::new(
            self.a11 * r.a11 + self.a12 * r.a21,
            self.a11 * r.a12 + self.a12 * r.a22,
            self.a21 * r.a11 + self.a22 * r.a21,
            self.a21 * r.a12 + self.a22 * r.a22,
        )
    }
}

impl Sub for Mat2 {
    type Output = Mat2;
    fn sub(self, r: Mat2) -> Mat2 {
        Mat2::new(self.a11 - r.a11, self.a12 - r.a12, self.a21 - r.a21, self.a22 - r.a22)
    }
}

/// Long products kept in QR form `Q * R`, `R = [[r11, r12], [0, r22]]`, with
/// the diagonal of `R` stored as logarithms. Neither overflow nor the loss of
/// the contracting direction can occur.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledMat2 {
    q: Mat2,
    log_r11: f64,
    log_r22: f64,
    r22_sign: f64,
    /// `r12 / r11`
    c12: f64,
}

/// `a b - c d` with one rounding error.
fn diff_of_products(a: f64, b: f64, c: f64, d: f64) -> f64 {
    let cd = c * d;
    let err = (-c).mul_add(d, cd);
    a.mul_add(b, -cd) + err
}

impl ScaledMat2 {
    pub const IDENTITY: ScaledMat2 =
        ScaledMat2 { q: Mat2::IDENTITY, log_r11: 0.0, log_r22: 0.0, r22_sign: 1.0, c12: 0.0 };

    pub fn from_mat(m: &Mat2) -> Self {
        let mut s = Self::IDENTITY;
        s.push(m);
        s
    }

    /// Left-multiply by a step: `self <- step * self`.
    pub fn push(&mut self, step: &Mat2) {
        let a = *step * self.q;
        let r11 = a.a11.hypot(a.a21);
        let (c, s) = if r11 > 0.0 { (a.a11 / r11, a.a21 / r11) } else { (1.0, 0.0) };
        let r12 = c * a.a12 + s * a.a22;
        let r22 = diff_of_products(c, a.a22, s, a.a12);
        self.q = Mat2::new(c, -s, s, c);
        let ratio = (self.log_r22 - self.log_r11).exp() * self.r22_sign;
        self.c12 += (r12 / r11) * ratio;
        self.log_r11 += r11.ln();
        self.log_r22 += r22.abs().ln();
        self.r22_sign *= r22.signum();
    }

    /// `R / r11`, norm-comparable to the direction of the product.
    fn reduced_r(&self) -> Mat2 {
        Mat2::new(1.0, self.c12, 0.0, self.r22_sign * (self.log_r22 - self.log_r11).exp())
    }

    pub fn log_norm(&self) -> f64 {
        self.log_r11 + self.reduced_r().norm().ln()
    }

    /// `log |det|` accumulated from the factors.
    pub fn log_abs_det(&self) -> f64 {
        self.log_r11 + self.log_r22
    }

    pub fn det(&self) -> f64 {
        self.q.det() * self.r22_sign * self.log_abs_det().exp()
    }

    /// Unit-norm matrix proportional to the product.
    pub fn dir(&self) -> Mat2 {
        let m = self.q * self.reduced_r();
        m.scale(1.0 / m.norm())
    }

    /// Plain matrix; entries overflow to infinity when the norm exceeds f64 range.
    pub fn to_mat(&self) -> Mat2 {
        (self.q * self.reduced_r()).scale(self.log_r11.exp())
    }

    /// Image of a vector, returned as (unit vector, log of its length).
    pub fn apply_log(&self, v: [f64; 2]) -> ([f64; 2], f64) {
        let w = (self.q * self.reduced_r()).apply(v);
        let n = w[0].hypot(w[1]);
        ([w[0] / n, w[1] / n], n.ln() + self.log_r11)
    }
}
