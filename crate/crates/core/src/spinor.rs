//! Dense 2×2 complex matrices acting on the (a, b) sublattice spinor.

use std::ops::{Add, Mul, Neg, Sub};

use num_complex::Complex64;

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Row-major 2×2 complex matrix.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Spinor2x2(pub [[C64; 2]; 2]);

impl Spinor2x2 {
    pub const fn new(m00: C64, m01: C64, m10: C64, m11: C64) -> Self {
        Spinor2x2([[m00, m01], [m10, m11]])
    }

    pub const fn zero() -> Self {
        Spinor2x2([[ZERO, ZERO], [ZERO, ZERO]])
    }

    pub const fn identity() -> Self {
        Spinor2x2([[ONE, ZERO], [ZERO, ONE]])
    }

    pub const fn sigma1() -> Self {
        Spinor2x2([[ZERO, ONE], [ONE, ZERO]])
    }

    pub const fn sigma2() -> Self {
        Spinor2x2([[ZERO, C64::new(0.0, -1.0)], [I, ZERO]])
    }

    pub const fn sigma3() -> Self {
        Spinor2x2([[ONE, ZERO], [ZERO, C64::new(-1.0, 0.0)]])
    }

    /// `c0·I + d1·σ₁ + d2·σ₂ + d3·σ₃` with complex coefficients.
    pub fn from_pauli(c0: C64, d1: C64, d2: C64, d3: C64) -> Self {
        Spinor2x2([[c0 + d3, d1 - I * d2], [d1 + I * d2, c0 - d3]])
    }

    /// Inverse of [`from_pauli`](Self::from_pauli): coefficients `(c0, d1, d2, d3)`
    /// obtained as `½ Tr(σ_a M)`.
    pub fn pauli_coefficients(&self) -> [C64; 4] {
        let m = &self.0;
        [
            0.5 * (m[0][0] + m[1][1]),
            0.5 * (m[0][1] + m[1][0]),
            0.5 * I * (m[0][1] - m[1][0]),
            0.5 * (m[0][0] - m[1][1]),
        ]
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.0[i][j]
    }

    pub fn det(&self) -> C64 {
        self.0[0][0] * self.0[1][1] - self.0[0][1] * self.0[1][0]
    }

    pub fn trace(&self) -> C64 {
        self.0[0][0] + self.0[1][1]
    }

    pub fn inverse(&self) -> Option<Self> {
        let d = self.det();
        if d.norm() == 0.0 || !d.is_finite() {
            return None;
        }
        let m = &self.0;
        Some(Spinor2x2([[m[1][1] / d, -m[0][1] / d], [-m[1][0] / d, m[0][0] / d]]))
    }

    pub fn adjoint(&self) -> Self {
        let m = &self.0;
        Spinor2x2([[m[0][0].conj(), m[1][0].conj()], [m[0][1].conj(), m[1][1].conj()]])
    }

    pub fn scale(&self, s: C64) -> Self {
        let m = &self.0;
        Spinor2x2([[m[0][0] * s, m[0][1] * s], [m[1][0] * s, m[1][1] * s]])
    }

    pub fn scale_re(&self, s: f64) -> Self {
        self.scale(C64::new(s, 0.0))
    }

    /// Largest entry modulus.
    pub fn max_abs(&self) -> f64 {
        self.0.iter().flatten().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.0.iter().flatten().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Entries in row-major order as (re, im) pairs: 8 reals.
    pub fn to_reals(&self) -> [f64; 8] {
        let m = &self.0;
        [
            m[0][0].re, m[0][0].im, m[0][1].re, m[0][1].im, m[1][0].re, m[1][0].im, m[1][1].re,
            m[1][1].im,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|z| z.is_finite())
    }
}

impl Add for Spinor2x2 {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        let (a, b) = (&self.0, &o.0);
        Spinor2x2([[a[0][0] + b[0][0], a[0][1] + b[0][1]], [a[1][0] + b[1][0], a[1][1] + b[1][1]]])
    }
}

impl Sub for Spinor2x2 {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        self + (-o)
    }
}

impl Neg for Spinor2x2 {
    type Output = Self;
    fn neg(self) -> Self {
        self.scale_re(-1.0)
    }
}

impl Mul for Spinor2x2 {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let (a, b) = (&self.0, &o.0);
        let mut out = [[ZERO; 2]; 2];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        Spinor2x2(out)
    }
}

impl std::iter::Sum for Spinor2x2 {
    fn sum<It: Iterator<Item = Self>>(iter: It) -> Self {
        iter.fold(Spinor2x2::zero(), |a, b| a + b)
    }
}
