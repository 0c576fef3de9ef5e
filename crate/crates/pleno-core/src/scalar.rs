//! Scalar abstraction: plain `f64` or forward-mode dual numbers.
//!
//! The forward projection chain is generic over [`Real`] so the same code
//! yields values (`f64`) or values plus exact partial derivatives
//! ([`Dual`]). Residual Jacobians in the calibration engine come from one
//! dual-number pass per residual block, never from finite differences.

use core::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};

/// Scalar supporting the operations used by the projection chain.
pub trait Real:
    Copy
    + PartialOrd
    + core::fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
{
    fn from_f64(v: f64) -> Self;
    /// Value part (the primal for dual numbers).
    fn value(self) -> f64;
    fn sqrt(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn abs(self) -> Self;
    fn recip(self) -> Self {
        Self::from_f64(1.0) / self
    }
    fn zero() -> Self {
        Self::from_f64(0.0)
    }
    fn one() -> Self {
        Self::from_f64(1.0)
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn value(self) -> f64 {
        self
    }
    fn sqrt(self) -> Self {
        libm::sqrt(self)
    }
    fn sin(self) -> Self {
        libm::sin(self)
    }
    fn cos(self) -> Self {
        libm::cos(self)
    }
    fn abs(self) -> Self {
        libm::fabs(self)
    }
}

/// Forward-mode dual number carrying `K` derivative lanes.
///
/// `K` bounds the number of parameters differentiated in one pass; the
/// calibration engine needs intrinsics plus one pose per residual, which
/// fits in 32 lanes for up to 10 micro-lens types.
#[derive(Clone, Copy, Debug)]
pub struct Dual<const K: usize> {
    pub re: f64,
    pub eps: [f64; K],
}

impl<const K: usize> Dual<K> {
    /// Constant with zero derivative.
    pub fn constant(v: f64) -> Self {
        Dual { re: v, eps: [0.0; K] }
    }

    /// Variable seeded with derivative 1 in `lane`.
    pub fn variable(v: f64, lane: usize) -> Self {
        let mut eps = [0.0; K];
        eps[lane] = 1.0;
        Dual { re: v, eps }
    }

    /// Partial derivative carried in `lane`.
    pub fn deriv(&self, lane: usize) -> f64 {
        self.eps[lane]
    }
}

impl<const K: usize> PartialEq for Dual<K> {
    fn eq(&self, other: &Self) -> bool {
        self.re == other.re
    }
}

impl<const K: usize> PartialOrd for Dual<K> {
    fn partial_cmp(&self, other: &Self) -> Option<core::cmp::Ordering> {
        self.re.partial_cmp(&other.re)
    }
}

impl<const K: usize> Add for Dual<K> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        let mut eps = self.eps;
        for (e, r) in eps.iter_mut().zip(rhs.eps.iter()) {
            *e += r;
        }
        Dual { re: self.re + rhs.re, eps }
    }
}

impl<const K: usize> Sub for Dual<K> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        let mut eps = self.eps;
        for (e, r) in eps.iter_mut().zip(rhs.eps.iter()) {
            *e -= r;
        }
        Dual { re: self.re - rhs.re, eps }
    }
}

impl<const K: usize> Mul for Dual<K> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let mut eps = [0.0; K];
        for i in 0..K {
            eps[i] = self.eps[i] * rhs.re + rhs.eps[i] * self.re;
        }
        Dual { re: self.re * rhs.re, eps }
    }
}

impl<const K: usize> Div for Dual<K> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let inv = 1.0 / rhs.re;
        let re = self.re * inv;
        let mut eps = [0.0; K];
        for i in 0..K {
            eps[i] = (self.eps[i] - re * rhs.eps[i]) * inv;
        }
        Dual { re, eps }
    }
}

impl<const K: usize> Neg for Dual<K> {
    type Output = Self;
    fn neg(self) -> Self {
        let mut eps = self.eps;
        for e in eps.iter_mut() {
            *e = -*e;
        }
        Dual { re: -self.re, eps }
    }
}

impl<const K: usize> AddAssign for Dual<K> {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}
impl<const K: usize> SubAssign for Dual<K> {
    fn sub_assign(&mut self, rhs: Self) {
        *self = *self - rhs;
    }
}
impl<const K: usize> MulAssign for Dual<K> {
    fn mul_assign(&mut self, rhs: Self) {
        *self = *self * rhs;
    }
}
impl<const K: usize> DivAssign for Dual<K> {
    fn div_assign(&mut self, rhs: Self) {
        *self = *self / rhs;
    }
}

impl<const K: usize> Real for Dual<K> {
    fn from_f64(v: f64) -> Self {
        Dual::constant(v)
    }
    fn value(self) -> f64 {
        self.re
    }
    fn sqrt(self) -> Self {
        let s = libm::sqrt(self.re);
        let scale = 0.5 / s;
        let mut eps = self.eps;
        for e in eps.iter_mut() {
            *e *= scale;
        }
        Dual { re: s, eps }
    }
    fn sin(self) -> Self {
        let (s, c) = (libm::sin(self.re), libm::cos(self.re));
        let mut eps = self.eps;
        for e in eps.iter_mut() {
            *e *= c;
        }
        Dual { re: s, eps }
    }
    fn cos(self) -> Self {
        let (s, c) = (libm::sin(self.re), libm::cos(self.re));
        let mut eps = self.eps;
        for e in eps.iter_mut() {
            *e *= -s;
        }
        Dual { re: c, eps }
    }
    fn abs(self) -> Self {
        if self.re < 0.0 {
            -self
        } else {
            self
        }
    }
}
