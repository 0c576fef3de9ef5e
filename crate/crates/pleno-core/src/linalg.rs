//! Small fixed-size vectors, matrices, rotations, and dense solvers.
//!
//! Everything is generic over [`Real`] where the projection chain needs
//! derivatives; the `f64`-only helpers (Jacobi eigenvectors, Cholesky) serve
//! the fitting code.

use crate::scalar::Real;
use alloc::vec;
use alloc::vec::Vec;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Vec2<T> {
    pub x: T,
    pub y: T,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Vec3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> Vec2<T> {
    pub fn new(x: T, y: T) -> Self {
        Vec2 { x, y }
    }
    pub fn norm(self) -> T {
        (self.x * self.x + self.y * self.y).sqrt()
    }
    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y
    }
}

impl<T: Real> core::ops::Add for Vec2<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}
impl<T: Real> core::ops::Sub for Vec2<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}
impl<T: Real> core::ops::Mul<T> for Vec2<T> {
    type Output = Self;
    fn mul(self, s: T) -> Self {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl<T: Real> Vec3<T> {
    pub fn new(x: T, y: T, z: T) -> Self {
        Vec3 { x, y, z }
    }
    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }
    pub fn cross(self, o: Self) -> Self {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }
    pub fn norm(self) -> T {
        self.dot(self).sqrt()
    }
    pub fn xy(self) -> Vec2<T> {
        Vec2::new(self.x, self.y)
    }
    pub fn map_f64(self) -> Vec3<f64> {
        Vec3::new(self.x.value(), self.y.value(), self.z.value())
    }
}

impl<T: Real> core::ops::Add for Vec3<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}
impl<T: Real> core::ops::Sub for Vec3<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}
impl<T: Real> core::ops::Mul<T> for Vec3<T> {
    type Output = Self;
    fn mul(self, s: T) -> Self {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}
impl<T: Real> core::ops::Neg for Vec3<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Row-major 3x3 matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat3<T> {
    pub m: [[T; 3]; 3],
}

impl<T: Real> Mat3<T> {
    pub fn identity() -> Self {
        let o = T::one();
        let z = T::zero();
        Mat3 { m: [[o, z, z], [z, o, z], [z, z, o]] }
    }

    pub fn from_rows(r0: Vec3<T>, r1: Vec3<T>, r2: Vec3<T>) -> Self {
        Mat3 {
            m: [[r0.x, r0.y, r0.z], [r1.x, r1.y, r1.z], [r2.x, r2.y, r2.z]],
        }
    }

    pub fn row(&self, i: usize) -> Vec3<T> {
        Vec3::new(self.m[i][0], self.m[i][1], self.m[i][2])
    }

    pub fn col(&self, j: usize) -> Vec3<T> {
        Vec3::new(self.m[0][j], self.m[1][j], self.m[2][j])
    }

    pub fn transpose(&self) -> Self {
        let mut t = *self;
        for i in 0..3 {
            for j in 0..3 {
                t.m[i][j] = self.m[j][i];
            }
        }
        t
    }

    pub fn mul_vec(&self, v: Vec3<T>) -> Vec3<T> {
        Vec3::new(self.row(0).dot(v), self.row(1).dot(v), self.row(2).dot(v))
    }

    pub fn mul_mat(&self, o: &Self) -> Self {
        let mut r = Mat3::identity();
        for i in 0..3 {
            for j in 0..3 {
                r.m[i][j] = self.m[i][0] * o.m[0][j] + self.m[i][1] * o.m[1][j] + self.m[i][2] * o.m[2][j];
            }
        }
        r
    }

    /// Rotation about x by `a`.
    pub fn rot_x(a: T) -> Self {
        let (s, c) = (a.sin(), a.cos());
        let o = T::one();
        let z = T::zero();
        Mat3 { m: [[o, z, z], [z, c, -s], [z, s, c]] }
    }

    /// Rotation about y by `a`.
    pub fn rot_y(a: T) -> Self {
        let (s, c) = (a.sin(), a.cos());
        let o = T::one();
        let z = T::zero();
        Mat3 { m: [[c, z, s], [z, o, z], [-s, z, c]] }
    }

    /// Rotation about z by `a`.
    pub fn rot_z(a: T) -> Self {
        let (s, c) = (a.sin(), a.cos());
        let o = T::one();
        let z = T::zero();
        Mat3 { m: [[c, -s, z], [s, c, z], [z, z, o]] }
    }

    /// Rz(z) * Ry(y) * Rx(x) Euler composition.
    pub fn rot_zyx(x: T, y: T, z: T) -> Self {
        Mat3::rot_z(z).mul_mat(&Mat3::rot_y(y)).mul_mat(&Mat3::rot_x(x))
    }

    /// Rodrigues rotation `exp([w]x)`, series-stable near zero.
    pub fn exp_so3(w: Vec3<T>) -> Self {
        let theta2 = w.dot(w);
        let theta = theta2.sqrt();
        // sin(t)/t and (1-cos(t))/t^2 with series fallback below sqrt(eps)
        let (a, b) = if theta.value() < 1e-6 {
            let half = T::from_f64(0.5);
            let s6 = T::from_f64(1.0 / 6.0);
            let s24 = T::from_f64(1.0 / 24.0);
            (T::one() - theta2 * s6, half - theta2 * s24)
        } else {
            ((theta.sin()) / theta, (T::one() - theta.cos()) / theta2)
        };
        let z = T::zero();
        let wx = Mat3 {
            m: [
                [z, -w.z, w.y],
                [w.z, z, -w.x],
                [-w.y, w.x, z],
            ],
        };
        let wx2 = wx.mul_mat(&wx);
        let mut r = Mat3::identity();
        for i in 0..3 {
            for j in 0..3 {
                r.m[i][j] = r.m[i][j] + wx.m[i][j] * a + wx2.m[i][j] * b;
            }
        }
        r
    }
}

impl Mat3<f64> {
    /// Rotation-vector logarithm (inverse of [`Mat3::exp_so3`]).
    pub fn log_so3(&self) -> Vec3<f64> {
        let tr = self.m[0][0] + self.m[1][1] + self.m[2][2];
        let c = ((tr - 1.0) * 0.5).clamp(-1.0, 1.0);
        let theta = libm::acos(c);
        let v = Vec3::new(
            self.m[2][1] - self.m[1][2],
            self.m[0][2] - self.m[2][0],
            self.m[1][0] - self.m[0][1],
        );
        if theta < 1e-9 {
            v * 0.5
        } else {
            v * (theta / (2.0 * libm::sin(theta)))
        }
    }

    /// Deviation of `R^T R` from the identity, max-abs entry.
    pub fn orthonormality_residual(&self) -> f64 {
        let g = self.transpose().mul_mat(self);
        let mut worst = 0.0f64;
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g.m[i][j] - target).abs());
            }
        }
        worst
    }

    /// Nearest rotation by polar decomposition (two Newton steps on the
    /// orthogonality defect, adequate for nearly-orthonormal inputs).
    pub fn orthonormalize(&self) -> Self {
        let mut q = *self;
        for _ in 0..4 {
            let qt_inv = q.transpose().inverse();
            for i in 0..3 {
                for j in 0..3 {
                    q.m[i][j] = 0.5 * (q.m[i][j] + qt_inv.m[i][j]);
                }
            }
        }
        q
    }

    pub fn inverse(&self) -> Self {
        let m = &self.m;
        let c00 = m[1][1] * m[2][2] - m[1][2] * m[2][1];
        let c01 = m[1][2] * m[2][0] - m[1][0] * m[2][2];
        let c02 = m[1][0] * m[2][1] - m[1][1] * m[2][0];
        let det = m[0][0] * c00 + m[0][1] * c01 + m[0][2] * c02;
        let inv = 1.0 / det;
        Mat3 {
            m: [
                [
                    c00 * inv,
                    (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv,
                    (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv,
                ],
                [
                    c01 * inv,
                    (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv,
                    (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv,
                ],
                [
                    c02 * inv,
                    (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv,
                    (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv,
                ],
            ],
        }
    }
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Returns eigenvalues (ascending) and matching eigenvectors as columns of
/// the returned row-major matrix. `a` is `n x n` symmetric, row-major.
pub fn jacobi_eigen(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut m = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _sweep in 0..64 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[i * n + j] * m[i * n + j];
            }
        }
        if off < 1e-28 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + libm::sqrt(1.0 + tau * tau))
                } else {
                    -1.0 / (-tau + libm::sqrt(1.0 + tau * tau))
                };
                let c = 1.0 / libm::sqrt(1.0 + t * t);
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[i * n + i].partial_cmp(&m[j * n + j]).unwrap());
    let vals: Vec<f64> = order.iter().map(|&i| m[i * n + i]).collect();
    let mut vecs = vec![0.0; n * n];
    for (newj, &oldj) in order.iter().enumerate() {
        for i in 0..n {
            vecs[i * n + newj] = v[i * n + oldj];
        }
    }
    (vals, vecs)
}

/// Solve `A x = b` for symmetric positive definite `A` (row-major, `n x n`)
/// by Cholesky. Returns `None` when a pivot collapses.
pub fn cholesky_solve(a: &[f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = a.to_vec();
    for j in 0..n {
        let mut diag = l[j * n + j];
        for k in 0..j {
            diag -= l[j * n + k] * l[j * n + k];
        }
        if diag <= 0.0 || !diag.is_finite() {
            return None;
        }
        let dj = libm::sqrt(diag);
        l[j * n + j] = dj;
        for i in (j + 1)..n {
            let mut s = l[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / dj;
        }
    }
    // forward then back substitution
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            let t = l[i * n + k] * y[k];
            y[i] -= t;
        }
        y[i] /= l[i * n + i];
    }
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            let t = l[k * n + i] * y[k];
            y[i] -= t;
        }
        y[i] /= l[i * n + i];
    }
    Some(y)
}

/// Least-squares solve of an overdetermined dense system via normal
/// equations with Cholesky; columns must be independent.
pub fn lstsq(a: &[f64], b: &[f64], rows: usize, cols: usize) -> Option<Vec<f64>> {
    let mut ata = vec![0.0; cols * cols];
    let mut atb = vec![0.0; cols];
    for r in 0..rows {
        let row = &a[r * cols..(r + 1) * cols];
        for i in 0..cols {
            atb[i] += row[i] * b[r];
            for j in i..cols {
                ata[i * cols + j] += row[i] * row[j];
            }
        }
    }
    for i in 0..cols {
        for j in 0..i {
            ata[i * cols + j] = ata[j * cols + i];
        }
    }
    cholesky_solve(&ata, &atb, cols)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_log_roundtrip() {
        let w = Vec3::new(0.3, -0.2, 0.5);
        let r = Mat3::exp_so3(w);
        assert!(r.orthonormality_residual() < 1e-12);
        let back = r.log_so3();
        assert!((back.x - w.x).abs() < 1e-12);
        assert!((back.y - w.y).abs() < 1e-12);
        assert!((back.z - w.z).abs() < 1e-12);
    }

    #[test]
    fn exp_small_angle_series() {
        let w = Vec3::new(1e-9, -2e-9, 1e-9);
        let r = Mat3::exp_so3(w);
        assert!(r.orthonormality_residual() < 1e-14);
        assert!((r.m[0][1] + 1e-9).abs() < 1e-15);
    }

    #[test]
    fn jacobi_small_symmetric() {
        // eigenvalues of [[2,1],[1,2]] are 1 and 3
        let a = [2.0, 1.0, 1.0, 2.0];
        let (vals, vecs) = jacobi_eigen(&a, 2);
        assert!((vals[0] - 1.0).abs() < 1e-12);
        assert!((vals[1] - 3.0).abs() < 1e-12);
        // eigenvector for 1 is (1,-1)/sqrt(2)
        let r = (vecs[0] / vecs[2]).abs();
        assert!((r - 1.0).abs() < 1e-10);
    }

    #[test]
    fn cholesky_solves_spd() {
        // A = [[4,2],[2,3]], b = [8, 7] -> x = [1.25, 1.5]
        let a = [4.0, 2.0, 2.0, 3.0];
        let b = [8.0, 7.0];
        let x = cholesky_solve(&a, &b, 2).unwrap();
        assert!((x[0] - 1.25).abs() < 1e-12);
        assert!((x[1] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn orthonormalize_repairs_drift() {
        let mut r = Mat3::exp_so3(Vec3::new(0.2, 0.1, -0.4));
        r.m[0][0] += 1e-4;
        r.m[1][2] -= 2e-4;
        let q = r.orthonormalize();
        assert!(q.orthonormality_residual() < 1e-9);
    }
}
