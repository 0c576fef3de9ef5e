//! The deterministic forward model: thin lens, distortion, micro-lens
//! geometry, blur radius, and the full blur-aware projection.

use crate::error::Error;
use crate::linalg::{Mat3, Vec2, Vec3};
use crate::model::types::{lattice_offset, BapFeature, CameraParams, Distortion, Pose};
use crate::scalar::Real;
use alloc::vec::Vec;

/// Smallest homogeneous weight accepted when dehomogenizing.
const MIN_WEIGHT: f64 = 1e-12;

/// Thin-lens image of `p` (lens at the origin, optical axis z):
/// `p / (1 - z/F)`.
///
/// Fails when `p` lies on the front focal plane, where the image recedes to
/// infinity.
pub fn thin_lens_project<T: Real>(focal: T, p: Vec3<T>) -> Result<Vec3<T>, Error> {
    let w = T::one() - p.z / focal;
    if w.value().abs() < MIN_WEIGHT {
        return Err(Error::SingularConfiguration);
    }
    let inv = T::one() / w;
    Ok(p * inv)
}

/// Brown-Conrady remap of the lateral components in normalized coordinates
/// `(x/z, y/z)`; z is kept.
pub fn apply_distortion<T: Real>(dist: &Distortion<T>, p: Vec3<T>) -> Vec3<T> {
    let [k1, k2, k3] = dist.radial;
    let [p1, p2] = dist.tangential;
    let xn = p.x / p.z;
    let yn = p.y / p.z;
    let r2 = xn * xn + yn * yn;
    let two = T::from_f64(2.0);
    let rad = T::one() + r2 * (k1 + r2 * (k2 + r2 * k3));
    let xd = xn * rad + two * p1 * xn * yn + p2 * (r2 + two * xn * xn);
    let yd = yn * rad + p1 * (r2 + two * yn * yn) + two * p2 * xn * yn;
    Vec3::new(xd * p.z, yd * p.z, p.z)
}

/// Principal point of micro-image (k, l): the orthogonal drop of the
/// micro-lens center, `p0 = d/(D + d) * ((u0, v0) - c_kl) + c_kl` (pixels).
pub fn micro_lens_principal_point(params: &CameraParams, c_kl: Vec2<f64>) -> Vec2<f64> {
    let d = params.sensor.d;
    let big_d = params.mla.big_d;
    let w = d / (big_d + d);
    let pp = Vec2::new(params.main_lens.u0, params.main_lens.v0);
    (pp - c_kl) * w + c_kl
}

/// MLA pitch from the observed micro-image pitch: `pitch = mia * D/(D + d)`.
pub fn mla_pitch_from_mia(mia_pitch: f64, big_d: f64, d: f64) -> f64 {
    mia_pitch * big_d / (big_d + d)
}

/// Pitch ratio `lambda = D / (D + d)` (MLA pitch over micro-image pitch).
pub fn pitch_ratio(big_d: f64, d: f64) -> f64 {
    big_d / (big_d + d)
}

/// Signed blur radius (pixels) of a point at distance `a` from a lens of
/// focal `f` and aperture `aperture`, imaged on a screen at distance `d`:
/// `(1/s) * (aperture/2) * d * (1/f - 1/a - 1/d)`.
///
/// Negative when the lens focuses the point beyond the screen.
pub fn blur_radius(s: f64, aperture: f64, d: f64, f: f64, a: f64) -> f64 {
    (aperture / 2.0) * d * (1.0 / f - 1.0 / a - 1.0 / d) / s
}

/// Fixed (non-optimized) camera constants needed to evaluate the model.
#[derive(Clone, Copy, Debug)]
pub struct FixedParams {
    /// Pixel pitch (mm / pixel).
    pub pixel_size: f64,
    /// MLA grid extent.
    pub nk: usize,
    /// MLA grid extent.
    pub nl: usize,
    /// Number of micro-lens types.
    pub type_count: usize,
}

impl FixedParams {
    pub fn of(params: &CameraParams) -> Self {
        FixedParams {
            pixel_size: params.sensor.pixel_size,
            nk: params.mla.nk,
            nl: params.mla.nl,
            type_count: params.mla.type_count,
        }
    }
}

/// Forward model evaluated over any [`Real`] scalar, so the same code path
/// yields values (`f64`) and exact derivatives (dual numbers).
pub struct Projector<T> {
    pub focal: T,
    pub u0: T,
    pub v0: T,
    pub distortion: Distortion<T>,
    pub d: T,
    pub r_mla: Mat3<T>,
    pub tx: T,
    pub ty: T,
    pub big_d: T,
    pub pitch: T,
    pub focals: Vec<T>,
    fixed: FixedParams,
    inv_s: T,
}

impl<T: Real> Projector<T> {
    /// Builds the model from the packed intrinsic layout of
    /// [`CameraParams::to_vec`].
    pub fn from_slice(x: &[T], fixed: FixedParams) -> Self {
        Projector {
            focal: x[0],
            u0: x[1],
            v0: x[2],
            distortion: Distortion { radial: [x[3], x[4], x[5]], tangential: [x[6], x[7]] },
            d: x[8],
            r_mla: Mat3::rot_zyx(x[9], x[10], x[11]),
            tx: x[12],
            ty: x[13],
            big_d: x[14],
            pitch: x[15],
            focals: x[16..16 + fixed.type_count].iter().copied().collect(),
            fixed,
            inv_s: T::one() / T::from_f64(fixed.pixel_size),
        }
    }

    /// Center of micro-lens (k, l) in the camera frame (mm).
    pub fn micro_center(&self, k: usize, l: usize) -> Vec3<T> {
        let (lx, ly) = lattice_offset(k, l, self.fixed.nk, self.fixed.nl);
        let lat = Vec3::new(self.pitch * T::from_f64(lx), self.pitch * T::from_f64(ly), T::zero());
        let r = self.r_mla.mul_vec(lat);
        Vec3::new(r.x + self.tx, r.y + self.ty, r.z - self.big_d)
    }

    fn check_bounds(&self, k: usize, l: usize) -> Result<(), Error> {
        if k < self.fixed.nk && l < self.fixed.nl {
            Ok(())
        } else {
            Err(Error::LensIndexOutOfBounds { k: k as i32, l: l as i32 })
        }
    }

    /// Blur-aware projection of a camera-frame point through micro-lens
    /// (k, l): pixel center `(u, v)` and signed blur radius.
    ///
    /// Chain: main thin lens, lateral distortion, change into the micro-lens
    /// frame, perspective division by the micro-lens, and the pixel map with
    /// the micro-image pasted at its principal point.
    pub fn project_bap(&self, p_cam: Vec3<T>, k: usize, l: usize) -> Result<[T; 3], Error> {
        self.check_bounds(k, l)?;
        if p_cam.z.value() <= 0.0 {
            return Err(Error::BehindLens);
        }
        let pp = apply_distortion(&self.distortion, thin_lens_project(self.focal, p_cam)?);
        let c = self.micro_center(k, l);
        let p_mu = self.r_mla.transpose().mul_vec(pp - c);
        if p_mu.z.value().abs() < MIN_WEIGHT {
            return Err(Error::Dehomogenization);
        }
        let f_i = self.focals[(k + 2 * l) % self.fixed.type_count];
        let u0kl = self.u0 - c.x * self.inv_s;
        let v0kl = self.v0 - c.y * self.inv_s;
        let scale = self.d * self.inv_s;
        let u = u0kl + scale * (p_mu.x / p_mu.z);
        let v = v0kl + scale * (p_mu.y / p_mu.z);
        let half = T::from_f64(0.5);
        let rho = self.pitch * self.d * half * self.inv_s
            * (T::one() / f_i - T::one() / p_mu.z - T::one() / self.d);
        Ok([u, v, rho])
    }

    /// Pixel position where the ray from the main lens center through the
    /// center of micro-lens (k, l) meets the sensor.
    pub fn project_center(&self, k: usize, l: usize) -> Result<[T; 2], Error> {
        self.check_bounds(k, l)?;
        let c = self.micro_center(k, l);
        let scale = -(self.big_d + self.d) / c.z;
        Ok([
            self.u0 - c.x * scale * self.inv_s,
            self.v0 - c.y * scale * self.inv_s,
        ])
    }
}

impl Projector<f64> {
    pub fn of(params: &CameraParams) -> Self {
        Projector::from_slice(&params.to_vec(), FixedParams::of(params))
    }
}

/// Projects a world point through micro-lens (k, l) into a blur-aware
/// feature; `frame` and `cluster` are left at 0 for the caller to assign.
pub fn project_bap(
    params: &CameraParams,
    pose: &Pose,
    p_w: Vec3<f64>,
    k: usize,
    l: usize,
) -> Result<BapFeature, Error> {
    let proj = Projector::of(params);
    let [u, v, rho] = proj.project_bap(pose.transform(p_w), k, l)?;
    Ok(BapFeature {
        u,
        v,
        rho,
        frame: 0,
        k,
        l,
        lens_type: params.mla.lens_type(k, l),
        cluster: 0,
    })
}

/// Pixel reprojection of the main lens center through micro-lens (k, l).
pub fn project_micro_center(params: &CameraParams, k: usize, l: usize) -> Result<Vec2<f64>, Error> {
    let [u, v] = Projector::of(params).project_center(k, l)?;
    Ok(Vec2::new(u, v))
}
