//! Value types describing a multi-focus plenoptic camera.
//!
//! All geometry is in millimeters; pixel conversions happen only at the
//! sensor boundary through the pixel pitch. The camera frame has its origin
//! at the main lens center, z toward the scene and y down; the MLA plane
//! sits at z = -D and the sensor at z = -(D + d).

use crate::error::Error;
use crate::linalg::{Mat3, Vec3};
use crate::scalar::Real;
use alloc::vec::Vec;

/// Main lens focusing mode: image plane behind (Galilean) or in front of
/// (Keplerian) the sensor, selecting the sign in the total-covering-distance
/// initialization formula.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LensConfiguration {
    Galilean,
    Keplerian,
}

/// Brown-Conrady lateral distortion coefficients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Distortion<T = f64> {
    /// Radial coefficients (k1, k2, k3) in normalized coordinates.
    pub radial: [T; 3],
    /// Tangential coefficients (p1, p2).
    pub tangential: [T; 2],
}

impl<T: Real> Distortion<T> {
    /// The identity mapping (all coefficients zero).
    pub fn none() -> Self {
        Distortion { radial: [T::zero(); 3], tangential: [T::zero(); 2] }
    }
}

/// Main lens: focal length, aperture, principal point, and distortion.
#[derive(Clone, Debug, PartialEq)]
pub struct MainLens {
    /// Focal length F (mm).
    pub focal: f64,
    /// Working f-number N.
    pub fnumber: f64,
    /// Principal point (pixels).
    pub u0: f64,
    /// Principal point (pixels).
    pub v0: f64,
    pub distortion: Distortion,
}

impl MainLens {
    /// Aperture diameter A = F / N (mm).
    pub fn aperture(&self) -> f64 {
        self.focal / self.fnumber
    }
}

/// Sensor geometry, including its distance to the MLA.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sensor {
    /// Pixel pitch s (mm / pixel).
    pub pixel_size: f64,
    pub width: usize,
    pub height: usize,
    /// MLA-to-sensor distance d (mm).
    pub d: f64,
}

/// Micro-lens array: pose relative to the main lens, pitch, and the
/// hexagonal type layout.
///
/// Lattice convention: row-offset axial coordinates, odd rows shifted by
/// half a pitch in x, row spacing (sqrt(3)/2) * pitch, indices centered on
/// the array's centroid.
#[derive(Clone, Debug, PartialEq)]
pub struct MlaGeometry {
    /// Rotation about x, y, z (rad), composed as Rz * Ry * Rx.
    pub rotation: [f64; 3],
    /// Lateral offset of the array center (mm).
    pub tx: f64,
    /// Lateral offset of the array center (mm).
    pub ty: f64,
    /// Main-lens-to-MLA distance D (mm).
    pub big_d: f64,
    /// Lens pitch (mm); doubles as the micro-lens aperture diameter.
    pub pitch: f64,
    /// Grid extent along k.
    pub nk: usize,
    /// Grid extent along l.
    pub nl: usize,
    /// Number of interleaved focal-length types I.
    pub type_count: usize,
}

impl MlaGeometry {
    /// Centered lattice coordinates of micro-lens (k, l) in units of pitch.
    pub fn lattice_point(&self, k: usize, l: usize) -> (f64, f64) {
        lattice_offset(k, l, self.nk, self.nl)
    }

    /// 1-based lens type of (k, l): ((k + 2l) mod I) + 1.
    ///
    /// For I = 3 this alternates types between adjacent lenses in every
    /// lattice direction.
    pub fn lens_type(&self, k: usize, l: usize) -> usize {
        lens_type_of(k, l, self.type_count)
    }

    /// 0-based focal-table index of (k, l).
    pub fn type_index(&self, k: usize, l: usize) -> usize {
        self.lens_type(k, l) - 1
    }

    pub fn in_bounds(&self, k: usize, l: usize) -> bool {
        k < self.nk && l < self.nl
    }
}

/// sqrt(3)/2, the hexagonal row spacing in units of pitch.
pub(crate) const ROW_SPACING: f64 = 0.8660254037844386;

/// 1-based interleaved lens type of lattice index (k, l); adjacent lenses
/// along either lattice axis always differ in type.
pub fn lens_type_of(k: usize, l: usize, type_count: usize) -> usize {
    (k + 2 * l) % type_count + 1
}

/// Centered row-offset hexagonal lattice coordinates in units of pitch.
pub(crate) fn lattice_offset(k: usize, l: usize, nk: usize, nl: usize) -> (f64, f64) {
    let x = k as f64 + 0.5 * (l % 2) as f64 - (nk as f64 - 0.5) / 2.0;
    let y = ROW_SPACING * (l as f64 - (nl as f64 - 1.0) / 2.0);
    (x, y)
}

/// The complete intrinsic parameter set: 16 + I optimizable scalars plus
/// fixed sensor constants.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraParams {
    pub main_lens: MainLens,
    pub sensor: Sensor,
    pub mla: MlaGeometry,
    /// Micro-lens focal lengths f_1..f_I (mm).
    pub micro_focals: Vec<f64>,
    pub configuration: LensConfiguration,
}

impl CameraParams {
    /// Number of optimizable intrinsic scalars (16 + I).
    pub fn param_count(&self) -> usize {
        16 + self.micro_focals.len()
    }

    /// Pitch ratio lambda = D / (D + d) between MLA and micro-image pitches.
    pub fn lambda(&self) -> f64 {
        self.mla.big_d / (self.mla.big_d + self.sensor.d)
    }

    /// Metric micro-image pitch implied by the model (mm).
    pub fn mia_pitch_metric(&self) -> f64 {
        self.mla.pitch / self.lambda()
    }

    /// Micro-image pitch on the sensor (pixels).
    pub fn mia_pitch_px(&self) -> f64 {
        self.mia_pitch_metric() / self.sensor.pixel_size
    }

    /// Checks the structural invariants of the parameter set.
    pub fn validate(&self) -> Result<(), Error> {
        let ok = self.main_lens.focal > 0.0
            && self.main_lens.fnumber > 0.0
            && self.sensor.pixel_size > 0.0
            && self.sensor.d > 0.0
            && self.mla.big_d > 0.0
            && self.mla.pitch > 0.0
            && self.mla.type_count == self.micro_focals.len()
            && self.micro_focals.iter().all(|&f| f > 0.0)
            // the pitch-ratio approximation needs d << D
            && self.sensor.d / self.mla.big_d < 0.05;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidGeometry)
        }
    }

    /// Packs the optimizable intrinsics:
    /// `[F, u0, v0, k1, k2, k3, p1, p2, d, rx, ry, rz, tx, ty, D, pitch, f_1..f_I]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        v.push(self.main_lens.focal);
        v.push(self.main_lens.u0);
        v.push(self.main_lens.v0);
        v.extend_from_slice(&self.main_lens.distortion.radial);
        v.extend_from_slice(&self.main_lens.distortion.tangential);
        v.push(self.sensor.d);
        v.extend_from_slice(&self.mla.rotation);
        v.push(self.mla.tx);
        v.push(self.mla.ty);
        v.push(self.mla.big_d);
        v.push(self.mla.pitch);
        v.extend_from_slice(&self.micro_focals);
        v
    }

    /// Rebuilds a parameter set from [`CameraParams::to_vec`] layout,
    /// keeping this set's fixed constants (sensor raster, grid, f-number).
    pub fn with_vec(&self, x: &[f64]) -> CameraParams {
        let mut p = self.clone();
        p.main_lens.focal = x[0];
        p.main_lens.u0 = x[1];
        p.main_lens.v0 = x[2];
        p.main_lens.distortion.radial = [x[3], x[4], x[5]];
        p.main_lens.distortion.tangential = [x[6], x[7]];
        p.sensor.d = x[8];
        p.mla.rotation = [x[9], x[10], x[11]];
        p.mla.tx = x[12];
        p.mla.ty = x[13];
        p.mla.big_d = x[14];
        p.mla.pitch = x[15];
        p.micro_focals = x[16..16 + self.micro_focals.len()].to_vec();
        p
    }
}

/// Rigid transform from a target frame into the camera frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    rotation: Mat3<f64>,
    translation: Vec3<f64>,
}

impl Pose {
    /// Builds a pose, rejecting a non-orthonormal rotation.
    pub fn new(rotation: Mat3<f64>, translation: Vec3<f64>) -> Result<Self, Error> {
        if rotation.orthonormality_residual() > 1e-9 {
            return Err(Error::InvalidGeometry);
        }
        Ok(Pose { rotation, translation })
    }

    pub fn identity() -> Self {
        Pose { rotation: Mat3::identity(), translation: Vec3::new(0.0, 0.0, 0.0) }
    }

    pub fn rotation(&self) -> &Mat3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> Vec3<f64> {
        self.translation
    }

    /// Maps a point from the target frame into the camera frame.
    pub fn transform(&self, p: Vec3<f64>) -> Vec3<f64> {
        self.rotation.mul_vec(p) + self.translation
    }

    /// Local update `R <- R * exp([w]x)`, `t <- t + dt`; keeps the rotation
    /// orthonormal exactly.
    pub fn retract(&self, w: Vec3<f64>, dt: Vec3<f64>) -> Self {
        Pose {
            rotation: self.rotation.mul_mat(&Mat3::exp_so3(w)),
            translation: self.translation + dt,
        }
    }
}

/// A raw-image corner observation augmented with its signed blur radius.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BapFeature {
    /// Pixel column.
    pub u: f64,
    /// Pixel row.
    pub v: f64,
    /// Signed blur radius (pixels).
    pub rho: f64,
    /// Frame index within a dataset.
    pub frame: usize,
    /// Micro-lens index.
    pub k: usize,
    /// Micro-lens index.
    pub l: usize,
    /// 1-based lens type.
    pub lens_type: usize,
    /// Cluster (board corner) id within the frame.
    pub cluster: usize,
}

impl BapFeature {
    /// True when the center lies inside a `width x height` raster.
    pub fn in_bounds(&self, width: usize, height: usize) -> bool {
        self.u >= 0.0 && self.v >= 0.0 && self.u < width as f64 && self.v < height as f64
    }
}
