//! Shared test fixtures: a scaled three-type camera and a reference pose.

use crate::linalg::{Mat3, Vec3};
use crate::model::{
    CameraParams, Distortion, LensConfiguration, MainLens, MlaGeometry, Pose, Sensor,
};
use alloc::vec;

/// Scaled three-type test camera used across the crate's tests.
pub(crate) fn test_camera() -> CameraParams {
    CameraParams {
        main_lens: MainLens {
            focal: 50.0,
            fnumber: 4.0,
            u0: 519.5,
            v0: 399.5,
            distortion: Distortion {
                radial: [0.7694, -8.4669, 164.645],
                tangential: [-0.000113, -0.000557],
            },
        },
        sensor: Sensor { pixel_size: 0.0055, width: 1040, height: 800, d: 0.31863244257046264 },
        mla: MlaGeometry {
            rotation: [0.000548, 0.000853, -0.0011339],
            tx: -0.0954,
            ty: -0.147,
            big_d: 56.65763680237484,
            pitch: 0.1274531794822808,
            nk: 44,
            nl: 38,
            type_count: 3,
        },
        micro_focals: vec![0.5779208298808867, 0.5042528883479617, 0.5514441994009651],
        configuration: LensConfiguration::Keplerian,
    }
}

/// Same optics with a 42x36 lens extent, so every micro-image center and its
/// measurement window fall inside the raster; used by pipeline tests.
pub(crate) fn pipeline_camera() -> CameraParams {
    let mut p = test_camera();
    p.mla.nk = 42;
    p.mla.nl = 36;
    p
}

/// Reference checkerboard pose in front of [`test_camera`].
pub(crate) fn test_pose() -> Pose {
    Pose::new(Mat3::rot_zyx(0.08, -0.05, 0.21), Vec3::new(2.5, -1.5, 392.0)).unwrap()
}
