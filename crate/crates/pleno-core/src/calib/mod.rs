//! Calibration engine: initialization, residuals, optimization, metrics.

pub mod init;
pub mod lm;
pub mod residuals;

pub use init::{
    assign_corners, cluster_barycenters, image_conjugate, init_frame, init_intrinsics,
    init_poses, pose_from_barycenters, FrameInit,
};
pub use lm::{optimize, OptimizeOptions, OptimizeSummary};
pub use residuals::{
    evaluate, match_centers, normal_equations, residual_vector, synthetic_centers,
    CalibrationState, CenterObs, NormalEquations, ResidualBreakdown, Weights,
};
