//! Camera domain types and the deterministic forward model.

mod project;
pub(crate) mod types;

pub use project::{
    apply_distortion, blur_radius, micro_lens_principal_point, mla_pitch_from_mia,
    pitch_ratio, project_bap, project_micro_center, thin_lens_project, FixedParams, Projector,
};
pub use types::{
    lens_type_of, BapFeature, CameraParams, Distortion, LensConfiguration, MainLens, MlaGeometry,
    Pose, Sensor,
};
