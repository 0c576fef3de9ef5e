//! Synthetic white images and checkerboard datasets with ground truth.
//!
//! Everything here is a pure function of (parameters, pose, seed), so full
//! pipelines are testable without hardware. Micro-image spots are rendered
//! as 2D Gaussians with std `radius / alpha` — a simulator convention chosen
//! so the moments-based radius estimator is self-consistent, not a physical
//! claim about real micro-image profiles.

use crate::error::Error;
use crate::linalg::Vec3;
use crate::model::{apply_distortion, thin_lens_project, CameraParams, Pose, Projector};
use crate::precalib::{InternalParams, RADIUS_TO_SIGMA};
use crate::raster::Raster;
use crate::rng::Rng;
use alloc::vec;
use alloc::vec::Vec;

/// Planar checkerboard target: interior corner grid on z = 0, centered.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CheckerboardModel {
    /// Interior corners along y.
    pub rows: usize,
    /// Interior corners along x.
    pub cols: usize,
    /// Square side (mm).
    pub square_size: f64,
}

impl CheckerboardModel {
    /// Corner positions in the board frame, row-major (y outer, x inner),
    /// centered on the board origin.
    pub fn corners(&self) -> Vec<Vec3<f64>> {
        let mut out = Vec::with_capacity(self.rows * self.cols);
        for iy in 0..self.rows {
            for ix in 0..self.cols {
                out.push(Vec3::new(
                    (ix as f64 - (self.cols as f64 - 1.0) / 2.0) * self.square_size,
                    (iy as f64 - (self.rows as f64 - 1.0) / 2.0) * self.square_size,
                    0.0,
                ));
            }
        }
        out
    }

    pub fn corner_count(&self) -> usize {
        self.rows * self.cols
    }
}

/// One corner sighting in one micro-image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    pub k: usize,
    pub l: usize,
    /// Pixel center of the blur spot.
    pub u: f64,
    pub v: f64,
    /// Board corner index (row-major).
    pub corner: usize,
    /// Noise-free signed blur radius (pixels); ground-truth diagnostic.
    pub rho_true: f64,
}

/// One checkerboard frame with its generating pose.
#[derive(Clone, Debug)]
pub struct Frame {
    /// Ground-truth board-to-camera pose.
    pub pose: Pose,
    pub observations: Vec<Observation>,
}

/// A synthetic acquisition: aperture-tagged white images plus checkerboard
/// frames, with the generating camera attached.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub board: CheckerboardModel,
    pub frames: Vec<Frame>,
    /// (f-number, raster) pairs.
    pub white_images: Vec<(f64, Raster)>,
    pub truth: Option<CameraParams>,
}

/// Renders the white image at f-number `fnumber`: one Gaussian spot of std
/// `radius / alpha` per micro-lens, an optional radial vignette mask of
/// strength `vignette`, and additive Gaussian intensity noise of std
/// `noise` (no draws when zero).
pub fn render_white_image(
    params: &CameraParams,
    fnumber: f64,
    noise: f64,
    vignette: f64,
    rng: &mut Rng,
) -> Result<Raster, Error> {
    let (w, h) = (params.sensor.width, params.sensor.height);
    let proj = Projector::<f64>::of(params);
    let ip = InternalParams::of_camera(params);
    let sigmas: Vec<f64> = (1..=params.mla.type_count)
        .map(|t| ip.footprint_radius_px(t, fnumber, params.sensor.pixel_size) / RADIUS_TO_SIGMA)
        .collect();
    let mut acc = vec![0.0f64; w * h];
    for k in 0..params.mla.nk {
        for l in 0..params.mla.nl {
            let [cu, cv] = proj.project_center(k, l)?;
            if cu < 0.0 || cv < 0.0 || cu >= w as f64 || cv >= h as f64 {
                return Err(Error::RasterTooSmall);
            }
            let sigma = sigmas[params.mla.type_index(k, l)];
            let reach = libm::ceil(4.0 * sigma) as i64;
            let x0 = (libm::round(cu) as i64 - reach).max(0) as usize;
            let x1 = ((libm::round(cu) as i64 + reach) as usize).min(w - 1);
            let y0 = (libm::round(cv) as i64 - reach).max(0) as usize;
            let y1 = ((libm::round(cv) as i64 + reach) as usize).min(h - 1);
            let inv = 1.0 / (2.0 * sigma * sigma);
            for y in y0..=y1 {
                let dy = y as f64 - cv;
                for x in x0..=x1 {
                    let dx = x as f64 - cu;
                    acc[y * w + x] += libm::exp(-(dx * dx + dy * dy) * inv);
                }
            }
        }
    }
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let inv_r2 = 1.0 / (cx * cx + cy * cy);
    let mut img = Raster::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut v = acc[y * w + x];
            if vignette > 0.0 {
                let r2 = (x as f64 - cx) * (x as f64 - cx) + (y as f64 - cy) * (y as f64 - cy);
                v *= 1.0 - vignette * r2 * inv_r2;
            }
            if noise > 0.0 {
                v += noise * rng.normal();
            }
            img.set(x, y, v as f32);
        }
    }
    Ok(img)
}

/// Projects every board corner through every micro-lens whose micro-image
/// contains it; membership means landing within the type's footprint radius
/// (at the camera's f-number) of the micro-image center, inside the raster.
/// Gaussian noise of std `noise_px` is added to the pixel coordinates after
/// the membership test. An empty result means no corner was visible.
pub fn generate_checkerboard_observations(
    params: &CameraParams,
    pose: &Pose,
    board: &CheckerboardModel,
    noise_px: f64,
    rng: &mut Rng,
) -> Result<Vec<Observation>, Error> {
    let proj = Projector::<f64>::of(params);
    let ip = InternalParams::of_camera(params);
    let s = params.sensor.pixel_size;
    let radii: Vec<f64> = (1..=params.mla.type_count)
        .map(|t| ip.footprint_radius_px(t, params.main_lens.fnumber, s))
        .collect();
    let lateral_reach = 3.5 * params.mla.pitch;
    let mut out = Vec::new();
    for (ci, corner) in board.corners().into_iter().enumerate() {
        let pc = pose.transform(corner);
        if pc.z <= 0.0 {
            return Err(Error::BehindLens);
        }
        let pp = apply_distortion(
            &params.main_lens.distortion,
            thin_lens_project(params.main_lens.focal, pc)?,
        );
        // candidate lenses near where the central ray meets the MLA plane
        let lat_x = pp.x * (-params.mla.big_d / pp.z);
        let lat_y = pp.y * (-params.mla.big_d / pp.z);
        for k in 0..params.mla.nk {
            for l in 0..params.mla.nl {
                let c = proj.micro_center(k, l);
                if (c.x - lat_x).abs() > lateral_reach || (c.y - lat_y).abs() > lateral_reach {
                    continue;
                }
                let Ok([u, v, rho]) = proj.project_bap(pc, k, l) else {
                    continue;
                };
                let [cu, cv] = proj.project_center(k, l)?;
                let dist = libm::sqrt((u - cu) * (u - cu) + (v - cv) * (v - cv));
                if dist >= radii[params.mla.type_index(k, l)] {
                    continue;
                }
                if u < 0.0 || v < 0.0 || u >= params.sensor.width as f64 || v >= params.sensor.height as f64 {
                    continue;
                }
                let (du, dv) = if noise_px > 0.0 {
                    (noise_px * rng.normal(), noise_px * rng.normal())
                } else {
                    (0.0, 0.0)
                };
                out.push(Observation { k, l, u: u + du, v: v + dv, corner: ci, rho_true: rho });
            }
        }
    }
    Ok(out)
}

/// Frames of the same board displaced along the camera z-axis by each step
/// (mm), sharing the base rotation; the per-frame ground-truth poses record
/// the relative displacements for evaluation.
pub fn generate_motion_sequence(
    params: &CameraParams,
    base_pose: &Pose,
    dz_steps: &[f64],
    board: &CheckerboardModel,
    noise_px: f64,
    rng: &mut Rng,
) -> Result<Dataset, Error> {
    let mut frames = Vec::with_capacity(dz_steps.len());
    for &dz in dz_steps {
        let t = base_pose.translation();
        let pose = Pose::new(*base_pose.rotation(), Vec3::new(t.x, t.y, t.z + dz))?;
        let observations = generate_checkerboard_observations(params, &pose, board, noise_px, rng)?;
        frames.push(Frame { pose, observations });
    }
    Ok(Dataset {
        board: *board,
        frames,
        white_images: Vec::new(),
        truth: Some(params.clone()),
    })
}

/// Object distance whose main-lens image lands `nu` micro-lens spacings
/// behind the MLA plane (virtual depth `nu`).
pub fn object_distance_for_depth(params: &CameraParams, nu: f64) -> Result<f64, Error> {
    let b = params.mla.big_d + nu * params.sensor.d;
    if b <= 0.0 {
        return Err(Error::SingularDepth);
    }
    let inv = 1.0 / params.main_lens.focal - 1.0 / b;
    if inv <= 0.0 {
        return Err(Error::SingularDepth);
    }
    Ok(1.0 / inv)
}

/// Virtual depth of a point at object distance `a`; inverse of
/// [`object_distance_for_depth`].
pub fn depth_for_object_distance(params: &CameraParams, a: f64) -> Result<f64, Error> {
    let inv = 1.0 / params.main_lens.focal - 1.0 / a;
    if inv <= 0.0 {
        return Err(Error::SingularDepth);
    }
    Ok((1.0 / inv - params.mla.big_d) / params.sensor.d)
}

/// Uniform pose sampler over Euler-angle and translation boxes; defaults
/// keep a small checkerboard inside the virtual-depth band the clustering
/// stage is designed for.
#[derive(Clone, Copy, Debug)]
pub struct PoseSampler {
    /// Half-ranges of the x/y/z Euler angles (rad).
    pub rot_half_range: [f64; 3],
    pub t_min: [f64; 3],
    pub t_max: [f64; 3],
}

impl Default for PoseSampler {
    fn default() -> Self {
        PoseSampler {
            rot_half_range: [0.14, 0.14, 0.3],
            t_min: [-4.0, -3.0, 389.0],
            t_max: [4.0, 3.0, 397.0],
        }
    }
}

impl PoseSampler {
    pub fn sample(&self, rng: &mut Rng) -> Pose {
        let rx = rng.uniform_in(-self.rot_half_range[0], self.rot_half_range[0]);
        let ry = rng.uniform_in(-self.rot_half_range[1], self.rot_half_range[1]);
        let rz = rng.uniform_in(-self.rot_half_range[2], self.rot_half_range[2]);
        let t = Vec3::new(
            rng.uniform_in(self.t_min[0], self.t_max[0]),
            rng.uniform_in(self.t_min[1], self.t_max[1]),
            rng.uniform_in(self.t_min[2], self.t_max[2]),
        );
        Pose::new(crate::linalg::Mat3::rot_zyx(rx, ry, rz), t).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{pipeline_camera, test_camera, test_pose};
    use crate::mia::{detect_centers, fit_grid};
    use crate::precalib::{radius_measurements, select_center_microimages};

    fn board() -> CheckerboardModel {
        CheckerboardModel { rows: 5, cols: 9, square_size: 3.0 }
    }

    #[test]
    fn white_image_is_deterministic() {
        let p = pipeline_camera();
        let a = render_white_image(&p, 4.0, 0.01, 0.2, &mut Rng::from_seed(5)).unwrap();
        let b = render_white_image(&p, 4.0, 0.01, 0.2, &mut Rng::from_seed(5)).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn white_image_requires_centers_inside_raster() {
        // the 44-column extent pushes edge micro-image centers past the
        // raster border
        let p = test_camera();
        let e = render_white_image(&p, 4.0, 0.0, 0.0, &mut Rng::from_seed(1));
        assert!(matches!(e, Err(Error::RasterTooSmall)));
    }

    #[test]
    fn wider_aperture_raises_total_intensity() {
        let p = pipeline_camera();
        let wide = render_white_image(&p, 4.0, 0.0, 0.0, &mut Rng::from_seed(1)).unwrap();
        let narrow = render_white_image(&p, 8.0, 0.0, 0.0, &mut Rng::from_seed(1)).unwrap();
        let sum = |r: &Raster| r.data().iter().map(|v| *v as f64).sum::<f64>();
        assert!(sum(&wide) > sum(&narrow));
    }

    #[test]
    fn white_image_roundtrip_recovers_radii_and_pitch() {
        let p = pipeline_camera();
        let img = render_white_image(&p, 4.0, 0.0, 0.0, &mut Rng::from_seed(2)).unwrap();
        let centers = detect_centers(&img, p.mia_pitch_px()).unwrap();
        assert_eq!(centers.len(), p.mla.nk * p.mla.nl);
        let fit = fit_grid(&centers).unwrap();
        assert!(
            (fit.grid.pitch - p.mia_pitch_px()).abs() < 0.05,
            "pitch {} vs {}",
            fit.grid.pitch,
            p.mia_pitch_px()
        );
        let picks = select_center_microimages(&fit.grid, 0.25);
        let meas = radius_measurements(&img, &fit.grid, &picks, 4.0, 3, RADIUS_TO_SIGMA).unwrap();
        let ip = InternalParams::of_camera(&p);
        let truths: Vec<f64> =
            (1..=3).map(|t| ip.footprint_radius_px(t, 4.0, p.sensor.pixel_size)).collect();
        // grid indices are lattice-local, so each measured group matches
        // some physical type; every radius must sit within 2% of one truth
        // and groups must map to types consistently
        let mut group_to_type = [usize::MAX; 3];
        for m in &meas {
            let (best, err) = truths
                .iter()
                .enumerate()
                .map(|(i, t)| (i, (m.radius_px - t).abs() / t))
                .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                .unwrap();
            assert!(err < 0.02, "radius {} err {}", m.radius_px, err);
            let g = m.lens_type - 1;
            if group_to_type[g] == usize::MAX {
                group_to_type[g] = best;
            } else {
                assert_eq!(group_to_type[g], best, "group {} maps to two types", g);
            }
        }
        // the three groups land on three distinct physical types
        let mut seen = group_to_type;
        seen.sort_unstable();
        assert_eq!(seen, [0, 1, 2]);
    }

    #[test]
    fn observations_pass_membership_on_recheck() {
        let p = test_camera();
        let pose = test_pose();
        let obs =
            generate_checkerboard_observations(&p, &pose, &board(), 0.0, &mut Rng::from_seed(3))
                .unwrap();
        assert!(!obs.is_empty());
        let proj = Projector::<f64>::of(&p);
        let ip = InternalParams::of_camera(&p);
        let mut central_corner_replicas = 0;
        for o in &obs {
            let [cu, cv] = proj.project_center(o.k, o.l).unwrap();
            let r = ip.footprint_radius_px(
                p.mla.lens_type(o.k, o.l),
                p.main_lens.fnumber,
                p.sensor.pixel_size,
            );
            let dist = libm::sqrt((o.u - cu) * (o.u - cu) + (o.v - cv) * (o.v - cv));
            assert!(dist < r);
            assert!(o.u >= 0.0 && o.v >= 0.0);
            assert!(o.u < p.sensor.width as f64 && o.v < p.sensor.height as f64);
            if o.corner == 22 {
                central_corner_replicas += 1;
            }
        }
        // a corner near the image center is seen by several micro-lenses
        assert!(central_corner_replicas >= 3, "replicas {central_corner_replicas}");
    }

    #[test]
    fn observation_noise_has_requested_scale() {
        let p = test_camera();
        let sampler = PoseSampler::default();
        let mut rng_pose = Rng::from_seed(9);
        let mut rng_noise = Rng::from_seed(10);
        let mut diffs = alloc::vec::Vec::new();
        for _ in 0..12 {
            let pose = sampler.sample(&mut rng_pose);
            let clean =
                generate_checkerboard_observations(&p, &pose, &board(), 0.0, &mut Rng::from_seed(0))
                    .unwrap();
            let noisy =
                generate_checkerboard_observations(&p, &pose, &board(), 0.5, &mut rng_noise)
                    .unwrap();
            assert_eq!(clean.len(), noisy.len());
            for (c, n) in clean.iter().zip(noisy.iter()) {
                assert_eq!((c.k, c.l, c.corner), (n.k, n.l, n.corner));
                diffs.push(n.u - c.u);
                diffs.push(n.v - c.v);
            }
        }
        let n = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / n;
        let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n;
        let std = libm::sqrt(var);
        assert!(n > 2000.0, "too few observations: {n}");
        assert!((std - 0.5).abs() < 0.05, "std {std}");
    }

    #[test]
    fn motion_sequence_records_exact_displacements() {
        let p = test_camera();
        let ds = generate_motion_sequence(
            &p,
            &test_pose(),
            &[0.0, 10.0, 20.0],
            &board(),
            0.0,
            &mut Rng::from_seed(4),
        )
        .unwrap();
        assert_eq!(ds.frames.len(), 3);
        for w in ds.frames.windows(2) {
            let a = w[0].pose.translation();
            let b = w[1].pose.translation();
            assert!((b.z - a.z - 10.0).abs() < 1e-12);
            assert_eq!(a.x, b.x);
            assert_eq!(a.y, b.y);
            assert_eq!(w[0].pose.rotation(), w[1].pose.rotation());
        }
        assert!(ds.frames.iter().all(|f| !f.observations.is_empty()));
    }

    #[test]
    fn object_distance_round_trips_virtual_depth() {
        let p = test_camera();
        let a = object_distance_for_depth(&p, 2.0).unwrap();
        assert!((a - 392.7).abs() < 0.5, "a = {a}");
        let nu = depth_for_object_distance(&p, a).unwrap();
        assert!((nu - 2.0).abs() < 1e-12);
        // an image plane in front of the main-lens focal length has no
        // real object distance
        let mut shallow = test_camera();
        shallow.mla.big_d = 40.0;
        assert!(matches!(
            object_distance_for_depth(&shallow, 2.0),
            Err(Error::SingularDepth)
        ));
    }

    #[test]
    fn footprint_radii_order_follows_intercepts() {
        let p = test_camera();
        let ip = InternalParams::of_camera(&p);
        // q'_1 < q'_3 < q'_2 for this camera, so stopping down leaves
        // |R_1| > |R_3| > |R_2|
        let r: Vec<f64> = (1..=3).map(|t| ip.footprint_radius(t, 8.0).abs()).collect();
        assert!(r[0] > r[2] && r[2] > r[1], "radii {:?}", r);
        // at infinite f-number only the intercept remains
        for t in 1..=3 {
            let limit = ip.footprint_radius(t, f64::INFINITY);
            assert!((limit - ip.q[t - 1]).abs() < 1e-15);
        }
    }

    #[test]
    fn checkerboard_corners_are_centered() {
        let b = board();
        let cs = b.corners();
        assert_eq!(cs.len(), 45);
        let mean = cs.iter().fold(Vec3::new(0.0, 0.0, 0.0), |a, c| a + *c) * (1.0 / 45.0);
        assert!(mean.norm() < 1e-12);
        // corner 22 is the central one for a 9x5 board
        assert!(cs[22].norm() < 1e-12);
        assert!(cs.iter().all(|c| c.z == 0.0));
    }
}
