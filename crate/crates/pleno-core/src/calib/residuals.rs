//! Reprojection residuals of the joint calibration problem and their
//! exact derivatives.
//!
//! The cost couples every intrinsic with every frame pose: each observed
//! feature contributes a 3-vector (pixel position and signed blur radius)
//! and each detected micro-image center a 2-vector. Derivatives come from
//! one dual-number pass per residual block; poses enter through a local
//! rotation update composed onto the current estimate, keeping
//! orthonormality exact.

use crate::calib::init::{lift_mat, lift_vec};
use crate::error::Error;
use crate::linalg::{Mat3, Vec2, Vec3};
use crate::model::{BapFeature, CameraParams, FixedParams, Pose, Projector};
use crate::scalar::Dual;
use crate::simulate::CheckerboardModel;
use alloc::vec;
use alloc::vec::Vec;

/// Derivative lanes available to one residual block: all intrinsics plus
/// one pose.
pub(crate) const LANES: usize = 32;

/// The full optimization state: intrinsics and one pose per frame.
#[derive(Clone, Debug)]
pub struct CalibrationState {
    pub params: CameraParams,
    pub poses: Vec<Pose>,
}

/// A detected micro-image center identified with micro-lens (k, l).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CenterObs {
    pub k: usize,
    pub l: usize,
    pub position: Vec2<f64>,
}

/// Identifies detected centers with micro-lenses by nearest reprojection,
/// keeping matches within half a micro-image pitch.
pub fn match_centers(params: &CameraParams, detected: &[Vec2<f64>]) -> Vec<CenterObs> {
    let proj = Projector::<f64>::of(params);
    let gate = 0.5 * params.mia_pitch_px();
    let mut out = Vec::new();
    for k in 0..params.mla.nk {
        for l in 0..params.mla.nl {
            let Ok([u, v]) = proj.project_center(k, l) else { continue };
            let p = Vec2::new(u, v);
            let mut best = f64::INFINITY;
            let mut hit = None;
            for c in detected {
                let d = (*c - p).norm();
                if d < best {
                    best = d;
                    hit = Some(*c);
                }
            }
            if let (Some(c), true) = (hit, best < gate) {
                out.push(CenterObs { k, l, position: c });
            }
        }
    }
    out
}

/// Per-term scale factors of the cost; the default leaves the sum
/// unweighted.
#[derive(Clone, Copy, Debug)]
pub struct Weights {
    pub uv: f64,
    pub rho: f64,
    pub center: f64,
    /// Saturation scale (px): residual rows pass through the odd sigmoid
    /// `r / sqrt(1 + (r/clip)^2)`, which is the identity for small rows and
    /// levels off at plus or minus `clip`. The projection model has poles (a
    /// parameter change can push a point's conjugate through a micro-lens
    /// focal plane), and the bound keeps such rows from dominating the cost
    /// far from the optimum while staying smooth, so the quadratic model the
    /// optimizer builds remains trustworthy. Near the optimum residuals sit
    /// far below the scale and the cost is plain least squares.
    pub clip: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Weights { uv: 1.0, rho: 1.0, center: 1.0, clip: 100.0 }
    }
}

fn saturate(r: f64, clip: f64) -> f64 {
    let x = r / clip;
    r / libm::sqrt(1.0 + x * x)
}

fn saturate_dual<const K: usize>(r: Dual<K>, clip: f64) -> Dual<K> {
    use crate::scalar::Real;
    let x = r * Dual::constant(1.0 / clip);
    r / (Dual::constant(1.0) + x * x).sqrt()
}

/// Squared-residual totals by component, with the counts that turn them
/// into mean errors.
#[derive(Clone, Copy, Debug, Default)]
pub struct ResidualBreakdown {
    /// Unweighted squared pixel error of feature positions.
    pub uv_sq: f64,
    /// Unweighted squared blur-radius error.
    pub rho_sq: f64,
    /// Unweighted squared pixel error of micro-image centers.
    pub center_sq: f64,
    /// Features that projected successfully.
    pub feature_count: usize,
    pub center_count: usize,
    /// Observations dropped because the model could not project them.
    pub skipped: usize,
}

impl ResidualBreakdown {
    /// Weighted total cost.
    pub fn cost(&self, w: &Weights) -> f64 {
        w.uv * w.uv * self.uv_sq + w.rho * w.rho * self.rho_sq
            + w.center * w.center * self.center_sq
    }
}

fn frame_index(features: &[BapFeature], frames: usize) -> Result<Vec<Vec<usize>>, Error> {
    let mut by_frame = vec![Vec::new(); frames];
    for (i, f) in features.iter().enumerate() {
        if f.frame >= frames {
            return Err(Error::DimensionMismatch);
        }
        by_frame[f.frame].push(i);
    }
    Ok(by_frame)
}

/// Evaluates the residual components at a state (values only).
pub fn evaluate(
    state: &CalibrationState,
    board: &CheckerboardModel,
    features: &[BapFeature],
    centers: &[CenterObs],
) -> Result<ResidualBreakdown, Error> {
    let corners = board.corners();
    let proj = Projector::<f64>::of(&state.params);
    let by_frame = frame_index(features, state.poses.len())?;
    let mut out = ResidualBreakdown::default();
    for (frame, idxs) in by_frame.iter().enumerate() {
        let pose = &state.poses[frame];
        for &i in idxs {
            let f = &features[i];
            if f.cluster >= corners.len() {
                return Err(Error::DimensionMismatch);
            }
            let p_cam = pose.transform(corners[f.cluster]);
            let Ok([u, v, rho]) = proj.project_bap(p_cam, f.k, f.l) else {
                out.skipped += 1;
                continue;
            };
            out.uv_sq += (f.u - u) * (f.u - u) + (f.v - v) * (f.v - v);
            out.rho_sq += (f.rho - rho) * (f.rho - rho);
            out.feature_count += 1;
        }
    }
    for c in centers {
        let Ok([u, v]) = proj.project_center(c.k, c.l) else {
            out.skipped += 1;
            continue;
        };
        out.center_sq += (c.position.x - u) * (c.position.x - u)
            + (c.position.y - v) * (c.position.y - v);
        out.center_count += 1;
    }
    Ok(out)
}

/// Stacked weighted residual vector in observation order: three rows per
/// feature, two per center; failed projections are dropped and counted.
pub fn residual_vector(
    state: &CalibrationState,
    board: &CheckerboardModel,
    features: &[BapFeature],
    centers: &[CenterObs],
    weights: &Weights,
) -> Result<(Vec<f64>, usize), Error> {
    let corners = board.corners();
    let proj = Projector::<f64>::of(&state.params);
    let mut r = Vec::with_capacity(3 * features.len() + 2 * centers.len());
    let mut skipped = 0;
    for f in features {
        if f.frame >= state.poses.len() || f.cluster >= corners.len() {
            return Err(Error::DimensionMismatch);
        }
        let p_cam = state.poses[f.frame].transform(corners[f.cluster]);
        let Ok([u, v, rho]) = proj.project_bap(p_cam, f.k, f.l) else {
            skipped += 1;
            continue;
        };
        r.push(weights.uv * saturate(f.u - u, weights.clip));
        r.push(weights.uv * saturate(f.v - v, weights.clip));
        r.push(weights.rho * saturate(f.rho - rho, weights.clip));
    }
    for c in centers {
        let Ok([u, v]) = proj.project_center(c.k, c.l) else {
            skipped += 1;
            continue;
        };
        r.push(weights.center * saturate(c.position.x - u, weights.clip));
        r.push(weights.center * saturate(c.position.y - v, weights.clip));
    }
    Ok((r, skipped))
}

/// Gauss-Newton normal equations accumulated over all residual blocks.
pub struct NormalEquations {
    /// Row-major `n x n` with `n = intrinsics + 6 * frames`.
    pub jtj: Vec<f64>,
    pub jtr: Vec<f64>,
    pub cost: f64,
    pub skipped: usize,
}

/// One feature's three weighted residual rows with derivative lanes
/// `0..ni` for the intrinsics and `ni..ni+6` for the local pose update.
pub(crate) fn feature_rows(
    proj: &Projector<Dual<LANES>>,
    rot: &Mat3<Dual<LANES>>,
    t: Vec3<Dual<LANES>>,
    corner: Vec3<f64>,
    f: &BapFeature,
    weights: &Weights,
) -> Result<[Dual<LANES>; 3], Error> {
    let p_cam = rot.mul_vec(lift_vec(corner)) + t;
    let [u, v, rho] = proj.project_bap(p_cam, f.k, f.l)?;
    let wuv = Dual::constant(weights.uv);
    let wrho = Dual::constant(weights.rho);
    Ok([
        wuv * saturate_dual(Dual::constant(f.u) - u, weights.clip),
        wuv * saturate_dual(Dual::constant(f.v) - v, weights.clip),
        wrho * saturate_dual(Dual::constant(f.rho) - rho, weights.clip),
    ])
}

/// One center's two weighted residual rows (intrinsic lanes only).
pub(crate) fn center_rows(
    proj: &Projector<Dual<LANES>>,
    c: &CenterObs,
    weights: &Weights,
) -> Result<[Dual<LANES>; 2], Error> {
    let [u, v] = proj.project_center(c.k, c.l)?;
    let w = Dual::constant(weights.center);
    Ok([
        w * saturate_dual(Dual::constant(c.position.x) - u, weights.clip),
        w * saturate_dual(Dual::constant(c.position.y) - v, weights.clip),
    ])
}

fn scatter(
    row: Dual<LANES>,
    lanes: usize,
    map: &[usize],
    jtj: &mut [f64],
    jtr: &mut [f64],
    n: usize,
) {
    for i in 0..lanes {
        let gi = row.eps[i];
        if gi == 0.0 {
            continue;
        }
        let a = map[i];
        jtr[a] += gi * row.re;
        for j in i..lanes {
            let gj = row.eps[j];
            if gj != 0.0 {
                let b = map[j];
                // accumulate into the upper triangle of the global matrix
                let (p, q) = if a <= b { (a, b) } else { (b, a) };
                jtj[p * n + q] += gi * gj;
            }
        }
    }
}

/// Builds `JᵀJ`, `Jᵀr`, and the cost in one dual-number sweep.
pub fn normal_equations(
    state: &CalibrationState,
    board: &CheckerboardModel,
    features: &[BapFeature],
    centers: &[CenterObs],
    weights: &Weights,
) -> Result<NormalEquations, Error> {
    let ni = state.params.param_count();
    if ni + 6 > LANES {
        return Err(Error::InvalidGeometry);
    }
    let n = ni + 6 * state.poses.len();
    let corners = board.corners();
    let x: Vec<Dual<LANES>> = state
        .params
        .to_vec()
        .iter()
        .enumerate()
        .map(|(i, &v)| Dual::variable(v, i))
        .collect();
    let proj = Projector::<Dual<LANES>>::from_slice(&x, FixedParams::of(&state.params));
    let by_frame = frame_index(features, state.poses.len())?;
    let mut jtj = vec![0.0; n * n];
    let mut jtr = vec![0.0; n];
    let mut cost = 0.0;
    let mut skipped = 0;
    let mut map: Vec<usize> = (0..ni + 6).collect();
    for (frame, idxs) in by_frame.iter().enumerate() {
        if idxs.is_empty() {
            continue;
        }
        for (i, m) in map.iter_mut().enumerate().skip(ni) {
            *m = ni + 6 * frame + (i - ni);
        }
        let pose = &state.poses[frame];
        let r0 = lift_mat::<LANES>(pose.rotation());
        let w = Vec3::new(
            Dual::<LANES>::variable(0.0, ni),
            Dual::<LANES>::variable(0.0, ni + 1),
            Dual::<LANES>::variable(0.0, ni + 2),
        );
        let rot = r0.mul_mat(&Mat3::exp_so3(w));
        let t0 = pose.translation();
        let t = Vec3::new(
            Dual::<LANES>::variable(t0.x, ni + 3),
            Dual::<LANES>::variable(t0.y, ni + 4),
            Dual::<LANES>::variable(t0.z, ni + 5),
        );
        for &i in idxs {
            let f = &features[i];
            if f.cluster >= corners.len() {
                return Err(Error::DimensionMismatch);
            }
            match feature_rows(&proj, &rot, t, corners[f.cluster], f, weights) {
                Ok(rows) => {
                    for row in rows {
                        cost += row.re * row.re;
                        scatter(row, ni + 6, &map, &mut jtj, &mut jtr, n);
                    }
                }
                Err(_) => skipped += 1,
            }
        }
    }
    for c in centers {
        match center_rows(&proj, c, weights) {
            Ok(rows) => {
                for row in rows {
                    cost += row.re * row.re;
                    scatter(row, ni, &map, &mut jtj, &mut jtr, n);
                }
            }
            Err(_) => skipped += 1,
        }
    }
    for i in 0..n {
        for j in 0..i {
            jtj[i * n + j] = jtj[j * n + i];
        }
    }
    Ok(NormalEquations { jtj, jtr, cost, skipped })
}

/// Exact projected centers of every micro-lens, as center observations.
pub fn synthetic_centers(params: &CameraParams) -> Vec<CenterObs> {
    let proj = Projector::<f64>::of(params);
    let mut out = Vec::with_capacity(params.mla.nk * params.mla.nl);
    for k in 0..params.mla.nk {
        for l in 0..params.mla.nl {
            if let Ok([u, v]) = proj.project_center(k, l) {
                out.push(CenterObs { k, l, position: Vec2::new(u, v) });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{test_camera, test_pose};
    use crate::rng::Rng;
    use crate::simulate::{generate_checkerboard_observations, Observation, PoseSampler};

    fn board() -> CheckerboardModel {
        CheckerboardModel { rows: 5, cols: 9, square_size: 3.0 }
    }

    fn exact_features(obs: &[Observation], frame: usize) -> Vec<BapFeature> {
        let p = test_camera();
        obs.iter()
            .map(|o| BapFeature {
                u: o.u,
                v: o.v,
                rho: o.rho_true,
                frame,
                k: o.k,
                l: o.l,
                lens_type: p.mla.lens_type(o.k, o.l),
                cluster: o.corner,
            })
            .collect()
    }

    fn truth_state() -> (CalibrationState, Vec<BapFeature>, Vec<CenterObs>) {
        let p = test_camera();
        let pose = test_pose();
        let obs = generate_checkerboard_observations(
            &p,
            &pose,
            &board(),
            0.0,
            &mut Rng::from_seed(3),
        )
        .unwrap();
        let features = exact_features(&obs, 0);
        let centers = synthetic_centers(&p);
        (CalibrationState { params: p, poses: vec![pose] }, features, centers)
    }

    #[test]
    fn residuals_vanish_at_ground_truth() {
        let (state, features, centers) = truth_state();
        let (r, skipped) =
            residual_vector(&state, &board(), &features, &centers, &Weights::default())
                .unwrap();
        assert_eq!(skipped, 0);
        assert_eq!(r.len(), 3 * features.len() + 2 * centers.len());
        let max = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max < 1e-9, "worst residual {max}");
    }

    #[test]
    fn masking_blur_rows_leaves_corner_cost() {
        let (mut state, features, centers) = truth_state();
        // move off the optimum so residuals are nonzero
        state.params.main_lens.focal += 0.02;
        let full =
            residual_vector(&state, &board(), &features, &centers, &Weights::default())
                .unwrap()
                .0;
        let masked = residual_vector(
            &state,
            &board(),
            &features,
            &centers,
            &Weights { rho: 0.0, ..Weights::default() },
        )
        .unwrap()
        .0;
        assert_eq!(full.len(), masked.len());
        for i in 0..features.len() {
            assert_eq!(full[3 * i], masked[3 * i]);
            assert_eq!(full[3 * i + 1], masked[3 * i + 1]);
            assert_eq!(masked[3 * i + 2], 0.0);
            assert_ne!(full[3 * i + 2], 0.0);
        }
    }

    #[test]
    fn failed_projections_are_dropped_and_counted() {
        let (state, mut features, centers) = truth_state();
        let n = features.len();
        features[0].k = state.params.mla.nk + 5; // out of the array
        let (r, skipped) =
            residual_vector(&state, &board(), &features, &centers, &Weights::default())
                .unwrap();
        assert_eq!(skipped, 1);
        assert_eq!(r.len(), 3 * (n - 1) + 2 * centers.len());
        let b = evaluate(&state, &board(), &features, &centers).unwrap();
        assert_eq!(b.skipped, 1);
        assert_eq!(b.feature_count, n - 1);
    }

    #[test]
    fn normal_equations_match_the_residual_vector_cost() {
        let (mut state, features, centers) = truth_state();
        state.params.main_lens.focal += 0.05;
        state.params.mla.tx -= 0.002;
        let w = Weights::default();
        let eq = normal_equations(&state, &board(), &features, &centers, &w).unwrap();
        let (r, _) = residual_vector(&state, &board(), &features, &centers, &w).unwrap();
        let cost: f64 = r.iter().map(|v| v * v).sum();
        assert!((eq.cost - cost).abs() < 1e-9 * cost.max(1.0));
        let n = state.params.param_count() + 6;
        assert_eq!(eq.jtj.len(), n * n);
    }

    #[test]
    fn dual_jacobian_matches_central_differences() {
        let base = test_camera();
        let ni = base.param_count();
        let mut rng = Rng::from_seed(99);
        let sampler = PoseSampler::default();
        let corners = board().corners();
        let w = Weights::default();
        let mut states = 0;
        while states < 100 {
            // a random state near the fixture and one observation
            let mut x = base.to_vec();
            for v in x.iter_mut() {
                // relative jitter, plus additive so zero-valued lanes move too
                *v = *v * (1.0 + 0.02 * (rng.uniform() - 0.5))
                    + 1e-3 * (rng.uniform() - 0.5);
            }
            let params = base.with_vec(&x);
            let pose = sampler.sample(&mut rng);
            let corner = corners[(rng.uniform() * corners.len() as f64) as usize];
            let (k, l) = (
                params.mla.nk / 2 + (rng.uniform() * 5.0) as usize,
                params.mla.nl / 2 + (rng.uniform() * 5.0) as usize,
            );
            let p_cam = pose.transform(corner);
            let Ok([u, v, rho]) = Projector::<f64>::of(&params).project_bap(p_cam, k, l)
            else {
                continue;
            };
            let feature = BapFeature {
                u: u + 0.3,
                v: v - 0.2,
                rho: rho + 0.05,
                frame: 0,
                k,
                l,
                lens_type: params.mla.lens_type(k, l),
                cluster: 0,
            };
            // dual gradients of the three rows
            let xd: Vec<Dual<LANES>> =
                x.iter().enumerate().map(|(i, &v)| Dual::variable(v, i)).collect();
            let proj = Projector::<Dual<LANES>>::from_slice(&xd, FixedParams::of(&params));
            let r0 = lift_mat::<LANES>(pose.rotation());
            let wv = Vec3::new(
                Dual::<LANES>::variable(0.0, ni),
                Dual::<LANES>::variable(0.0, ni + 1),
                Dual::<LANES>::variable(0.0, ni + 2),
            );
            let rot = r0.mul_mat(&Mat3::exp_so3(wv));
            let t0 = pose.translation();
            let t = Vec3::new(
                Dual::<LANES>::variable(t0.x, ni + 3),
                Dual::<LANES>::variable(t0.y, ni + 4),
                Dual::<LANES>::variable(t0.z, ni + 5),
            );
            let rows = feature_rows(&proj, &rot, t, corner, &feature, &w).unwrap();
            // residual at a perturbed state, for finite differences
            let value = |xp: &[f64], pose_p: &Pose| -> [f64; 3] {
                let pp = base.with_vec(&xp[..ni]);
                let [uu, vv, rr] = Projector::<f64>::of(&pp)
                    .project_bap(pose_p.transform(corner), k, l)
                    .unwrap();
                [feature.u - uu, feature.v - vv, feature.rho - rr]
            };
            for lane in 0..ni + 6 {
                let (plus, minus, h) = if lane < ni {
                    let h = 1e-6 * x[lane].abs().max(1e-2);
                    let mut xp = x.clone();
                    xp[lane] += h;
                    let mut xm = x.clone();
                    xm[lane] -= h;
                    (value(&xp, &pose), value(&xm, &pose), h)
                } else {
                    let h = 1e-7;
                    let mut dw = Vec3::new(0.0, 0.0, 0.0);
                    let mut dt = Vec3::new(0.0, 0.0, 0.0);
                    let axis = lane - ni;
                    let set = |v: &mut Vec3<f64>, i: usize, s: f64| match i {
                        0 => v.x = s,
                        1 => v.y = s,
                        _ => v.z = s,
                    };
                    if axis < 3 {
                        set(&mut dw, axis, h);
                    } else {
                        set(&mut dt, axis - 3, h);
                    }
                    let pp = pose.retract(dw, dt);
                    let pm = pose.retract(dw * -1.0, dt * -1.0);
                    (value(&x, &pp), value(&x, &pm), h)
                };
                for row in 0..3 {
                    let fd = (plus[row] - minus[row]) / (2.0 * h);
                    let an = rows[row].eps[lane];
                    // relative gate plus slack for finite-difference roundoff
                    assert!(
                        (fd - an).abs() < 1e-5 * fd.abs().max(an.abs()) + 1e-4,
                        "state {states} lane {lane} row {row}: {an} vs {fd}"
                    );
                }
            }
            states += 1;
        }
    }
}
