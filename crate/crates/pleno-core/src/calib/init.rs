//! Closed-form starting values: intrinsics from the pre-calibration line
//! parameters and the fitted micro-image grid, poses from cluster
//! barycenters via a planar perspective solution.

use crate::error::Error;
use crate::features::{depth_clusters, Cluster};
use crate::linalg::{cholesky_solve, jacobi_eigen, lstsq, Mat3, Vec2, Vec3};
use crate::mia::MiaGrid;
use crate::model::{
    apply_distortion, mla_pitch_from_mia, CameraParams, Distortion, LensConfiguration,
    MainLens, MlaGeometry, Pose, Projector, Sensor,
};
use crate::precalib::InternalParams;
use crate::scalar::{Dual, Real};
use crate::simulate::{CheckerboardModel, Observation};
use alloc::vec;
use alloc::vec::Vec;

/// Image-side conjugate of an object focused at total covering distance
/// `h`: the root of `H(h - H) = F h` selected by the lens configuration.
pub fn image_conjugate(
    focal: f64,
    h: f64,
    configuration: LensConfiguration,
) -> Result<f64, Error> {
    let ratio = 4.0 * focal / h;
    let disc = match configuration {
        LensConfiguration::Keplerian => 1.0 - ratio,
        LensConfiguration::Galilean => 1.0 + ratio,
    };
    if disc < 0.0 {
        return Err(Error::NegativeDiscriminant);
    }
    Ok((0.5 * h * (1.0 - disc.sqrt())).abs())
}

/// Builds starting intrinsics from the radius-line parameters, the fitted
/// micro-image grid, and the declared focus setting.
///
/// The spacing chain is `H` from the focus distance, `d` from the line
/// slope, `D = H - 2d`, the array pitch from the grid pitch, and per-type
/// focal lengths from the line offsets. Distortion starts at zero, the
/// principal point at the image center, and the array pose comes from the
/// grid fit. The grid's interleaving of type labels is matched to the
/// physical layout by reprojecting central lenses.
pub fn init_intrinsics(
    omega: &InternalParams,
    focal: f64,
    fnumber: f64,
    focus_distance: f64,
    configuration: LensConfiguration,
    sensor: Sensor,
    grid: &MiaGrid,
) -> Result<CameraParams, Error> {
    if focal <= 0.0 || fnumber <= 0.0 || focus_distance <= 0.0 || omega.q.is_empty() {
        return Err(Error::InvalidGeometry);
    }
    let m = omega.m.abs();
    let h_img = image_conjugate(focal, focus_distance, configuration)?;
    let d = 2.0 * m * h_img / (focal + 4.0 * m);
    let big_d = h_img - 2.0 * d;
    if d <= 0.0 || big_d <= d {
        return Err(Error::InvalidGeometry);
    }
    let s = sensor.pixel_size;
    let delta_c = grid.pitch * s;
    let pitch = mla_pitch_from_mia(delta_c, big_d, d);
    let lambda = big_d / (big_d + d);
    let u0 = ((sensor.width - 1) / 2) as f64;
    let v0 = ((sensor.height - 1) / 2) as f64;
    let center = grid.centroid();
    let mut params = CameraParams {
        main_lens: MainLens {
            focal,
            fnumber,
            u0,
            v0,
            distortion: Distortion::none(),
        },
        sensor: Sensor { d, ..sensor },
        mla: MlaGeometry {
            rotation: [0.0, 0.0, -grid.theta],
            tx: -lambda * s * (center.x - u0),
            ty: -lambda * s * (center.y - v0),
            big_d,
            pitch,
            nk: grid.nk,
            nl: grid.nl,
            type_count: omega.q.len(),
        },
        micro_focals: vec![d; omega.q.len()],
        configuration,
    };
    let perm = match_type_labels(&params, grid)?;
    let q_prime = omega.q_prime();
    for g in 0..omega.q.len() {
        let qp = q_prime[perm[g] - 1];
        if qp <= 0.0 {
            return Err(Error::InvalidGeometry);
        }
        params.micro_focals[g] = d * pitch / (2.0 * qp);
    }
    Ok(params)
}

/// For each physical lens type, the grid-side type label of its
/// micro-images, found by reprojecting a block of central lenses onto the
/// fitted grid. Conflicting votes mean the grid and model disagree.
fn match_type_labels(params: &CameraParams, grid: &MiaGrid) -> Result<Vec<usize>, Error> {
    let proj = Projector::<f64>::of(params);
    let i = params.mla.type_count;
    let (nk, nl) = (params.mla.nk, params.mla.nl);
    let mut perm = vec![0usize; i];
    for k in nk / 2 - 2..nk / 2 + 3 {
        for l in nl / 2 - 2..nl / 2 + 3 {
            let g = params.mla.lens_type(k, l);
            let [u, v] = proj.project_center(k, l)?;
            let (gk, gl) = grid.nearest_index(Vec2::new(u, v));
            let label = ((gk + 2 * gl).rem_euclid(i as i64)) as usize + 1;
            if perm[g - 1] == 0 {
                perm[g - 1] = label;
            } else if perm[g - 1] != label {
                return Err(Error::AmbiguousAssignment);
            }
        }
    }
    let mut seen = vec![false; i];
    for &p in &perm {
        if p == 0 || seen[p - 1] {
            return Err(Error::AmbiguousAssignment);
        }
        seen[p - 1] = true;
    }
    Ok(perm)
}

/// Mean feature position of each cluster.
pub fn cluster_barycenters(observations: &[Observation], clusters: &[Cluster]) -> Vec<Vec2<f64>> {
    clusters
        .iter()
        .map(|c| {
            let mut sum = Vec2::new(0.0, 0.0);
            for &i in &c.members {
                sum = sum + Vec2::new(observations[i].u, observations[i].v);
            }
            sum * (1.0 / c.members.len() as f64)
        })
        .collect()
}

fn principal_axes(points: &[Vec2<f64>]) -> (Vec2<f64>, Vec2<f64>, Vec2<f64>, f64, f64) {
    let n = points.len() as f64;
    let mut mean = Vec2::new(0.0, 0.0);
    for p in points {
        mean = mean + *p;
    }
    mean = mean * (1.0 / n);
    let (mut cxx, mut cxy, mut cyy) = (0.0, 0.0, 0.0);
    for p in points {
        let d = *p - mean;
        cxx += d.x * d.x;
        cxy += d.x * d.y;
        cyy += d.y * d.y;
    }
    cxx /= n;
    cxy /= n;
    cyy /= n;
    let half = 0.5 * (cxx - cyy);
    let r = (half * half + cxy * cxy).sqrt();
    let l1 = 0.5 * (cxx + cyy) + r;
    let l2 = 0.5 * (cxx + cyy) - r;
    let e1 = if cxy.abs() > 1e-12 * (cxx + cyy) {
        let v = Vec2::new(cxy, l1 - cxx);
        v * (1.0 / v.norm())
    } else if cxx >= cyy {
        Vec2::new(1.0, 0.0)
    } else {
        Vec2::new(0.0, 1.0)
    };
    let e2 = Vec2::new(-e1.y, e1.x);
    (mean, e1, e2, l1.max(0.0).sqrt(), l2.max(0.0).sqrt())
}

/// Nearest predicted corner for each barycenter with contested corners
/// kept by the closer claimant; unmatched entries are `None`.
fn nearest_unique(
    barycenters: &[Vec2<f64>],
    predicted: &[Vec2<f64>],
) -> (Vec<Option<usize>>, f64) {
    let mut assignment: Vec<Option<usize>> = vec![None; barycenters.len()];
    let mut dist = vec![f64::INFINITY; barycenters.len()];
    let mut owner: Vec<Option<usize>> = vec![None; predicted.len()];
    for (bi, b) in barycenters.iter().enumerate() {
        let (mut ci, mut cd) = (0usize, f64::INFINITY);
        for (i, p) in predicted.iter().enumerate() {
            let d = (*b - *p).norm();
            if d < cd {
                cd = d;
                ci = i;
            }
        }
        if let Some(prev) = owner[ci] {
            if cd < dist[prev] {
                assignment[prev] = None;
                owner[ci] = Some(bi);
                assignment[bi] = Some(ci);
                dist[bi] = cd;
            }
        } else {
            owner[ci] = Some(bi);
            assignment[bi] = Some(ci);
            dist[bi] = cd;
        }
    }
    let total = assignment
        .iter()
        .zip(&dist)
        .filter(|(a, _)| a.is_some())
        .map(|(_, d)| d)
        .sum();
    (assignment, total)
}

/// Matches cluster barycenters to board corners: principal axes of the two
/// point sets give a seed alignment (trying all four axis orientations),
/// then nearest matching alternates with an affine board-to-pixel fit
/// until the correspondence is stable, unique, and complete.
pub fn assign_corners(
    board: &CheckerboardModel,
    barycenters: &[Vec2<f64>],
) -> Result<Vec<usize>, Error> {
    if barycenters.len() < 4 {
        return Err(Error::InsufficientData { found: barycenters.len(), needed: 4 });
    }
    let corners = board.corners();
    let board_2d: Vec<Vec2<f64>> = corners.iter().map(|c| Vec2::new(c.x, c.y)).collect();
    let (bm, be1, be2, bs1, bs2) = principal_axes(&board_2d);
    let (pm, pe1, pe2, ps1, ps2) = principal_axes(barycenters);
    if bs2 < 1e-12 || ps2 < 1e-12 {
        return Err(Error::DegenerateConfiguration);
    }
    let mut predicted = Vec::new();
    let mut best = f64::INFINITY;
    for signs in 0..4 {
        let s1 = if signs & 1 == 0 { 1.0 } else { -1.0 };
        let s2 = if signs & 2 == 0 { 1.0 } else { -1.0 };
        let candidate: Vec<Vec2<f64>> = board_2d
            .iter()
            .map(|c| {
                let a = (*c - bm).dot(be1) / bs1 * ps1 * s1;
                let b = (*c - bm).dot(be2) / bs2 * ps2 * s2;
                pm + pe1 * a + pe2 * b
            })
            .collect();
        let (_, total) = nearest_unique(barycenters, &candidate);
        if total < best {
            best = total;
            predicted = candidate;
        }
    }
    // alternate nearest matching with an affine board-to-pixel fit
    let mut assignment = Vec::new();
    for _ in 0..12 {
        let (next, _) = nearest_unique(barycenters, &predicted);
        let mut a = Vec::new();
        let mut bx = Vec::new();
        let mut by = Vec::new();
        for (bi, ci) in next.iter().enumerate() {
            if let Some(ci) = ci {
                let c = board_2d[*ci];
                a.extend_from_slice(&[c.x, c.y, 1.0]);
                bx.push(barycenters[bi].x);
                by.push(barycenters[bi].y);
            }
        }
        if bx.len() < 3 {
            return Err(Error::DegenerateConfiguration);
        }
        let fx = lstsq(&a, &bx, bx.len(), 3).ok_or(Error::DegenerateConfiguration)?;
        let fy = lstsq(&a, &by, by.len(), 3).ok_or(Error::DegenerateConfiguration)?;
        predicted = board_2d
            .iter()
            .map(|c| Vec2::new(
                fx[0] * c.x + fx[1] * c.y + fx[2],
                fy[0] * c.x + fy[1] * c.y + fy[2],
            ))
            .collect();
        let done = next == assignment;
        assignment = next;
        if done {
            break;
        }
    }
    // completeness and tightness against the local predicted spacing
    let mut gate = f64::INFINITY;
    for i in 0..predicted.len() {
        for j in i + 1..predicted.len() {
            gate = gate.min((predicted[i] - predicted[j]).norm());
        }
    }
    gate *= 0.45;
    let mut out = Vec::with_capacity(barycenters.len());
    for (bi, ci) in assignment.iter().enumerate() {
        match ci {
            Some(ci) if (barycenters[bi] - predicted[*ci]).norm() < gate => out.push(*ci),
            _ => return Err(Error::DegenerateConfiguration),
        }
    }
    Ok(out)
}

/// Barycenter image of a camera-frame point: the chief-ray pinhole with
/// focal distance `D + d`, after lateral distortion.
fn barycenter_model<T: Real>(
    u0: T,
    v0: T,
    focal_px: T,
    distortion: &Distortion<T>,
    p_cam: Vec3<T>,
) -> Vec2<T> {
    let pd = apply_distortion(distortion, p_cam);
    Vec2::new(u0 + focal_px * (pd.x / pd.z), v0 + focal_px * (pd.y / pd.z))
}

/// Recovers a board pose from corner/barycenter matches: direct linear
/// planar solution followed by Gauss-Newton refinement of the chief-ray
/// reprojection.
pub fn pose_from_barycenters(
    params: &CameraParams,
    board: &CheckerboardModel,
    matches: &[(usize, Vec2<f64>)],
) -> Result<Pose, Error> {
    if matches.len() < 4 {
        return Err(Error::InsufficientData { found: matches.len(), needed: 4 });
    }
    let corners = board.corners();
    let focal_px = (params.mla.big_d + params.sensor.d) / params.sensor.pixel_size;
    let (u0, v0) = (params.main_lens.u0, params.main_lens.v0);
    // direct linear transform on normalized chief-ray coordinates
    let mut ata = vec![0.0; 81];
    for (ci, b) in matches {
        let c = corners[*ci];
        let mx = (b.x - u0) / focal_px;
        let my = (b.y - v0) / focal_px;
        let rows = [
            [c.x, c.y, 1.0, 0.0, 0.0, 0.0, -mx * c.x, -mx * c.y, -mx],
            [0.0, 0.0, 0.0, c.x, c.y, 1.0, -my * c.x, -my * c.y, -my],
        ];
        for row in rows {
            for i in 0..9 {
                for j in 0..9 {
                    ata[i * 9 + j] += row[i] * row[j];
                }
            }
        }
    }
    let (_, vecs) = jacobi_eigen(&ata, 9);
    let mut hm = [0.0; 9];
    for i in 0..9 {
        hm[i] = vecs[i * 9]; // smallest-eigenvalue column
    }
    // overall sign: the board must sit in front of the lens (t_z > 0)
    if hm[8] < 0.0 {
        for v in hm.iter_mut() {
            *v = -*v;
        }
    }
    let h1 = Vec3::new(hm[0], hm[3], hm[6]);
    let h2 = Vec3::new(hm[1], hm[4], hm[7]);
    let h3 = Vec3::new(hm[2], hm[5], hm[8]);
    let scale = 2.0 / (h1.norm() + h2.norm());
    let r1 = h1 * (1.0 / h1.norm());
    let mut r2 = h2 - r1 * r1.dot(h2);
    let n2 = r2.norm();
    if n2 < 1e-12 {
        return Err(Error::DegenerateConfiguration);
    }
    r2 = r2 * (1.0 / n2);
    let r3 = r1.cross(r2);
    let rot = Mat3::from_rows(
        Vec3::new(r1.x, r2.x, r3.x),
        Vec3::new(r1.y, r2.y, r3.y),
        Vec3::new(r1.z, r2.z, r3.z),
    )
    .orthonormalize();
    let t = h3 * scale;
    let mut pose = Pose::new(rot, t)?;
    // Gauss-Newton on the barycenter reprojection, local pose update
    let dist = params.main_lens.distortion;
    for _ in 0..40 {
        let mut jtj = [0.0; 36];
        let mut jtr = [0.0; 6];
        let du0 = Dual::<6>::constant(u0);
        let dv0 = Dual::<6>::constant(v0);
        let dfp = Dual::<6>::constant(focal_px);
        let ddist = Distortion {
            radial: dist.radial.map(Dual::<6>::constant),
            tangential: dist.tangential.map(Dual::<6>::constant),
        };
        let r0: Mat3<Dual<6>> = lift_mat(pose.rotation());
        let t0 = lift_vec(pose.translation());
        let w = Vec3::new(
            Dual::<6>::variable(0.0, 0),
            Dual::<6>::variable(0.0, 1),
            Dual::<6>::variable(0.0, 2),
        );
        let dt = Vec3::new(
            Dual::<6>::variable(0.0, 3),
            Dual::<6>::variable(0.0, 4),
            Dual::<6>::variable(0.0, 5),
        );
        let rot_d = r0.mul_mat(&Mat3::exp_so3(w));
        let mut cost = 0.0;
        for (ci, b) in matches {
            let c = corners[*ci];
            let p = rot_d.mul_vec(lift_vec(c)) + t0 + dt;
            if p.z.value() <= 0.0 {
                return Err(Error::BehindLens);
            }
            let m = barycenter_model(du0, dv0, dfp, &ddist, p);
            for (obs, model) in [(b.x, m.x), (b.y, m.y)] {
                let r = obs - model.re;
                cost += r * r;
                for i in 0..6 {
                    // d(residual)/d(param) = -d(model)/d(param)
                    let gi = -model.eps[i];
                    jtr[i] += gi * r;
                    for j in 0..6 {
                        jtj[i * 6 + j] += gi * (-model.eps[j]);
                    }
                }
            }
        }
        for i in 0..6 {
            jtj[i * 6 + i] += 1e-12 + 1e-9 * jtj[i * 6 + i];
        }
        let neg_g: Vec<f64> = jtr.iter().map(|g| -g).collect();
        let step = cholesky_solve(&jtj, &neg_g, 6).ok_or(Error::DegenerateConfiguration)?;
        pose = pose.retract(
            Vec3::new(step[0], step[1], step[2]),
            Vec3::new(step[3], step[4], step[5]),
        );
        let sq: f64 = step.iter().map(|s| s * s).sum();
        if sq < 1e-24 || cost < 1e-24 {
            break;
        }
    }
    Ok(pose)
}

pub(crate) fn lift_vec<const K: usize>(v: Vec3<f64>) -> Vec3<Dual<K>> {
    Vec3::new(Dual::constant(v.x), Dual::constant(v.y), Dual::constant(v.z))
}

pub(crate) fn lift_mat<const K: usize>(m: &Mat3<f64>) -> Mat3<Dual<K>> {
    Mat3::from_rows(lift_vec(m.row(0)), lift_vec(m.row(1)), lift_vec(m.row(2)))
}

/// Sharpens a pose against every replica with frozen intrinsics,
/// minimizing the pixel reprojection of the full micro-lens model; the
/// cluster barycenter solution is accurate to a fraction of a micro-image
/// and this step removes its sampling bias.
pub fn refine_pose_uv(
    params: &CameraParams,
    board: &CheckerboardModel,
    observations: &[Observation],
    clusters: &[Cluster],
    corner_of: &[usize],
    pose0: Pose,
) -> Result<Pose, Error> {
    let corners = board.corners();
    let x: Vec<Dual<6>> = params.to_vec().iter().map(|&v| Dual::constant(v)).collect();
    let proj = Projector::<Dual<6>>::from_slice(&x, crate::model::FixedParams::of(params));
    let mut pose = pose0;
    for _ in 0..60 {
        let r0 = lift_mat::<6>(pose.rotation());
        let t0 = lift_vec::<6>(pose.translation());
        let w = Vec3::new(
            Dual::<6>::variable(0.0, 0),
            Dual::<6>::variable(0.0, 1),
            Dual::<6>::variable(0.0, 2),
        );
        let dt = Vec3::new(
            Dual::<6>::variable(0.0, 3),
            Dual::<6>::variable(0.0, 4),
            Dual::<6>::variable(0.0, 5),
        );
        let rot_d = r0.mul_mat(&Mat3::exp_so3(w));
        let mut jtj = [0.0; 36];
        let mut jtr = [0.0; 6];
        let mut rows = 0usize;
        for (cluster, &corner) in clusters.iter().zip(corner_of) {
            let c = lift_vec::<6>(corners[corner]);
            let p_cam = rot_d.mul_vec(c) + t0 + dt;
            for &m in &cluster.members {
                let o = &observations[m];
                let Ok([u, v, _]) = proj.project_bap(p_cam, o.k, o.l) else {
                    continue;
                };
                for (obs, model) in [(o.u, u), (o.v, v)] {
                    let r = obs - model.re;
                    rows += 1;
                    for i in 0..6 {
                        jtr[i] += -model.eps[i] * r;
                        for j in i..6 {
                            jtj[i * 6 + j] += model.eps[i] * model.eps[j];
                        }
                    }
                }
            }
        }
        if rows < 6 {
            return Err(Error::InsufficientData { found: rows, needed: 6 });
        }
        for i in 0..6 {
            for j in 0..i {
                jtj[i * 6 + j] = jtj[j * 6 + i];
            }
            jtj[i * 6 + i] += 1e-12 + 1e-9 * jtj[i * 6 + i];
        }
        let neg_g: Vec<f64> = jtr.iter().map(|g| -g).collect();
        let step = cholesky_solve(&jtj, &neg_g, 6).ok_or(Error::DegenerateConfiguration)?;
        pose = pose.retract(
            Vec3::new(step[0], step[1], step[2]),
            Vec3::new(step[3], step[4], step[5]),
        );
        let sq: f64 = step.iter().map(|s| s * s).sum();
        if sq < 1e-24 {
            break;
        }
    }
    Ok(pose)
}

/// One frame's initialization: clusters with depth, their board-corner
/// assignment, and the recovered pose.
#[derive(Clone, Debug)]
pub struct FrameInit {
    pub pose: Pose,
    pub clusters: Vec<Cluster>,
    /// Board corner index of each cluster.
    pub corner_of: Vec<usize>,
}

/// Clusters a frame, identifies which board corner each cluster images,
/// and recovers the frame pose from the cluster barycenters.
pub fn init_frame(
    params: &CameraParams,
    board: &CheckerboardModel,
    observations: &[Observation],
    eps: f64,
    min_pts: usize,
) -> Result<FrameInit, Error> {
    let clusters = depth_clusters(params, observations, eps, min_pts)?;
    let barycenters = cluster_barycenters(observations, &clusters);
    let corner_of = assign_corners(board, &barycenters)?;
    let matches: Vec<(usize, Vec2<f64>)> =
        corner_of.iter().copied().zip(barycenters).collect();
    let coarse = pose_from_barycenters(params, board, &matches)?;
    let pose = refine_pose_uv(params, board, observations, &clusters, &corner_of, coarse)?;
    Ok(FrameInit { pose, clusters, corner_of })
}

/// Pose starting values for a list of frames.
pub fn init_poses(
    params: &CameraParams,
    board: &CheckerboardModel,
    frames: &[Vec<Observation>],
    eps: f64,
    min_pts: usize,
) -> Result<Vec<Pose>, Error> {
    frames
        .iter()
        .map(|obs| init_frame(params, board, obs, eps, min_pts).map(|f| f.pose))
        .collect()
}
