//! Vignetting correction, replica clustering, virtual depth from pairwise
//! disparity, and blur-aware feature synthesis.
//!
//! A corner seen through several micro-lenses leaves one replica per
//! micro-image. Replicas of one corner form a tight cluster in pixel space;
//! the spread between replicas relative to their micro-image baseline
//! encodes the virtual depth ν, which in turn fixes the signed blur radius
//! of every replica through the radius line of its lens type.

use crate::error::Error;
use crate::linalg::Vec2;
use crate::model::{BapFeature, CameraParams, Projector};
use crate::precalib::InternalParams;
use crate::raster::Raster;
use crate::simulate::Observation;
use alloc::vec;
use alloc::vec::Vec;

/// Pixel-wise flat-field correction: `raw / white`, zero where the white
/// image carries no signal, negatives clamped to zero.
pub fn devignette(raw: &Raster, white: &Raster) -> Result<Raster, Error> {
    if raw.width() != white.width() || raw.height() != white.height() {
        return Err(Error::DimensionMismatch);
    }
    let floor = 1e-6 * white.max_value().max(0.0);
    let mut out = Raster::new(raw.width(), raw.height());
    for y in 0..raw.height() {
        for x in 0..raw.width() {
            let w = white.get(x, y);
            let v = if w <= floor { 0.0 } else { (raw.get(x, y) / w).max(0.0) };
            out.set(x, y, v);
        }
    }
    Ok(out)
}

/// One replica prepared for depth estimation: its detected pixel position
/// and the center of the micro-image it lies in.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Replica {
    pub position: Vec2<f64>,
    pub center: Vec2<f64>,
}

/// A group of observations judged to be one corner, with its median
/// virtual depth.
#[derive(Clone, Debug)]
pub struct Cluster {
    /// Indices into the frame's observation list.
    pub members: Vec<usize>,
    /// Median pairwise virtual depth.
    pub nu: f64,
}

/// Density-based clustering of observations in pixel space; returns member
/// index lists, dropping noise points. Deterministic in input order, and
/// the resulting partition is invariant under input permutation.
pub fn cluster_observations(
    observations: &[Observation],
    eps: f64,
    min_pts: usize,
) -> Result<Vec<Vec<usize>>, Error> {
    if eps <= 0.0 || min_pts == 0 {
        return Err(Error::InvalidGeometry);
    }
    let n = observations.len();
    let eps2 = eps * eps;
    let neighbors_of = |i: usize| -> Vec<usize> {
        let oi = &observations[i];
        (0..n)
            .filter(|&j| {
                let oj = &observations[j];
                let du = oi.u - oj.u;
                let dv = oi.v - oj.v;
                du * du + dv * dv <= eps2
            })
            .collect()
    };
    // classic DBSCAN; a point's neighborhood includes itself
    let mut label = vec![usize::MAX; n]; // MAX = unvisited/noise
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut visited = vec![false; n];
    for i in 0..n {
        if visited[i] {
            continue;
        }
        visited[i] = true;
        let seed = neighbors_of(i);
        if seed.len() < min_pts {
            continue; // noise unless adopted by a later core point
        }
        let cid = clusters.len();
        clusters.push(Vec::new());
        label[i] = cid;
        clusters[cid].push(i);
        let mut queue = seed;
        let mut qi = 0;
        while qi < queue.len() {
            let j = queue[qi];
            qi += 1;
            if label[j] == usize::MAX {
                label[j] = cid;
                clusters[cid].push(j);
            }
            if visited[j] {
                continue;
            }
            visited[j] = true;
            let nb = neighbors_of(j);
            if nb.len() >= min_pts {
                queue.extend(nb);
            }
        }
        clusters[cid].sort_unstable();
    }
    Ok(clusters)
}

/// Median pairwise virtual depth of a replica set.
///
/// For each pair, the baseline is the micro-image center distance scaled by
/// λ and the disparity is the replica offset projected onto the baseline
/// direction: ν = B / (B − Δ). Pairs with Δ ≈ B (image at infinity) are
/// excluded; erring only when no pair survives.
pub fn virtual_depth(replicas: &[Replica], lambda: f64) -> Result<f64, Error> {
    if replicas.len() < 2 {
        return Err(Error::InsufficientData { found: replicas.len(), needed: 2 });
    }
    let mut nus = Vec::new();
    for i in 0..replicas.len() {
        for j in i + 1..replicas.len() {
            let base = replicas[j].center - replicas[i].center;
            let norm = base.norm();
            if norm < 1e-9 {
                continue; // same micro-image; no baseline
            }
            let b = lambda * norm;
            let delta =
                (replicas[j].position - replicas[i].position).dot(base) / norm;
            let denom = b - delta;
            if denom.abs() < 1e-9 * b {
                continue; // singular: replica spacing equals the baseline
            }
            nus.push(b / denom);
        }
    }
    if nus.is_empty() {
        return Err(Error::SingularDepth);
    }
    nus.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = nus.len();
    Ok(if n % 2 == 1 { nus[n / 2] } else { 0.5 * (nus[n / 2 - 1] + nus[n / 2]) })
}

/// Signed blur radius (pixels) of lens type with offset intercept
/// `q_prime` at virtual depth `nu`:
/// `r = (λ Δc / 2) / ν + (q' − λ Δc / 2)`, ρ = r / s.
pub fn bap_radius(lambda: f64, delta_c: f64, q_prime: f64, nu: f64, pixel_size: f64) -> f64 {
    let half = 0.5 * lambda * delta_c;
    (half / nu + q_prime - half) / pixel_size
}

/// Clusters a frame's observations and estimates each cluster's virtual
/// depth; micro-image centers come from the current camera estimate.
/// Clusters without a usable depth (all pairs singular, or ν = 1, where
/// every replica collapses onto one pixel) are dropped.
pub fn depth_clusters(
    params: &CameraParams,
    observations: &[Observation],
    eps: f64,
    min_pts: usize,
) -> Result<Vec<Cluster>, Error> {
    let proj = Projector::<f64>::of(params);
    let lambda = params.lambda();
    let groups = cluster_observations(observations, eps, min_pts)?;
    let mut out = Vec::with_capacity(groups.len());
    for members in groups {
        let mut replicas = Vec::with_capacity(members.len());
        for &i in &members {
            let o = &observations[i];
            let [cu, cv] = proj.project_center(o.k, o.l)?;
            replicas.push(Replica {
                position: Vec2::new(o.u, o.v),
                center: Vec2::new(cu, cv),
            });
        }
        match virtual_depth(&replicas, lambda) {
            Ok(nu) if (nu - 1.0).abs() > 1e-6 => out.push(Cluster { members, nu }),
            Ok(_) | Err(Error::SingularDepth) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Completes a frame's observations into blur-aware features: clusters
/// them, estimates per-cluster virtual depth, and synthesizes each
/// replica's signed blur radius from its lens type's radius line.
pub fn assemble_bap_features(
    params: &CameraParams,
    internal: &InternalParams,
    observations: &[Observation],
    frame: usize,
    eps: f64,
    min_pts: usize,
) -> Result<Vec<BapFeature>, Error> {
    let clusters = depth_clusters(params, observations, eps, min_pts)?;
    let lambda = params.lambda();
    let q_prime = internal.q_prime();
    let s = params.sensor.pixel_size;
    let mut out = Vec::new();
    for (cid, cluster) in clusters.iter().enumerate() {
        for &i in &cluster.members {
            let o = &observations[i];
            let lens_type = params.mla.lens_type(o.k, o.l);
            let rho =
                bap_radius(lambda, internal.delta_c, q_prime[lens_type - 1], cluster.nu, s);
            out.push(BapFeature {
                u: o.u,
                v: o.v,
                rho,
                frame,
                k: o.k,
                l: o.l,
                lens_type,
                cluster: cid,
            });
        }
    }
    Ok(out)
}
