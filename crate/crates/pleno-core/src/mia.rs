//! Micro-image center detection and pixel-space hexagonal grid fitting.

use crate::error::Error;
use crate::linalg::{lstsq, Vec2};
use crate::model::types::ROW_SPACING;
use crate::raster::Raster;
use alloc::vec::Vec;

/// Pixel-space micro-image grid: hexagonal lattice of pitch `pitch`,
/// rotated by `theta` about the (-z)-axis, anchored so node (0, 0) sits at
/// `(tx, ty)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MiaGrid {
    /// Inter-center pitch (pixels).
    pub pitch: f64,
    /// Pixel position of node (0, 0).
    pub tx: f64,
    /// Pixel position of node (0, 0).
    pub ty: f64,
    /// Rotation about the (-z)-axis (rad), within the hexagonal symmetry
    /// sector |theta| < pi/6.
    pub theta: f64,
    /// Grid extent along k.
    pub nk: usize,
    /// Grid extent along l.
    pub nl: usize,
}

impl MiaGrid {
    /// Lattice node (k, l) in pixels; odd rows are offset half a pitch,
    /// rows are spaced (sqrt(3)/2) * pitch apart.
    pub fn grid_point(&self, k: usize, l: usize) -> Vec2<f64> {
        self.node(k as i64, l as i64)
    }

    /// Metric pitch of the micro-image array (mm) for pixel size `s`;
    /// the single source of truth consumed downstream.
    pub fn metric_pitch(&self, s: f64) -> f64 {
        self.pitch * s
    }

    /// Centroid of all nodes in the extent (pixels).
    pub fn centroid(&self) -> Vec2<f64> {
        let mut acc = Vec2::new(0.0, 0.0);
        for k in 0..self.nk {
            for l in 0..self.nl {
                acc = acc + self.grid_point(k, l);
            }
        }
        acc * (1.0 / (self.nk * self.nl) as f64)
    }

    /// Lattice node for signed indices; may lie outside the extent.
    pub fn node(&self, k: i64, l: i64) -> Vec2<f64> {
        let parity = (l.rem_euclid(2)) as f64;
        let hx = (k as f64 + 0.5 * parity) * self.pitch;
        let hy = ROW_SPACING * l as f64 * self.pitch;
        // rotation about -z: [[c, s], [-s, c]]
        let (s, c) = (libm::sin(self.theta), libm::cos(self.theta));
        Vec2::new(c * hx + s * hy + self.tx, -s * hx + c * hy + self.ty)
    }

    /// Nearest lattice index of a pixel point under this grid (may fall
    /// outside the extent).
    pub fn nearest_index(&self, p: Vec2<f64>) -> (i64, i64) {
        let (s, c) = (libm::sin(self.theta), libm::cos(self.theta));
        let dx = p.x - self.tx;
        let dy = p.y - self.ty;
        // inverse rotation
        let hx = (c * dx - s * dy) / self.pitch;
        let hy = (s * dx + c * dy) / self.pitch;
        let l = libm::round(hy / ROW_SPACING) as i64;
        let parity = (l.rem_euclid(2)) as f64;
        let k = libm::round(hx - 0.5 * parity) as i64;
        (k, l)
    }
}

/// Finds micro-image centers on a white image as clamped intensity
/// centroids around suppressed local maxima; sub-pixel.
pub fn detect_centers(white: &Raster, expected_pitch: f64) -> Result<Vec<Vec2<f64>>, Error> {
    let (w, h) = (white.width(), white.height());
    let peak = white.max_value();
    if peak <= 0.0 {
        return Err(Error::DetectionFailed { found: 0, needed: 4 });
    }
    let threshold = 0.3 * peak;
    let mut maxima: Vec<(f32, usize, usize)> = Vec::new();
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let v = white.get(x, y);
            if v < threshold {
                continue;
            }
            let mut is_max = true;
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let n = white.get((x as isize + dx) as usize, (y as isize + dy) as usize);
                    if n > v {
                        is_max = false;
                    }
                }
            }
            if is_max {
                maxima.push((v, x, y));
            }
        }
    }
    // greedy non-maximum suppression, brightest first
    maxima.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let min_dist2 = (0.5 * expected_pitch) * (0.5 * expected_pitch);
    let mut kept: Vec<(usize, usize)> = Vec::new();
    'cand: for &(_, x, y) in &maxima {
        for &(kx, ky) in &kept {
            let dx = x as f64 - kx as f64;
            let dy = y as f64 - ky as f64;
            if dx * dx + dy * dy < min_dist2 {
                continue 'cand;
            }
        }
        kept.push((x, y));
    }
    // clamped sub-pixel centroid in a half-pitch window
    let half = (0.5 * expected_pitch) as isize;
    let clamp = 0.35;
    let mut centers = Vec::with_capacity(kept.len());
    for &(cx, cy) in &kept {
        let x0 = (cx as isize - half).max(0) as usize;
        let x1 = (cx as isize + half).min(w as isize - 1) as usize;
        let y0 = (cy as isize - half).max(0) as usize;
        let y1 = (cy as isize + half).min(h as isize - 1) as usize;
        let mut local_peak = 0.0f32;
        for y in y0..=y1 {
            for x in x0..=x1 {
                local_peak = local_peak.max(white.get(x, y));
            }
        }
        let floor = clamp * local_peak as f64;
        let (mut m0, mut mx, mut my) = (0.0f64, 0.0f64, 0.0f64);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let v = (white.get(x, y) as f64 - floor).max(0.0);
                m0 += v;
                mx += v * x as f64;
                my += v * y as f64;
            }
        }
        if m0 > 0.0 {
            centers.push(Vec2::new(mx / m0, my / m0));
        }
    }
    if centers.len() < 4 {
        return Err(Error::DetectionFailed { found: centers.len(), needed: 4 });
    }
    Ok(centers)
}

/// A fitted grid with its residual statistics.
#[derive(Clone, Debug)]
pub struct GridFit {
    pub grid: MiaGrid,
    /// RMS of center-to-node residuals (pixels).
    pub rms: f64,
    /// Centers left out as outliers.
    pub dropped: usize,
}

/// Least-squares fit of a hexagonal lattice to detected centers by
/// alternating nearest-lattice index assignment with an exact linear solve.
///
/// In the parameterization `(p, q, tx, ty) = (pitch cos theta,
/// pitch sin theta, tx, ty)` the mesh residuals are linear, so each
/// assignment round is solved exactly by the normal equations; iteration is
/// only over the index assignment.
pub fn fit_grid(centers: &[Vec2<f64>]) -> Result<GridFit, Error> {
    if centers.len() < 4 {
        return Err(Error::InsufficientData { found: centers.len(), needed: 4 });
    }
    let (pitch0, theta0) = seed_lattice(centers)?;
    let anchor = seed_anchor(centers, theta0);
    let mut grid = MiaGrid {
        pitch: pitch0,
        tx: anchor.x,
        ty: anchor.y,
        theta: theta0,
        nk: 0,
        nl: 0,
    };
    let mut assignment: Vec<Option<(i64, i64)>> = Vec::new();
    let mut dropped = 0usize;
    for _round in 0..60 {
        let (next, drops) = assign_indices(centers, &grid)?;
        if drops * 5 > centers.len() {
            return Err(Error::NonConvergence { iterations: _round });
        }
        let rows = 2 * (centers.len() - drops);
        let mut a = Vec::with_capacity(rows * 4);
        let mut b = Vec::with_capacity(rows);
        for (c, idx) in centers.iter().zip(next.iter()) {
            let Some((k, l)) = idx else { continue };
            let parity = (l.rem_euclid(2)) as f64;
            let hx = *k as f64 + 0.5 * parity;
            let hy = ROW_SPACING * *l as f64;
            a.extend_from_slice(&[hx, hy, 1.0, 0.0]);
            b.push(c.x);
            a.extend_from_slice(&[hy, -hx, 0.0, 1.0]);
            b.push(c.y);
        }
        let sol = lstsq(&a, &b, rows, 4).ok_or(Error::DegenerateConfiguration)?;
        let (p, q) = (sol[0], sol[1]);
        let done = next == assignment && {
            let dp = (p - grid.pitch * libm::cos(grid.theta)).abs()
                + (q - grid.pitch * libm::sin(grid.theta)).abs()
                + (sol[2] - grid.tx).abs()
                + (sol[3] - grid.ty).abs();
            dp < 1e-12
        };
        grid.pitch = libm::sqrt(p * p + q * q);
        grid.theta = libm::atan2(q, p);
        grid.tx = sol[2];
        grid.ty = sol[3];
        assignment = next;
        dropped = drops;
        if done {
            break;
        }
    }
    // re-anchor so indices start at (0, 0) with even-row parity preserved
    let (mut kmin, mut lmin) = (i64::MAX, i64::MAX);
    let (mut kmax, mut lmax) = (i64::MIN, i64::MIN);
    for idx in assignment.iter().flatten() {
        kmin = kmin.min(idx.0);
        kmax = kmax.max(idx.0);
        lmin = lmin.min(idx.1);
        lmax = lmax.max(idx.1);
    }
    if kmin > kmax || kmin == kmax || lmin == lmax {
        // a single row or column leaves the lattice geometry unobserved
        return Err(Error::DegenerateConfiguration);
    }
    let l0 = if lmin.rem_euclid(2) == 0 { lmin } else { lmin - 1 };
    let t = grid.node(kmin, l0);
    grid.tx = t.x;
    grid.ty = t.y;
    grid.nk = (kmax - kmin + 1) as usize;
    grid.nl = (lmax - l0 + 1) as usize;
    // residual statistics under the final grid
    let mut ss = 0.0;
    let mut n = 0usize;
    for (c, idx) in centers.iter().zip(assignment.iter()) {
        let Some((k, l)) = idx else { continue };
        let p = grid.node(k - kmin, l - l0);
        let r = *c - p;
        ss += r.dot(r);
        n += 1;
    }
    Ok(GridFit { grid, rms: libm::sqrt(ss / n as f64), dropped })
}

/// Initial pitch and rotation from nearest-neighbor statistics.
fn seed_lattice(centers: &[Vec2<f64>]) -> Result<(f64, f64), Error> {
    // subsample to bound the quadratic neighbor scan
    let stride = (centers.len() / 1500).max(1);
    let mut dists = Vec::new();
    let mut angles = Vec::new();
    for (i, c) in centers.iter().enumerate().step_by(stride) {
        let mut best = f64::INFINITY;
        let mut dir = (0.0, 0.0);
        for (j, o) in centers.iter().enumerate() {
            if i == j {
                continue;
            }
            let d = *o - *c;
            let d2 = d.dot(d);
            if d2 < best {
                best = d2;
                dir = (d.x, d.y);
            }
        }
        if best.is_finite() {
            dists.push(libm::sqrt(best));
            // fold the six lattice directions into (-30, 30] degrees;
            // the apparent row angle is -theta
            let a = libm::atan2(dir.1, dir.0);
            let sixth = core::f64::consts::PI / 3.0;
            let mut folded = a - libm::round(a / sixth) * sixth;
            if folded <= -sixth / 2.0 {
                folded += sixth;
            }
            angles.push(-folded);
        }
    }
    if dists.len() < 3 {
        return Err(Error::InsufficientData { found: dists.len(), needed: 3 });
    }
    Ok((median(&mut dists), median(&mut angles)))
}

/// Anchor at the leftmost center of the top row (after derotation).
fn seed_anchor(centers: &[Vec2<f64>], theta: f64) -> Vec2<f64> {
    let (s, c) = (libm::sin(theta), libm::cos(theta));
    let derot = |p: &Vec2<f64>| (c * p.x - s * p.y, s * p.x + c * p.y);
    let min_y = centers
        .iter()
        .map(|p| derot(p).1)
        .fold(f64::INFINITY, f64::min);
    let mut best = None;
    let mut best_x = f64::INFINITY;
    for p in centers {
        let (x, y) = derot(p);
        if y < min_y + 1.0 && x < best_x {
            best_x = x;
            best = Some(*p);
        }
    }
    best.unwrap()
}

/// Nearest-node assignment; centers farther than 0.45 pitch are dropped.
/// Two centers claiming one node is an ambiguity error.
fn assign_indices(
    centers: &[Vec2<f64>],
    grid: &MiaGrid,
) -> Result<(Vec<Option<(i64, i64)>>, usize), Error> {
    let mut out = Vec::with_capacity(centers.len());
    let mut seen: Vec<(i64, i64)> = Vec::with_capacity(centers.len());
    let mut drops = 0usize;
    let limit2 = (0.45 * grid.pitch) * (0.45 * grid.pitch);
    for c in centers {
        let (k, l) = grid.nearest_index(*c);
        let r = *c - grid.node(k, l);
        if r.dot(r) > limit2 {
            out.push(None);
            drops += 1;
            continue;
        }
        out.push(Some((k, l)));
        seen.push((k, l));
    }
    seen.sort_unstable();
    if seen.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::AmbiguousAssignment);
    }
    Ok((out, drops))
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
