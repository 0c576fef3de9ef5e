//! White-image pre-calibration: per-micro-image radii across an aperture
//! sweep and the shared-slope line fit that yields the internal parameters.
//!
//! A white scene fills every micro-image with a defocused disk whose signed
//! metric radius varies linearly with the inverse f-number,
//! `R(1/N) = m / N + q_i`, with one slope `m` for the whole array and one
//! intercept `q_i` per lens type. The fitted pair `(m, {q_i})` determines the
//! inter-plane distances and micro-lens focals during initialization.

use crate::error::Error;
use crate::linalg::{lstsq, Vec2};
use crate::mia::MiaGrid;
use crate::model::{lens_type_of, CameraParams};
use crate::raster::Raster;
use alloc::vec;
use alloc::vec::Vec;

/// Ratio between a micro-image footprint radius and the Gaussian sigma of
/// its rendered spot.
pub const RADIUS_TO_SIGMA: f64 = 2.357;

/// Clamp level applied to windows before moment estimation, as a fraction
/// of the local peak.
pub const CLAMP_LEVEL: f64 = 0.35;

/// The internal white-image line parameters: shared slope, per-type
/// intercepts, and the micro-image pitch on the sensor.
#[derive(Clone, Debug, PartialEq)]
pub struct InternalParams {
    /// Shared slope of the radius line (mm per unit 1/N); negative.
    pub m: f64,
    /// Per-type intercepts q_i (mm); negative.
    pub q: Vec<f64>,
    /// Micro-image pitch on the sensor (mm).
    pub delta_c: f64,
}

impl InternalParams {
    /// The line parameters implied by a full camera model.
    pub fn of_camera(p: &CameraParams) -> Self {
        let f = p.main_lens.focal;
        let d = p.sensor.d;
        let big_d = p.mla.big_d;
        let pitch = p.mla.pitch;
        let m = -d * f / (2.0 * big_d);
        let q = p
            .micro_focals
            .iter()
            .map(|fi| 0.5 * pitch * d * (1.0 / fi - 1.0 / d - 1.0 / big_d))
            .collect();
        InternalParams { m, q, delta_c: p.mia_pitch_metric() }
    }

    pub fn type_count(&self) -> usize {
        self.q.len()
    }

    /// Offset intercepts q'_i = q_i + delta_c / 2; for a consistent model
    /// these equal `pitch * d / (2 f_i)` exactly.
    pub fn q_prime(&self) -> Vec<f64> {
        self.q.iter().map(|qi| qi + 0.5 * self.delta_c).collect()
    }

    /// Signed metric micro-image radius of `lens_type` (1-based) at
    /// f-number `fnumber`.
    pub fn footprint_radius(&self, lens_type: usize, fnumber: f64) -> f64 {
        self.m / fnumber + self.q[lens_type - 1]
    }

    /// Unsigned radius in pixels for pixel size `s`.
    pub fn footprint_radius_px(&self, lens_type: usize, fnumber: f64, s: f64) -> f64 {
        self.footprint_radius(lens_type, fnumber).abs() / s
    }
}

/// f-number of an aperture-value stop: N = 2^(av/2).
pub fn fnumber_from_av(av: f64) -> f64 {
    libm::exp2(0.5 * av)
}

/// Magnitude of the radius-line slope implied by main-lens and spacing
/// parameters, `d F / (2 D)`; the fitted slope satisfies |m| = this.
pub fn expected_slope(focal: f64, d: f64, big_d: f64) -> f64 {
    d * focal / (2.0 * big_d)
}

/// One micro-image radius observation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadiusMeasurement {
    pub fnumber: f64,
    /// 1-based lattice type of the micro-image.
    pub lens_type: usize,
    /// Unsigned radius (pixels).
    pub radius_px: f64,
    pub k: usize,
    pub l: usize,
}

struct WindowPixel {
    x: f64,
    y: f64,
    v: f64,
    owned: bool,
}

/// Micro-image radius (pixels) from a square window around `center`:
/// clamp at [`CLAMP_LEVEL`] of the local peak, lattice-ownership mask
/// against `neighbors`, principal second moment, then inversion of the
/// sampled isolated-spot response at the same subpixel phase.
///
/// Returns `alpha * sigma`; `pitch` sets the window size (±0.75 pitch).
pub fn estimate_radius(
    white: &Raster,
    center: Vec2<f64>,
    neighbors: &[Vec2<f64>],
    pitch: f64,
    alpha: f64,
) -> Result<f64, Error> {
    let half = 0.75 * pitch;
    let x0 = libm::round(center.x - half) as i64;
    let x1 = libm::round(center.x + half) as i64;
    let y0 = libm::round(center.y - half) as i64;
    let y1 = libm::round(center.y + half) as i64;
    if x0 < 0 || y0 < 0 || x1 >= white.width() as i64 || y1 >= white.height() as i64 {
        return Err(Error::RasterTooSmall);
    }
    let mut pixels = Vec::with_capacity(((x1 - x0 + 1) * (y1 - y0 + 1)) as usize);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (xf, yf) = (x as f64, y as f64);
            let d0 = sq(xf - center.x) + sq(yf - center.y);
            let owned = neighbors
                .iter()
                .all(|n| d0 <= sq(xf - n.x) + sq(yf - n.y));
            pixels.push(WindowPixel {
                x: xf,
                y: yf,
                v: white.get(x as usize, y as usize) as f64,
                owned,
            });
        }
    }
    let (sigma_raw, mx, my) = clamped_sigma(&pixels)?;
    let fx = mx - libm::floor(mx);
    let fy = my - libm::floor(my);
    let n = libm::ceil(half) as i64;
    // invert the sampled forward response by bisection
    let mut lo = 0.2;
    let mut hi = 0.8 * pitch;
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if reference_sigma(mid, fx, fy, n) < sigma_raw {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(alpha * 0.5 * (lo + hi))
}

/// Clamped-moment principal sigma and centroid of a window.
fn clamped_sigma(pixels: &[WindowPixel]) -> Result<(f64, f64, f64), Error> {
    // local peak: mean of the five brightest owned pixels
    let mut top = [f64::NEG_INFINITY; 5];
    let mut owned_count = 0usize;
    for p in pixels {
        if !p.owned {
            continue;
        }
        owned_count += 1;
        if p.v > top[0] {
            top[0] = p.v;
            let mut i = 0;
            while i + 1 < top.len() && top[i] > top[i + 1] {
                top.swap(i, i + 1);
                i += 1;
            }
        }
    }
    if owned_count == 0 {
        return Err(Error::DegenerateMoments);
    }
    let take = owned_count.min(5);
    let peak: f64 = top[5 - take..].iter().sum::<f64>() / take as f64;
    let floor = CLAMP_LEVEL * peak;
    let weight = |p: &WindowPixel| if p.owned { (p.v - floor).max(0.0) } else { 0.0 };
    let mut m0 = 0.0;
    let mut mx = 0.0;
    let mut my = 0.0;
    for p in pixels {
        let w = weight(p);
        m0 += w;
        mx += w * p.x;
        my += w * p.y;
    }
    if m0 <= 0.0 {
        return Err(Error::DegenerateMoments);
    }
    mx /= m0;
    my /= m0;
    let (mut cxx, mut cyy, mut cxy) = (0.0, 0.0, 0.0);
    for p in pixels {
        let w = weight(p);
        cxx += w * sq(p.x - mx);
        cyy += w * sq(p.y - my);
        cxy += w * (p.x - mx) * (p.y - my);
    }
    cxx /= m0;
    cyy /= m0;
    cxy /= m0;
    let tr = cxx + cyy;
    let det = cxx * cyy - cxy * cxy;
    let lambda = 0.5 * tr + libm::sqrt((0.25 * tr * tr - det).max(0.0));
    if lambda <= 0.0 {
        return Err(Error::DegenerateMoments);
    }
    Ok((libm::sqrt(lambda), mx, my))
}

/// Clamped-moment sigma of an isolated sampled unit Gaussian of std `sigma`
/// at subpixel phase (fx, fy), on the integer grid [-n, n]^2.
fn reference_sigma(sigma: f64, fx: f64, fy: f64, n: i64) -> f64 {
    let len = (2 * n + 1) as usize;
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut gx = Vec::with_capacity(len);
    let mut gy = Vec::with_capacity(len);
    for g in -n..=n {
        gx.push(libm::exp(-sq(g as f64 - fx) * inv));
        gy.push(libm::exp(-sq(g as f64 - fy) * inv));
    }
    let mut pixels = Vec::with_capacity(len * len);
    for (j, wy) in gy.iter().enumerate() {
        for (i, wx) in gx.iter().enumerate() {
            pixels.push(WindowPixel {
                x: (i as i64 - n) as f64,
                y: (j as i64 - n) as f64,
                v: wx * wy,
                owned: true,
            });
        }
    }
    match clamped_sigma(&pixels) {
        Ok((s, _, _)) => s,
        Err(_) => 0.0,
    }
}

/// Measures every picked micro-image on one white image; windows clipped by
/// the raster border are skipped.
pub fn radius_measurements(
    white: &Raster,
    grid: &MiaGrid,
    picks: &[(usize, usize)],
    fnumber: f64,
    type_count: usize,
    alpha: f64,
) -> Result<Vec<RadiusMeasurement>, Error> {
    let mut out = Vec::with_capacity(picks.len());
    for &(k, l) in picks {
        let center = grid.grid_point(k, l);
        let mut neighbors = Vec::with_capacity(8);
        for dk in -1i64..=1 {
            for dl in -1i64..=1 {
                if dk == 0 && dl == 0 {
                    continue;
                }
                neighbors.push(grid.node(k as i64 + dk, l as i64 + dl));
            }
        }
        match estimate_radius(white, center, &neighbors, grid.pitch, alpha) {
            Ok(radius_px) => out.push(RadiusMeasurement {
                fnumber,
                lens_type: lens_type_of(k, l, type_count),
                radius_px,
                k,
                l,
            }),
            Err(Error::RasterTooSmall) => continue,
            Err(e) => return Err(e),
        }
    }
    if out.is_empty() {
        return Err(Error::InsufficientData { found: 0, needed: 1 });
    }
    Ok(out)
}

/// Indices of the micro-images nearest the lattice centroid; `fraction` of
/// the total, at least one, ordered inside-out.
pub fn select_center_microimages(grid: &MiaGrid, fraction: f64) -> Vec<(usize, usize)> {
    let centroid = grid.centroid();
    let mut nodes: Vec<(f64, (usize, usize))> = Vec::with_capacity(grid.nk * grid.nl);
    for k in 0..grid.nk {
        for l in 0..grid.nl {
            let d = grid.grid_point(k, l) - centroid;
            nodes.push((d.dot(d), (k, l)));
        }
    }
    nodes.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let count = libm::round(fraction * nodes.len() as f64) as usize;
    let count = count.clamp(1, nodes.len());
    nodes.truncate(count);
    nodes.into_iter().map(|(_, kl)| kl).collect()
}

/// Joint fit of the radius line `R = m / N + q_i` over measurements from
/// several apertures, with the slope shared across types. Radii enter as
/// signed metric values `R = -radius_px * pixel_size`.
pub fn fit_internal_params(
    measurements: &[RadiusMeasurement],
    type_count: usize,
    pixel_size: f64,
    delta_c: f64,
) -> Result<InternalParams, Error> {
    if measurements.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut fnumbers: Vec<f64> = Vec::new();
    let mut type_seen = vec![false; type_count];
    for m in measurements {
        if m.lens_type == 0 || m.lens_type > type_count {
            return Err(Error::LensIndexOutOfBounds { k: m.k as i32, l: m.l as i32 });
        }
        type_seen[m.lens_type - 1] = true;
        if !fnumbers.iter().any(|f| (f - m.fnumber).abs() < 1e-9) {
            fnumbers.push(m.fnumber);
        }
    }
    if fnumbers.len() < 2 {
        // a single aperture cannot separate slope from intercepts
        return Err(Error::RankDeficient);
    }
    if !type_seen.iter().all(|s| *s) {
        let found = type_seen.iter().filter(|s| **s).count();
        return Err(Error::InsufficientData { found, needed: type_count });
    }
    let cols = 1 + type_count;
    let rows = measurements.len();
    let mut a = vec![0.0; rows * cols];
    let mut b = Vec::with_capacity(rows);
    for (r, m) in measurements.iter().enumerate() {
        a[r * cols] = 1.0 / m.fnumber;
        a[r * cols + m.lens_type] = 1.0;
        b.push(-m.radius_px * pixel_size);
    }
    let sol = lstsq(&a, &b, rows, cols).ok_or(Error::RankDeficient)?;
    Ok(InternalParams { m: sol[0], q: sol[1..].to_vec(), delta_c })
}

fn sq(x: f64) -> f64 {
    x * x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::test_camera;
    use crate::model::types::ROW_SPACING;

    /// Renders isolated or lattice Gaussian spots for estimator tests.
    fn gaussian_image(
        size: (usize, usize),
        spots: &[(f64, f64, f64)], // (cx, cy, sigma)
        scale: f64,
    ) -> Raster {
        let mut img = Raster::new(size.0, size.1);
        for y in 0..size.1 {
            for x in 0..size.0 {
                let mut v = 0.0;
                for &(cx, cy, sigma) in spots {
                    let r2 = sq(x as f64 - cx) + sq(y as f64 - cy);
                    v += libm::exp(-r2 / (2.0 * sigma * sigma));
                }
                img.set(x, y, (scale * v) as f32);
            }
        }
        img
    }

    const PITCH: f64 = 23.303627896018764;

    #[test]
    fn isolated_spot_radius_is_inverted_exactly() {
        let img = gaussian_image((160, 160), &[(80.3, 79.6, 8.0)], 1.0);
        let r = estimate_radius(&img, Vec2::new(80.3, 79.6), &[], PITCH, RADIUS_TO_SIGMA)
            .unwrap();
        // the estimator inverts its own sampled response, so an isolated
        // spot comes back at alpha * sigma up to aliasing residue
        assert!((r - RADIUS_TO_SIGMA * 8.0).abs() < 0.02, "r = {r}");
    }

    #[test]
    fn radius_is_intensity_scale_invariant() {
        let spots = [(60.3, 57.7, 5.1)];
        let a = gaussian_image((128, 120), &spots, 1.0);
        let b = gaussian_image((128, 120), &spots, 7.3);
        let ra = estimate_radius(&a, Vec2::new(60.3, 57.7), &[], PITCH, RADIUS_TO_SIGMA).unwrap();
        let rb = estimate_radius(&b, Vec2::new(60.3, 57.7), &[], PITCH, RADIUS_TO_SIGMA).unwrap();
        // the clamp is relative to the local peak, so only the f32 raster
        // quantization separates the two
        assert!((ra - rb).abs() < 1e-4, "{ra} vs {rb}");
    }

    #[test]
    fn anisotropic_spot_reports_major_axis() {
        // 6 x 3 sigma ellipse rotated 30 degrees: the principal moment
        // tracks the major axis
        let n = 24i64;
        let mut img = Raster::new(120, 120);
        let (c, s) = (libm::cos(core::f64::consts::PI / 6.0), libm::sin(core::f64::consts::PI / 6.0));
        for y in 0..120 {
            for x in 0..120 {
                let dx = x as f64 - (30 + n) as f64;
                let dy = y as f64 - (30 + n) as f64;
                let u = c * dx + s * dy;
                let v = -s * dx + c * dy;
                img.set(x, y, libm::exp(-(u * u / 72.0 + v * v / 18.0)) as f32);
            }
        }
        let r = estimate_radius(
            &img,
            Vec2::new((30 + n) as f64, (30 + n) as f64),
            &[],
            PITCH,
            RADIUS_TO_SIGMA,
        )
        .unwrap();
        let expect = RADIUS_TO_SIGMA * 6.0;
        assert!((r - expect).abs() / expect < 0.02, "r = {r}");
    }

    #[test]
    fn window_clipped_by_border_errors() {
        let img = gaussian_image((64, 64), &[(10.0, 30.0, 4.0)], 1.0);
        let e = estimate_radius(&img, Vec2::new(10.0, 30.0), &[], PITCH, RADIUS_TO_SIGMA);
        assert!(matches!(e, Err(Error::RasterTooSmall)));
    }

    #[test]
    fn lattice_measurements_recover_per_type_sigmas() {
        // spot sizes as a fully open aperture produces them; at this
        // pitch-to-sigma ratio neighbor cross-talk stays under half a percent
        let grid = MiaGrid { pitch: PITCH, tx: 45.0, ty: 40.0, theta: 0.0, nk: 5, nl: 4 };
        let sigmas = [4.947, 4.551, 4.816];
        let mut spots = Vec::new();
        for k in 0..grid.nk {
            for l in 0..grid.nl {
                let p = grid.grid_point(k, l);
                spots.push((p.x, p.y, sigmas[lens_type_of(k, l, 3) - 1]));
            }
        }
        let img = gaussian_image((220, 170), &spots, 1.0);
        let picks: Vec<(usize, usize)> =
            (1..4).flat_map(|k| (1..3).map(move |l| (k, l))).collect();
        let meas = radius_measurements(&img, &grid, &picks, 4.0, 3, RADIUS_TO_SIGMA).unwrap();
        assert_eq!(meas.len(), picks.len());
        for m in &meas {
            let expect = RADIUS_TO_SIGMA * sigmas[m.lens_type - 1];
            let rel = (m.radius_px - expect).abs() / expect;
            assert!(rel < 0.01, "type {} radius {} expect {}", m.lens_type, m.radius_px, expect);
        }
    }

    #[test]
    fn line_fit_recovers_exact_parameters() {
        let s = 0.0055;
        let truth_m = -0.14059554040431976;
        let truth_q = [-0.029, -0.024, -0.0275];
        let mut meas = Vec::new();
        for &n in &[4.0, 5.656854249492381, 8.0] {
            for k in 0..6 {
                for l in 0..3 {
                    let t = lens_type_of(k, l, 3);
                    let r = truth_m / n + truth_q[t - 1];
                    meas.push(RadiusMeasurement {
                        fnumber: n,
                        lens_type: t,
                        radius_px: r.abs() / s,
                        k,
                        l,
                    });
                }
            }
        }
        let fit = fit_internal_params(&meas, 3, s, 0.1282).unwrap();
        assert!((fit.m - truth_m).abs() < 1e-12);
        for i in 0..3 {
            assert!((fit.q[i] - truth_q[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn single_aperture_is_rank_deficient() {
        let meas: Vec<RadiusMeasurement> = (0..9)
            .map(|i| RadiusMeasurement {
                fnumber: 4.0,
                lens_type: i % 3 + 1,
                radius_px: 10.0 + i as f64,
                k: i,
                l: 0,
            })
            .collect();
        assert!(matches!(
            fit_internal_params(&meas, 3, 0.0055, 0.1282),
            Err(Error::RankDeficient)
        ));
    }

    #[test]
    fn missing_type_is_insufficient() {
        let mut meas = Vec::new();
        for &n in &[4.0, 8.0] {
            for i in 0..4 {
                meas.push(RadiusMeasurement {
                    fnumber: n,
                    lens_type: 1 + (i % 2),
                    radius_px: 9.0,
                    k: i,
                    l: 0,
                });
            }
        }
        assert!(matches!(
            fit_internal_params(&meas, 3, 0.0055, 0.1282),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn aperture_values_follow_half_stop_rule() {
        assert!((fnumber_from_av(4.0) - 4.0).abs() < 1e-12);
        assert!((fnumber_from_av(5.0) - 5.656854249492381).abs() < 1e-12);
        assert!((fnumber_from_av(6.0) - 8.0).abs() < 1e-12);
        assert!((fnumber_from_av(0.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn camera_line_parameters_satisfy_identities() {
        let p = test_camera();
        let ip = InternalParams::of_camera(&p);
        assert!(ip.m < 0.0);
        assert!(ip.q.iter().all(|q| *q < 0.0));
        // q'_i = pitch d / (2 f_i) exactly
        let qp = ip.q_prime();
        for (i, fi) in p.micro_focals.iter().enumerate() {
            let expect = p.mla.pitch * p.sensor.d / (2.0 * fi);
            assert!((qp[i] - expect).abs() < 1e-15, "{} vs {}", qp[i], expect);
        }
        // the slope magnitude matches the spacing identity
        let want = expected_slope(p.main_lens.focal, p.sensor.d, p.mla.big_d);
        assert!((ip.m.abs() - want).abs() < 1e-15);
        // delta_c scales back to the lattice pitch by D / (D + d)
        let back = ip.delta_c * p.mla.big_d / (p.mla.big_d + p.sensor.d);
        assert!((back - p.mla.pitch).abs() < 1e-15);
    }

    #[test]
    fn center_selection_is_inside_out() {
        let grid = MiaGrid { pitch: 23.3, tx: 30.0, ty: 28.0, theta: 0.0, nk: 44, nl: 38 };
        let total = grid.nk * grid.nl;
        let picked = select_center_microimages(&grid, 0.25);
        assert_eq!(picked.len(), (0.25 * total as f64).round() as usize);
        let centroid = grid.centroid();
        let picked_max = picked
            .iter()
            .map(|&(k, l)| (grid.grid_point(k, l) - centroid).norm())
            .fold(0.0, f64::max);
        let mut unpicked_min = f64::INFINITY;
        for k in 0..grid.nk {
            for l in 0..grid.nl {
                if picked.contains(&(k, l)) {
                    continue;
                }
                unpicked_min =
                    unpicked_min.min((grid.grid_point(k, l) - centroid).norm());
            }
        }
        assert!(picked_max <= unpicked_min + 1e-9);
        assert_eq!(select_center_microimages(&grid, 1e-9).len(), 1);
    }

    #[test]
    fn neighbor_mask_removes_cross_talk() {
        // two equal spots one pitch apart: the ownership mask keeps the
        // estimate at the isolated value while an unmasked window is
        // dominated by the neighbor's flank
        let c0 = (70.2, 66.1);
        let c1 = (c0.0 + PITCH, c0.1);
        let both = gaussian_image((170, 140), &[(c0.0, c0.1, 4.8), (c1.0, c1.1, 4.8)], 1.0);
        let alone = gaussian_image((170, 140), &[(c0.0, c0.1, 4.8)], 1.0);
        let masked = estimate_radius(
            &both,
            Vec2::new(c0.0, c0.1),
            &[Vec2::new(c1.0, c1.1)],
            PITCH,
            RADIUS_TO_SIGMA,
        )
        .unwrap();
        let unmasked =
            estimate_radius(&both, Vec2::new(c0.0, c0.1), &[], PITCH, RADIUS_TO_SIGMA).unwrap();
        let isolated =
            estimate_radius(&alone, Vec2::new(c0.0, c0.1), &[], PITCH, RADIUS_TO_SIGMA).unwrap();
        assert!((masked - isolated).abs() / isolated < 0.01, "{masked} vs {isolated}");
        assert!((unmasked - isolated) / isolated > 0.10, "{unmasked} vs {isolated}");
    }

    #[test]
    fn row_spacing_constant_matches_lattice() {
        // the lattice constant used for window geometry
        assert!((ROW_SPACING - libm::sqrt(3.0) / 2.0).abs() < 1e-15);
    }
}
