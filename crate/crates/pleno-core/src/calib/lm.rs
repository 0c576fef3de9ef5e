//! Joint Levenberg-Marquardt refinement of intrinsics and frame poses.
//!
//! Each iteration solves the damped normal equations
//! `(JᵀJ + μ diag(JᵀJ)) δ = -Jᵀr` once, applies the intrinsic part of `δ`
//! additively and the pose parts through local retractions, and accepts the
//! trial state only if its cost drops. The damping factor μ shrinks on
//! acceptance and grows on rejection, blending Gauss-Newton speed near the
//! optimum with gradient-descent robustness far from it.

use crate::calib::residuals::{
    normal_equations, residual_vector, CalibrationState, CenterObs, Weights,
};
use crate::error::Error;
use crate::linalg::{cholesky_solve, Vec3};
use crate::model::BapFeature;
use crate::simulate::CheckerboardModel;
use alloc::vec;
use alloc::vec::Vec;

/// Stopping rules and residual weighting of the refinement.
#[derive(Clone, Copy, Debug)]
pub struct OptimizeOptions {
    pub max_iterations: usize,
    /// Stop when the gradient's largest entry falls below this.
    pub gradient_tol: f64,
    /// Stop when an accepted step improves the cost by less than this factor.
    pub relative_cost_tol: f64,
    pub weights: Weights,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        OptimizeOptions {
            max_iterations: 100,
            gradient_tol: 1e-10,
            relative_cost_tol: 1e-12,
            weights: Weights::default(),
        }
    }
}

/// What the refinement did: iteration count, stop reason, and the weighted
/// cost trace over accepted states (starting cost first).
#[derive(Clone, Debug)]
pub struct OptimizeSummary {
    pub iterations: usize,
    /// True when a tolerance stopped the loop, false on iteration budget.
    pub converged: bool,
    /// Weighted cost after each accepted state, element 0 = initial cost.
    pub trace: Vec<f64>,
    /// Observations the model could not project at the final state.
    pub skipped: usize,
}

fn weighted_cost(
    state: &CalibrationState,
    board: &CheckerboardModel,
    features: &[BapFeature],
    centers: &[CenterObs],
    weights: &Weights,
) -> Result<(f64, usize), Error> {
    let (r, skipped) = residual_vector(state, board, features, centers, weights)?;
    Ok((r.iter().map(|v| v * v).sum(), skipped))
}

/// Fraction of feature rows pinned at the saturation bound.
fn saturated_fraction(
    state: &CalibrationState,
    board: &CheckerboardModel,
    features: &[BapFeature],
    weights: &Weights,
) -> Result<f64, Error> {
    let probe = Weights { uv: 1.0, rho: 1.0, center: 1.0, clip: weights.clip };
    let (r, _) = residual_vector(state, board, features, &[], &probe)?;
    if r.is_empty() {
        return Ok(0.0);
    }
    let bound = 0.95 * weights.clip;
    let hits = r.iter().filter(|v| v.abs() >= bound).count();
    Ok(hits as f64 / r.len() as f64)
}

/// Relocates the MLA distance by a line scan when most feature rows sit at
/// the saturation bound. The projection has a pole where a point's main-lens
/// conjugate falls onto the MLA plane, and the working range is only a few
/// hundred micrometers wide, so a perturbed start can place every feature
/// past a pole — from there the joint problem has no usable gradient. The
/// scan puts the conjugates back into the working range; the joint
/// refinement then walks the remaining (coupled) parameters home.
fn reanchor_mla_distance(
    current: &mut CalibrationState,
    cost: &mut f64,
    board: &CheckerboardModel,
    features: &[BapFeature],
    centers: &[CenterObs],
    weights: &Weights,
) -> Result<bool, Error> {
    let d0 = current.params.mla.big_d;
    let mut best: Option<(f64, f64)> = None;
    let probe = |dist: f64, best: &mut Option<(f64, f64)>, cost: f64| {
        let mut params = current.params.clone();
        params.mla.big_d = dist;
        if params.validate().is_err() {
            return;
        }
        let trial = CalibrationState { params, poses: current.poses.clone() };
        let Ok((c, _)) = weighted_cost(&trial, board, features, centers, weights) else {
            return;
        };
        if c < cost && best.as_ref().is_none_or(|&(bc, _)| c < bc) {
            *best = Some((c, dist));
        }
    };
    for k in -60..=60i32 {
        if k != 0 {
            probe(d0 * (1.0 + 0.0025 * k as f64), &mut best, *cost);
        }
    }
    // refine around the coarse winner: the usable band of conjugate
    // distances is only a few coarse steps wide
    if let Some((_, coarse)) = best {
        for j in -12..=12i32 {
            if j != 0 {
                probe(coarse * (1.0 + 0.00025 * j as f64), &mut best, *cost);
            }
        }
    }
    if let Some((c, dist)) = best {
        current.params.mla.big_d = dist;
        *cost = c;
        Ok(true)
    } else {
        Ok(false)
    }
}

/// Refines intrinsics and all poses jointly from `state`, returning the
/// refined state and a summary. Fails with `NonConvergence` only when no
/// descent step exists at the very first iterate.
pub fn optimize(
    state: &CalibrationState,
    board: &CheckerboardModel,
    features: &[BapFeature],
    centers: &[CenterObs],
    options: &OptimizeOptions,
) -> Result<(CalibrationState, OptimizeSummary), Error> {
    let ni = state.params.param_count();
    let n = ni + 6 * state.poses.len();
    let mut current = state.clone();
    let (mut cost, mut skipped) =
        weighted_cost(&current, board, features, centers, &options.weights)?;
    let mut trace = Vec::with_capacity(options.max_iterations + 1);
    trace.push(cost);
    if saturated_fraction(&current, board, features, &options.weights)? > 0.05
        && reanchor_mla_distance(
            &mut current,
            &mut cost,
            board,
            features,
            centers,
            &options.weights,
        )?
    {
        skipped = weighted_cost(&current, board, features, centers, &options.weights)?.1;
        trace.push(cost);
    }
    // parameter scales for the step bound, frozen at the start
    let mut scale: Vec<f64> =
        current.params.to_vec().iter().map(|v| v.abs().max(0.1)).collect();
    for pose in &current.poses {
        scale.extend_from_slice(&[0.1, 0.1, 0.1]); // local rotation (rad)
        let t = pose.translation();
        scale.extend_from_slice(&[
            t.x.abs().max(10.0),
            t.y.abs().max(10.0),
            t.z.abs().max(10.0),
        ]);
    }
    let mut mu = 1e-3;
    let mut nu = 2.0;
    let mut converged = false;
    let mut iterations = 0;
    let mut accepted_any = false;
    // below an RMS residual of 1e-9 px the cost is floating-point noise
    let noise_floor = (3 * features.len() + 2 * centers.len()) as f64 * 1e-18;
    'outer: for iter in 0..options.max_iterations {
        iterations = iter + 1;
        if cost <= noise_floor {
            converged = true;
            iterations = iter;
            break;
        }
        let eq = normal_equations(&current, board, features, centers, &options.weights)?;
        let gmax = eq.jtr.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if gmax < options.gradient_tol {
            converged = true;
            iterations = iter;
            break;
        }
        #[cfg(test)]
        let lm_debug = {
            extern crate std;
            std::env::var_os("PLENO_LM_DEBUG").is_some()
        };
        // Solve in scale-normalized coordinates: x̃ = x / scale, so the
        // damping floor (+1 on the diagonal) means "one scale unit". This
        // keeps nearly unobservable parameters (flat directions of JᵀJ)
        // from blowing up the step at small damping.
        let mut at = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                at[i * n + j] = eq.jtj[i * n + j] * scale[i] * scale[j];
            }
        }
        let gt: Vec<f64> = (0..n).map(|i| -eq.jtr[i] * scale[i]).collect();
        // retry with growing damping until a bounded step lowers the cost
        loop {
            let mut a = at.clone();
            for i in 0..n {
                a[i * n + i] += mu * (at[i * n + i] + 1.0);
            }
            let trial = cholesky_solve(&a, &gt, n).and_then(|tilde| {
                let step: Vec<f64> =
                    tilde.iter().zip(&scale).map(|(s, sc)| s * sc).collect();
                // `with_vec` replaces values; the step is an increment
                let x: Vec<f64> = current
                    .params
                    .to_vec()
                    .iter()
                    .zip(&step)
                    .map(|(v, s)| v + s)
                    .collect();
                let params = current.params.with_vec(&x);
                params.validate().ok()?;
                let poses: Vec<_> = current
                    .poses
                    .iter()
                    .enumerate()
                    .map(|(f, p)| {
                        let o = ni + 6 * f;
                        p.retract(
                            Vec3::new(step[o], step[o + 1], step[o + 2]),
                            Vec3::new(step[o + 3], step[o + 4], step[o + 5]),
                        )
                    })
                    .collect();
                // predicted drop of the quadratic cost model,
                // -2 stepᵀ g - stepᵀ JᵀJ step with cost = Σ r²
                let mut predicted = 0.0;
                for i in 0..n {
                    let mut as_i = 0.0;
                    for j in 0..n {
                        as_i += eq.jtj[i * n + j] * step[j];
                    }
                    predicted -= step[i] * (2.0 * eq.jtr[i] + as_i);
                }
                Some((CalibrationState { params, poses }, predicted))
            });
            let candidate = trial.and_then(|(s, predicted)| {
                let (c, sk) =
                    weighted_cost(&s, board, features, centers, &options.weights).ok()?;
                // dropping rows fakes a cost decrease; treat it as a failure
                (sk <= skipped).then_some((s, c, sk, predicted))
            });
            match candidate {
                Some((s, c, sk, predicted)) if c < cost && predicted > 0.0 => {
                    let improvement = (cost - c) / cost.max(f64::MIN_POSITIVE);
                    let gain = (cost - c) / predicted;
                    #[cfg(test)]
                    if lm_debug {
                        extern crate std;
                        std::eprintln!(
                            "lm iter {} accept cost {:.6e} -> {:.6e} gain {:.3} mu {:.2e} gmax {:.3e}",
                            iter, cost, c, gain, mu, gmax
                        );
                    }
                    current = s;
                    cost = c;
                    skipped = sk;
                    trace.push(c);
                    accepted_any = true;
                    let t = 2.0 * gain - 1.0;
                    let shrink = 1.0 - t * t * t;
                    mu = (mu * shrink.max(1.0 / 3.0)).max(1e-15);
                    nu = 2.0;
                    if improvement < options.relative_cost_tol {
                        converged = true;
                        break 'outer;
                    }
                    break;
                }
                _ => {
                    #[cfg(test)]
                    if lm_debug {
                        extern crate std;
                        std::eprintln!("lm iter {} reject mu {:.2e}", iter, mu);
                    }
                    mu *= nu;
                    nu *= 2.0;
                    if mu > 1e12 {
                        if !accepted_any {
                            return Err(Error::NonConvergence { iterations });
                        }
                        converged = true; // damping exhausted: local optimum
                        break 'outer;
                    }
                }
            }
        }
    }
    Ok((current, OptimizeSummary { iterations, converged, trace, skipped }))
}
