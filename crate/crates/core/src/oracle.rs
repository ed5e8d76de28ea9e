//! Brute-force references: grid minimization of the weighted-sum problem,
//! grid search for the update, batch estimation of θ, and the closed forms
//! of the one-variable instance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{ImopError, Result};
use crate::linalg::dist_sq;
use crate::loss::{nearest, sampled_efficient_points};
use crate::model::{MopInstance, Observation};
use crate::scalarize::{solve_pws_at, PwsOptions, WeightGrid, WeightVector};
use crate::Scalar;

/// Minimizes `wᵀf` over the feasible points of the lattice `step·ℤⁿ` inside
/// `[0, coord_upper]`. Only for `n ≤ 2`.
pub fn grid_pws(instance: &MopInstance<f64>, w: &WeightVector<f64>, step: f64) -> Result<Vec<f64>> {
    let n = instance.n();
    if n > 2 {
        return Err(ImopError::UnsupportedDimension(n));
    }
    if !(step > 0.0) {
        return Err(ImopError::InvalidParameter(format!("grid step {step}")));
    }
    let counts: Vec<usize> = instance.coord_upper().iter().map(|&u| (u / step + 1e-9).floor() as usize + 1).collect();
    let w = w.as_slice();
    let eval = |x: &[f64]| -> f64 { instance.objective_values(x).iter().zip(w).map(|(f, wl)| f * wl).sum() };
    let tol = 1e-12;
    let rows = if n == 2 { counts[1] } else { 1 };
    let best = (0..counts[0])
        .into_par_iter()
        .map(|i| {
            let mut best = (f64::INFINITY, vec![]);
            for j in 0..rows {
                let x: Vec<f64> = if n == 2 { vec![i as f64 * step, j as f64 * step] } else { vec![i as f64 * step] };
                if instance.max_violation(&x) <= tol {
                    let v = eval(&x);
                    if v < best.0 {
                        best = (v, x);
                    }
                }
            }
            best
        })
        .reduce(|| (f64::INFINITY, vec![]), |a, b| if b.0 < a.0 { b } else { a });
    if best.1.is_empty() {
        return Err(ImopError::InfeasibleRegion);
    }
    Ok(best.1)
}

/// Lattice points `lower + step·i` of the box, truncated at `upper`.
fn axis(lower: f64, upper: f64, step: f64) -> Vec<f64> {
    let count = ((upper - lower) / step + 1e-9).floor() as usize + 1;
    (0..count).map(|i| lower + step * i as f64).collect()
}

/// Grid search of the fixed-weight update over a two-dimensional Θ.
/// Points farther than `√(2η l)` from θ_t (with `l` the loss at θ_t) are
/// skipped since they cannot beat staying put. Returns `(θ, objective)`.
pub fn grid_update(
    instance: &MopInstance<f64>,
    theta_t: &[f64],
    y: &[f64],
    eta: f64,
    w: &WeightVector<f64>,
    step: f64,
) -> Result<(Vec<f64>, f64)> {
    let spec = instance.param();
    if spec.dim() != 2 {
        return Err(ImopError::UnsupportedDimension(spec.dim()));
    }
    let opts = PwsOptions::default();
    let x_t = solve_pws_at(instance, Some(theta_t), w, &opts)?.x;
    let stay = eta * dist_sq(y, &x_t);
    let radius_sq = 2.0 * stay;
    let a0 = axis(spec.lower()[0], spec.upper()[0], step);
    let a1 = axis(spec.lower()[1], spec.upper()[1], step);
    let best = a0
        .par_iter()
        .map(|&t0| {
            let mut best = (f64::INFINITY, vec![]);
            for &t1 in &a1 {
                let theta = [t0, t1];
                let prox = dist_sq(&theta, theta_t);
                if prox > radius_sq {
                    continue;
                }
                let Ok(p) = solve_pws_at(instance, Some(&theta), w, &opts) else { continue };
                let v = 0.5 * prox + eta * dist_sq(y, &p.x);
                if v < best.0 {
                    best = (v, theta.to_vec());
                }
            }
            best
        })
        .reduce(|| (f64::INFINITY, vec![]), |a, b| if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a });
    if best.0 <= stay {
        Ok((best.1, best.0))
    } else {
        // θ_t itself is off the lattice and nothing on it does better
        Ok((theta_t.to_vec(), stay))
    }
}

/// `Σ_t l_K(y_t, θ)`.
pub fn total_loss<S: Scalar>(
    instance: &MopInstance<S>,
    theta: &[S],
    grid: &WeightGrid<S>,
    observations: &[Observation<S>],
) -> Result<S> {
    let points = sampled_efficient_points(instance, theta, grid, None)?;
    Ok(observations.iter().map(|o| nearest(&points, &o.y).value).sum())
}

/// Evaluations allowed for the initial grid of [`batch_estimate`].
pub const BATCH_GRID_BUDGET: usize = 20_000;

/// Approximate `argmin_θ Σ_t l_K(y_t, θ)` over Θ.
///
/// For `dim Θ ≤ 4` a lattice of spacing `step` (coarsened to fit
/// [`BATCH_GRID_BUDGET`]) is scanned; otherwise five random starts are
/// drawn. The best point is then refined by compass search down to
/// `step / 1000`.
pub fn batch_estimate(
    instance: &MopInstance<f64>,
    observations: &[Observation<f64>],
    grid: &WeightGrid<f64>,
    step: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    if observations.is_empty() {
        return Err(ImopError::InvalidInput("batch estimate needs at least one observation".into()));
    }
    if !(step > 0.0) {
        return Err(ImopError::InvalidParameter(format!("grid step {step}")));
    }
    let spec = instance.param();
    let d = spec.dim();
    let (lo, hi) = (spec.lower(), spec.upper());
    let loss = |theta: &[f64]| total_loss(instance, theta, grid, observations);

    let starts: Vec<Vec<f64>> = if d <= 4 {
        let max_per_axis = (BATCH_GRID_BUDGET as f64).powf(1.0 / d as f64).floor().max(2.0) as usize;
        let axes: Vec<Vec<f64>> = (0..d)
            .map(|i| {
                let a = axis(lo[i], hi[i], step);
                if a.len() <= max_per_axis {
                    a
                } else {
                    let coarse = (hi[i] - lo[i]) / (max_per_axis - 1) as f64;
                    (0..max_per_axis).map(|j| lo[i] + coarse * j as f64).collect()
                }
            })
            .collect();
        cartesian(&axes)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..5).map(|_| (0..d).map(|i| rng.random_range(lo[i]..=hi[i])).collect()).collect()
    };
    let values: Vec<f64> = starts.par_iter().map(|t| loss(t)).collect::<Result<_>>()?;
    let best_idx = (0..starts.len()).fold(0, |b, i| if values[i] < values[b] { i } else { b });

    let mut refine_from: Vec<usize> = vec![best_idx];
    if d > 4 {
        refine_from = (0..starts.len()).collect();
    }
    let initial = if d <= 4 {
        (0..d).map(|i| if starts.len() > 1 { coarse_spacing(&starts, i).max(step) } else { step }).collect::<Vec<_>>()
    } else {
        (0..d).map(|i| (hi[i] - lo[i]) / 4.0).collect()
    };
    let mut best = (f64::INFINITY, vec![]);
    for i in refine_from {
        let (theta, value) = compass_search(&loss, starts[i].clone(), values[i], &initial, step / 1000.0, lo, hi)?;
        if value < best.0 {
            best = (value, theta);
        }
    }
    Ok(best.1)
}

fn coarse_spacing(points: &[Vec<f64>], i: usize) -> f64 {
    let mut vals: Vec<f64> = points.iter().map(|p| p[i]).collect();
    vals.sort_by(f64::total_cmp);
    vals.dedup();
    if vals.len() < 2 {
        0.0
    } else {
        vals[1] - vals[0]
    }
}

fn cartesian(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = vec![vec![]];
    for a in axes {
        out = out.into_iter().flat_map(|p| a.iter().map(move |&v| [p.clone(), vec![v]].concat())).collect();
    }
    out
}

/// Compass search with per-coordinate steps, halving until `min_step`.
/// Moves only on strict improvement.
fn compass_search(
    loss: &(impl Fn(&[f64]) -> Result<f64> + Sync),
    mut theta: Vec<f64>,
    mut value: f64,
    initial: &[f64],
    min_step: f64,
    lo: &[f64],
    hi: &[f64],
) -> Result<(Vec<f64>, f64)> {
    let mut steps = initial.to_vec();
    while steps.iter().any(|&s| s >= min_step) {
        let mut moved = false;
        for i in 0..theta.len() {
            for dir in [1.0, -1.0] {
                let mut cand = theta.clone();
                cand[i] = (cand[i] + dir * steps[i]).clamp(lo[i], hi[i]);
                if cand[i] == theta[i] {
                    continue;
                }
                let v = loss(&cand)?;
                if v < value {
                    theta = cand;
                    value = v;
                    moved = true;
                    break;
                }
            }
        }
        if !moved {
            for s in steps.iter_mut() {
                *s *= 0.5;
            }
        }
    }
    Ok((theta, value))
}

/// `S(w, θ)` of the one-variable instance: `clip(w₁θ₁ + w₂θ₂, 0, 10)`.
pub fn closed_form_1d(theta: [f64; 2], w: [f64; 2]) -> f64 {
    (w[0] * theta[0] + w[1] * theta[1]).clamp(0.0, 10.0)
}

/// Squared distance from `y` to the efficient set `[min θ, max θ] ∩ [0, 10]`.
pub fn closed_form_ideal_loss_1d(y: f64, theta: [f64; 2]) -> f64 {
    let lo = theta[0].min(theta[1]).clamp(0.0, 10.0);
    let hi = theta[0].max(theta[1]).clamp(0.0, 10.0);
    let gap = if y < lo {
        lo - y
    } else if y > hi {
        y - hi
    } else {
        0.0
    };
    gap * gap
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::gen_quadratic_1d_stream;
    use crate::scalarize::{even_grid, solve_pws};
    use crate::testutil::{appendix_c, mqp_c};

    fn w2(a: f64) -> WeightVector<f64> {
        WeightVector::new(vec![a, 1.0 - a], 1e-3).unwrap()
    }

    #[test]
    fn grid_pws_references() {
        let inst = mqp_c();
        let x = grid_pws(&inst, &w2(0.0), 1e-3).unwrap();
        assert!((x[0] - 3.0).abs() <= 1e-3 && (x[1] - 3.0).abs() <= 1e-3);
        assert_eq!(grid_pws(&inst, &w2(1.0), 1e-2).unwrap(), vec![0.0, 0.0]);
        let x = grid_pws(&appendix_c(&[2.0, 4.0]), &w2(0.25), 1e-3).unwrap();
        assert!((x[0] - 3.5).abs() <= 1e-3);
    }

    #[test]
    fn closed_forms() {
        assert_eq!(closed_form_1d([2.0, 4.0], [0.25, 0.75]), 3.5);
        assert_eq!(closed_form_1d([12.0, 14.0], [0.5, 0.5]), 10.0);
        assert_eq!(closed_form_ideal_loss_1d(3.0, [2.0, 4.0]), 0.0);
        assert_eq!(closed_form_ideal_loss_1d(5.0, [2.0, 4.0]), 1.0);
        assert_eq!(closed_form_ideal_loss_1d(1.0, [2.0, 4.0]), 1.0);
        assert_eq!(closed_form_ideal_loss_1d(1.0, [4.0, 2.0]), 1.0);
        let inst = appendix_c(&[2.0, 4.0]);
        for a in [0.0, 0.1, 0.5, 0.77, 1.0] {
            let x = solve_pws(&inst, &w2(a)).unwrap().x[0];
            assert!((x - closed_form_1d([2.0, 4.0], [a, 1.0 - a])).abs() < 1e-12);
        }
    }

    #[test]
    fn ideal_loss_midpoint_convex() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..500 {
            let y: f64 = rng.random_range(-2.0..12.0);
            let a: [f64; 2] = [rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)];
            let b: [f64; 2] = [rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)];
            // keep the pair on a common ordering so the segment stays in one branch
            let (a, b) = ([a[0].min(a[1]), a[0].max(a[1])], [b[0].min(b[1]), b[0].max(b[1])]);
            let mid = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
            let lhs = closed_form_ideal_loss_1d(y, mid);
            let rhs = 0.5 * (closed_form_ideal_loss_1d(y, a) + closed_form_ideal_loss_1d(y, b));
            assert!(lhs <= rhs + 1e-12);
        }
    }

    #[test]
    fn batch_recovers_noiseless_truth() {
        let inst = appendix_c(&[3.0, 7.0]);
        let grid = even_grid::<f64>(2, 11, false).unwrap();
        // decisions exactly at sampled weights
        let obs: Vec<_> = (0..30)
            .map(|t| Observation::new(t + 1, vec![closed_form_1d([3.0, 7.0], [(t % 11) as f64 / 10.0, 1.0 - (t % 11) as f64 / 10.0])]))
            .collect();
        let est = batch_estimate(&inst, &obs, &grid, 0.5, 0).unwrap();
        // a symmetric grid cannot tell θ from its swap
        assert!(est == vec![3.0, 7.0] || est == vec![7.0, 3.0], "{est:?}");
        assert!(total_loss(&inst, &est, &grid, &obs).unwrap() < 1e-20);
        assert!(batch_estimate(&inst, &[], &grid, 0.5, 0).is_err());
    }

    #[test]
    fn batch_beats_truth_on_noisy_stream() {
        let inst = appendix_c(&[3.0, 7.0]);
        let grid = even_grid::<f64>(2, 21, false).unwrap();
        let s = gen_quadratic_1d_stream::<f64>([3.0, 7.0], 100, 0.5, 9).unwrap();
        let est = batch_estimate(&inst, &s.observations, &grid, 0.1, 0).unwrap();
        let at_est = total_loss(&inst, &est, &grid, &s.observations).unwrap();
        let at_truth = total_loss(&inst, &[3.0, 7.0], &grid, &s.observations).unwrap();
        assert!(at_est <= at_truth, "{at_est} > {at_truth}");
    }

    #[test]
    fn grid_update_one_d() {
        let inst = appendix_c(&[2.0, 4.0]);
        let (theta, v) = grid_update(&inst, &[2.0, 4.0], &[5.0], 1.0, &w2(1.0), 0.01).unwrap();
        assert!((theta[0] - 4.0).abs() < 1e-9 && (theta[1] - 4.0).abs() < 1e-9);
        assert!((v - 3.0).abs() < 1e-9);
    }
}
