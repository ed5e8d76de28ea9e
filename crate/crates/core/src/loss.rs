//! Surrogate loss: squared distance from an observation to the nearest of
//! the `K` sampled efficient points.

use std::io::Write;

use rayon::prelude::*;

use crate::error::Result;
use crate::linalg::dist_sq;
use crate::model::{MopInstance, Observation};
use crate::qp::EnumOptions;
use crate::scalarize::{solve_pws_at, EfficientPoint, PwsOptions, WeightGrid};
use crate::Scalar;

/// Losses below this count as zero.
pub const ZERO_LOSS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct LossResult<S> {
    pub value: S,
    pub k_star: usize,
    pub x_star: Vec<S>,
}

impl<S: Scalar> LossResult<S> {
    pub fn is_zero(&self) -> bool {
        self.value < S::lit(ZERO_LOSS)
    }
}

/// `S(w_k, θ)` for every weight of the grid. `hints` (one active set per
/// weight, e.g. from the previous round) only speed up the search.
pub fn sampled_efficient_points<S: Scalar>(
    instance: &MopInstance<S>,
    theta: &[S],
    grid: &WeightGrid<S>,
    hints: Option<&[Vec<usize>]>,
) -> Result<Vec<EfficientPoint<S>>> {
    instance.param().check(theta)?;
    (0..grid.len())
        .into_par_iter()
        .map(|k| {
            let opts = PwsOptions {
                enumeration: EnumOptions { hint: hints.map(|h| h[k].clone()), ..Default::default() },
                ..Default::default()
            };
            solve_pws_at(instance, Some(theta), grid.get(k), &opts)
        })
        .collect()
}

/// Nearest sampled point; ties go to the smallest index.
pub fn nearest<S: Scalar>(points: &[EfficientPoint<S>], y: &[S]) -> LossResult<S> {
    let mut best = (S::infinity(), 0);
    for (k, p) in points.iter().enumerate() {
        let d = dist_sq(y, &p.x);
        if d < best.0 {
            best = (d, k);
        }
    }
    LossResult { value: best.0, k_star: best.1, x_star: points[best.1].x.clone() }
}

/// `l_K(y, θ) = min_k ‖y - S(w_k, θ)‖²`.
pub fn surrogate_loss<S: Scalar>(
    instance: &MopInstance<S>,
    theta: &[S],
    grid: &WeightGrid<S>,
    y: &Observation<S>,
) -> Result<LossResult<S>> {
    check_dim(instance, y)?;
    let points = sampled_efficient_points(instance, theta, grid, None)?;
    Ok(nearest(&points, &y.y))
}

fn check_dim<S: Scalar>(instance: &MopInstance<S>, y: &Observation<S>) -> Result<()> {
    if y.y.len() != instance.n() {
        return Err(crate::ImopError::DimensionMismatch(format!(
            "round {}: observation of length {} for n = {}",
            y.t,
            y.y.len(),
            instance.n()
        )));
    }
    Ok(())
}

/// Observations assigned to their nearest sampled weight.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub counts: Vec<usize>,
    pub proportions: Vec<f64>,
}

pub fn assign_weights<S: Scalar>(
    instance: &MopInstance<S>,
    theta: &[S],
    grid: &WeightGrid<S>,
    observations: &[Observation<S>],
) -> Result<Histogram> {
    let points = sampled_efficient_points(instance, theta, grid, None)?;
    let mut counts = vec![0usize; grid.len()];
    for y in observations {
        check_dim(instance, y)?;
        counts[nearest(&points, &y.y).k_star] += 1;
    }
    let total = observations.len().max(1) as f64;
    let proportions = counts.iter().map(|&c| c as f64 / total).collect();
    Ok(Histogram { counts, proportions })
}

/// Writes `bin,w1,count,proportion`.
pub fn write_histogram_csv<S: Scalar, W: Write>(hist: &Histogram, grid: &WeightGrid<S>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["bin", "w1", "count", "proportion"]).map_err(std::io::Error::from)?;
    for (k, (&c, &p)) in hist.counts.iter().zip(&hist.proportions).enumerate() {
        let w1 = grid.get(k).as_slice()[0];
        w.write_record([k.to_string(), w1.to_string(), c.to_string(), p.to_string()]).map_err(std::io::Error::from)?;
    }
    w.flush()?;
    Ok(())
}

/// `flags[i]` is true iff some other point is no worse in every objective
/// and strictly better in one (tolerance `1e-9`).
pub fn dominance_check<S: Scalar>(instance: &MopInstance<S>, points: &[Vec<S>]) -> Vec<bool> {
    let values: Vec<Vec<S>> = points.iter().map(|x| instance.objective_values(x)).collect();
    dominated_flags(&values)
}

/// [`dominance_check`] on precomputed objective vectors.
pub fn dominated_flags<S: Scalar>(values: &[Vec<S>]) -> Vec<bool> {
    let tol = S::lit(1e-9);
    values
        .iter()
        .enumerate()
        .map(|(i, fi)| {
            values.iter().enumerate().any(|(j, fj)| {
                j != i && fj.iter().zip(fi).all(|(&a, &b)| a <= b + tol) && fj.iter().zip(fi).any(|(&a, &b)| a < b - tol)
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalarize::even_grid;
    use crate::testutil::{appendix_c, mqp_c};

    #[test]
    fn one_d_reference_loss() {
        let inst = appendix_c(&[2.0, 4.0]);
        let grid = even_grid::<f64>(2, 3, false).unwrap();
        let pts = sampled_efficient_points(&inst, &[2.0, 4.0], &grid, None).unwrap();
        let xs: Vec<f64> = pts.iter().map(|p| p.x[0]).collect();
        assert!((xs[0] - 4.0).abs() < 1e-12 && (xs[1] - 3.0).abs() < 1e-12 && (xs[2] - 2.0).abs() < 1e-12);
        let r = surrogate_loss(&inst, &[2.0, 4.0], &grid, &Observation::new(1, vec![3.2])).unwrap();
        assert!((r.value - 0.04).abs() < 1e-12);
        assert_eq!(r.k_star, 1);
        let r = surrogate_loss(&inst, &[2.0, 4.0], &grid, &Observation::new(1, vec![2.0])).unwrap();
        assert!(r.is_zero());
    }

    #[test]
    fn mqp_origin_is_zero_loss() {
        let inst = mqp_c();
        let grid = even_grid::<f64>(2, 41, false).unwrap();
        let r = surrogate_loss(&inst, &[3.0, 1.0, -6.0, -5.0], &grid, &Observation::new(1, vec![0.0, 0.0])).unwrap();
        assert!(r.value < 1e-20);
        // every w_1 ≥ 5/6 maps to the origin; the tie goes to the first
        assert_eq!(r.k_star, 34);
        let last = sampled_efficient_points(&inst, &[3.0, 1.0, -6.0, -5.0], &grid, None).unwrap();
        assert!(dist_sq(&last[40].x, &[0.0, 0.0]) < 1e-20);
    }

    #[test]
    fn loss_bounded_by_every_sample() {
        let inst = mqp_c();
        let grid = even_grid::<f64>(2, 11, false).unwrap();
        let theta = [2.0, 3.0, -4.0, -2.0];
        let y = Observation::new(1, vec![1.5, 2.5]);
        let r = surrogate_loss(&inst, &theta, &grid, &y).unwrap();
        for p in sampled_efficient_points(&inst, &theta, &grid, None).unwrap() {
            assert!(r.value <= dist_sq(&y.y, &p.x));
        }
        // nested grids can only lower the loss
        let fine = even_grid::<f64>(2, 21, false).unwrap();
        assert!(surrogate_loss(&inst, &theta, &fine, &y).unwrap().value <= r.value + 1e-15);
        assert!(surrogate_loss(&inst, &theta, &grid, &Observation::new(1, vec![1.0])).is_err());
    }

    #[test]
    fn identical_observations_share_one_bin() {
        let inst = mqp_c();
        let grid = even_grid::<f64>(2, 5, false).unwrap();
        let obs: Vec<_> = (1..=7).map(|t| Observation::new(t, vec![1.0, 2.0])).collect();
        let h = assign_weights(&inst, &[3.0, 1.0, -6.0, -5.0], &grid, &obs).unwrap();
        assert_eq!(h.counts.iter().sum::<usize>(), 7);
        assert_eq!(h.counts.iter().filter(|&&c| c > 0).count(), 1);
        let mut buf = Vec::new();
        write_histogram_csv(&h, &grid, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("bin,w1,count,proportion\n0,0,"));
    }

    #[test]
    fn dominance_examples() {
        let one_d = appendix_c(&[2.0, 4.0]);
        assert_eq!(dominance_check(&one_d, &[vec![1.0]]), vec![false]);
        let f = one_d.objective_values(&[1.0]);
        assert_eq!(f, vec![-3.0, -7.0]);
        // equal first objective, better second: 3 dominates 1
        assert_eq!(one_d.objective_values(&[3.0]), vec![-3.0, -15.0]);
        assert_eq!(dominance_check(&one_d, &[vec![1.0], vec![3.0]]), vec![true, false]);
        assert_eq!(dominance_check(&one_d, &[vec![2.5], vec![3.0]]), vec![false, false]);

        let inst = mqp_c();
        // both gradients positive at (4, 6)
        assert_eq!(dominance_check(&inst, &[vec![4.0, 6.0], vec![5.0, 7.0]]), vec![false, true]);
    }
}
