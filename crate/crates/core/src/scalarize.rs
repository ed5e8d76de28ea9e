//! Simplex weights and the weighted-sum problem.
//!
//! For a weight `w` on the simplex the weighted-sum problem is
//! `min wᵀf(x) s.t. A x ≤ b, x ≥ 0`; its minimizer is an efficient point
//! whenever `w` is strictly positive (or every `f_l` is strictly convex).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{ImopError, Result};
use crate::linalg::Matrix;
use crate::model::{MopInstance, ParamBlock};
use crate::qp::{solve_enumerated, EnumOptions, EnumStats};
use crate::Scalar;

/// Offset from the simplex boundary used by interior grids.
pub const DEFAULT_INTERIOR_OFFSET: f64 = 1e-3;

/// A point of the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector<S> {
    w: Vec<S>,
    strictly_positive: bool,
}

impl<S: Scalar> WeightVector<S> {
    /// Validates nonnegativity and `Σw = 1`; `strictly_positive` is set iff
    /// `min(w) ≥ offset`.
    pub fn new(w: Vec<S>, offset: S) -> Result<Self> {
        let tol = S::lit(1e-12).max(S::epsilon() * S::lit(10.0) * S::from_usize(w.len()).unwrap());
        let sum: S = w.iter().copied().sum();
        if w.is_empty() || w.iter().any(|&v| !(v >= S::zero())) || (sum - S::one()).abs() > tol {
            return Err(ImopError::InvalidParameter(format!("not a simplex weight: {w:?}")));
        }
        let min = w.iter().fold(S::infinity(), |a, &v| a.min(v));
        Ok(Self { strictly_positive: min >= offset, w })
    }

    pub fn as_slice(&self) -> &[S] {
        &self.w
    }

    pub fn strictly_positive(&self) -> bool {
        self.strictly_positive
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }
}

/// The `K` sampled weights defining the surrogate loss.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightGrid<S> {
    weights: Vec<WeightVector<S>>,
    interior_offset: S,
}

impl<S: Scalar> WeightGrid<S> {
    pub fn new(weights: Vec<WeightVector<S>>, interior_offset: S) -> Result<Self> {
        if weights.is_empty() {
            return Err(ImopError::InvalidParameter("empty weight grid".into()));
        }
        let p = weights[0].len();
        if weights.iter().any(|w| w.len() != p) {
            return Err(ImopError::DimensionMismatch("weights of different lengths".into()));
        }
        for i in 0..weights.len() {
            for j in 0..i {
                if weights[i] == weights[j] {
                    return Err(ImopError::InvalidParameter(format!("duplicate weights at {j} and {i}")));
                }
            }
        }
        Ok(Self { weights, interior_offset })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn get(&self, k: usize) -> &WeightVector<S> {
        &self.weights[k]
    }

    pub fn iter(&self) -> impl Iterator<Item = &WeightVector<S>> {
        self.weights.iter()
    }

    pub fn interior_offset(&self) -> S {
        self.interior_offset
    }

    /// First coordinates, the natural axis for two objectives.
    pub fn first_coordinates(&self) -> Vec<S> {
        self.weights.iter().map(|w| w.w[0]).collect()
    }
}

/// `K` evenly spaced weights `(u_k, 1 - u_k)`, `u_k` spanning `[0, 1]`, or
/// `[δ, 1 - δ]` with `δ = 10⁻³` when `interior`.
pub fn even_grid<S: Scalar>(p: usize, k: usize, interior: bool) -> Result<WeightGrid<S>> {
    if p != 2 {
        return Err(ImopError::UnsupportedDimension(p));
    }
    if k < 2 {
        return Err(ImopError::InvalidParameter(format!("grid needs K >= 2, got {k}")));
    }
    let delta = S::lit(DEFAULT_INTERIOR_OFFSET);
    let (lo, hi) = if interior { (delta, S::one() - delta) } else { (S::zero(), S::one()) };
    let last = S::from_usize(k - 1).unwrap();
    let weights = (0..k)
        .map(|i| {
            let u = if i == k - 1 { hi } else { lo + (hi - lo) * S::from_usize(i).unwrap() / last };
            WeightVector::new(vec![u, S::one() - u], delta)
        })
        .collect::<Result<Vec<_>>>()?;
    WeightGrid::new(weights, delta)
}

/// Uniform sample from the simplex via sorted uniform spacings.
pub fn sample_simplex<S: Scalar, R: Rng + ?Sized>(p: usize, rng: &mut R) -> Vec<S> {
    let mut cuts: Vec<f64> = (0..p.saturating_sub(1)).map(|_| rng.random::<f64>()).collect();
    cuts.sort_by(f64::total_cmp);
    let mut out = Vec::with_capacity(p);
    let mut prev = 0.0;
    for c in cuts.into_iter().chain(std::iter::once(1.0)) {
        out.push(S::lit(c - prev));
        prev = c;
    }
    // absorb rounding into the last coordinate
    let head: S = out[..p - 1].iter().copied().sum();
    out[p - 1] = S::one() - head;
    out
}

/// `K` uniformly random simplex weights, for `p > 2` where no grid is
/// provided.
pub fn random_grid<S: Scalar>(p: usize, k: usize, seed: u64) -> Result<WeightGrid<S>> {
    if p < 2 || k < 2 {
        return Err(ImopError::InvalidParameter(format!("random grid needs p, K >= 2 (p = {p}, K = {k})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let delta = S::lit(DEFAULT_INTERIOR_OFFSET);
    let weights = (0..k).map(|_| WeightVector::new(sample_simplex(p, &mut rng), delta)).collect::<Result<Vec<_>>>()?;
    WeightGrid::new(weights, delta)
}

/// Two-objective weights whose first coordinate is Normal(`mean`, `sd`)
/// truncated to `[0, 1]` (rejection sampling).
pub fn sample_truncated_normal_weights<S: Scalar>(t: usize, mean: f64, sd: f64, seed: u64) -> Result<Vec<WeightVector<S>>> {
    if !(mean > 0.0 && mean < 1.0) || !(sd > 0.0) {
        return Err(ImopError::InvalidParameter(format!("truncated normal needs 0 < mean < 1 and sd > 0 (mean = {mean}, sd = {sd})")));
    }
    let normal = Normal::new(mean, sd).map_err(|e| ImopError::InvalidParameter(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let delta = S::lit(DEFAULT_INTERIOR_OFFSET);
    (0..t)
        .map(|_| {
            let u = loop {
                let v = normal.sample(&mut rng);
                if (0.0..=1.0).contains(&v) {
                    break v;
                }
            };
            WeightVector::new(vec![S::lit(u), S::one() - S::lit(u)], delta)
        })
        .collect()
}

/// The weighted-sum minimizer with its KKT certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct EfficientPoint<S> {
    pub x: Vec<S>,
    /// Active rows of `[A; -I]`.
    pub active: Vec<usize>,
    /// Multipliers for every row of `[A; -I]`.
    pub multipliers: Vec<S>,
    pub stats: EnumStats,
}

/// Options for [`solve_pws_with`].
#[derive(Debug, Clone, Default)]
pub struct PwsOptions {
    pub enumeration: EnumOptions,
    /// Accept a semidefinite scalarized Hessian (linear-program-like case).
    pub allow_semidefinite: bool,
}

/// `Q(w) = Σ w_l Q_l`.
pub fn scalarized_hessian<S: Scalar>(instance: &MopInstance<S>, w: &[S]) -> Matrix<S> {
    let n = instance.n();
    let mut q = Matrix::zeros(n, n);
    for (l, &wl) in w.iter().enumerate() {
        if wl != S::zero() {
            q.add_scaled(wl, instance.quad(l));
        }
    }
    q
}

/// Linear term `c(w) = Σ w_l c_l`, with the objective block overridden by
/// `theta` when given.
pub(crate) fn scalarized_linear<S: Scalar>(instance: &MopInstance<S>, theta: Option<&[S]>, w: &[S]) -> Vec<S> {
    let n = instance.n();
    let mut c = vec![S::zero(); n];
    match (theta, instance.param().block()) {
        (Some(th), ParamBlock::ObjectiveLinear { map, offset }) => {
            let stacked = map.matvec(th);
            for (l, &wl) in w.iter().enumerate() {
                for j in 0..n {
                    c[j] += wl * (stacked[l * n + j] + offset[l * n + j]);
                }
            }
        }
        _ => {
            for (l, &wl) in w.iter().enumerate() {
                crate::linalg::axpy(wl, instance.lin(l), &mut c);
            }
        }
    }
    c
}

/// Right-hand side `[b; 0]`, with `b` overridden by `theta` for a
/// right-hand-side block.
pub(crate) fn stacked_rhs_at<S: Scalar>(instance: &MopInstance<S>, theta: Option<&[S]>) -> Vec<S> {
    let mut h = instance.h();
    if let (Some(th), ParamBlock::Rhs) = (theta, instance.param().block()) {
        h[..th.len()].copy_from_slice(th);
    }
    h
}

/// Solves the weighted-sum problem exactly by active-set enumeration.
pub fn solve_pws<S: Scalar>(instance: &MopInstance<S>, w: &WeightVector<S>) -> Result<EfficientPoint<S>> {
    solve_pws_with(instance, w, &PwsOptions::default())
}

pub fn solve_pws_with<S: Scalar>(instance: &MopInstance<S>, w: &WeightVector<S>, opts: &PwsOptions) -> Result<EfficientPoint<S>> {
    solve_pws_at(instance, None, w, opts)
}

/// [`solve_pws_with`] on `instance` with its parameter block set to `theta`,
/// without materializing the substituted instance.
pub fn solve_pws_at<S: Scalar>(
    instance: &MopInstance<S>,
    theta: Option<&[S]>,
    w: &WeightVector<S>,
    opts: &PwsOptions,
) -> Result<EfficientPoint<S>> {
    if w.len() != instance.p() {
        return Err(ImopError::DimensionMismatch(format!("weight of length {} for {} objectives", w.len(), instance.p())));
    }
    let q = scalarized_hessian(instance, w.as_slice());
    if !opts.allow_semidefinite && crate::linalg::Cholesky::new(&q).is_none() {
        return Err(ImopError::NoKktPoint(format!(
            "scalarized Hessian is singular for w = {:?}; use an interior grid or allow the semidefinite fallback",
            w.as_slice()
        )));
    }
    let c = scalarized_linear(instance, theta, w.as_slice());
    let h = stacked_rhs_at(instance, theta);
    let (sol, stats) = solve_enumerated(&q, &c, instance.g(), &h, &opts.enumeration)?;
    Ok(EfficientPoint { x: sol.x, active: sol.active, multipliers: sol.multipliers, stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{appendix_c, mqp_c};

    fn w2(a: f64) -> WeightVector<f64> {
        WeightVector::new(vec![a, 1.0 - a], 1e-3).unwrap()
    }

    #[test]
    fn even_grid_endpoints() {
        let g = even_grid::<f64>(2, 3, false).unwrap();
        assert_eq!(g.first_coordinates(), vec![0.0, 0.5, 1.0]);
        assert_eq!(g.get(0).as_slice(), &[0.0, 1.0]);
        assert!(!g.get(0).strictly_positive());
        assert!(g.get(1).strictly_positive());
        let g = even_grid::<f64>(2, 41, false).unwrap();
        for (k, u) in g.first_coordinates().into_iter().enumerate() {
            assert!((u - k as f64 / 40.0).abs() < 1e-15);
        }
        let g = even_grid::<f64>(2, 5, true).unwrap();
        assert_eq!(g.first_coordinates()[0], 1e-3);
        assert!((g.first_coordinates()[4] - 0.999).abs() < 1e-15);
        assert!(g.iter().all(|w| w.strictly_positive()));
        assert!(matches!(even_grid::<f64>(3, 10, false), Err(ImopError::UnsupportedDimension(3))));
        assert!(even_grid::<f64>(2, 1, false).is_err());
    }

    #[test]
    fn weight_validation() {
        assert!(WeightVector::new(vec![0.3, 0.6], 1e-3).is_err());
        assert!(WeightVector::new(vec![-0.1, 1.1], 1e-3).is_err());
        assert!(WeightGrid::new(vec![w2(0.5), w2(0.5)], 1e-3).is_err());
    }

    #[test]
    fn truncated_normal_weights() {
        let ws = sample_truncated_normal_weights::<f64>(1000, 0.5, 0.1, 11).unwrap();
        let mean = ws.iter().map(|w| w.as_slice()[0]).sum::<f64>() / 1000.0;
        assert!((mean - 0.5).abs() < 0.02, "mean {mean}");
        assert!(ws.iter().all(|w| (0.0..=1.0).contains(&w.as_slice()[0])));
        let tight = sample_truncated_normal_weights::<f64>(50, 0.5, 1e-9, 3).unwrap();
        assert!(tight.iter().all(|w| (w.as_slice()[0] - 0.5).abs() < 1e-6));
        assert!(matches!(sample_truncated_normal_weights::<f64>(5, 1.5, 0.1, 0), Err(ImopError::InvalidParameter(_))));
        let again = sample_truncated_normal_weights::<f64>(1000, 0.5, 0.1, 11).unwrap();
        assert_eq!(ws, again);
    }

    #[test]
    fn simplex_sampling_on_simplex() {
        let grid = random_grid::<f64>(4, 50, 9).unwrap();
        for w in grid.iter() {
            assert!((w.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pws_reference_points() {
        let inst = mqp_c();
        let x = solve_pws(&inst, &w2(1.0)).unwrap().x;
        assert!(x[0].abs() < 1e-12 && x[1].abs() < 1e-12);
        let sol = solve_pws(&inst, &w2(0.0)).unwrap();
        assert!((sol.x[0] - 3.0).abs() < 1e-12 && (sol.x[1] - 3.0).abs() < 1e-12);
        assert_eq!(sol.active, vec![1]);
        assert!(sol.multipliers[0].abs() < 1e-12 && (sol.multipliers[1] - 2.0).abs() < 1e-12);

        let one_d = appendix_c(&[2.0, 4.0]);
        let x = solve_pws(&one_d, &w2(0.5)).unwrap().x;
        assert!((x[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn pws_semidefinite_guard() {
        let inst = crate::testutil::portfolio();
        assert!(solve_pws(&inst, &w2(1.0)).is_err());
        let opts = PwsOptions { allow_semidefinite: true, ..Default::default() };
        let x = solve_pws_with(&inst, &w2(1.0), &opts).unwrap().x;
        // pure return maximization concentrates on the best security (6)
        assert!((x[5] - 1.0).abs() < 1e-9, "{x:?}");
    }

    #[test]
    fn pws_f32() {
        let inst = crate::testutil::mqp_c_f32();
        let w = WeightVector::new(vec![0.0f32, 1.0], 1e-3).unwrap();
        let x = solve_pws(&inst, &w).unwrap().x;
        assert!((x[0] - 3.0).abs() < 1e-4 && (x[1] - 3.0).abs() < 1e-4);
    }
}
