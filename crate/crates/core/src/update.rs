//! Implicit proximal update
//!
//! ```text
//!     θ_{t+1} = argmin_{θ ∈ Θ, x ∈ S(w, θ)}  ½‖θ - θ_t‖² + η ‖y - x‖²
//! ```
//!
//! solved exactly for a fixed weight by enumerating lower-level active sets.
//! On a fixed active set `S` the KKT system of the weighted-sum problem is
//! linear with a right-hand side affine in θ, so `x = Xθ + x0` and
//! `u_S = Uθ + u0`. What remains is a strictly convex QP in θ subject to
//! `u_S ≥ 0`, primal feasibility of the inactive rows and the box Θ; it is
//! solved by the dual active-set method. The best piece over all `S` wins.

use rayon::prelude::*;

use crate::error::{ImopError, Result};
use crate::linalg::{dist_sq, dot, for_each_combination, norm, symmetric_eigenvalues, Lu, Matrix};
use crate::loss::{nearest, sampled_efficient_points};
use crate::model::{MopInstance, ParamBlock};
use crate::qp::{solve_dual, DualOutcome};
use crate::scalarize::{scalarized_hessian, scalarized_linear, solve_pws_at, EfficientPoint, PwsOptions, WeightGrid, WeightVector};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateResult<S> {
    pub theta_next: Vec<S>,
    /// Weight index within the grid (0 for a single-weight solve).
    pub k_used: usize,
    /// `½‖θ_next - θ_t‖² + η ‖y - x_at_solution‖²`.
    pub objective_value: S,
    pub x_at_solution: Vec<S>,
    /// Lower-level active set of the winning piece.
    pub active_set_used: Vec<usize>,
    pub stats: UpdateStats,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct UpdateStats {
    /// Active sets whose KKT system was formed.
    pub active_sets: usize,
    /// Of those, the singular ones (skipped).
    pub singular: usize,
    /// Rows that could be active anywhere in the trust ball.
    pub candidate_rows: usize,
}

impl UpdateStats {
    fn merge(self, other: Self) -> Self {
        Self {
            active_sets: self.active_sets + other.active_sets,
            singular: self.singular + other.singular,
            candidate_rows: self.candidate_rows.max(other.candidate_rows),
        }
    }
}

#[derive(Debug, Clone)]
pub struct UpdateOptions<S> {
    /// Restrict the enumeration to rows that can become active within the
    /// ball `‖θ - θ_t‖ ≤ √(2·incumbent)`. Exact; only available for an
    /// objective block with positive definite `Q(w)`.
    pub prune: bool,
    /// `S(w, θ_t)` if already known.
    pub start: Option<EfficientPoint<S>>,
}

impl<S> Default for UpdateOptions<S> {
    fn default() -> Self {
        Self { prune: true, start: None }
    }
}

/// `c(θ) = Cθ + c0`, `h(θ) = Hθ + h0`, with `H = 0` for an objective block
/// and `C = 0` for a right-hand-side block.
struct AffineData<S> {
    c_map: Matrix<S>,
    c0: Vec<S>,
    h_map: Matrix<S>,
    h0: Vec<S>,
}

fn affine_data<S: Scalar>(instance: &MopInstance<S>, w: &[S]) -> AffineData<S> {
    let (n, m, d) = (instance.n(), instance.m(), instance.param().dim());
    match instance.param().block() {
        ParamBlock::ObjectiveLinear { map, offset } => {
            let mut c_map = Matrix::zeros(n, d);
            let mut c0 = vec![S::zero(); n];
            for (l, &wl) in w.iter().enumerate() {
                for j in 0..n {
                    for i in 0..d {
                        c_map[(j, i)] += wl * map[(l * n + j, i)];
                    }
                    c0[j] += wl * offset[l * n + j];
                }
            }
            AffineData { c_map, c0, h_map: Matrix::zeros(m, d), h0: instance.h() }
        }
        ParamBlock::Rhs => {
            let mut h_map = Matrix::zeros(m, d);
            for i in 0..d {
                h_map[(i, i)] = S::one();
            }
            AffineData {
                c_map: Matrix::zeros(n, d),
                c0: scalarized_linear(instance, None, w),
                h_map,
                h0: vec![S::zero(); m],
            }
        }
    }
}

struct Best<S> {
    value: S,
    theta: Vec<S>,
    x: Vec<S>,
    active: Vec<usize>,
}

struct Piece<'a, S> {
    instance: &'a MopInstance<S>,
    q: &'a Matrix<S>,
    data: &'a AffineData<S>,
    theta_t: &'a [S],
    y: &'a [S],
    eta: S,
}

impl<S: Scalar> Piece<'_, S> {
    /// Best θ on the piece of active set `rows`; `None` if the KKT matrix is
    /// singular (`Err`-free) or the piece is empty.
    fn solve(&self, rows: &[usize], stats: &mut UpdateStats) -> Result<Option<(S, Vec<S>, Vec<S>)>> {
        let inst = self.instance;
        let (n, m, d) = (inst.n(), inst.m(), inst.param().dim());
        let s = rows.len();
        let g = inst.g();
        stats.active_sets += 1;

        let mut kkt = Matrix::zeros(n + s, n + s);
        for i in 0..n {
            kkt.row_mut(i)[..n].copy_from_slice(self.q.row(i));
        }
        for (r, &i) in rows.iter().enumerate() {
            for j in 0..n {
                kkt[(n + r, j)] = g[(i, j)];
                kkt[(j, n + r)] = g[(i, j)];
            }
        }
        let Some(lu) = Lu::new(&kkt) else {
            stats.singular += 1;
            return Ok(None);
        };
        // columns 0..d: θ coefficients, column d: constant
        let mut rhs = Matrix::zeros(n + s, d + 1);
        for j in 0..n {
            for i in 0..d {
                rhs[(j, i)] = -self.data.c_map[(j, i)];
            }
            rhs[(j, d)] = -self.data.c0[j];
        }
        for (r, &i) in rows.iter().enumerate() {
            for k in 0..d {
                rhs[(n + r, k)] = self.data.h_map[(i, k)];
            }
            rhs[(n + r, d)] = self.data.h0[i];
        }
        let sol = lu.solve_matrix(&rhs);

        let mut x_map = Matrix::zeros(n, d);
        let mut x0 = vec![S::zero(); n];
        for j in 0..n {
            x_map.row_mut(j).copy_from_slice(&sol.row(j)[..d]);
            x0[j] = sol[(j, d)];
        }

        let n_cons = m + 2 * d;
        let mut cons = Matrix::zeros(n_cons, d);
        let mut rhs_c = Vec::with_capacity(n_cons);
        let mut in_set = vec![false; m];
        for (r, &i) in rows.iter().enumerate() {
            in_set[i] = true;
            // u_i ≥ 0
            for k in 0..d {
                cons[(r, k)] = -sol[(n + r, k)];
            }
            rhs_c.push(sol[(n + r, d)]);
        }
        let mut r = s;
        for i in (0..m).filter(|&i| !in_set[i]) {
            // G_i x(θ) ≤ h_i(θ)
            let gi = g.row(i);
            for k in 0..d {
                let mut v = -self.data.h_map[(i, k)];
                for j in 0..n {
                    v += gi[j] * x_map[(j, k)];
                }
                cons[(r, k)] = v;
            }
            rhs_c.push(self.data.h0[i] - dot(gi, &x0));
            r += 1;
        }
        let (lo, hi) = (inst.param().lower(), inst.param().upper());
        for k in 0..d {
            cons[(r, k)] = S::one();
            rhs_c.push(hi[k]);
            cons[(r + 1, k)] = -S::one();
            rhs_c.push(-lo[k]);
            r += 2;
        }

        // ½‖θ - θ_t‖² + η‖y - Xθ - x0‖²
        let two_eta = S::lit(2.0) * self.eta;
        let mut hess = x_map.transpose().matmul(&x_map).scaled(two_eta);
        for k in 0..d {
            hess[(k, k)] += S::one();
        }
        let resid: Vec<S> = self.y.iter().zip(&x0).map(|(&a, &b)| a - b).collect();
        let xt_r = x_map.tr_matvec(&resid);
        let lin: Vec<S> = (0..d).map(|k| -self.theta_t[k] - two_eta * xt_r[k]).collect();

        match solve_dual(&hess, &lin, &cons, &rhs_c)? {
            DualOutcome::Infeasible => Ok(None),
            DualOutcome::Optimal(opt) => {
                let theta = opt.x;
                let mut x = x_map.matvec(&theta);
                for (v, &c) in x.iter_mut().zip(&x0) {
                    *v += c;
                }
                let value = S::lit(0.5) * dist_sq(&theta, self.theta_t) + self.eta * dist_sq(self.y, &x);
                Ok(Some((value, theta, x)))
            }
        }
    }
}

/// Solves the update for a single weight.
pub fn solve_update_fixed_k<S: Scalar>(
    instance: &MopInstance<S>,
    theta_t: &[S],
    y: &[S],
    eta: S,
    w: &WeightVector<S>,
) -> Result<UpdateResult<S>> {
    solve_update_fixed_k_with(instance, theta_t, y, eta, w, &UpdateOptions::default())
}

pub fn solve_update_fixed_k_with<S: Scalar>(
    instance: &MopInstance<S>,
    theta_t: &[S],
    y: &[S],
    eta: S,
    w: &WeightVector<S>,
    opts: &UpdateOptions<S>,
) -> Result<UpdateResult<S>> {
    if !(eta > S::zero()) {
        return Err(ImopError::InvalidParameter(format!("learning rate must be positive, got {eta}")));
    }
    instance.param().check(theta_t)?;
    let (n, m) = (instance.n(), instance.m());
    if y.len() != n {
        return Err(ImopError::DimensionMismatch(format!("observation of length {} for n = {n}", y.len())));
    }
    let start = match &opts.start {
        Some(p) => p.clone(),
        None => solve_pws_at(instance, Some(theta_t), w, &PwsOptions::default())?,
    };

    let q = scalarized_hessian(instance, w.as_slice());
    let data = affine_data(instance, w.as_slice());
    let piece = Piece { instance, q: &q, data: &data, theta_t, y, eta };
    let mut stats = UpdateStats::default();

    let mut best = Best { value: eta * dist_sq(y, &start.x), theta: theta_t.to_vec(), x: start.x.clone(), active: start.active.clone() };
    if best.value == S::zero() {
        return Ok(finish(best, stats, instance));
    }
    let consider = |rows: &[usize], best: &mut Best<S>, stats: &mut UpdateStats| -> Result<()> {
        if let Some((value, theta, x)) = piece.solve(rows, stats)? {
            if value < best.value {
                *best = Best { value, theta, x, active: rows.to_vec() };
            }
        }
        Ok(())
    };

    // The current piece usually contains the answer or gets close to it,
    // which tightens the pruning radius below.
    if start.active.len() <= n {
        consider(&start.active, &mut best, &mut stats)?;
    }

    let candidates: Vec<usize> = match prune_radius(instance, &q, &data, opts.prune) {
        Some(lipschitz) => {
            let r = (S::lit(2.0) * best.value).sqrt();
            let h = data.h0.clone();
            let g = instance.g();
            (0..m)
                .filter(|&i| {
                    let slack = h[i] - dot(g.row(i), &start.x);
                    let reach = norm(g.row(i)) * lipschitz * r * (S::one() + S::lit(1e-6));
                    slack <= reach + S::kkt_tol() * (S::one() + h[i].abs())
                })
                .collect()
        }
        None => (0..m).collect(),
    };
    stats.candidate_rows = candidates.len();

    let mut err = None;
    let mut rows = Vec::with_capacity(n);
    for size in 0..=n.min(candidates.len()) {
        for_each_combination(candidates.len(), size, |idx| {
            rows.clear();
            rows.extend(idx.iter().map(|&i| candidates[i]));
            match consider(&rows, &mut best, &mut stats) {
                Ok(()) => true,
                Err(e) => {
                    err = Some(e);
                    false
                }
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
    }
    Ok(finish(best, stats, instance))
}

/// Lipschitz constant of `θ ↦ S(w, θ)` when it is cheaply available.
fn prune_radius<S: Scalar>(instance: &MopInstance<S>, q: &Matrix<S>, data: &AffineData<S>, enabled: bool) -> Option<S> {
    if !enabled || !matches!(instance.param().block(), ParamBlock::ObjectiveLinear { .. }) {
        return None;
    }
    let lambda = symmetric_eigenvalues(q)[0];
    let scale = S::one().max(q.max_abs());
    if !(lambda > S::pivot_tol().sqrt() * scale) {
        return None;
    }
    Some(data.c_map.frobenius_norm() / lambda)
}

fn finish<S: Scalar>(best: Best<S>, stats: UpdateStats, instance: &MopInstance<S>) -> UpdateResult<S> {
    UpdateResult {
        // clears round-off outside the box
        theta_next: instance.param().project(&best.theta),
        k_used: 0,
        objective_value: best.value,
        x_at_solution: best.x,
        active_set_used: best.active,
        stats,
    }
}

/// Result of the zero-loss shortcut: stay at θ_t.
fn stay<S: Scalar>(theta_t: &[S], k: usize, point: &EfficientPoint<S>, eta: S, y: &[S]) -> UpdateResult<S> {
    UpdateResult {
        theta_next: theta_t.to_vec(),
        k_used: k,
        objective_value: eta * dist_sq(y, &point.x),
        x_at_solution: point.x.clone(),
        active_set_used: point.active.clone(),
        stats: UpdateStats::default(),
    }
}

/// Full update: best fixed-weight solution over the whole grid (ties to
/// the smallest index). The `K` solves run on the current rayon pool.
pub fn algorithm1_update<S: Scalar>(
    instance: &MopInstance<S>,
    theta_t: &[S],
    y: &[S],
    eta: S,
    grid: &WeightGrid<S>,
) -> Result<UpdateResult<S>> {
    let points = sampled_efficient_points(instance, theta_t, grid, None)?;
    algorithm1_update_from(instance, theta_t, y, eta, grid, &points)
}

/// [`algorithm1_update`] given `S(w_k, θ_t)` for every `k`.
pub fn algorithm1_update_from<S: Scalar>(
    instance: &MopInstance<S>,
    theta_t: &[S],
    y: &[S],
    eta: S,
    grid: &WeightGrid<S>,
    points: &[EfficientPoint<S>],
) -> Result<UpdateResult<S>> {
    let loss = nearest(points, y);
    if loss.is_zero() {
        return Ok(stay(theta_t, loss.k_star, &points[loss.k_star], eta, y));
    }
    let results: Vec<UpdateResult<S>> = (0..grid.len())
        .into_par_iter()
        .map(|k| {
            let opts = UpdateOptions { prune: true, start: Some(points[k].clone()) };
            solve_update_fixed_k_with(instance, theta_t, y, eta, grid.get(k), &opts).map(|mut r| {
                r.k_used = k;
                r
            })
        })
        .collect::<Result<_>>()?;
    let mut stats = UpdateStats::default();
    let mut best: Option<UpdateResult<S>> = None;
    for r in results {
        stats = stats.merge(r.stats);
        if best.as_ref().is_none_or(|b| r.objective_value < b.objective_value) {
            best = Some(r);
        }
    }
    let mut best = best.ok_or(ImopError::NoFeasibleActiveSet)?;
    best.stats = stats;
    Ok(best)
}

/// Accelerated update: pick `k*` by distance at θ_t, then solve once.
pub fn algorithm2_update<S: Scalar>(
    instance: &MopInstance<S>,
    theta_t: &[S],
    y: &[S],
    eta: S,
    grid: &WeightGrid<S>,
) -> Result<UpdateResult<S>> {
    let points = sampled_efficient_points(instance, theta_t, grid, None)?;
    algorithm2_update_from(instance, theta_t, y, eta, grid, &points)
}

pub fn algorithm2_update_from<S: Scalar>(
    instance: &MopInstance<S>,
    theta_t: &[S],
    y: &[S],
    eta: S,
    grid: &WeightGrid<S>,
    points: &[EfficientPoint<S>],
) -> Result<UpdateResult<S>> {
    let loss = nearest(points, y);
    let k = loss.k_star;
    if loss.is_zero() {
        return Ok(stay(theta_t, k, &points[k], eta, y));
    }
    let opts = UpdateOptions { prune: true, start: Some(points[k].clone()) };
    let mut r = solve_update_fixed_k_with(instance, theta_t, y, eta, grid.get(k), &opts)?;
    r.k_used = k;
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalarize::{even_grid, solve_pws};
    use crate::testutil::{appendix_c, mqp_b, mqp_c};

    fn w2(a: f64) -> WeightVector<f64> {
        WeightVector::new(vec![a, 1.0 - a], 1e-3).unwrap()
    }

    #[test]
    fn one_d_calculus_reference() {
        let inst = appendix_c(&[2.0, 4.0]);
        let r = solve_update_fixed_k(&inst, &[2.0, 4.0], &[5.0], 1.0, &w2(1.0)).unwrap();
        assert!((r.theta_next[0] - 4.0).abs() < 1e-9 && (r.theta_next[1] - 4.0).abs() < 1e-9, "{:?}", r.theta_next);
        assert!((r.objective_value - 3.0).abs() < 1e-9);
        assert!((r.x_at_solution[0] - 4.0).abs() < 1e-9);
    }

    #[test]
    fn tiny_rate_stays_put() {
        let inst = mqp_c();
        let th = [2.0, 2.0, -3.0, -3.0];
        let r = solve_update_fixed_k(&inst, &th, &[1.0, 2.0], 1e-12, &w2(0.5)).unwrap();
        for (a, b) in r.theta_next.iter().zip(&th) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn exact_observation_is_fixed_point() {
        let inst = mqp_c();
        let th = [2.0, 2.0, -3.0, -3.0];
        let x = solve_pws_at(&inst, Some(&th), &w2(0.3), &PwsOptions::default()).unwrap().x;
        let r = solve_update_fixed_k(&inst, &th, &x, 1.0, &w2(0.3)).unwrap();
        assert_eq!(r.theta_next, th.to_vec());
        assert_eq!(r.objective_value, 0.0);
    }

    #[test]
    fn algorithms_pick_middle_weight() {
        let inst = appendix_c(&[2.0, 4.0]);
        let grid = even_grid::<f64>(2, 3, false).unwrap();
        let a1 = algorithm1_update(&inst, &[2.0, 4.0], &[3.2], 1.0, &grid).unwrap();
        let a2 = algorithm2_update(&inst, &[2.0, 4.0], &[3.2], 1.0, &grid).unwrap();
        assert_eq!(a1.k_used, 1);
        assert_eq!(a2.k_used, 1);
        for (a, b) in a1.theta_next.iter().zip(&a2.theta_next) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(a2.objective_value >= a1.objective_value - 1e-12);
        let single = WeightGrid::new(vec![w2(0.5)], 1e-3).unwrap();
        let a = algorithm1_update(&inst, &[2.0, 4.0], &[3.2], 1.0, &single).unwrap();
        let f = solve_update_fixed_k(&inst, &[2.0, 4.0], &[3.2], 1.0, &w2(0.5)).unwrap();
        assert_eq!(a.theta_next, f.theta_next);
        let z = algorithm1_update(&inst, &[2.0, 4.0], &[3.0], 1.0, &grid).unwrap();
        assert_eq!(z.theta_next, vec![2.0, 4.0]);
        let z = algorithm2_update(&inst, &[2.0, 4.0], &[4.0], 1.0, &grid).unwrap();
        assert_eq!(z.theta_next, vec![2.0, 4.0]);
    }

    #[test]
    fn certificate_and_descent() {
        let inst = mqp_c();
        let th = [2.0, 3.0, -2.0, -4.0];
        let y = [2.2, 1.1];
        for a in [0.0, 0.25, 0.6, 1.0] {
            let w = w2(a);
            let r = solve_update_fixed_k(&inst, &th, &y, 2.0, &w).unwrap();
            let x_t = solve_pws_at(&inst, Some(&th), &w, &PwsOptions::default()).unwrap().x;
            assert!(r.objective_value <= 2.0 * dist_sq(&y, &x_t) + 1e-12);
            let x = solve_pws(&inst.substitute(&r.theta_next).unwrap(), &w).unwrap().x;
            assert!(dist_sq(&x, &r.x_at_solution).sqrt() < 1e-6);
        }
    }

    #[test]
    fn pruning_matches_full_enumeration() {
        let inst = mqp_c();
        let th = [4.0, 2.0, -2.0, -5.0];
        let y = [1.0, 2.9];
        for a in [0.1, 0.5, 0.9] {
            let full = UpdateOptions { prune: false, start: None };
            let p = solve_update_fixed_k(&inst, &th, &y, 3.0, &w2(a)).unwrap();
            let f = solve_update_fixed_k_with(&inst, &th, &y, 3.0, &w2(a), &full).unwrap();
            assert!((p.objective_value - f.objective_value).abs() < 1e-10);
        }
    }

    #[test]
    fn rhs_block_update() {
        let inst = mqp_b();
        let r = solve_update_fixed_k(&inst, &[6.0, 3.0], &[3.0, 4.0], 1.0, &w2(0.0)).unwrap();
        // moving b_2 up lets x_2 follow the observation
        assert!(r.theta_next[1] > 3.0);
        let x = solve_pws(&inst.substitute(&r.theta_next).unwrap(), &w2(0.0)).unwrap().x;
        assert!(dist_sq(&x, &r.x_at_solution).sqrt() < 1e-6);
    }

    #[test]
    fn portfolio_first_rounds() {
        // inner problems here have nearly dependent constraint rows
        use crate::datagen::{gen_portfolio_stream, portfolio_reduce, PortfolioData};
        let inst = crate::testutil::portfolio();
        let stream = gen_portfolio_stream::<f64>(&PortfolioData::table(), 3, 7).unwrap();
        let obs = portfolio_reduce(&stream.observations).unwrap();
        let grid = even_grid::<f64>(2, 41, true).unwrap();
        let mut theta = inst.param().project(&[0.0; 5]);
        for (t, o) in obs.iter().enumerate() {
            let eta = 5.0 / ((t + 1) as f64).sqrt();
            let r = algorithm2_update(&inst, &theta, &o.y, eta, &grid).unwrap();
            inst.param().check(&r.theta_next).unwrap();
            theta = r.theta_next;
        }
    }
}
