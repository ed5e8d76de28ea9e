//! Exact solvers for small convex quadratic programs
//!
//! ```text
//!     min ½ xᵀ H x + fᵀ x   s.t.  G x ≤ h
//! ```
//!
//! [`solve_enumerated`] tries candidate active sets in order of increasing
//! size and accepts the first one whose equality-constrained KKT solution is
//! primal feasible with nonnegative multipliers. [`solve_dual`] is the
//! Goldfarb–Idnani dual active-set method for strictly convex problems; it
//! adds violated constraints one at a time and detects infeasibility.

use crate::error::{ImopError, Result};
use crate::linalg::{axpy, dot, for_each_combination, Cholesky, Lu, Matrix};
use crate::Scalar;

/// A KKT point with its certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution<S> {
    pub x: Vec<S>,
    /// Indices of the rows treated as equalities, ascending.
    pub active: Vec<usize>,
    /// One multiplier per row of `G`; zero off the active set.
    pub multipliers: Vec<S>,
}

/// Knobs for [`solve_enumerated`].
#[derive(Debug, Clone, Default)]
pub struct EnumOptions {
    /// Active set tried before the enumeration starts.
    pub hint: Option<Vec<usize>>,
    /// Relabels rows before enumeration (a permutation of `0..m`).
    pub order: Option<Vec<usize>>,
    /// Visit every active set and fail if two KKT points disagree.
    pub exhaustive: bool,
}

/// Enumeration statistics, mostly for diagnostics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EnumStats {
    pub visited: usize,
    pub singular: usize,
}

struct Problem<'a, S> {
    h_mat: &'a Matrix<S>,
    f: &'a [S],
    g: &'a Matrix<S>,
    h: &'a [S],
    tol_primal: S,
    tol_dual: S,
}

/// Precomputed reduction for positive definite `H`:
/// `x = x0 - H⁻¹ G_Sᵀ u`, `(G H⁻¹ Gᵀ)_SS u = (G x0 - h)_S`.
struct Schur<S> {
    x0: Vec<S>,
    hinv_gt: Matrix<S>,
    gram: Matrix<S>,
    resid0: Vec<S>,
}

impl<S: Scalar> Schur<S> {
    fn new(pb: &Problem<'_, S>, chol: &Cholesky<S>) -> Self {
        let neg_f: Vec<S> = pb.f.iter().map(|&v| -v).collect();
        let x0 = chol.solve(&neg_f);
        let (m, n) = (pb.g.rows(), pb.g.cols());
        let mut hinv_gt = Matrix::zeros(n, m);
        for i in 0..m {
            let col = chol.solve(pb.g.row(i));
            for j in 0..n {
                hinv_gt[(j, i)] = col[j];
            }
        }
        let gram = pb.g.matmul(&hinv_gt);
        let resid0 = (0..m).map(|i| dot(pb.g.row(i), &x0) - pb.h[i]).collect();
        Self { x0, hinv_gt, gram, resid0 }
    }

    fn try_set(&self, pb: &Problem<'_, S>, set: &[usize]) -> Option<Option<QpSolution<S>>> {
        let k = set.len();
        let m = pb.g.rows();
        let u_set = if k == 0 {
            Vec::new()
        } else {
            let mut sys = Matrix::zeros(k, k);
            for (a, &i) in set.iter().enumerate() {
                for (b, &j) in set.iter().enumerate() {
                    sys[(a, b)] = self.gram[(i, j)];
                }
            }
            let rhs: Vec<S> = set.iter().map(|&i| self.resid0[i]).collect();
            Lu::new(&sys)?.solve(&rhs)
        };
        if u_set.iter().any(|&u| u < -pb.tol_dual) {
            return Some(None);
        }
        for i in 0..m {
            if set.contains(&i) {
                continue;
            }
            let mut r = self.resid0[i];
            for (a, &j) in set.iter().enumerate() {
                r -= self.gram[(i, j)] * u_set[a];
            }
            if r > pb.tol_primal {
                return Some(None);
            }
        }
        let mut x = self.x0.clone();
        let mut multipliers = vec![S::zero(); m];
        for (a, &j) in set.iter().enumerate() {
            axpy(-u_set[a], &self.hinv_gt.column(j), &mut x);
            multipliers[j] = u_set[a].max(S::zero());
        }
        let mut active = set.to_vec();
        active.sort_unstable();
        Some(Some(QpSolution { x, active, multipliers }))
    }
}

/// Full KKT solve for semidefinite `H`.
fn try_set_kkt<S: Scalar>(pb: &Problem<'_, S>, set: &[usize]) -> Option<Option<QpSolution<S>>> {
    let n = pb.g.cols();
    let m = pb.g.rows();
    let k = set.len();
    let mut sys = Matrix::zeros(n + k, n + k);
    let mut rhs = vec![S::zero(); n + k];
    for i in 0..n {
        for j in 0..n {
            sys[(i, j)] = pb.h_mat[(i, j)];
        }
        rhs[i] = -pb.f[i];
    }
    for (a, &r) in set.iter().enumerate() {
        for j in 0..n {
            sys[(n + a, j)] = pb.g[(r, j)];
            sys[(j, n + a)] = pb.g[(r, j)];
        }
        rhs[n + a] = pb.h[r];
    }
    let sol = Lu::new(&sys)?.solve(&rhs);
    let (x, u_set) = sol.split_at(n);
    if u_set.iter().any(|&u| u < -pb.tol_dual) {
        return Some(None);
    }
    if (0..m).any(|i| !set.contains(&i) && dot(pb.g.row(i), x) - pb.h[i] > pb.tol_primal) {
        return Some(None);
    }
    let mut multipliers = vec![S::zero(); m];
    for (a, &j) in set.iter().enumerate() {
        multipliers[j] = u_set[a].max(S::zero());
    }
    let mut active = set.to_vec();
    active.sort_unstable();
    Some(Some(QpSolution { x: x.to_vec(), active, multipliers }))
}

/// Solves a convex QP by active-set enumeration.
///
/// With positive definite `H` the KKT point is unique and the first valid
/// active set is returned. With semidefinite `H` the first KKT point found
/// (smallest active set first) is returned; any KKT point is optimal.
pub fn solve_enumerated<S: Scalar>(
    h_mat: &Matrix<S>,
    f: &[S],
    g: &Matrix<S>,
    h: &[S],
    opts: &EnumOptions,
) -> Result<(QpSolution<S>, EnumStats)> {
    let n = g.cols();
    let m = g.rows();
    let scale = S::one()
        + h.iter().chain(f).fold(S::zero(), |a, v| a.max(v.abs()));
    let pb = Problem { h_mat, f, g, h, tol_primal: S::kkt_tol() * scale, tol_dual: S::kkt_tol() * scale };
    let schur = Cholesky::new(h_mat).map(|c| Schur::new(&pb, &c));
    let try_set = |set: &[usize]| match &schur {
        Some(s) => s.try_set(&pb, set),
        None => try_set_kkt(&pb, set),
    };

    let mut stats = EnumStats::default();
    if !opts.exhaustive {
        if let Some(hint) = &opts.hint {
            stats.visited += 1;
            match try_set(hint) {
                Some(Some(sol)) => return Ok((sol, stats)),
                Some(None) => {}
                None => stats.singular += 1,
            }
        }
    }

    let order: Vec<usize> = opts.order.clone().unwrap_or_else(|| (0..m).collect());
    if order.len() != m {
        return Err(ImopError::DimensionMismatch(format!("row order of length {} for {m} rows", order.len())));
    }
    let mut found: Option<QpSolution<S>> = None;
    let mut conflict: Option<S> = None;
    let mut set = Vec::with_capacity(n);
    for k in 0..=n.min(m) {
        for_each_combination(m, k, |labels| {
            set.clear();
            set.extend(labels.iter().map(|&i| order[i]));
            stats.visited += 1;
            match try_set(&set) {
                None => stats.singular += 1,
                Some(None) => {}
                Some(Some(sol)) => match &found {
                    None => {
                        found = Some(sol);
                        return opts.exhaustive;
                    }
                    Some(first) => {
                        let gap = first.x.iter().zip(&sol.x).fold(S::zero(), |a, (p, q)| a.max((*p - *q).abs()));
                        if gap > S::kkt_tol() * scale {
                            conflict = Some(conflict.map_or(gap, |c| c.max(gap)));
                        }
                    }
                },
            }
            true
        });
        if found.is_some() && !opts.exhaustive {
            break;
        }
    }
    if let Some(gap) = conflict {
        return Err(ImopError::NoKktPoint(format!("distinct minimizers differ by {gap}; objective not strongly convex")));
    }
    match found {
        Some(sol) => Ok((sol, stats)),
        None if stats.singular == stats.visited => Err(ImopError::SingularKktSystem),
        None => Err(ImopError::NoKktPoint(format!("{} active sets tried", stats.visited))),
    }
}

/// Outcome of [`solve_dual`].
#[derive(Debug, Clone, PartialEq)]
pub enum DualOutcome<S> {
    Optimal(QpSolution<S>),
    Infeasible,
}

/// Goldfarb–Idnani dual active-set method for positive definite `H`.
pub fn solve_dual<S: Scalar>(h_mat: &Matrix<S>, f: &[S], c: &Matrix<S>, d: &[S]) -> Result<DualOutcome<S>> {
    let dim = f.len();
    let m = c.rows();
    let chol = Cholesky::new(h_mat).ok_or_else(|| ImopError::InvalidInput("dual QP needs a positive definite Hessian".into()))?;
    let hinv = chol.inverse();
    let neg_f: Vec<S> = f.iter().map(|&v| -v).collect();
    let mut x = chol.solve(&neg_f);

    let euclid: Vec<S> = (0..m).map(|i| crate::linalg::norm(c.row(i))).collect();
    let tol0: Vec<S> = d.iter().map(|v| S::kkt_tol() * S::lit(1e-2) * (S::one() + v.abs())).collect();
    // Rows that are zero up to round-off read `0 ≤ d_j`.
    let negligible = S::pivot_tol() * euclid.iter().fold(S::one(), |a, &b| a.max(b));
    let mut skip = vec![false; m];
    for j in 0..m {
        if euclid[j] <= negligible {
            if d[j] < -tol0[j] {
                return Ok(DualOutcome::Infeasible);
            }
            skip[j] = true;
        }
    }
    // Rows rescaled to unit H⁻¹-norm, so `Nᵀ H⁻¹ N` has a unit diagonal.
    let scale: Vec<S> = (0..m)
        .map(|j| if skip[j] { S::one() } else { dot(c.row(j), &hinv.matvec(c.row(j))).sqrt() })
        .collect();
    let mut c_scaled = c.clone();
    for j in 0..m {
        for v in c_scaled.row_mut(j) {
            *v /= scale[j];
        }
    }
    let c = &c_scaled;
    let d: Vec<S> = (0..m).map(|j| d[j] / scale[j]).collect();
    let tol: Vec<S> = (0..m).map(|j| tol0[j] / scale[j]).collect();
    let row_norm: Vec<S> = (0..m).map(|j| euclid[j] / scale[j]).collect();
    // Hinv n_j for each row, with n_j = -C_jᵀ (constraints written as n_jᵀx ≥ -d_j).
    let hinv_n: Vec<Vec<S>> = (0..m).map(|i| hinv.matvec(c.row(i)).into_iter().map(|v| -v).collect()).collect();

    let mut active: Vec<usize> = Vec::with_capacity(dim);
    let mut u: Vec<S> = Vec::with_capacity(dim);
    let slack = |x: &[S], j: usize| d[j] - dot(c.row(j), x);
    let max_iter = 50 * (m + dim) + 100;
    // relative curvature below which n_p counts as a combination of the
    // active normals; round-off in the curvature grows like eps / dep_tol
    let dep_tol = S::pivot_tol().sqrt();
    let mut iter = 0;

    loop {
        // most violated constraint, scaled by row norm
        let mut p = None;
        let mut worst = S::zero();
        for j in 0..m {
            if skip[j] || active.contains(&j) {
                continue;
            }
            let s = slack(&x, j);
            if s < -tol[j] {
                let v = s / row_norm[j];
                if v < worst {
                    worst = v;
                    p = Some(j);
                }
            }
        }
        let Some(p) = p else {
            let mut multipliers = vec![S::zero(); m];
            for (&j, &uj) in active.iter().zip(&u) {
                multipliers[j] = uj.max(S::zero()) / scale[j];
            }
            let mut act = active.clone();
            act.sort_unstable();
            return Ok(DualOutcome::Optimal(QpSolution { x, active: act, multipliers }));
        };
        let mut u_p = S::zero();
        loop {
            iter += 1;
            if iter > max_iter {
                return Err(ImopError::NoKktPoint("dual active-set iteration limit".into()));
            }
            let n_p: Vec<S> = c.row(p).iter().map(|&v| -v).collect();
            let v = &hinv_n[p];
            let k = active.len();
            let (z, r) = if k == 0 {
                (v.clone(), Vec::new())
            } else {
                // M = Nᵀ H⁻¹ N, r = M⁻¹ Nᵀ H⁻¹ n_p, z = H⁻¹ n_p - H⁻¹ N r
                let mut mm = Matrix::zeros(k, k);
                for a in 0..k {
                    for b in 0..k {
                        mm[(a, b)] = -dot(c.row(active[a]), &hinv_n[active[b]]);
                    }
                }
                let rhs: Vec<S> = active.iter().map(|&j| -dot(c.row(j), v)).collect();
                let lu = Lu::new(&mm).ok_or_else(|| ImopError::NoKktPoint("dependent active normals in dual QP".into()))?;
                let r = lu.solve(&rhs);
                let mut z = v.clone();
                for (a, &j) in active.iter().enumerate() {
                    axpy(-r[a], &hinv_n[j], &mut z);
                }
                (z, r)
            };
            let mut t1 = S::infinity();
            let mut drop = None;
            for a in 0..k {
                if r[a] > S::zero() {
                    let ratio = u[a] / r[a];
                    if ratio < t1 {
                        t1 = ratio;
                        drop = Some(a);
                    }
                }
            }
            let curvature = dot(&z, &n_p);
            let full = dot(v, &n_p);
            if curvature <= dep_tol * full {
                // n_p depends on the active normals: only a dual step is possible
                let Some(l) = drop else {
                    return Ok(DualOutcome::Infeasible);
                };
                for a in 0..k {
                    u[a] -= t1 * r[a];
                }
                u_p += t1;
                active.remove(l);
                u.remove(l);
                continue;
            }
            let s_p = slack(&x, p);
            let t2 = -s_p / curvature;
            let t = t1.min(t2);
            axpy(t, &z, &mut x);
            for a in 0..k {
                u[a] -= t * r[a];
            }
            u_p += t;
            if t2 <= t1 {
                active.push(p);
                u.push(u_p);
                break;
            }
            let l = drop.expect("finite partial step has a blocking constraint");
            active.remove(l);
            u.remove(l);
        }
    }
}
