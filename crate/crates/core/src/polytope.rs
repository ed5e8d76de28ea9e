//! Vertex enumeration for small polyhedra `{x : G x ≤ h, E x = e}`.
//!
//! Every region handled here contains the nonnegativity rows, so it is
//! pointed: it is nonempty iff it has a vertex, and a bounded one is the
//! convex hull of its vertices.

use crate::linalg::{dot, for_each_combination, Lu, Matrix};
use crate::Scalar;

/// Calls `f` on each vertex until it returns `false`. Duplicates are
/// possible at degenerate vertices.
pub fn for_each_vertex<S: Scalar>(
    g: &Matrix<S>,
    h: &[S],
    eq: Option<(&Matrix<S>, &[S])>,
    mut f: impl FnMut(&[S]) -> bool,
) {
    let n = g.cols();
    let m = g.rows();
    let n_eq = eq.map_or(0, |(e, _)| e.rows());
    if n_eq > n {
        return;
    }
    let k = n - n_eq;
    let tol = S::kkt_tol();
    let mut sys = Matrix::zeros(n, n);
    let mut rhs = vec![S::zero(); n];
    if let Some((e, ev)) = eq {
        for r in 0..n_eq {
            sys.row_mut(k + r).copy_from_slice(e.row(r));
            rhs[k + r] = ev[r];
        }
    }
    for_each_combination(m, k, |rows| {
        for (r, &i) in rows.iter().enumerate() {
            sys.row_mut(r).copy_from_slice(g.row(i));
            rhs[r] = h[i];
        }
        let Some(lu) = Lu::new(&sys) else {
            return true;
        };
        let v = lu.solve(&rhs);
        let scale = S::one() + v.iter().fold(S::zero(), |a, x| a.max(x.abs()));
        let feasible = (0..m).all(|i| dot(g.row(i), &v) <= h[i] + tol * scale);
        if feasible {
            f(&v)
        } else {
            true
        }
    });
}

pub fn has_vertex<S: Scalar>(g: &Matrix<S>, h: &[S], eq: Option<(&Matrix<S>, &[S])>) -> bool {
    let mut found = false;
    for_each_vertex(g, h, eq, |_| {
        found = true;
        false
    });
    found
}

/// True iff `{d : G d ≤ 0}` is `{0}` given that `G` contains `-I`.
pub fn recession_cone_trivial<S: Scalar>(g: &Matrix<S>) -> bool {
    let n = g.cols();
    let ones = Matrix::from_vec(1, n, vec![S::one(); n]);
    let zeros = vec![S::zero(); g.rows()];
    !has_vertex(g, &zeros, Some((&ones, &[S::one()])))
}

/// Per-coordinate maxima and the largest Euclidean norm over the vertices
/// of a bounded region; `None` if the region is empty.
pub fn vertex_bounds<S: Scalar>(g: &Matrix<S>, h: &[S]) -> Option<(Vec<S>, S)> {
    let n = g.cols();
    let mut upper = vec![S::neg_infinity(); n];
    let mut radius = S::zero();
    let mut any = false;
    for_each_vertex(g, h, None, |v| {
        any = true;
        for (u, &x) in upper.iter_mut().zip(v) {
            *u = u.max(x);
        }
        radius = radius.max(crate::linalg::norm(v));
        true
    });
    any.then_some((upper, radius))
}
