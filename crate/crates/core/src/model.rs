//! Parametrized multiobjective quadratic programs.
//!
//! An instance is
//!
//! ```text
//!     min  { ½ xᵀ Q_l x + c_lᵀ x }_{l = 1..p}
//!     s.t. A x ≤ b,  x ≥ 0
//! ```
//!
//! with one block of data (the stacked linear terms or the right-hand side)
//! treated as the unknown parameter θ, restricted to a coordinate box Θ.

use serde::{Deserialize, Serialize};

use crate::error::{ImopError, Result};
use crate::linalg::{dot, norm, symmetric_eigenvalues, Matrix};
use crate::polytope;
use crate::Scalar;

/// Largest `q + n` accepted; the exact solvers enumerate subsets of the
/// inequality rows.
pub const MAX_INEQUALITIES: usize = 16;

/// Which part of the instance θ stands for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ParamBlock<S> {
    /// Stacked linear terms `(c_1, …, c_p)` (length `n·p`, objective-major)
    /// equal `map θ + offset`. The plain case is `map = I`, `offset = 0`.
    ObjectiveLinear { map: Matrix<S>, offset: Vec<S> },
    /// The right-hand side: `b = θ`.
    Rhs,
}

impl<S> ParamBlock<S> {
    pub fn name(&self) -> &'static str {
        match self {
            Self::ObjectiveLinear { .. } => "objective_linear",
            Self::Rhs => "rhs",
        }
    }
}

/// The unknown parameter block and its box-shaped hypothesis set Θ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec<S> {
    block: ParamBlock<S>,
    lower: Vec<S>,
    upper: Vec<S>,
    diameter: S,
}

impl<S: Scalar> ParamSpec<S> {
    fn new(block: ParamBlock<S>, lower: Vec<S>, upper: Vec<S>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(ImopError::DimensionMismatch(format!(
                "box bounds of length {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        if let Some(i) = (0..lower.len()).find(|&i| !(lower[i] <= upper[i])) {
            return Err(ImopError::InvalidParameter(format!(
                "empty hypothesis box at coordinate {i}: [{}, {}]",
                lower[i], upper[i]
            )));
        }
        let far: Vec<S> = lower.iter().zip(&upper).map(|(l, u)| l.abs().max(u.abs())).collect();
        let diameter = norm(&far);
        Ok(Self { block, lower, upper, diameter })
    }

    /// θ is the stacked `(c_1, …, c_p)` itself.
    pub fn objective_linear(n: usize, p: usize, lower: Vec<S>, upper: Vec<S>) -> Result<Self> {
        if lower.len() != n * p {
            return Err(ImopError::DimensionMismatch(format!(
                "objective block needs {} bounds, got {}",
                n * p,
                lower.len()
            )));
        }
        Self::new(
            ParamBlock::ObjectiveLinear { map: Matrix::identity(n * p), offset: vec![S::zero(); n * p] },
            lower,
            upper,
        )
    }

    /// Stacked linear terms `map θ + offset`, for partially known or
    /// rescaled objective data.
    pub fn objective_affine(map: Matrix<S>, offset: Vec<S>, lower: Vec<S>, upper: Vec<S>) -> Result<Self> {
        if map.rows() != offset.len() || map.cols() != lower.len() {
            return Err(ImopError::DimensionMismatch(format!(
                "affine map {}x{} with offset {} and {} bounds",
                map.rows(),
                map.cols(),
                offset.len(),
                lower.len()
            )));
        }
        Self::new(ParamBlock::ObjectiveLinear { map, offset }, lower, upper)
    }

    pub fn rhs(lower: Vec<S>, upper: Vec<S>) -> Result<Self> {
        Self::new(ParamBlock::Rhs, lower, upper)
    }

    pub fn block(&self) -> &ParamBlock<S> {
        &self.block
    }

    pub fn lower(&self) -> &[S] {
        &self.lower
    }

    pub fn upper(&self) -> &[S] {
        &self.upper
    }

    /// `D`: a bound on ‖θ‖ over Θ.
    pub fn diameter(&self) -> S {
        self.diameter
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// Membership with a `1e-9`-scaled box tolerance.
    pub fn check(&self, theta: &[S]) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(ImopError::DimensionMismatch(format!(
                "parameter of length {} for a block of dimension {}",
                theta.len(),
                self.dim()
            )));
        }
        let tol = S::sym_tol();
        for (i, &v) in theta.iter().enumerate() {
            let (lo, hi) = (self.lower[i], self.upper[i]);
            let slack = tol * (S::one() + lo.abs().max(hi.abs()));
            if !(v >= lo - slack && v <= hi + slack) {
                return Err(ImopError::OutOfHypothesisSet {
                    index: i,
                    value: v.to_f64_lossy(),
                    lower: lo.to_f64_lossy(),
                    upper: hi.to_f64_lossy(),
                });
            }
        }
        Ok(())
    }

    /// Euclidean projection onto Θ.
    pub fn project(&self, theta: &[S]) -> Vec<S> {
        theta.iter().zip(self.lower.iter().zip(&self.upper)).map(|(&v, (&l, &u))| v.max(l).min(u)).collect()
    }
}

/// Raw data for [`build_instance`].
#[derive(Debug, Clone)]
pub struct RawInstance<S> {
    /// `(Q_l, c_l)` per objective.
    pub objectives: Vec<(Matrix<S>, Vec<S>)>,
    pub a: Matrix<S>,
    pub b: Vec<S>,
    /// Require every `Q_l` to be positive definite.
    pub strongly_convex: bool,
}

/// A validated multiobjective QP together with its parameter block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MopInstance<S> {
    quad: Vec<Matrix<S>>,
    lin: Vec<Vec<S>>,
    a: Matrix<S>,
    b: Vec<S>,
    /// `[A; -I]`
    g: Matrix<S>,
    param: ParamSpec<S>,
    bound: S,
    coord_upper: Vec<S>,
    lambda: S,
    strongly_convex: bool,
}

/// Validates raw data and records the region bound `B`, the strong
/// convexity modulus `λ` and the parameter bound `D`.
pub fn build_instance<S: Scalar>(raw: RawInstance<S>, param: ParamSpec<S>) -> Result<MopInstance<S>> {
    let p = raw.objectives.len();
    if p < 2 {
        return Err(ImopError::DimensionMismatch(format!("need at least 2 objectives, got {p}")));
    }
    let n = raw.a.cols();
    let q = raw.a.rows();
    if n == 0 {
        return Err(ImopError::DimensionMismatch("zero decision dimension".into()));
    }
    if raw.b.len() != q {
        return Err(ImopError::DimensionMismatch(format!("A has {q} rows but b has length {}", raw.b.len())));
    }
    for (l, (qm, c)) in raw.objectives.iter().enumerate() {
        if qm.rows() != n || qm.cols() != n || c.len() != n {
            return Err(ImopError::DimensionMismatch(format!(
                "objective {l}: Q is {}x{}, c has length {}, expected n = {n}",
                qm.rows(),
                qm.cols(),
                c.len()
            )));
        }
    }
    if q + n > MAX_INEQUALITIES {
        return Err(ImopError::TooManyConstraints { count: q + n, limit: MAX_INEQUALITIES });
    }

    let tol = S::sym_tol();
    let mut lambda = S::infinity();
    for (l, (qm, _)) in raw.objectives.iter().enumerate() {
        let scale = S::one().max(qm.max_abs());
        if !qm.is_symmetric(tol * scale) {
            return Err(ImopError::NotPsd { index: l, min_eigenvalue: f64::NAN });
        }
        let min_ev = symmetric_eigenvalues(qm)[0];
        if min_ev < -tol * scale {
            return Err(ImopError::NotPsd { index: l, min_eigenvalue: min_ev.to_f64_lossy() });
        }
        lambda = lambda.min(min_ev);
    }
    let lambda = lambda.max(S::zero());
    if raw.strongly_convex && !(lambda > tol) {
        return Err(ImopError::NotStronglyConvex(lambda.to_f64_lossy()));
    }

    match param.block() {
        ParamBlock::ObjectiveLinear { map, .. } if map.rows() != n * p => {
            return Err(ImopError::DimensionMismatch(format!(
                "objective block maps to {} entries, instance has n·p = {}",
                map.rows(),
                n * p
            )));
        }
        ParamBlock::Rhs if param.dim() != q => {
            return Err(ImopError::DimensionMismatch(format!(
                "right-hand-side block of dimension {} for q = {q}",
                param.dim()
            )));
        }
        _ => {}
    }

    let g = stack_nonnegativity(&raw.a);
    let h = stacked_rhs(&raw.b, n);
    if !polytope::has_vertex(&g, &h, None) {
        return Err(ImopError::InfeasibleRegion);
    }
    if !polytope::recession_cone_trivial(&g) {
        return Err(ImopError::UnboundedRegion);
    }
    // The region grows with b, so for a right-hand-side block the lower
    // corner of Θ is the smallest region and the upper corner the largest.
    let bound_rhs = match param.block() {
        ParamBlock::Rhs => {
            let lo = stacked_rhs(param.lower(), n);
            if !polytope::has_vertex(&g, &lo, None) {
                return Err(ImopError::InfeasibleCorner(param.lower().iter().map(|v| v.to_f64_lossy()).collect()));
            }
            stacked_rhs(param.upper(), n)
        }
        ParamBlock::ObjectiveLinear { .. } => h,
    };
    let (coord_upper, bound) = polytope::vertex_bounds(&g, &bound_rhs).ok_or(ImopError::InfeasibleRegion)?;

    let (quad, lin) = raw.objectives.into_iter().unzip();
    Ok(MopInstance {
        quad,
        lin,
        a: raw.a,
        b: raw.b,
        g,
        param,
        bound,
        coord_upper,
        lambda,
        strongly_convex: raw.strongly_convex,
    })
}

fn stack_nonnegativity<S: Scalar>(a: &Matrix<S>) -> Matrix<S> {
    let (q, n) = (a.rows(), a.cols());
    let mut g = Matrix::zeros(q + n, n);
    for i in 0..q {
        g.row_mut(i).copy_from_slice(a.row(i));
    }
    for j in 0..n {
        g[(q + j, j)] = -S::one();
    }
    g
}

fn stacked_rhs<S: Scalar>(b: &[S], n: usize) -> Vec<S> {
    let mut h = b.to_vec();
    h.extend(std::iter::repeat_n(S::zero(), n));
    h
}

impl<S: Scalar> MopInstance<S> {
    /// Number of objectives.
    pub fn p(&self) -> usize {
        self.quad.len()
    }

    /// Decision dimension.
    pub fn n(&self) -> usize {
        self.a.cols()
    }

    /// Number of general inequality rows.
    pub fn q(&self) -> usize {
        self.a.rows()
    }

    /// Total inequality rows including `x ≥ 0`.
    pub fn m(&self) -> usize {
        self.q() + self.n()
    }

    pub fn quad(&self, l: usize) -> &Matrix<S> {
        &self.quad[l]
    }

    pub fn lin(&self, l: usize) -> &[S] {
        &self.lin[l]
    }

    pub fn a(&self) -> &Matrix<S> {
        &self.a
    }

    pub fn b(&self) -> &[S] {
        &self.b
    }

    /// All inequality rows `[A; -I]`.
    pub fn g(&self) -> &Matrix<S> {
        &self.g
    }

    /// Right-hand side `[b; 0]` matching [`Self::g`].
    pub fn h(&self) -> Vec<S> {
        stacked_rhs(&self.b, self.n())
    }

    pub fn param(&self) -> &ParamSpec<S> {
        &self.param
    }

    /// `B`: bound on ‖x‖ over the region for every θ ∈ Θ.
    pub fn bound(&self) -> S {
        self.bound
    }

    /// Per-coordinate upper bounds of the region (over Θ for a
    /// right-hand-side block).
    pub fn coord_upper(&self) -> &[S] {
        &self.coord_upper
    }

    /// `λ`: smallest eigenvalue over all `Q_l` (zero when only PSD).
    pub fn lambda(&self) -> S {
        self.lambda
    }

    pub fn strongly_convex(&self) -> bool {
        self.strongly_convex
    }

    /// Replaces the parameter block with θ. Pure: `self` is untouched.
    pub fn substitute(&self, theta: &[S]) -> Result<Self> {
        self.param.check(theta)?;
        let mut out = self.clone();
        match &self.param.block {
            ParamBlock::ObjectiveLinear { map, offset } => {
                let stacked = map.matvec(theta);
                let n = self.n();
                for (l, c) in out.lin.iter_mut().enumerate() {
                    for j in 0..n {
                        c[j] = stacked[l * n + j] + offset[l * n + j];
                    }
                }
            }
            ParamBlock::Rhs => out.b.copy_from_slice(theta),
        }
        Ok(out)
    }

    /// `(f_1(x), …, f_p(x))`
    pub fn objective_values(&self, x: &[S]) -> Vec<S> {
        let half = S::lit(0.5);
        self.quad
            .iter()
            .zip(&self.lin)
            .map(|(qm, c)| half * dot(x, &qm.matvec(x)) + dot(c, x))
            .collect()
    }

    /// Largest violation of `A x ≤ b, x ≥ 0` (zero when feasible).
    pub fn max_violation(&self, x: &[S]) -> S {
        let h = self.h();
        (0..self.m()).fold(S::zero(), |acc, i| acc.max(dot(self.g.row(i), x) - h[i]))
    }

    pub fn is_feasible(&self, x: &[S], tol: S) -> bool {
        self.max_violation(x) <= tol
    }
}

/// One received (possibly noisy, possibly infeasible) decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation<S> {
    pub t: usize,
    pub y: Vec<S>,
}

impl<S: Scalar> Observation<S> {
    pub fn new(t: usize, y: Vec<S>) -> Self {
        Self { t, y }
    }
}

/// Rounds whose observation lies outside the ball of radius `radius`.
/// Such observations are kept; the count is only reported.
pub fn radius_violations<S: Scalar>(observations: &[Observation<S>], radius: S) -> Vec<usize> {
    observations.iter().filter(|o| norm(&o.y) > radius).map(|o| o.t).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn mqp_raw() -> RawInstance<f64> {
        RawInstance {
            objectives: vec![
                (Matrix::diag(&[1.0, 2.0]), vec![3.0, 1.0]),
                (Matrix::diag(&[2.0, 1.0]), vec![-6.0, -5.0]),
            ],
            a: Matrix::from_rows(&[vec![3.0, -1.0], vec![0.0, 1.0]]).unwrap(),
            b: vec![6.0, 3.0],
            strongly_convex: true,
        }
    }

    fn c_spec() -> ParamSpec<f64> {
        ParamSpec::objective_linear(2, 2, vec![1.0, 1.0, -6.0, -6.0], vec![6.0, 6.0, -1.0, -1.0]).unwrap()
    }

    #[test]
    fn builds_reference_instance() {
        let inst = build_instance(mqp_raw(), c_spec()).unwrap();
        assert_eq!((inst.p(), inst.n(), inst.q()), (2, 2, 2));
        assert!((inst.lambda() - 1.0).abs() < 1e-12);
        assert!((inst.bound() - 18f64.sqrt()).abs() < 1e-12);
        let d = (36.0f64 * 4.0).sqrt();
        assert!((inst.param().diameter() - d).abs() < 1e-12);
    }

    #[test]
    fn rejects_infeasible_and_indefinite() {
        let mut raw = mqp_raw();
        raw.a = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        raw.b = vec![-1.0];
        let spec = ParamSpec::rhs(vec![-1.0], vec![1.0]).unwrap();
        assert!(matches!(build_instance(raw, spec), Err(ImopError::InfeasibleRegion)));

        let mut raw = mqp_raw();
        raw.objectives[0].0 = Matrix::diag(&[1.0, -0.5]);
        assert!(matches!(build_instance(raw, c_spec()), Err(ImopError::NotPsd { index: 0, .. })));
    }

    #[test]
    fn rejects_unbounded_and_oversized() {
        let mut raw = mqp_raw();
        raw.a = Matrix::from_rows(&[vec![1.0, -1.0], vec![0.0, 0.0]]).unwrap();
        assert!(matches!(build_instance(raw, c_spec()), Err(ImopError::UnboundedRegion)));

        let mut raw = mqp_raw();
        raw.a = Matrix::zeros(15, 2);
        raw.b = vec![1.0; 15];
        assert!(matches!(build_instance(raw, c_spec()), Err(ImopError::TooManyConstraints { .. })));
    }

    #[test]
    fn rhs_box_must_keep_region_nonempty() {
        let spec = ParamSpec::rhs(vec![-10.0, -10.0], vec![10.0, 10.0]).unwrap();
        assert!(matches!(build_instance(mqp_raw(), spec), Err(ImopError::InfeasibleCorner(_))));
        let spec = ParamSpec::rhs(vec![0.0, 0.0], vec![10.0, 10.0]).unwrap();
        let inst = build_instance(mqp_raw(), spec).unwrap();
        // largest region at b = (10, 10): vertex (20/3, 10)
        let expect = ((20.0f64 / 3.0).powi(2) + 100.0).sqrt();
        assert!((inst.bound() - expect).abs() < 1e-9);
    }

    #[test]
    fn substitute_objective_and_rhs() {
        let inst = build_instance(mqp_raw(), c_spec()).unwrap();
        let same = inst.substitute(&[3.0, 1.0, -6.0, -5.0]).unwrap();
        assert_eq!(same, inst);
        let moved = inst.substitute(&[2.0, 2.0, -2.0, -2.0]).unwrap();
        assert_eq!(moved.lin(1), &[-2.0, -2.0]);
        assert_eq!(inst.lin(1), &[-6.0, -5.0]);
        assert!(matches!(inst.substitute(&[7.0, 1.0, -6.0, -5.0]), Err(ImopError::OutOfHypothesisSet { index: 0, .. })));
        assert!(matches!(inst.substitute(&[1.0]), Err(ImopError::DimensionMismatch(_))));

        let spec = ParamSpec::rhs(vec![0.0, 0.0], vec![10.0, 10.0]).unwrap();
        let inst = build_instance(mqp_raw(), spec).unwrap();
        assert_eq!(inst.substitute(&[6.0, 3.0]).unwrap().b(), &[6.0, 3.0]);
    }

    #[test]
    fn strong_convexity_claim_checked() {
        let mut raw = mqp_raw();
        raw.objectives[0].0 = Matrix::diag(&[1.0, 0.0]);
        assert!(matches!(build_instance(raw.clone(), c_spec()), Err(ImopError::NotStronglyConvex(_))));
        raw.strongly_convex = false;
        assert_eq!(build_instance(raw, c_spec()).unwrap().lambda(), 0.0);
    }
}
