//! Single-level big-M model of one update, written in a small line-oriented
//! text format.
//!
//! For every weight `k` the lower-level KKT conditions of
//! `min w_kᵀf s.t. Ax ≤ b, x ≥ 0` are written with `G = [A; -I]`:
//!
//! ```text
//!     A x_k ≤ b                              q rows
//!     u_k ≤ M t_k                            q + n rows
//!     h - G x_k ≤ M (1 - t_k)                q + n rows
//!     Q(w_k) x_k + c(w_k) + Gᵀ u_k = 0       n rows
//!     ϑ_k ≤ M z_k                            n rows
//!     x_k - M (1 - z_k) ≤ ϑ_k                n rows
//!     ϑ_k ≤ x_k                              n rows
//! ```
//!
//! plus `Σ_k z_k = 1`, so a model has `1 + K (3q + 6n)` constraints.
//! `x_k ≥ 0`, `u_k ≥ 0` and `ϑ_k ≥ 0` are variable bounds. The objective is
//! `½‖θ - θ_t‖² + η Σ_k ‖y - ϑ_k‖²`.
//!
//! Grammar (one item per line, `#` starts a comment line):
//!
//! ```text
//!     VARS
//!     <name> <cont|bin> <lower> <upper>
//!     OBJ
//!     Q <var> <var> <coef>        coef · var · var
//!     L <var> <coef>
//!     C <coef>
//!     CONS
//!     <name> <<=|>=|=> <rhs> : <coef> <var> [<coef> <var> ...]
//!     END
//! ```
//!
//! Numbers carry 12 significant digits; `inf` and `-inf` are allowed for
//! bounds.

use std::fmt::Write as _;

use crate::error::{ImopError, Result};
use crate::linalg::norm;
use crate::model::{MopInstance, ParamBlock};
use crate::scalarize::{scalarized_hessian, scalarized_linear, WeightGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Var {
    pub name: String,
    pub kind: VarKind,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

impl Sense {
    fn as_str(self) -> &'static str {
        match self {
            Sense::Le => "<=",
            Sense::Ge => ">=",
            Sense::Eq => "=",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub name: String,
    pub terms: Vec<(f64, String)>,
    pub sense: Sense,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Objective {
    pub quadratic: Vec<(String, String, f64)>,
    pub linear: Vec<(String, f64)>,
    pub constant: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelText {
    pub comments: Vec<String>,
    pub vars: Vec<Var>,
    pub objective: Objective,
    pub constraints: Vec<Constraint>,
}

/// `1 + K (3q + 6n)`.
pub fn expected_constraint_count(k: usize, q: usize, n: usize) -> usize {
    1 + k * (3 * q + 6 * n)
}

/// Formats with 12 significant digits, trimming trailing zeros.
pub fn fmt_num(v: f64) -> String {
    if v == f64::INFINITY {
        return "inf".into();
    }
    if v == f64::NEG_INFINITY {
        return "-inf".into();
    }
    if v == 0.0 {
        return "0".into();
    }
    let s = format!("{v:.11e}");
    let (mant, exp) = s.split_once('e').expect("exponent present");
    let mant = if mant.contains('.') { mant.trim_end_matches('0').trim_end_matches('.') } else { mant };
    if exp == "0" {
        mant.to_string()
    } else {
        format!("{mant}e{exp}")
    }
}

fn parse_num(s: &str, line: usize) -> Result<f64> {
    match s {
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => s.parse().map_err(|_| ImopError::Parse { line, message: format!("bad number {s:?}") }),
    }
}

impl ModelText {
    pub fn binary_count(&self) -> usize {
        self.vars.iter().filter(|v| v.kind == VarKind::Binary).count()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for c in &self.comments {
            let _ = writeln!(s, "# {c}");
        }
        s.push_str("VARS\n");
        for v in &self.vars {
            let kind = match v.kind {
                VarKind::Continuous => "cont",
                VarKind::Binary => "bin",
            };
            let _ = writeln!(s, "{} {kind} {} {}", v.name, fmt_num(v.lower), fmt_num(v.upper));
        }
        s.push_str("OBJ\n");
        for (a, b, c) in &self.objective.quadratic {
            let _ = writeln!(s, "Q {a} {b} {}", fmt_num(*c));
        }
        for (a, c) in &self.objective.linear {
            let _ = writeln!(s, "L {a} {}", fmt_num(*c));
        }
        let _ = writeln!(s, "C {}", fmt_num(self.objective.constant));
        s.push_str("CONS\n");
        for c in &self.constraints {
            let _ = write!(s, "{} {} {} :", c.name, c.sense.as_str(), fmt_num(c.rhs));
            for (coef, var) in &c.terms {
                let _ = write!(s, " {} {var}", fmt_num(*coef));
            }
            s.push('\n');
        }
        s.push_str("END\n");
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        #[derive(PartialEq)]
        enum Section {
            Start,
            Vars,
            Obj,
            Cons,
            End,
        }
        let mut model = ModelText::default();
        let mut section = Section::Start;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let bad = |message: String| ImopError::Parse { line, message };
            let l = raw.trim();
            if l.is_empty() {
                continue;
            }
            if let Some(c) = l.strip_prefix('#') {
                model.comments.push(c.trim().to_string());
                continue;
            }
            match l {
                "VARS" if section == Section::Start => section = Section::Vars,
                "OBJ" if section == Section::Vars => section = Section::Obj,
                "CONS" if section == Section::Obj => section = Section::Cons,
                "END" if section == Section::Cons => section = Section::End,
                "VARS" | "OBJ" | "CONS" | "END" => return Err(bad(format!("section {l} out of order"))),
                _ => {
                    let tok: Vec<&str> = l.split_whitespace().collect();
                    match section {
                        Section::Vars => {
                            let [name, kind, lo, hi] = tok[..] else {
                                return Err(bad("variable needs name, kind, lower, upper".into()));
                            };
                            let kind = match kind {
                                "cont" => VarKind::Continuous,
                                "bin" => VarKind::Binary,
                                other => return Err(bad(format!("unknown variable kind {other:?}"))),
                            };
                            model.vars.push(Var { name: name.into(), kind, lower: parse_num(lo, line)?, upper: parse_num(hi, line)? });
                        }
                        Section::Obj => match tok[..] {
                            ["Q", a, b, c] => model.objective.quadratic.push((a.into(), b.into(), parse_num(c, line)?)),
                            ["L", a, c] => model.objective.linear.push((a.into(), parse_num(c, line)?)),
                            ["C", c] => model.objective.constant = parse_num(c, line)?,
                            _ => return Err(bad(format!("bad objective term {l:?}"))),
                        },
                        Section::Cons => {
                            if tok.len() < 4 || tok[3] != ":" || (tok.len() - 4) % 2 != 0 {
                                return Err(bad(format!("bad constraint {l:?}")));
                            }
                            let sense = match tok[1] {
                                "<=" => Sense::Le,
                                ">=" => Sense::Ge,
                                "=" => Sense::Eq,
                                other => return Err(bad(format!("unknown sense {other:?}"))),
                            };
                            let terms = tok[4..]
                                .chunks(2)
                                .map(|p| Ok((parse_num(p[0], line)?, p[1].to_string())))
                                .collect::<Result<Vec<_>>>()?;
                            model.constraints.push(Constraint { name: tok[0].into(), terms, sense, rhs: parse_num(tok[2], line)? });
                        }
                        Section::Start | Section::End => return Err(bad(format!("content outside a section: {l:?}"))),
                    }
                }
            }
        }
        if section != Section::End {
            return Err(ImopError::Parse { line: text.lines().count(), message: "missing END".into() });
        }
        Ok(model)
    }
}

/// `10 · max(B, max_{corner θ, k} ‖Q(w_k)‖_F B + ‖c(w_k, θ)‖)`.
pub fn default_big_m(instance: &MopInstance<f64>, grid: &WeightGrid<f64>) -> f64 {
    let spec = instance.param();
    let b = instance.bound();
    let d = spec.dim();
    let corners = 1usize << d.min(20);
    let mut grad = 0.0f64;
    for mask in 0..corners {
        let theta: Vec<f64> = (0..d).map(|i| if mask >> i & 1 == 1 { spec.upper()[i] } else { spec.lower()[i] }).collect();
        for w in grid.iter() {
            let q = scalarized_hessian(instance, w.as_slice());
            let c = scalarized_linear(instance, Some(&theta), w.as_slice());
            grad = grad.max(q.frobenius_norm() * b + norm(&c));
        }
    }
    10.0 * b.max(grad)
}

/// Writes the single-level model of the update at `(θ_t, y, η)`.
pub fn export_single_level(
    instance: &MopInstance<f64>,
    theta_t: &[f64],
    y: &[f64],
    eta: f64,
    grid: &WeightGrid<f64>,
    big_m: f64,
) -> Result<ModelText> {
    if !(big_m > 0.0) {
        return Err(ImopError::InvalidParameter(format!("big-M must be positive, got {big_m}")));
    }
    if !(eta > 0.0) {
        return Err(ImopError::InvalidParameter(format!("learning rate must be positive, got {eta}")));
    }
    let spec = instance.param();
    spec.check(theta_t)?;
    let (n, q, m, d) = (instance.n(), instance.q(), instance.m(), spec.dim());
    if y.len() != n {
        return Err(ImopError::DimensionMismatch(format!("observation of length {} for n = {n}", y.len())));
    }
    let rhs_block = match spec.block() {
        ParamBlock::ObjectiveLinear { .. } => false,
        ParamBlock::Rhs => true,
    };
    let g = instance.g();
    let h = instance.h();
    let big = big_m;
    let mut model = ModelText {
        comments: vec![
            format!("block {}", spec.block().name()),
            format!("bigM {}", fmt_num(big)),
            format!("K {} q {q} n {n} constraints {}", grid.len(), expected_constraint_count(grid.len(), q, n)),
            "lower level: A x <= b, x >= 0; stationarity Q(w) x + c(w) + G^T u = 0 with G = [A; -I]".into(),
        ],
        ..Default::default()
    };
    let th = |i: usize| format!("theta_{i}");
    let xv = |k: usize, j: usize| format!("x_{k}_{j}");
    let uv = |k: usize, i: usize| format!("u_{k}_{i}");
    let tv = |k: usize, i: usize| format!("t_{k}_{i}");
    let zv = |k: usize| format!("z_{k}");
    let vv = |k: usize, j: usize| format!("v_{k}_{j}");
    let cont = |name: String, lower: f64, upper: f64| Var { name, kind: VarKind::Continuous, lower, upper };
    let bin = |name: String| Var { name, kind: VarKind::Binary, lower: 0.0, upper: 1.0 };

    for i in 0..d {
        model.vars.push(cont(th(i), spec.lower()[i], spec.upper()[i]));
    }
    for k in 0..grid.len() {
        for j in 0..n {
            model.vars.push(cont(xv(k, j), 0.0, f64::INFINITY));
        }
        for i in 0..m {
            model.vars.push(cont(uv(k, i), 0.0, f64::INFINITY));
        }
        for i in 0..m {
            model.vars.push(bin(tv(k, i)));
        }
        model.vars.push(bin(zv(k)));
        for j in 0..n {
            model.vars.push(cont(vv(k, j), 0.0, f64::INFINITY));
        }
    }

    let obj = &mut model.objective;
    for i in 0..d {
        obj.quadratic.push((th(i), th(i), 0.5));
        obj.linear.push((th(i), -theta_t[i]));
        obj.constant += 0.5 * theta_t[i] * theta_t[i];
    }
    for k in 0..grid.len() {
        for j in 0..n {
            obj.quadratic.push((vv(k, j), vv(k, j), eta));
            obj.linear.push((vv(k, j), -2.0 * eta * y[j]));
            obj.constant += eta * y[j] * y[j];
        }
    }

    let cons = &mut model.constraints;
    for (k, w) in grid.iter().enumerate() {
        let w = w.as_slice();
        // A x_k ≤ b (b = θ for a right-hand-side block)
        for i in 0..q {
            let mut terms: Vec<(f64, String)> = (0..n).filter(|&j| g[(i, j)] != 0.0).map(|j| (g[(i, j)], xv(k, j))).collect();
            let rhs = if rhs_block {
                terms.push((-1.0, th(i)));
                0.0
            } else {
                h[i]
            };
            cons.push(Constraint { name: format!("primal_{k}_{i}"), terms, sense: Sense::Le, rhs });
        }
        for i in 0..m {
            cons.push(Constraint {
                name: format!("mult_{k}_{i}"),
                terms: vec![(1.0, uv(k, i)), (-big, tv(k, i))],
                sense: Sense::Le,
                rhs: 0.0,
            });
        }
        // h_i - G_i x_k + M t_k ≤ M
        for i in 0..m {
            let mut terms: Vec<(f64, String)> = (0..n).filter(|&j| g[(i, j)] != 0.0).map(|j| (-g[(i, j)], xv(k, j))).collect();
            terms.push((big, tv(k, i)));
            let rhs = if rhs_block && i < q {
                terms.push((1.0, th(i)));
                big
            } else {
                big - h[i]
            };
            cons.push(Constraint { name: format!("slack_{k}_{i}"), terms, sense: Sense::Le, rhs });
        }
        let qw = scalarized_hessian(instance, w);
        let (c_lin, c_const): (Vec<Vec<f64>>, Vec<f64>) = match spec.block() {
            ParamBlock::ObjectiveLinear { map, offset } => (
                (0..n).map(|j| (0..d).map(|i| (0..w.len()).map(|l| w[l] * map[(l * n + j, i)]).sum()).collect()).collect(),
                (0..n).map(|j| (0..w.len()).map(|l| w[l] * offset[l * n + j]).sum()).collect(),
            ),
            ParamBlock::Rhs => (vec![vec![0.0; d]; n], scalarized_linear(instance, None, w)),
        };
        for j in 0..n {
            let mut terms: Vec<(f64, String)> = (0..n).filter(|&a| qw[(j, a)] != 0.0).map(|a| (qw[(j, a)], xv(k, a))).collect();
            terms.extend((0..d).filter(|&i| c_lin[j][i] != 0.0).map(|i| (c_lin[j][i], th(i))));
            terms.extend((0..m).filter(|&i| g[(i, j)] != 0.0).map(|i| (g[(i, j)], uv(k, i))));
            cons.push(Constraint { name: format!("stat_{k}_{j}"), terms, sense: Sense::Eq, rhs: -c_const[j] });
        }
        for j in 0..n {
            cons.push(Constraint {
                name: format!("selon_{k}_{j}"),
                terms: vec![(1.0, vv(k, j)), (-big, zv(k))],
                sense: Sense::Le,
                rhs: 0.0,
            });
        }
        // x_k - ϑ_k + M z_k ≤ M
        for j in 0..n {
            cons.push(Constraint {
                name: format!("sello_{k}_{j}"),
                terms: vec![(1.0, xv(k, j)), (-1.0, vv(k, j)), (big, zv(k))],
                sense: Sense::Le,
                rhs: big,
            });
        }
        for j in 0..n {
            cons.push(Constraint {
                name: format!("selhi_{k}_{j}"),
                terms: vec![(1.0, vv(k, j)), (-1.0, xv(k, j))],
                sense: Sense::Le,
                rhs: 0.0,
            });
        }
    }
    cons.push(Constraint {
        name: "choose".into(),
        terms: (0..grid.len()).map(|k| (1.0, zv(k))).collect(),
        sense: Sense::Eq,
        rhs: 1.0,
    });
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalarize::{even_grid, WeightVector};
    use crate::testutil::{mqp_b, mqp_c};

    #[test]
    fn number_format() {
        assert_eq!(fmt_num(1.5), "1.5");
        assert_eq!(fmt_num(-6.0), "-6");
        assert_eq!(fmt_num(0.1), "1e-1");
        assert_eq!(fmt_num(1.0 / 3.0), "3.33333333333e-1");
        assert_eq!(fmt_num(123456.0), "1.23456e5");
        assert_eq!(fmt_num(f64::INFINITY), "inf");
    }

    #[test]
    fn two_weight_model_counts() {
        let inst = mqp_c();
        let grid = even_grid::<f64>(2, 2, false).unwrap();
        let m = export_single_level(&inst, &[3.0, 1.0, -6.0, -5.0], &[1.0, 1.0], 1.0, &grid, 100.0).unwrap();
        let z = m.vars.iter().filter(|v| v.name.starts_with("z_")).count();
        let t = m.vars.iter().filter(|v| v.name.starts_with("t_")).count();
        assert_eq!((z, t), (2, 2 * 4));
        assert_eq!(m.binary_count(), 10);
        assert_eq!(m.constraints.len(), expected_constraint_count(2, 2, 2));
        assert_eq!(m.constraints.len(), 1 + 2 * (6 + 12));
    }

    #[test]
    fn single_weight_selector() {
        let inst = mqp_b();
        let grid = WeightGrid::new(vec![WeightVector::new(vec![0.5, 0.5], 1e-3).unwrap()], 1e-3).unwrap();
        let m = export_single_level(&inst, &[6.0, 3.0], &[1.0, 1.0], 1.0, &grid, 50.0).unwrap();
        let choose = m.constraints.last().unwrap();
        assert_eq!(choose.terms, vec![(1.0, "z_0".to_string())]);
        assert_eq!((choose.sense, choose.rhs), (Sense::Eq, 1.0));
        assert!(m.constraints.iter().any(|c| c.name == "primal_0_0" && c.terms.contains(&(-1.0, "theta_0".into()))));
    }

    #[test]
    fn text_round_trip() {
        let inst = mqp_c();
        let grid = even_grid::<f64>(2, 3, false).unwrap();
        let big = default_big_m(&inst, &grid);
        assert!(big >= 10.0 * inst.bound());
        let m = export_single_level(&inst, &[2.0, 2.0, -3.0, -3.0], &[1.25, 0.5], 0.7, &grid, big).unwrap();
        let text = m.to_text();
        let back = ModelText::parse(&text).unwrap();
        assert_eq!(back.to_text(), text);
        assert_eq!(back.vars.len(), m.vars.len());
        assert_eq!(back.constraints.len(), m.constraints.len());
        assert_eq!(back.objective.quadratic.len(), m.objective.quadratic.len());
    }

    #[test]
    fn guards_and_parse_errors() {
        let inst = mqp_c();
        let grid = even_grid::<f64>(2, 2, false).unwrap();
        assert!(export_single_level(&inst, &[3.0, 1.0, -6.0, -5.0], &[1.0, 1.0], 1.0, &grid, 0.0).is_err());
        assert!(matches!(ModelText::parse("VARS\nx cont 0\n"), Err(ImopError::Parse { line: 2, .. })));
        assert!(matches!(ModelText::parse("OBJ\n"), Err(ImopError::Parse { line: 1, .. })));
        assert!(matches!(ModelText::parse("VARS\nOBJ\nCONS\n"), Err(ImopError::Parse { .. })));
    }
}
