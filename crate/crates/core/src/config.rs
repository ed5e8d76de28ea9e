//! TOML files describing instances, hypothesis sets and saved round states.
//!
//! Instance file:
//!
//! ```toml
//! strongly_convex = true          # optional, default true
//!
//! [[objective]]                   # one table per objective, at least two
//! Q = [[1.0, 0.0], [0.0, 2.0]]    # row-major
//! c = [3.0, 1.0]
//!
//! [[objective]]
//! Q = [[2.0, 0.0], [0.0, 1.0]]
//! c = [-6.0, -5.0]
//!
//! [constraints]                   # A x <= b, x >= 0 is implicit
//! A = [[3.0, -1.0], [0.0, 1.0]]
//! b = [6.0, 3.0]
//! ```
//!
//! Parameter file:
//!
//! ```toml
//! block = "objective_linear"      # or "rhs"
//! lower = [1.0, 1.0, -6.0, -6.0]
//! upper = [6.0, 6.0, -1.0, -1.0]
//! map = [[...]]                   # optional, objective_linear only; identity when absent
//! offset = [...]                  # optional, zeros when absent
//! truth = [3.0, 1.0, -6.0, -5.0]  # optional, enables error reporting
//! ```
//!
//! Round-state file: top-level `round`, `theta`, `y`, `eta`, `k`, `grid`
//! (`"even"` or `"interior"`), followed by `[instance]` and `[spec]` tables
//! with the two schemas above. `k = 1` stands for the single weight
//! `(1/p, …, 1/p)`.

use serde::{Deserialize, Serialize};

use crate::error::{ImopError, Result};
use crate::linalg::Matrix;
use crate::model::{build_instance, MopInstance, ParamBlock, ParamSpec, RawInstance};
use crate::online::GridMode;
use crate::scalarize::{even_grid, WeightGrid, WeightVector, DEFAULT_INTERIOR_OFFSET};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveTable {
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    pub c: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintTable {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    #[serde(default = "yes")]
    pub strongly_convex: bool,
    pub objective: Vec<ObjectiveTable>,
    pub constraints: ConstraintTable,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockName {
    ObjectiveLinear,
    Rhs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecFile {
    pub block: BlockName,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoundState {
    pub round: usize,
    pub theta: Vec<f64>,
    pub y: Vec<f64>,
    pub eta: f64,
    pub k: usize,
    pub grid: GridMode,
    pub instance: InstanceFile,
    pub spec: SpecFile,
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<Matrix<f64>> {
    Matrix::from_rows(rows).ok_or_else(|| ImopError::DimensionMismatch(format!("{what} has rows of unequal length")))
}

/// TOML parse with the failing line in the error.
pub fn parse_toml<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| {
        let line = e.span().map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1).unwrap_or(0);
        ImopError::Parse { line, message: e.message().to_string() }
    })
}

pub fn to_toml<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string(value).map_err(|e| ImopError::Config(e.to_string()))
}

impl InstanceFile {
    pub fn from_instance(instance: &MopInstance<f64>) -> Self {
        Self {
            strongly_convex: instance.strongly_convex(),
            objective: (0..instance.p())
                .map(|l| ObjectiveTable { q: instance.quad(l).to_rows(), c: instance.lin(l).to_vec() })
                .collect(),
            constraints: ConstraintTable { a: instance.a().to_rows(), b: instance.b().to_vec() },
        }
    }

    pub fn raw(&self) -> Result<RawInstance<f64>> {
        let objectives = self
            .objective
            .iter()
            .enumerate()
            .map(|(l, o)| Ok((matrix(&o.q, &format!("objective {l} Q"))?, o.c.clone())))
            .collect::<Result<Vec<_>>>()?;
        Ok(RawInstance {
            objectives,
            a: matrix(&self.constraints.a, "A")?,
            b: self.constraints.b.clone(),
            strongly_convex: self.strongly_convex,
        })
    }
}

impl SpecFile {
    pub fn from_spec(spec: &ParamSpec<f64>, truth: Option<&[f64]>) -> Self {
        let (block, map, offset) = match spec.block() {
            ParamBlock::ObjectiveLinear { map, offset } => {
                (BlockName::ObjectiveLinear, Some(map.to_rows()), Some(offset.clone()))
            }
            ParamBlock::Rhs => (BlockName::Rhs, None, None),
        };
        Self {
            block,
            lower: spec.lower().to_vec(),
            upper: spec.upper().to_vec(),
            map,
            offset,
            truth: truth.map(<[f64]>::to_vec),
        }
    }

    /// Builds the parameter set for an instance with `n` variables and `p` objectives.
    pub fn spec(&self, n: usize, p: usize) -> Result<ParamSpec<f64>> {
        match self.block {
            BlockName::Rhs => {
                if self.map.is_some() || self.offset.is_some() {
                    return Err(ImopError::Config("map and offset only apply to objective_linear".into()));
                }
                ParamSpec::rhs(self.lower.clone(), self.upper.clone())
            }
            BlockName::ObjectiveLinear => {
                let d = self.lower.len();
                let map = match &self.map {
                    Some(rows) => matrix(rows, "map")?,
                    None if d == n * p => Matrix::identity(d),
                    None => {
                        return Err(ImopError::DimensionMismatch(format!(
                            "objective block without a map needs {} bounds, got {d}",
                            n * p
                        )))
                    }
                };
                let offset = self.offset.clone().unwrap_or_else(|| vec![0.0; map.rows()]);
                if map.rows() != n * p {
                    return Err(ImopError::DimensionMismatch(format!(
                        "map has {} rows for {} stacked linear terms",
                        map.rows(),
                        n * p
                    )));
                }
                ParamSpec::objective_affine(map, offset, self.lower.clone(), self.upper.clone())
            }
        }
    }
}

/// Validated instance plus the optional true parameter.
pub fn load_instance(instance: &InstanceFile, spec: &SpecFile) -> Result<(MopInstance<f64>, Option<Vec<f64>>)> {
    let raw = instance.raw()?;
    let (n, p) = (raw.a.cols(), raw.objectives.len());
    let param = spec.spec(n, p)?;
    let inst = build_instance(raw, param)?;
    if let Some(truth) = &spec.truth {
        inst.param().check(truth)?;
    }
    Ok((inst, spec.truth.clone()))
}

impl RoundState {
    pub fn load(&self) -> Result<(MopInstance<f64>, WeightGrid<f64>)> {
        let (inst, _) = load_instance(&self.instance, &self.spec)?;
        let grid = if self.k == 1 {
            let even = vec![1.0 / inst.p() as f64; inst.p()];
            WeightGrid::new(vec![WeightVector::new(even, DEFAULT_INTERIOR_OFFSET)?], DEFAULT_INTERIOR_OFFSET)?
        } else {
            even_grid(inst.p(), self.k, self.grid == GridMode::Interior)?
        };
        Ok((inst, grid))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{mqp_b, mqp_c};

    const MQP: &str = r#"
[[objective]]
Q = [[1.0, 0.0], [0.0, 2.0]]
c = [3.0, 1.0]

[[objective]]
Q = [[2.0, 0.0], [0.0, 1.0]]
c = [-6.0, -5.0]

[constraints]
A = [[3.0, -1.0], [0.0, 1.0]]
b = [6.0, 3.0]
"#;

    #[test]
    fn parses_documented_example() {
        let inst: InstanceFile = parse_toml(MQP).unwrap();
        let spec: SpecFile = parse_toml(
            "block = \"objective_linear\"\nlower = [1.0, 1.0, -6.0, -6.0]\nupper = [6.0, 6.0, -1.0, -1.0]\ntruth = [3.0, 1.0, -6.0, -5.0]\n",
        )
        .unwrap();
        let (built, truth) = load_instance(&inst, &spec).unwrap();
        assert_eq!(built, mqp_c());
        assert_eq!(truth.unwrap(), vec![3.0, 1.0, -6.0, -5.0]);
    }

    #[test]
    fn round_trips_through_toml() {
        for inst in [mqp_c(), mqp_b(), crate::testutil::portfolio()] {
            let state = RoundState {
                round: 3,
                theta: inst.param().project(&vec![0.0; inst.param().dim()]),
                y: vec![0.25; inst.n()],
                eta: 0.5,
                k: 5,
                grid: GridMode::Interior,
                instance: InstanceFile::from_instance(&inst),
                spec: SpecFile::from_spec(inst.param(), None),
            };
            let text = to_toml(&state).unwrap();
            let back: RoundState = parse_toml(&text).unwrap();
            assert_eq!(back, state);
            let (rebuilt, grid) = back.load().unwrap();
            assert_eq!(rebuilt, inst);
            assert_eq!(grid.len(), 5);
        }
    }

    #[test]
    fn errors_name_the_line() {
        let bad = MQP.replace("c = [-6.0, -5.0]", "c = [-6.0, oops]");
        match parse_toml::<InstanceFile>(&bad) {
            Err(ImopError::Parse { line, .. }) => assert_eq!(line, 8),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_toml::<InstanceFile>("objective = 3\n"), Err(ImopError::Parse { .. })));
        let spec = SpecFile { block: BlockName::Rhs, lower: vec![0.0], upper: vec![1.0, 2.0], map: None, offset: None, truth: None };
        assert!(spec.spec(2, 2).is_err());
        let ragged: InstanceFile = parse_toml(&MQP.replace("A = [[3.0, -1.0], [0.0, 1.0]]", "A = [[3.0, -1.0], [0.0]]")).unwrap();
        assert!(matches!(ragged.raw(), Err(ImopError::DimensionMismatch(_))));
    }
}
