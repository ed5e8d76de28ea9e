//! Online learning of multiobjective quadratic programs from noisy
//! decisions.
//!
//! Decision makers solve `min wᵀf(x) s.t. Ax ≤ b, x ≥ 0` with private
//! weights `w`; the learner sees noisy decisions one at a time and updates
//! an estimate of the unknown linear terms or right-hand side through an
//! implicit proximal step. Everything is generic over the scalar type
//! ([`Scalar`], implemented for `f32` and `f64`); the aliases at the crate
//! root fix it to `f64`.

pub mod config;
pub mod datagen;
pub mod error;
pub mod export;
pub mod linalg;
pub mod loss;
pub mod model;
pub mod online;
pub mod oracle;
pub mod polytope;
pub mod qp;
pub mod scalar;
pub mod scalarize;
pub mod update;

pub use error::{ImopError, Result};
pub use scalar::Scalar;

pub type Matrix = linalg::Matrix<f64>;
pub type Instance = model::MopInstance<f64>;
pub type Spec = model::ParamSpec<f64>;
pub type Observation = model::Observation<f64>;
pub type Weight = scalarize::WeightVector<f64>;
pub type Grid = scalarize::WeightGrid<f64>;
pub type Update = update::UpdateResult<f64>;
pub type Loss = loss::LossResult<f64>;

#[cfg(test)]
pub(crate) mod testutil {
    use crate::datagen;
    use crate::model::MopInstance;

    pub fn mqp_c() -> MopInstance<f64> {
        datagen::mqp_objective_instance().unwrap()
    }

    pub fn mqp_c_f32() -> MopInstance<f32> {
        datagen::mqp_objective_instance().unwrap()
    }

    pub fn mqp_b() -> MopInstance<f64> {
        datagen::mqp_rhs_instance().unwrap()
    }

    pub fn appendix_c(theta: &[f64; 2]) -> MopInstance<f64> {
        datagen::quadratic_1d_instance(*theta).unwrap()
    }

    pub fn portfolio() -> MopInstance<f64> {
        datagen::portfolio_instance(&datagen::PortfolioData::table()).unwrap()
    }
}
