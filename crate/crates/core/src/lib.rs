//! Numerical laboratory for the refined generalized focal loss family.
//!
//! The numeric kernels are generic over [`Real`] (`f32`/`f64`); the `*64` aliases
//! at the crate root fix the scalar to `f64`, which is what the CLI and the
//! experiment drivers use.

pub mod domain;
pub mod error;
pub mod gradcheck;
pub mod loss;
pub mod metrics;
pub mod optim;
pub mod rebalance;
pub mod scalar;
pub mod synthgen;
pub mod trainer;
pub mod uncertainty;

pub use error::{Error, Result};
pub use scalar::Real;

pub type PredictionBatch64 = domain::PredictionBatch<f64>;
pub type SampleGeometry64 = domain::SampleGeometry<f64>;
pub type LossConfig64 = domain::LossConfig<f64>;
pub type ClassWeights64 = domain::ClassWeights<f64>;
pub type BBox64 = domain::BBox<f64>;
pub type Scene64 = domain::Scene<f64>;
pub type LossValue64 = loss::LossValue<f64>;
pub type LossGradient64 = loss::LossGradient<f64>;
pub type VariationalState64 = uncertainty::VariationalState<f64>;
pub type ParameterVector64 = optim::ParameterVector<f64>;
pub type Schedule64 = optim::Schedule<f64>;
pub type DualState64 = optim::DualState<f64>;
pub type MetricReport64 = metrics::MetricReport<f64>;
