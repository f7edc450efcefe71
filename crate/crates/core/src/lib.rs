//! Sampling of smooth stationary Gaussian fields and topological statistics
//! of their excursion sets.

pub mod covariance;
pub mod error;
pub mod fft;
pub mod field;
pub mod grid;
pub mod pivotal;
pub mod quadrature;
pub mod rng;
pub mod stats;
pub mod topology;

pub use covariance::{covariance_eval, ktilde_eval, CovarianceModel, Family, ModelDescriptor};
pub use error::{Error, Result};
pub use field::{
    condition_on_constraints, interpolated_pair, sample_field, ConditioningConstraint, FieldPair, FieldRole,
    FieldSample, FieldSampler,
};
pub use grid::{CellBox, GridSpec, Shape};
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
