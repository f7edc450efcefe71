//! Limit-theorem experiment suites.

pub mod dist;
pub mod suites;
pub mod volume;

pub use dist::{kolmogorov_distance, normal_cdf, wilson_interval, EmpiricalDistribution, Estimate};
pub use suites::{
    arm_decay_curve, asclt_calibrate, asclt_statistic, clt_from, clt_suite, functional_samples, lln_curve, lln_from,
    variance_curve, variance_from, ArmReport, AscltCalibration, AscltConfig, AscltReport, CltReport, CsvRow,
    LlnReport, ScaleSamples, SuiteGrid, VarianceReport,
};
pub use volume::{volume_suite, VolumeConfig, VolumeReport};

use crate::covariance::CovarianceModel;

/// Expected Euler characteristic of `{f >= ℓ}` per unit volume of an isotropic unit-variance field.
pub fn gkf_euler_density(model: &CovarianceModel, level: f64) -> f64 {
    let d = model.dim() as i32;
    let hermite = match d {
        1 => 1.0,
        2 => level,
        _ => level * level - 1.0,
    };
    let lambda = model.second_moment();
    (2.0 * std::f64::consts::PI).powf(-(d as f64 + 1.0) / 2.0) * lambda.powf(d as f64 / 2.0) * hermite
        * (-level * level / 2.0).exp()
}
