//! Excursion and level sets of grid fields and their topological functionals.

pub mod arm;
pub mod binary;
pub mod critical;
pub mod decompose;
pub mod derivative;
pub mod euler;
pub mod label;

pub use arm::{one_arm_event, truncated_arm_event, unbounded_mask, unbounded_volume};
pub use binary::{extract_excursion, BinaryGrid, FunctionalKind, FunctionalSpec, SetType, WeightMap};
pub use critical::{critical_census, euler_characteristic_morse, CriticalCensus, CriticalCell, CriticalKind};
pub use decompose::{check_scales, multiscale_decompose, split_by_a_planes, DecompositionResult};
pub use derivative::{functional_on_box, topological_derivative, Bump};
pub use euler::{euler_characteristic_cubical, euler_split, EulerSplit};
pub use label::{
    bounded_functional, component_count, label_components, ComponentInfo, Connectivity, ConnectivityPolicy,
    ExcursionGeometry,
};

use crate::error::Result;
use crate::field::FieldSample;
use crate::grid::CellBox;

/// `Φ(D, f)` for any functional kind.
pub fn evaluate(fs: &FieldSample, spec: &FunctionalSpec, d: &CellBox) -> Result<f64> {
    functional_on_box(&fs.shape(), &fs.values, fs.grid.spacing, spec, d)
}
