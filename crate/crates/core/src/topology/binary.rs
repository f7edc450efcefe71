use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::FieldSample;
use crate::grid::{CellBox, Shape};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryGrid {
    pub shape: Shape,
    pub cells: Vec<bool>,
}

impl BinaryGrid {
    pub fn new(shape: Shape, cells: Vec<bool>) -> Self {
        assert_eq!(shape.len(), cells.len());
        BinaryGrid { shape, cells }
    }

    pub fn filled(shape: Shape, value: bool) -> Self {
        BinaryGrid { shape, cells: vec![value; shape.len()] }
    }

    /// Build a 2D grid from rows of 0/1.
    pub fn from_rows(rows: &[&[u8]]) -> Self {
        let shape = Shape::new(2, &[rows.len(), rows[0].len()]);
        let cells = rows.iter().flat_map(|r| r.iter().map(|&v| v != 0)).collect();
        BinaryGrid { shape, cells }
    }

    pub fn get(&self, p: [usize; 3]) -> bool {
        self.cells[self.shape.index(p)]
    }

    pub fn set(&mut self, p: [usize; 3], v: bool) {
        let i = self.shape.index(p);
        self.cells[i] = v;
    }

    /// Copy of the cells inside `b`.
    pub fn crop(&self, b: &CellBox) -> Result<BinaryGrid> {
        b.check_in(&self.shape)?;
        let shape = b.shape();
        let cells = b.iter().map(|p| self.get(p)).collect();
        Ok(BinaryGrid { shape, cells })
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    /// Values 0.0/1.0 in row-major order, for the field dump format.
    pub fn to_values(&self) -> Vec<f64> {
        self.cells.iter().map(|&c| if c { 1.0 } else { 0.0 }).collect()
    }

    pub fn from_values(shape: Shape, values: &[f64]) -> Result<Self> {
        if values.len() != shape.len() {
            return Err(Error::InvalidInput("value count does not match shape".into()));
        }
        Ok(BinaryGrid { shape, cells: values.iter().map(|&v| v >= 0.5).collect() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetType {
    Excursion,
    Level,
}

/// Bounded map from a component's hole count to a weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightMap {
    Zero,
    Constant { value: f64 },
    HoleIndicator { holes: u32 },
    HoleTable { values: Vec<f64>, default: f64 },
}

impl WeightMap {
    pub fn sup_norm(&self) -> f64 {
        match self {
            WeightMap::Zero => 0.0,
            WeightMap::Constant { value } => value.abs(),
            WeightMap::HoleIndicator { .. } => 1.0,
            WeightMap::HoleTable { values, default } => values.iter().fold(default.abs(), |m, v| m.max(v.abs())),
        }
    }

    pub fn needs_holes(&self) -> bool {
        matches!(self, WeightMap::HoleIndicator { .. } | WeightMap::HoleTable { .. })
    }

    pub fn apply(&self, holes: Option<u32>) -> f64 {
        match self {
            WeightMap::Zero => 0.0,
            WeightMap::Constant { value } => *value,
            WeightMap::HoleIndicator { holes: k } => {
                if holes == Some(*k) { 1.0 } else { 0.0 }
            }
            WeightMap::HoleTable { values, default } => match holes {
                Some(h) => values.get(h as usize).copied().unwrap_or(*default),
                None => *default,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FunctionalKind {
    Count,
    Weighted { weight: WeightMap },
    EulerCharacteristic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalSpec {
    pub set: SetType,
    pub level: f64,
    pub functional: FunctionalKind,
    /// Half-width of the value shell used for level sets; defaults to `h / 2`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shell_half_width: Option<f64>,
}

impl FunctionalSpec {
    pub fn count(level: f64) -> Self {
        FunctionalSpec { set: SetType::Excursion, level, functional: FunctionalKind::Count, shell_half_width: None }
    }

    pub fn euler(level: f64) -> Self {
        FunctionalSpec {
            set: SetType::Excursion,
            level,
            functional: FunctionalKind::EulerCharacteristic,
            shell_half_width: None,
        }
    }

    pub fn weighted(level: f64, weight: WeightMap) -> Self {
        FunctionalSpec {
            set: SetType::Excursion,
            level,
            functional: FunctionalKind::Weighted { weight },
            shell_half_width: None,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if !self.level.is_finite() {
            return Err(Error::InvalidInput("level must be finite".into()));
        }
        if let FunctionalKind::Weighted { weight } = &self.functional {
            if !weight.sup_norm().is_finite() {
                return Err(Error::InvalidInput("weight map must be bounded".into()));
            }
            if weight.needs_holes() && dim != 2 {
                return Err(Error::InvalidInput("hole-based weights are only defined for d = 2".into()));
            }
        }
        Ok(())
    }

    pub fn is_component_sum(&self) -> bool {
        !matches!(self.functional, FunctionalKind::EulerCharacteristic)
    }

    /// Weight of a component with the given hole count.
    pub fn component_weight(&self, holes: Option<u32>) -> f64 {
        match &self.functional {
            FunctionalKind::Count => 1.0,
            FunctionalKind::Weighted { weight } => weight.apply(holes),
            FunctionalKind::EulerCharacteristic => 0.0,
        }
    }

    /// Lipschitz norm relative to the stratified critical-point count.
    pub fn lipschitz_norm(&self) -> f64 {
        match &self.functional {
            FunctionalKind::Count => 3.0,
            FunctionalKind::Weighted { weight } => 3.0 * weight.sup_norm(),
            FunctionalKind::EulerCharacteristic => 1.0,
        }
    }
}

/// Foreground test for a single value.
pub fn is_foreground(spec: &FunctionalSpec, value: f64, half_width: f64) -> bool {
    match spec.set {
        SetType::Excursion => value >= spec.level,
        SetType::Level => (value - spec.level).abs() <= half_width,
    }
}

pub fn extract_from_values(shape: Shape, values: &[f64], spec: &FunctionalSpec, spacing: f64) -> BinaryGrid {
    let w = spec.shell_half_width.unwrap_or(0.5 * spacing);
    let mut cells: Vec<bool> = values.iter().map(|&v| is_foreground(spec, v, w)).collect();
    if spec.set == SetType::Level {
        // Add the inner boundary of the excursion set so the shell cannot break
        // where the field is steep.
        let ex: Vec<bool> = values.iter().map(|&v| v >= spec.level).collect();
        for i in 0..shape.len() {
            if !ex[i] || cells[i] {
                continue;
            }
            let p = shape.coords(i);
            for k in 0..shape.dim {
                for s in [-1i64, 1] {
                    let mut off = [0i64; 3];
                    off[k] = s;
                    if let Some(q) = shape.offset(p, off) {
                        if !ex[shape.index(q)] {
                            cells[i] = true;
                        }
                    }
                }
            }
        }
    }
    BinaryGrid { shape, cells }
}

pub fn extract_excursion(fs: &FieldSample, spec: &FunctionalSpec) -> BinaryGrid {
    extract_from_values(fs.shape(), &fs.values, spec, fs.grid.spacing)
}
