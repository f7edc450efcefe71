//! Field sampling, interpolation and Gaussian-regression conditioning.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::covariance::{dot, CovarianceModel, Family, ModelDescriptor};
use crate::error::{Error, Result};
use crate::fft::{next_smooth, NdFft};
use crate::grid::{GridSpec, Shape};
use crate::rng::{stream, StreamRole};

/// Relative tolerance for negative embedding eigenvalues.
pub const TAU_PSD: f64 = 1e-9;
/// Kernel magnitude treated as zero when sizing the torus.
const TORUS_EPS: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub master: u64,
    pub replicate: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldSample {
    pub grid: GridSpec,
    pub model: ModelDescriptor,
    pub seed: Option<SeedRecord>,
    pub values: Vec<f64>,
    pub companion: Option<Vec<f64>>,
    pub t: Option<f64>,
}

impl FieldSample {
    pub fn from_values(grid: GridSpec, model: &CovarianceModel, values: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        if values.len() != grid.len() {
            return Err(Error::InvalidInput(format!(
                "{} values for a grid of {} cells",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite field value".into()));
        }
        Ok(FieldSample { grid, model: model.descriptor(), seed: None, values, companion: None, t: None })
    }

    pub fn shape(&self) -> Shape {
        self.grid.shape()
    }

    pub fn at(&self, p: [usize; 3]) -> f64 {
        self.values[self.shape().index(p)]
    }

    /// Central-difference gradient at an interior cell.
    pub fn gradient(&self, p: [usize; 3]) -> [f64; 3] {
        let s = self.shape();
        let h = self.grid.spacing;
        let mut g = [0.0; 3];
        for (k, gk) in g.iter_mut().enumerate().take(s.dim) {
            let mut e = [0i64; 3];
            e[k] = 1;
            let up = s.offset(p, e).expect("interior cell");
            e[k] = -1;
            let dn = s.offset(p, e).expect("interior cell");
            *gk = (self.values[s.index(up)] - self.values[s.index(dn)]) / (2.0 * h);
        }
        g
    }

    /// Central-difference Hessian at an interior cell.
    pub fn hessian(&self, p: [usize; 3]) -> [[f64; 3]; 3] {
        let s = self.shape();
        let h = self.grid.spacing;
        let v = |off: [i64; 3]| self.values[s.index(s.offset(p, off).expect("interior cell"))];
        let mut hs = [[0.0; 3]; 3];
        let c = v([0; 3]);
        for i in 0..s.dim {
            let mut e = [0i64; 3];
            e[i] = 1;
            let mut m = [0i64; 3];
            m[i] = -1;
            hs[i][i] = (v(e) - 2.0 * c + v(m)) / (h * h);
            for j in (i + 1)..s.dim {
                let mut pp = [0i64; 3];
                pp[i] = 1;
                pp[j] = 1;
                let mut pm = pp;
                pm[j] = -1;
                let mut mp = pp;
                mp[i] = -1;
                let mut mm = mp;
                mm[j] = -1;
                let x = (v(pp) - v(pm) - v(mp) + v(mm)) / (4.0 * h * h);
                hs[i][j] = x;
                hs[j][i] = x;
            }
        }
        hs
    }

    pub fn write_dump<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header = DumpHeader {
            grid: self.grid,
            cells: self.grid.cells_per_side(),
            model: self.model.clone(),
            seed: self.seed,
            t: self.t,
            companion: self.companion.is_some(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        let mut buf = Vec::with_capacity(8 * self.values.len());
        for v in self.values.iter().chain(self.companion.iter().flatten()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn read_dump<R: BufRead>(mut r: R) -> Result<Self> {
        let mut line = String::new();
        r.read_line(&mut line).map_err(|e| Error::InvalidInput(e.to_string()))?;
        let header: DumpHeader =
            serde_json::from_str(line.trim_end()).map_err(|e| Error::InvalidInput(e.to_string()))?;
        let n = header.grid.len();
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(|e| Error::InvalidInput(e.to_string()))?;
        let expect = if header.companion { 2 * n } else { n };
        if bytes.len() != 8 * expect {
            return Err(Error::InvalidInput(format!("dump holds {} bytes, expected {}", bytes.len(), 8 * expect)));
        }
        let all: Vec<f64> =
            bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let (values, companion) = if header.companion {
            (all[..n].to_vec(), Some(all[n..].to_vec()))
        } else {
            (all, None)
        };
        Ok(FieldSample { grid: header.grid, model: header.model, seed: header.seed, values, companion, t: header.t })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DumpHeader {
    grid: GridSpec,
    cells: usize,
    model: ModelDescriptor,
    seed: Option<SeedRecord>,
    t: Option<f64>,
    companion: bool,
}

enum Method {
    Circulant { fft: NdFft, torus: [usize; 3], sqrt_eig: Vec<f64> },
    Spectral { freqs: Vec<Vec<f64>>, amps: Vec<f64> },
}

/// Prepared sampler for one (model, grid) pair; immutable and shareable.
pub struct FieldSampler {
    model: CovarianceModel,
    grid: GridSpec,
    method: Method,
    clipped_mass: f64,
}

impl FieldSampler {
    pub fn new(model: &CovarianceModel, grid: &GridSpec) -> Result<Self> {
        grid.validate()?;
        if model.dim() != grid.dim {
            return Err(Error::InvalidInput("model and grid dimensions differ".into()));
        }
        if let Family::CosineMixture { waves } = model.family() {
            let freqs = waves.iter().map(|w| w.freq.clone()).collect();
            let amps = waves.iter().map(|w| w.weight.sqrt()).collect();
            return Ok(FieldSampler {
                model: model.clone(),
                grid: *grid,
                method: Method::Spectral { freqs, amps },
                clipped_mass: 0.0,
            });
        }
        let n = grid.cells_per_side();
        let h = grid.spacing;
        let reach = if model.decay_exponent().is_some() {
            0
        } else {
            (2.0 * model.decay_radius(TORUS_EPS) / h).ceil() as usize
        };
        let m = next_smooth((2 * n).max(reach));
        let d = grid.dim;
        let mut torus = [1usize; 3];
        torus[..d].fill(m);
        let tshape = Shape::new(d, &torus);
        let lag = |i: usize| -> f64 {
            let s = if i <= m / 2 { i as f64 } else { i as f64 - m as f64 };
            s * h
        };
        let mut c: Vec<Complex64> = (0..tshape.len())
            .map(|i| {
                let p = tshape.coords(i);
                let x = [lag(p[0]), lag(p[1]), lag(p[2])];
                Complex64::new(model.eval(&x[..d]), 0.0)
            })
            .collect();
        let fft = NdFft::forward(torus);
        fft.process(&mut c);
        let max_eig = c.iter().map(|z| z.re).fold(f64::MIN, f64::max);
        let min_eig = c.iter().map(|z| z.re).fold(f64::MAX, f64::min);
        if min_eig < -TAU_PSD * max_eig {
            return Err(Error::EmbeddingNotPsd { min_eig, max_eig });
        }
        let total: f64 = c.iter().map(|z| z.re.abs()).sum();
        let neg: f64 = c.iter().filter(|z| z.re < 0.0).map(|z| -z.re).sum();
        let norm = tshape.len() as f64;
        let sqrt_eig = c.iter().map(|z| (z.re.max(0.0) / norm).sqrt()).collect();
        Ok(FieldSampler {
            model: model.clone(),
            grid: *grid,
            method: Method::Circulant { fft, torus, sqrt_eig },
            clipped_mass: if total > 0.0 { neg / total } else { 0.0 },
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn model(&self) -> &CovarianceModel {
        &self.model
    }

    /// Fraction of embedding spectrum mass removed by clipping negative eigenvalues.
    pub fn clipped_mass(&self) -> f64 {
        self.clipped_mass
    }

    /// Two independent fields from one draw of the generator.
    pub fn draw_pair<R: Rng>(&self, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
        let shape = self.grid.shape();
        match &self.method {
            Method::Circulant { fft, torus, sqrt_eig } => {
                let mut w: Vec<Complex64> = sqrt_eig
                    .iter()
                    .map(|&s| {
                        let a: f64 = rng.sample(StandardNormal);
                        let b: f64 = rng.sample(StandardNormal);
                        Complex64::new(s * a, s * b)
                    })
                    .collect();
                fft.process(&mut w);
                let tshape = Shape::new(self.grid.dim, torus);
                let mut re = Vec::with_capacity(shape.len());
                let mut im = Vec::with_capacity(shape.len());
                for i in 0..shape.len() {
                    let z = w[tshape.index(shape.coords(i))];
                    re.push(z.re);
                    im.push(z.im);
                }
                (re, im)
            }
            Method::Spectral { freqs, amps } => {
                let mut coef = |_: ()| -> Vec<(f64, f64)> {
                    amps.iter()
                        .map(|&a| (a * rng.sample::<f64, _>(StandardNormal), a * rng.sample::<f64, _>(StandardNormal)))
                        .collect()
                };
                let c1 = coef(());
                let c2 = coef(());
                let d = self.grid.dim;
                let mut re = Vec::with_capacity(shape.len());
                let mut im = Vec::with_capacity(shape.len());
                for i in 0..shape.len() {
                    let p = shape.coords(i);
                    let x: Vec<f64> = (0..d).map(|k| self.grid.coord(p[k])).collect();
                    let (mut u, mut v) = (0.0, 0.0);
                    for (j, f) in freqs.iter().enumerate() {
                        let (s, c) = dot(f, &x).sin_cos();
                        u += c1[j].0 * c + c1[j].1 * s;
                        v += c2[j].0 * c + c2[j].1 * s;
                    }
                    re.push(u);
                    im.push(v);
                }
                (re, im)
            }
        }
    }

    fn wrap(&self, values: Vec<f64>, seed: SeedRecord) -> FieldSample {
        FieldSample {
            grid: self.grid,
            model: self.model.descriptor(),
            seed: Some(seed),
            values,
            companion: None,
            t: None,
        }
    }

    /// Replicates `2p` and `2p + 1`, which share one generator draw.
    pub fn sample_replicate_pair(&self, master: u64, pair: u64) -> (FieldSample, FieldSample) {
        let mut rng = stream(master, pair, StreamRole::Field);
        let (a, b) = self.draw_pair(&mut rng);
        (
            self.wrap(a, SeedRecord { master, replicate: 2 * pair }),
            self.wrap(b, SeedRecord { master, replicate: 2 * pair + 1 }),
        )
    }

    pub fn sample(&self, master: u64, replicate: u64) -> FieldSample {
        let (a, b) = self.sample_replicate_pair(master, replicate / 2);
        if replicate % 2 == 0 { a } else { b }
    }

    /// Field plus an independent companion copy drawn from the companion stream.
    pub fn sample_with_companion(&self, master: u64, replicate: u64) -> FieldSample {
        let mut rng = stream(master, replicate, StreamRole::Companion);
        let (a, b) = self.draw_pair(&mut rng);
        let mut fs = self.wrap(a, SeedRecord { master, replicate });
        fs.companion = Some(b);
        fs
    }
}

pub fn sample_field(model: &CovarianceModel, grid: &GridSpec, seed: u64) -> Result<FieldSample> {
    Ok(FieldSampler::new(model, grid)?.sample(seed, 0))
}

pub fn interpolated_pair(fs: &FieldSample, fs_tilde: &FieldSample, t: f64) -> Result<FieldSample> {
    if fs.grid != fs_tilde.grid || fs.model != fs_tilde.model || fs.values.len() != fs_tilde.values.len() {
        return Err(Error::MismatchedGrids);
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidInput(format!("t = {t} outside [0, 1]")));
    }
    let s = (1.0 - t * t).sqrt();
    let values = fs.values.iter().zip(&fs_tilde.values).map(|(a, b)| t * a + s * b).collect();
    Ok(FieldSample {
        grid: fs.grid,
        model: fs.model.clone(),
        seed: fs.seed,
        values,
        companion: None,
        t: Some(t),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FieldRole {
    F,
    Ft,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningConstraint {
    pub point: Vec<f64>,
    pub level: f64,
    pub gradient: bool,
    pub field: FieldRole,
}

/// The base field `f` and its interpolation `f^t`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldPair {
    pub f: FieldSample,
    pub ft: FieldSample,
    pub t: f64,
}

impl FieldPair {
    pub fn get(&self, role: FieldRole) -> &FieldSample {
        match role {
            FieldRole::F => &self.f,
            FieldRole::Ft => &self.ft,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Quantity {
    cell: [usize; 3],
    role: FieldRole,
    deriv: Option<usize>,
}

/// Covariance between a value/derivative of one field at `a` and one at `b`.
fn quantity_cov(jet: &crate::covariance::Jet, da: Option<usize>, db: Option<usize>, factor: f64) -> f64 {
    factor
        * match (da, db) {
            (None, None) => jet.value,
            (None, Some(j)) => -jet.grad[j],
            (Some(i), None) => jet.grad[i],
            (Some(i), Some(j)) => -jet.hess[i][j],
        }
}

/// Joint covariance matrix of the listed quantities of `(f, f^t)`.
fn assemble(model: &CovarianceModel, grid: &GridSpec, qs: &[Quantity], t: f64) -> DMatrix<f64> {
    let d = grid.dim;
    let n = qs.len();
    DMatrix::from_fn(n, n, |a, b| {
        let (qa, qb) = (qs[a], qs[b]);
        let lag: Vec<f64> =
            (0..d).map(|k| (qa.cell[k] as f64 - qb.cell[k] as f64) * grid.spacing).collect();
        let jet = model.jet(&lag);
        let factor = if qa.role == qb.role { 1.0 } else { t };
        quantity_cov(&jet, qa.deriv, qb.deriv, factor)
    })
}

/// Gaussian regression of `(f, f^t)` onto the constraint set.
pub fn condition_on_constraints(
    model: &CovarianceModel,
    grid: &GridSpec,
    constraints: &[ConditioningConstraint],
    base: &FieldPair,
    kappa_max: f64,
) -> Result<FieldPair> {
    if base.f.grid != *grid || base.ft.grid != *grid {
        return Err(Error::MismatchedGrids);
    }
    if constraints.is_empty() {
        return Ok(base.clone());
    }
    let shape = grid.shape();
    let d = grid.dim;
    let mut qs = Vec::new();
    let mut targets = Vec::new();
    let mut observed = Vec::new();
    let mut seen: Vec<([usize; 3], FieldRole)> = Vec::new();
    for c in constraints {
        let cell = grid.cell_at(&c.point)?;
        if seen.contains(&(cell, c.field)) {
            return Err(Error::InvalidInput("constraint points must be distinct".into()));
        }
        seen.push((cell, c.field));
        let src = base.get(c.field);
        qs.push(Quantity { cell, role: c.field, deriv: None });
        targets.push(c.level);
        observed.push(src.at(cell));
        if c.gradient {
            if (0..d).any(|k| cell[k] < 2 || cell[k] + 2 >= shape.dims[k]) {
                return Err(Error::DomainOutsideGrid);
            }
            let g = src.gradient(cell);
            for (k, gk) in g.iter().enumerate().take(d) {
                qs.push(Quantity { cell, role: c.field, deriv: Some(k) });
                targets.push(0.0);
                observed.push(*gk);
            }
        }
    }
    let sigma = assemble(model, grid, &qs, base.t);
    let eig = SymmetricEigen::new(sigma);
    let lmax = eig.eigenvalues.max();
    let lmin = eig.eigenvalues.min();
    let condition = if lmin > 0.0 { lmax / lmin } else { f64::INFINITY };
    if !(condition < kappa_max) {
        return Err(Error::DegenerateConstraintSet { condition });
    }
    let resid = DVector::from_iterator(qs.len(), targets.iter().zip(&observed).map(|(a, b)| a - b));
    let proj = eig.eigenvectors.transpose() * resid;
    let scaled = DVector::from_iterator(qs.len(), proj.iter().zip(eig.eigenvalues.iter()).map(|(p, l)| p / l));
    let w = &eig.eigenvectors * scaled;

    let mut points: Vec<[usize; 3]> = Vec::new();
    for q in &qs {
        if !points.contains(&q.cell) {
            points.push(q.cell);
        }
    }
    let mut out = base.clone();
    let mut lag = vec![0.0; d];
    for i in 0..shape.len() {
        let u = shape.coords(i);
        let (mut df, mut dft) = (0.0, 0.0);
        for p in &points {
            for k in 0..d {
                lag[k] = (u[k] as f64 - p[k] as f64) * grid.spacing;
            }
            let jet = model.jet(&lag);
            for (b, q) in qs.iter().enumerate() {
                if q.cell != *p {
                    continue;
                }
                let base_cov = quantity_cov(&jet, None, q.deriv, 1.0);
                let (own, cross) = match q.role {
                    FieldRole::F => (&mut df, &mut dft),
                    FieldRole::Ft => (&mut dft, &mut df),
                };
                *own += base_cov * w[b];
                *cross += base.t * base_cov * w[b];
            }
        }
        out.f.values[i] += df;
        out.ft.values[i] += dft;
    }
    // Exact interpolation at the constrained cells.
    for (b, q) in qs.iter().enumerate() {
        if q.deriv.is_none() {
            let idx = shape.index(q.cell);
            match q.role {
                FieldRole::F => out.f.values[idx] = targets[b],
                FieldRole::Ft => out.ft.values[idx] = targets[b],
            }
        }
    }
    Ok(out)
}
