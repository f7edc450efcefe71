//! Stationary unit-variance covariance kernels with analytic derivatives.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Wave {
    pub weight: f64,
    pub freq: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    /// `exp(-|x|^2 / (2 s^2))`.
    BargmannFock { scale: f64 },
    /// `(1 + |x|^2 / s^2)^(-beta/2)`, a Gaussian scale mixture.
    PolyDecay { beta: f64, scale: f64 },
    /// `sum_j w_j cos(k_j . x)`, weights summing to one.
    CosineMixture { waves: Vec<Wave> },
}

/// Value, gradient and Hessian of `K` at a lag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub grad: [f64; 3],
    pub hess: [[f64; 3]; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceModel {
    family: Family,
    dim: usize,
    envelope_c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDescriptor {
    pub family: String,
    pub d: usize,
    #[serde(default)]
    pub params: Value,
    #[serde(rename = "envelopeC", default)]
    pub envelope_c: Option<f64>,
}

impl CovarianceModel {
    pub fn bargmann_fock(dim: usize) -> Self {
        Self::new(Family::BargmannFock { scale: 1.0 }, dim).expect("valid model")
    }

    pub fn new(family: Family, dim: usize) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidInput(format!("dimension {dim} not in 1..=3")));
        }
        let family = match family {
            Family::BargmannFock { scale } => {
                if !(scale > 0.0 && scale.is_finite()) {
                    return Err(Error::InvalidInput("scale must be positive".into()));
                }
                Family::BargmannFock { scale }
            }
            Family::PolyDecay { beta, scale } => {
                if !(beta > dim as f64 && beta.is_finite()) {
                    return Err(Error::InvalidInput(format!("beta {beta} must exceed d = {dim}")));
                }
                if !(scale > 0.0 && scale.is_finite()) {
                    return Err(Error::InvalidInput("scale must be positive".into()));
                }
                Family::PolyDecay { beta, scale }
            }
            Family::CosineMixture { waves } => {
                if waves.is_empty() {
                    return Err(Error::InvalidInput("cosine mixture needs waves".into()));
                }
                let total: f64 = waves.iter().map(|w| w.weight).sum();
                if waves.iter().any(|w| !(w.weight > 0.0) || w.freq.len() != dim) || !(total > 0.0) {
                    return Err(Error::InvalidInput("cosine waves need positive weights and d frequencies".into()));
                }
                let waves = waves
                    .into_iter()
                    .map(|w| Wave { weight: w.weight / total, freq: w.freq })
                    .collect();
                Family::CosineMixture { waves }
            }
        };
        let mut m = CovarianceModel { family, dim, envelope_c: 1.0 };
        if let Family::PolyDecay { beta, .. } = m.family {
            m.envelope_c = m.fit_envelope(beta);
        }
        Ok(m)
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Constant `C` with `|K(x)| <= C (1 + |x|)^(-beta)`; 1 for families without a declared decay exponent.
    pub fn envelope_c(&self) -> f64 {
        self.envelope_c
    }

    pub fn decay_exponent(&self) -> Option<f64> {
        match self.family {
            Family::PolyDecay { beta, .. } => Some(beta),
            _ => None,
        }
    }

    pub fn correlation_length(&self) -> f64 {
        match &self.family {
            Family::BargmannFock { scale } | Family::PolyDecay { scale, .. } => *scale,
            Family::CosineMixture { waves } => {
                let kmax = waves
                    .iter()
                    .map(|w| w.freq.iter().map(|v| v * v).sum::<f64>().sqrt())
                    .fold(0.0, f64::max);
                if kmax > 0.0 { 1.0 / kmax } else { 1.0 }
            }
        }
    }

    /// `-d^2 K / dx_1^2` at the origin.
    pub fn second_moment(&self) -> f64 {
        match &self.family {
            Family::BargmannFock { scale } => 1.0 / (scale * scale),
            Family::PolyDecay { beta, scale } => beta / (scale * scale),
            Family::CosineMixture { waves } => waves.iter().map(|w| w.weight * w.freq[0] * w.freq[0]).sum(),
        }
    }

    /// Radius beyond which `|K| < eps`; infinite for non-decaying kernels.
    pub fn decay_radius(&self, eps: f64) -> f64 {
        match &self.family {
            Family::BargmannFock { scale } => scale * (2.0 * (1.0 / eps).ln()).sqrt(),
            Family::PolyDecay { beta, scale } => scale * (eps.powf(-2.0 / beta) - 1.0).max(0.0).sqrt(),
            Family::CosineMixture { .. } => f64::INFINITY,
        }
    }

    pub fn is_cosine(&self) -> bool {
        matches!(self.family, Family::CosineMixture { .. })
    }

    /// Radial profile `g(q)` and its first two derivatives in `q = |x|^2`.
    fn radial(&self, q: f64) -> (f64, f64, f64) {
        match self.family {
            Family::BargmannFock { scale } => {
                let c = 0.5 / (scale * scale);
                let g = (-c * q).exp();
                (g, -c * g, c * c * g)
            }
            Family::PolyDecay { beta, scale } => {
                let a = 1.0 / (scale * scale);
                let b = 0.5 * beta;
                let u = 1.0 + a * q;
                let g = u.powf(-b);
                (g, -b * a * g / u, b * (b + 1.0) * a * a * g / (u * u))
            }
            Family::CosineMixture { .. } => unreachable!(),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match &self.family {
            Family::CosineMixture { waves } => waves.iter().map(|w| w.weight * dot(&w.freq, x).cos()).sum(),
            _ => {
                let q: f64 = x.iter().take(self.dim).map(|v| v * v).sum();
                self.radial(q).0
            }
        }
    }

    pub fn jet(&self, x: &[f64]) -> Jet {
        let d = self.dim;
        let mut jet = Jet { value: 0.0, grad: [0.0; 3], hess: [[0.0; 3]; 3] };
        match &self.family {
            Family::CosineMixture { waves } => {
                for w in waves {
                    let ph = dot(&w.freq, x);
                    let (s, c) = ph.sin_cos();
                    jet.value += w.weight * c;
                    for i in 0..d {
                        jet.grad[i] -= w.weight * w.freq[i] * s;
                        for j in 0..d {
                            jet.hess[i][j] -= w.weight * w.freq[i] * w.freq[j] * c;
                        }
                    }
                }
            }
            _ => {
                let q: f64 = x.iter().take(d).map(|v| v * v).sum();
                let (g, g1, g2) = self.radial(q);
                jet.value = g;
                for i in 0..d {
                    jet.grad[i] = 2.0 * g1 * x[i];
                    for j in 0..d {
                        jet.hess[i][j] = 4.0 * g2 * x[i] * x[j] + if i == j { 2.0 * g1 } else { 0.0 };
                    }
                }
            }
        }
        jet
    }

    /// `sup |K(y)|` over a refined sample of the closed unit ball around `x`.
    pub fn ktilde(&self, x: &[f64]) -> f64 {
        const PER_AXIS: usize = 27;
        let d = self.dim;
        let mut best = self.eval(x).abs();
        let r: f64 = x.iter().take(d).map(|v| v * v).sum::<f64>().sqrt();
        if r > 0.0 {
            let s = if r > 1.0 { 1.0 - 1.0 / r } else { 0.0 };
            let y: Vec<f64> = x.iter().take(d).map(|v| v * s).collect();
            best = best.max(self.eval(&y).abs());
        }
        let step = 2.0 / (PER_AXIS - 1) as f64;
        let total = PER_AXIS.pow(d as u32);
        let mut y = vec![0.0; d];
        for n in 0..total {
            let mut m = n;
            let mut norm = 0.0;
            for k in 0..d {
                let u = -1.0 + step * (m % PER_AXIS) as f64;
                m /= PER_AXIS;
                norm += u * u;
                y[k] = x[k] + u;
            }
            if norm <= 1.0 + 1e-12 {
                best = best.max(self.eval(&y).abs());
            }
        }
        best
    }

    fn fit_envelope(&self, beta: f64) -> f64 {
        let s = self.correlation_length();
        let mut best = s.powf(beta);
        let n = 20_000;
        let rmax = 1e4 * s;
        for i in 0..=n {
            let r = rmax * (i as f64 / n as f64).powi(3);
            let v = (1.0 + r).powf(beta) * self.radial(r * r).0;
            best = best.max(v);
        }
        best * (1.0 + 1e-9)
    }

    pub fn descriptor(&self) -> ModelDescriptor {
        let (family, params) = match &self.family {
            Family::BargmannFock { scale } => ("BargmannFock", json!({ "scale": scale })),
            Family::PolyDecay { beta, scale } => ("PolyDecay", json!({ "beta": beta, "scale": scale })),
            Family::CosineMixture { waves } => ("CosineMixture", json!({ "waves": waves })),
        };
        ModelDescriptor { family: family.into(), d: self.dim, params, envelope_c: Some(self.envelope_c) }
    }

    pub fn from_descriptor(desc: &ModelDescriptor) -> Result<Self> {
        let num = |key: &str, default: Option<f64>| -> Result<f64> {
            match desc.params.get(key) {
                Some(v) => v.as_f64().ok_or_else(|| Error::InvalidInput(format!("param {key} not a number"))),
                None => default.ok_or_else(|| Error::InvalidInput(format!("missing param {key}"))),
            }
        };
        let family = match desc.family.as_str() {
            "BargmannFock" => Family::BargmannFock { scale: num("scale", Some(1.0))? },
            "PolyDecay" => Family::PolyDecay { beta: num("beta", None)?, scale: num("scale", Some(1.0))? },
            "CosineMixture" => {
                let waves = desc
                    .params
                    .get("waves")
                    .cloned()
                    .ok_or_else(|| Error::InvalidInput("missing param waves".into()))?;
                let waves: Vec<Wave> =
                    serde_json::from_value(waves).map_err(|e| Error::InvalidInput(e.to_string()))?;
                Family::CosineMixture { waves }
            }
            other => return Err(Error::InvalidInput(format!("unknown family {other}"))),
        };
        CovarianceModel::new(family, desc.d)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn covariance_eval(model: &CovarianceModel, x: &[f64]) -> f64 {
    model.eval(x)
}

pub fn ktilde_eval(model: &CovarianceModel, x: &[f64]) -> f64 {
    model.ktilde(x)
}
