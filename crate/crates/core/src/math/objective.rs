//! Per-client loss oracles.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::data::Dataset;
use crate::error::{AreaError, Result};
use crate::math::ModelVector;

/// Hessian of a quadratic loss.
#[derive(Clone, Debug)]
pub enum Curvature {
    Diagonal(Vec<f64>),
    /// Symmetric positive definite matrix.
    Dense(DMatrix<f64>),
}

impl Curvature {
    pub fn identity(dim: usize) -> Self {
        Curvature::Diagonal(vec![1.0; dim])
    }

    pub fn dim(&self) -> usize {
        match self {
            Curvature::Diagonal(d) => d.len(),
            Curvature::Dense(m) => m.nrows(),
        }
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        match self {
            Curvature::Diagonal(d) => d.iter().zip(v).map(|(a, b)| a * b).collect(),
            Curvature::Dense(m) => {
                let n = m.nrows();
                let mut out = vec![0.0; n];
                for (j, &vj) in v.iter().enumerate() {
                    let col = m.column(j);
                    for (o, q) in out.iter_mut().zip(col.iter()) {
                        *o += q * vj;
                    }
                }
                out
            }
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            Curvature::Diagonal(d) => DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(d)),
            Curvature::Dense(m) => m.clone(),
        }
    }

    /// Smallest and largest eigenvalue.
    pub fn eigen_range(&self) -> (f64, f64) {
        let eig: Vec<f64> = match self {
            Curvature::Diagonal(d) => d.clone(),
            Curvature::Dense(m) => m.clone().symmetric_eigenvalues().iter().copied().collect(),
        };
        eig.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &e| {
            (lo.min(e), hi.max(e))
        })
    }
}

/// `f(x) = ½ (x − c)ᵀ Q (x − c)`
#[derive(Clone, Debug)]
pub struct Quadratic {
    pub curvature: Curvature,
    pub center: ModelVector,
}

impl Quadratic {
    pub fn new(curvature: Curvature, center: ModelVector) -> Result<Self> {
        center.check_dim(curvature.dim())?;
        Ok(Self { curvature, center })
    }

    pub fn value_grad(&self, x: &ModelVector) -> Result<(f64, ModelVector)> {
        x.check_dim(self.center.dim())?;
        let r = x.sub(&self.center);
        let g = self.curvature.apply(r.as_slice());
        let value = 0.5 * r.as_slice().iter().zip(&g).map(|(a, b)| a * b).sum::<f64>();
        Ok((value, ModelVector::from_vec(g)))
    }
}

/// `f(x) = (1/d) Σ_j |x_j − c_j|`
#[derive(Clone, Debug)]
pub struct AbsoluteDeviation {
    pub center: ModelVector,
}

impl AbsoluteDeviation {
    pub fn new(center: ModelVector) -> Self {
        Self { center }
    }

    /// Value and a subgradient; the subgradient coordinate at a kink is 0.
    pub fn value_subgrad(&self, x: &ModelVector) -> Result<(f64, ModelVector)> {
        let d = self.center.dim();
        x.check_dim(d)?;
        let scale = 1.0 / d as f64;
        let mut value = 0.0;
        let mut g = ModelVector::zeros(d);
        for j in 0..d {
            let r = x[j] - self.center[j];
            value += r.abs();
            g[j] = if r > 0.0 {
                scale
            } else if r < 0.0 {
                -scale
            } else {
                0.0
            };
        }
        Ok((value * scale, g))
    }
}

/// Multinomial ℓ2-regularized logistic regression over a client's samples.
///
/// The model packs `classes` weight blocks of `feature_dim` entries each,
/// class-major: block `l` occupies `x[l*feature_dim .. (l+1)*feature_dim]`.
/// The loss is the negative log-likelihood plus `ridge/2 · ‖x‖²`.
#[derive(Clone, Debug)]
pub struct LogReg {
    pub data: Arc<Dataset>,
    pub samples: Vec<usize>,
    pub ridge: f64,
}

impl LogReg {
    pub fn new(data: Arc<Dataset>, samples: Vec<usize>, ridge: f64) -> Self {
        Self {
            data,
            samples,
            ridge,
        }
    }

    pub fn classes(&self) -> usize {
        self.data.classes()
    }

    pub fn dim(&self) -> usize {
        self.data.classes() * self.data.feature_dim()
    }

    /// Value and gradient over the dataset rows `ids`.
    pub fn value_grad(&self, x: &ModelVector, ids: &[usize]) -> Result<(f64, ModelVector)> {
        x.check_dim(self.dim())?;
        if ids.is_empty() {
            return Err(AreaError::EmptySampleSet);
        }
        let classes = self.classes();
        let fd = self.data.feature_dim();
        let w = x.as_slice();
        let mut grad = vec![0.0; w.len()];
        let mut nll = 0.0;
        let mut logits = vec![0.0; classes];
        let inv = 1.0 / ids.len() as f64;
        for &j in ids {
            let feat = self.data.features(j);
            let label = self.data.label(j);
            class_logits(w, feat, &mut logits);
            let lse = log_sum_exp(&logits);
            nll += cross_entropy(&logits, label, lse);
            for (l, &z) in logits.iter().enumerate() {
                let coeff = ((z - lse).exp() - if l == label { 1.0 } else { 0.0 }) * inv;
                if coeff != 0.0 {
                    let block = &mut grad[l * fd..(l + 1) * fd];
                    for (g, &f) in block.iter_mut().zip(feat) {
                        *g += coeff * f as f64;
                    }
                }
            }
        }
        let mut value = nll * inv;
        if self.ridge != 0.0 {
            value += 0.5 * self.ridge * w.iter().map(|v| v * v).sum::<f64>();
            for (g, v) in grad.iter_mut().zip(w) {
                *g += self.ridge * v;
            }
        }
        Ok((value, ModelVector::from_vec(grad)))
    }

    /// Value only, over all of this client's samples.
    pub fn value(&self, x: &ModelVector) -> Result<f64> {
        x.check_dim(self.dim())?;
        if self.samples.is_empty() {
            return Err(AreaError::EmptySampleSet);
        }
        let w = x.as_slice();
        let mut logits = vec![0.0; self.classes()];
        let mut nll = 0.0;
        for &j in &self.samples {
            class_logits(w, self.data.features(j), &mut logits);
            let lse = log_sum_exp(&logits);
            nll += cross_entropy(&logits, self.data.label(j), lse);
        }
        let reg = 0.5 * self.ridge * w.iter().map(|v| v * v).sum::<f64>();
        Ok(nll / self.samples.len() as f64 + reg)
    }
}

fn class_logits(w: &[f64], feat: &[f32], out: &mut [f64]) {
    let fd = feat.len();
    for (l, o) in out.iter_mut().enumerate() {
        let block = &w[l * fd..(l + 1) * fd];
        *o = block.iter().zip(feat).map(|(a, &b)| a * b as f64).sum();
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// `lse − z_y`, evaluated as `ln(1 + Σ_{l≠y} e^{z_l − z_y})` when the label
/// holds the largest logit so tiny losses keep their precision.
fn cross_entropy(z: &[f64], label: usize, lse: f64) -> f64 {
    let zy = z[label];
    if z.iter().all(|&v| v <= zy) && zy.is_finite() {
        let rest: f64 = z
            .iter()
            .enumerate()
            .filter(|&(l, _)| l != label)
            .map(|(_, &v)| (v - zy).exp())
            .sum();
        rest.ln_1p()
    } else {
        lse - zy
    }
}

/// Fraction of rows of `data` whose arg-max class under `x` equals the label.
pub fn classification_accuracy(x: &ModelVector, data: &Dataset) -> f64 {
    let classes = data.classes();
    let w = x.as_slice();
    let mut logits = vec![0.0; classes];
    let mut correct = 0usize;
    for j in 0..data.len() {
        class_logits(w, data.features(j), &mut logits);
        let mut best = 0;
        for l in 1..classes {
            if logits[l] > logits[best] {
                best = l;
            }
        }
        if best == data.label(j) {
            correct += 1;
        }
    }
    correct as f64 / data.len() as f64
}

#[derive(Clone, Debug)]
pub enum Objective {
    Quadratic(Quadratic),
    AbsoluteDeviation(AbsoluteDeviation),
    LogReg(LogReg),
}

impl Objective {
    pub fn dim(&self) -> usize {
        match self {
            Objective::Quadratic(q) => q.center.dim(),
            Objective::AbsoluteDeviation(a) => a.center.dim(),
            Objective::LogReg(l) => l.dim(),
        }
    }

    /// Value and exact (sub)gradient `d_i(x)`.
    pub fn value_grad(&self, x: &ModelVector) -> Result<(f64, ModelVector)> {
        match self {
            Objective::Quadratic(q) => q.value_grad(x),
            Objective::AbsoluteDeviation(a) => a.value_subgrad(x),
            Objective::LogReg(l) => l.value_grad(x, &l.samples),
        }
    }

    pub fn value(&self, x: &ModelVector) -> Result<f64> {
        match self {
            Objective::LogReg(l) => l.value(x),
            _ => Ok(self.value_grad(x)?.0),
        }
    }

    pub fn gradient(&self, x: &ModelVector) -> Result<ModelVector> {
        Ok(self.value_grad(x)?.1)
    }
}
