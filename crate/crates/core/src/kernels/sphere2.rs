//! SphereFace2: one-vs-rest binary logistic losses on angular similarity.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use super::{sigmoid, softplus, unit, unit_backward};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum MarginType {
    /// Additive cosine margin.
    #[default]
    C,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sphere2Config {
    /// Weight of the positive term; negatives share `1 − λ`.
    pub lambda_weight: f64,
    pub margin: f64,
    pub margin_type: MarginType,
    pub scale_s: f64,
}

impl Default for Sphere2Config {
    fn default() -> Self {
        Self { lambda_weight: 0.7, margin: 0.2, margin_type: MarginType::C, scale_s: 32.0 }
    }
}

impl Sphere2Config {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_weight > 0.0 && self.lambda_weight < 1.0) {
            return Err(Error::invalid(format!("lambda {} not in (0, 1)", self.lambda_weight)));
        }
        if !(self.scale_s > 0.0) || !self.margin.is_finite() {
            return Err(Error::invalid("scale must be positive and margin finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Sphere2Output {
    pub loss: f64,
    pub grad_embedding: Array1<f64>,
    /// `(C, d)`
    pub grad_weights: Array2<f64>,
    pub grad_bias: f64,
}

/// `λ·softplus(−(s(cos θ_y − m) + b)) + (1−λ)/(C−1)·Σ_{c≠y} softplus(s(cos θ_c + m) + b)`
/// for class weights `(C, d)` and a trainable bias `b`.
pub fn sphereface2_loss(
    embedding: ArrayView1<f64>,
    weights: &Array2<f64>,
    bias: f64,
    label: usize,
    cfg: &Sphere2Config,
) -> Result<Sphere2Output> {
    cfg.validate()?;
    let (n_classes, d) = weights.dim();
    if n_classes < 2 {
        return Err(Error::invalid("SphereFace2 needs at least two classes"));
    }
    if label >= n_classes {
        return Err(Error::invalid(format!("label {label} out of range 0..{n_classes}")));
    }
    if embedding.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: embedding.len() });
    }
    let (e_hat, e_norm) = unit(embedding);
    if !(e_norm > 0.0) {
        return Err(Error::ZeroNorm(None));
    }
    let lam = cfg.lambda_weight;
    let neg_weight = (1.0 - lam) / (n_classes - 1) as f64;
    let s_ = cfg.scale_s;

    let mut loss = 0.0;
    let mut grad_bias = 0.0;
    let mut grad_e_hat = Array1::<f64>::zeros(d);
    let mut grad_weights = Array2::<f64>::zeros((n_classes, d));
    for c in 0..n_classes {
        let (w_hat, w_norm) = unit(weights.row(c));
        if !(w_norm > 0.0) {
            return Err(Error::ZeroNorm(Some(format!("class {c}"))));
        }
        let cos = e_hat.dot(&w_hat);
        // d loss / d z for this class's logit z.
        let g_z = if c == label {
            let z = s_ * (cos - cfg.margin) + bias;
            loss += lam * softplus(-z);
            -lam * sigmoid(-z)
        } else {
            let z = s_ * (cos + cfg.margin) + bias;
            loss += neg_weight * softplus(z);
            neg_weight * sigmoid(z)
        };
        grad_bias += g_z;
        let g_cos = g_z * s_;
        grad_e_hat.scaled_add(g_cos, &w_hat);
        let g_w_hat = &e_hat * g_cos;
        grad_weights.row_mut(c).assign(&unit_backward(w_hat.view(), w_norm, g_w_hat.view()));
    }
    Ok(Sphere2Output {
        loss,
        grad_embedding: unit_backward(e_hat.view(), e_norm, grad_e_hat.view()),
        grad_weights,
        grad_bias,
    })
}
