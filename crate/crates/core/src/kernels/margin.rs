//! Additive angular margin softmax with K sub-centers and Inter-TopK penalty.

use ndarray::{s, Array1, Array3, ArrayView1};
use serde::{Deserialize, Serialize};

use super::{unit, unit_backward};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginLossConfig {
    pub scale_s: f64,
    pub margin_m: f64,
    pub n_subcenters: usize,
    /// Number of hardest non-target classes receiving the penalty.
    pub topk: usize,
    /// Added to the cosine of each Inter-TopK class before scaling.
    pub penalty: f64,
    pub n_classes: usize,
}

impl MarginLossConfig {
    /// Initial-training settings: s = 32, m = 0.2, K = 3, top-5 penalty 0.06.
    pub fn initial(n_classes: usize) -> Self {
        Self { scale_s: 32.0, margin_m: 0.2, n_subcenters: 3, topk: 5, penalty: 0.06, n_classes }
    }

    /// Large-margin fine-tuning: m = 0.5 and no Inter-TopK penalty.
    pub fn large_margin(n_classes: usize) -> Self {
        Self { margin_m: 0.5, topk: 0, penalty: 0.0, ..Self::initial(n_classes) }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale_s > 0.0) {
            return Err(Error::invalid("scale_s must be positive"));
        }
        if !(0.0..std::f64::consts::FRAC_PI_2).contains(&self.margin_m) {
            return Err(Error::invalid(format!("margin {} not in [0, π/2)", self.margin_m)));
        }
        if self.n_classes < 2 || self.n_subcenters == 0 {
            return Err(Error::invalid("need at least two classes and one sub-center"));
        }
        if self.topk >= self.n_classes {
            return Err(Error::invalid(format!(
                "topk {} must be smaller than the class count {}",
                self.topk, self.n_classes
            )));
        }
        if !self.penalty.is_finite() {
            return Err(Error::NonFinite("penalty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AamOutput {
    pub loss: f64,
    pub grad_embedding: Array1<f64>,
    /// Same shape as the class weights, `(C, K, d)`.
    pub grad_weights: Array3<f64>,
    /// Per-class cosine after the sub-center max.
    pub cosines: Array1<f64>,
}

/// Target-logit margin function: `cos(θ + m)` while `θ + m ≤ π`, otherwise
/// `cos θ − m·sin m`. Returns the value and its derivative in `cos θ`.
fn margin_cos(c: f64, m: f64) -> (f64, f64) {
    if m == 0.0 {
        return (c, 1.0);
    }
    let theta = c.clamp(-1.0, 1.0).acos();
    if theta + m <= std::f64::consts::PI {
        let sin = (1.0 - c * c).max(0.0).sqrt();
        let value = c * m.cos() - sin * m.sin();
        let deriv = m.cos() + m.sin() * c / sin.max(1e-12);
        (value, deriv)
    } else {
        (c - m * m.sin(), 1.0)
    }
}

/// Cross-entropy over margin-adjusted logits for one embedding.
///
/// `weights` has shape `(C, K, d)`; embedding and weights are unit-normalized
/// internally and gradients are returned for the raw inputs. The class cosine
/// is the max over sub-centers (lowest index wins ties). Among non-target
/// classes the `topk` highest cosines get `+penalty`.
pub fn aam_loss(
    embedding: ArrayView1<f64>,
    weights: &Array3<f64>,
    label: usize,
    cfg: &MarginLossConfig,
) -> Result<AamOutput> {
    cfg.validate()?;
    let (n_classes, k, d) = weights.dim();
    if n_classes != cfg.n_classes || k != cfg.n_subcenters {
        return Err(Error::invalid(format!(
            "weights shaped ({n_classes}, {k}, {d}) but config expects {} classes × {} sub-centers",
            cfg.n_classes, cfg.n_subcenters
        )));
    }
    if embedding.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: embedding.len() });
    }
    if label >= n_classes {
        return Err(Error::invalid(format!("label {label} out of range 0..{n_classes}")));
    }
    let (e_hat, e_norm) = unit(embedding);
    if !(e_norm > 0.0) {
        return Err(Error::ZeroNorm(None));
    }

    let mut units = Vec::with_capacity(n_classes * k);
    let mut cos_all = Array1::<f64>::zeros(n_classes * k);
    for c in 0..n_classes {
        for j in 0..k {
            let (w_hat, w_norm) = unit(weights.slice(s![c, j, ..]));
            if !(w_norm > 0.0) {
                return Err(Error::ZeroNorm(Some(format!("class {c} sub-center {j}"))));
            }
            cos_all[c * k + j] = e_hat.dot(&w_hat);
            units.push((w_hat, w_norm));
        }
    }
    let best: Vec<usize> = (0..n_classes)
        .map(|c| (0..k).fold(0, |b, j| if cos_all[c * k + j] > cos_all[c * k + b] { j } else { b }))
        .collect();
    let cosines = Array1::from_iter((0..n_classes).map(|c| cos_all[c * k + best[c]]));

    let mut penalized = vec![false; n_classes];
    if cfg.topk > 0 && cfg.penalty != 0.0 {
        let mut others: Vec<usize> = (0..n_classes).filter(|&c| c != label).collect();
        others.sort_by(|&a, &b| cosines[b].total_cmp(&cosines[a]).then(a.cmp(&b)));
        for &c in others.iter().take(cfg.topk) {
            penalized[c] = true;
        }
    }

    let s_ = cfg.scale_s;
    let (target_value, target_deriv) = margin_cos(cosines[label], cfg.margin_m);
    let logits = Array1::from_iter((0..n_classes).map(|c| {
        if c == label {
            s_ * target_value
        } else if penalized[c] {
            s_ * (cosines[c] + cfg.penalty)
        } else {
            s_ * cosines[c]
        }
    }));
    let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let exp = logits.mapv(|z| (z - max).exp());
    let sum = exp.sum();
    let loss = sum.ln() + max - logits[label];

    let mut grad_e_hat = Array1::<f64>::zeros(d);
    let mut grad_weights = Array3::<f64>::zeros((n_classes, k, d));
    for c in 0..n_classes {
        let p = exp[c] / sum;
        let g_logit = if c == label { p - 1.0 } else { p };
        let g_cos = g_logit * s_ * if c == label { target_deriv } else { 1.0 };
        let j = best[c];
        let (w_hat, w_norm) = &units[c * k + j];
        grad_e_hat.scaled_add(g_cos, w_hat);
        let g_w_hat = &e_hat * g_cos;
        grad_weights.slice_mut(s![c, j, ..]).assign(&unit_backward(w_hat.view(), *w_norm, g_w_hat.view()));
    }
    let grad_embedding = unit_backward(e_hat.view(), e_norm, grad_e_hat.view());
    Ok(AamOutput { loss, grad_embedding, grad_weights, cosines })
}
