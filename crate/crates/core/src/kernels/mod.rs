//! Differentiable training kernels with hand-written backward passes:
//! multi-query multi-head attention pooling, additive-angular-margin softmax
//! with sub-centers and Inter-TopK penalty, SphereFace2, a small residual
//! frame encoder, and a toy trainer running the two-step recipe.

mod encoder;
mod margin;
mod params;
mod pooling;
mod sphere2;
pub mod tensors;
pub mod toy;

pub use encoder::{EncoderCache, ResidualEncoder};
pub use margin::{aam_loss, AamOutput, MarginLossConfig};
pub use params::{NamedTensor, Parameters};
pub use pooling::{mqmha_backward, mqmha_forward, MqmhaCache, MqmhaParams, PoolingConfig};
pub use sphere2::{sphereface2_loss, MarginType, Sphere2Config, Sphere2Output};

use ndarray::{Array1, ArrayView1};

/// Unit-normalizes `v`, returning the unit vector and the original norm.
pub(crate) fn unit(v: ArrayView1<f64>) -> (Array1<f64>, f64) {
    let n = v.dot(&v).sqrt();
    (v.mapv(|x| x / n), n)
}

/// Backward of `v ↦ v / ‖v‖` given the unit vector and norm.
pub(crate) fn unit_backward(unit: ArrayView1<f64>, norm: f64, grad_unit: ArrayView1<f64>) -> Array1<f64> {
    let proj = unit.dot(&grad_unit);
    (&grad_unit - &(&unit * proj)) / norm
}

pub(crate) fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
