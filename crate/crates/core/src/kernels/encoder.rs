//! Small residual frame encoder used to drive pooling and loss training.
//!
//! `h₀ = x Wᵢₙᵀ + bᵢₙ`, then per block `h ← h + relu(h W₁ᵀ + b₁) W₂ᵀ + b₂`.
//! Frames are processed independently.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng as _;

use super::params::{NamedTensor, Parameters};
use crate::rng::Rng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualEncoder {
    pub in_w: Array2<f64>,
    pub in_b: Array1<f64>,
    pub blocks: Vec<ResidualBlock>,
}

#[derive(Debug, Clone)]
pub struct EncoderCache {
    input: Array2<f64>,
    /// Input to each block.
    block_in: Vec<Array2<f64>>,
    /// Pre-activation of each block's hidden layer.
    pre: Vec<Array2<f64>>,
}

fn uniform(shape: (usize, usize), bound: f64, rng: &mut Rng) -> Array2<f64> {
    Array2::from_shape_fn(shape, |_| rng.gen_range(-bound..bound))
}

impl ResidualEncoder {
    pub fn zeros(input_dim: usize, width: usize, n_blocks: usize) -> Self {
        let block = ResidualBlock {
            w1: Array2::zeros((width, width)),
            b1: Array1::zeros(width),
            w2: Array2::zeros((width, width)),
            b2: Array1::zeros(width),
        };
        Self { in_w: Array2::zeros((width, input_dim)), in_b: Array1::zeros(width), blocks: vec![block; n_blocks] }
    }

    pub fn init(input_dim: usize, width: usize, n_blocks: usize, rng: &mut Rng) -> Self {
        let mut enc = Self::zeros(input_dim, width, n_blocks);
        enc.in_w = uniform((width, input_dim), (3.0 / input_dim as f64).sqrt(), rng);
        for b in &mut enc.blocks {
            b.w1 = uniform((width, width), (6.0 / width as f64).sqrt(), rng);
            // Residual branches start small.
            b.w2 = uniform((width, width), 0.1 * (3.0 / width as f64).sqrt(), rng);
        }
        enc
    }

    pub fn input_dim(&self) -> usize {
        self.in_w.ncols()
    }

    pub fn width(&self) -> usize {
        self.in_w.nrows()
    }

    pub fn forward(&self, frames: ArrayView2<f64>) -> Result<(Array2<f64>, EncoderCache)> {
        if frames.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), got: frames.ncols() });
        }
        let mut h = frames.dot(&self.in_w.t()) + &self.in_b;
        let mut block_in = Vec::with_capacity(self.blocks.len());
        let mut pre = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let a = h.dot(&b.w1.t()) + &b.b1;
            let r = a.mapv(|v| v.max(0.0));
            let next = &h + &(r.dot(&b.w2.t()) + &b.b2);
            block_in.push(h);
            pre.push(a);
            h = next;
        }
        Ok((h, EncoderCache { input: frames.to_owned(), block_in, pre }))
    }

    /// Returns the input gradient and the parameter gradients.
    pub fn backward(&self, cache: &EncoderCache, grad_out: ArrayView2<f64>) -> Result<(Array2<f64>, ResidualEncoder)> {
        if grad_out.ncols() != self.width() || grad_out.nrows() != cache.input.nrows() {
            return Err(Error::invalid("encoder gradient shape does not match cache"));
        }
        let mut grads = Self::zeros(self.input_dim(), self.width(), self.blocks.len());
        let mut g = grad_out.to_owned();
        for (i, b) in self.blocks.iter().enumerate().rev() {
            let a = &cache.pre[i];
            let r = a.mapv(|v| v.max(0.0));
            let gb = &mut grads.blocks[i];
            gb.w2.assign(&g.t().dot(&r));
            gb.b2.assign(&g.sum_axis(Axis(0)));
            let mut ga = g.dot(&b.w2);
            ga.zip_mut_with(a, |d, &v| {
                if v <= 0.0 {
                    *d = 0.0;
                }
            });
            gb.w1.assign(&ga.t().dot(&cache.block_in[i]));
            gb.b1.assign(&ga.sum_axis(Axis(0)));
            g += &ga.dot(&b.w1);
        }
        grads.in_w.assign(&g.t().dot(&cache.input));
        grads.in_b.assign(&g.sum_axis(Axis(0)));
        Ok((g.dot(&self.in_w), grads))
    }
}

impl Parameters for ResidualEncoder {
    fn tensors(&self) -> Vec<NamedTensor<'_>> {
        fn t<'a>(name: &'static str, index: Option<usize>, shape: &'a [usize], data: &'a [f64]) -> NamedTensor<'a> {
            NamedTensor { name, index, shape, data }
        }
        let mut out = vec![
            t("in_w", None, self.in_w.shape(), self.in_w.as_slice().expect("standard layout")),
            t("in_b", None, self.in_b.shape(), self.in_b.as_slice().expect("standard layout")),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            out.push(t("w1", Some(i), b.w1.shape(), b.w1.as_slice().expect("standard layout")));
            out.push(t("b1", Some(i), b.b1.shape(), b.b1.as_slice().expect("standard layout")));
            out.push(t("w2", Some(i), b.w2.shape(), b.w2.as_slice().expect("standard layout")));
            out.push(t("b2", Some(i), b.b2.shape(), b.b2.as_slice().expect("standard layout")));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![
            self.in_w.as_slice_mut().expect("standard layout"),
            self.in_b.as_slice_mut().expect("standard layout"),
        ];
        for b in &mut self.blocks {
            out.push(b.w1.as_slice_mut().expect("standard layout"));
            out.push(b.b1.as_slice_mut().expect("standard layout"));
            out.push(b.w2.as_slice_mut().expect("standard layout"));
            out.push(b.b2.as_slice_mut().expect("standard layout"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn shapes_and_zero_gradient() {
        let mut r = rng::seeded(0);
        let enc = ResidualEncoder::init(16, 32, 2, &mut r);
        let x = Array2::from_shape_fn((5, 16), |_| r.gen_range(-1.0..1.0));
        let (h, cache) = enc.forward(x.view()).unwrap();
        assert_eq!(h.dim(), (5, 32));
        let (gx, gp) = enc.backward(&cache, Array2::zeros((5, 32)).view()).unwrap();
        assert!(gx.iter().all(|&v| v == 0.0));
        assert!(gp.flatten().iter().all(|&v| v == 0.0));
        assert_eq!(enc.num_params(), 32 * 16 + 32 + 2 * (2 * 32 * 32 + 2 * 32));
        assert!(enc.forward(Array2::zeros((2, 15)).view()).is_err());
    }
}
