//! Multi-query multi-head attention (MQMHA) statistics pooling.
//!
//! Frame features `x_t ∈ R^D` are split into `n_heads` slices of width
//! `D / n_heads`. Each head has a tanh hidden layer of width
//! `(D / n_heads) / scale_factor`, shared by its `n_queries` attention
//! queries. Every (head, query) pair produces a softmax over time, a weighted
//! mean and a weighted standard deviation of its slice; all of them are
//! concatenated and projected to `out_dim`.

use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::params::{NamedTensor, Parameters};
use crate::rng::Rng;
use crate::{Error, Result};

/// Added inside the weighted-std square root.
pub const STD_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolingConfig {
    pub n_heads: usize,
    pub n_queries: usize,
    pub scale_factor: usize,
    pub input_dim: usize,
    pub out_dim: usize,
}

impl PoolingConfig {
    pub fn new(input_dim: usize) -> Self {
        Self { n_heads: 8, n_queries: 2, scale_factor: 2, input_dim, out_dim: 256 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0
            || self.n_queries == 0
            || self.scale_factor == 0
            || self.input_dim == 0
            || self.out_dim == 0
        {
            return Err(Error::invalid(format!("pooling sizes must be positive: {self:?}")));
        }
        if !self.input_dim.is_multiple_of(self.n_heads) {
            return Err(Error::invalid(format!(
                "input_dim {} not divisible by {} heads",
                self.input_dim, self.n_heads
            )));
        }
        if !self.head_dim().is_multiple_of(self.scale_factor) {
            return Err(Error::invalid(format!(
                "head width {} not divisible by scale factor {}",
                self.head_dim(),
                self.scale_factor
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.input_dim / self.n_heads
    }

    pub fn hidden_dim(&self) -> usize {
        self.head_dim() / self.scale_factor
    }

    /// Length of the concatenated (mean, std) statistics.
    pub fn stats_dim(&self) -> usize {
        2 * self.n_queries * self.input_dim
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MqmhaParams {
    pub cfg: PoolingConfig,
    /// `(heads, hidden, head_dim)`
    pub attn_w: Array3<f64>,
    /// `(heads, hidden)`
    pub attn_b: Array2<f64>,
    /// `(heads, queries, hidden)`
    pub queries: Array3<f64>,
    /// `(out_dim, stats_dim)`
    pub proj_w: Array2<f64>,
    pub proj_b: Array1<f64>,
}

impl MqmhaParams {
    pub fn zeros(cfg: PoolingConfig) -> Result<Self> {
        cfg.validate()?;
        let (h, q, hd, hw) = (cfg.n_heads, cfg.n_queries, cfg.head_dim(), cfg.hidden_dim());
        Ok(Self {
            cfg,
            attn_w: Array3::zeros((h, hw, hd)),
            attn_b: Array2::zeros((h, hw)),
            queries: Array3::zeros((h, q, hw)),
            proj_w: Array2::zeros((cfg.out_dim, cfg.stats_dim())),
            proj_b: Array1::zeros(cfg.out_dim),
        })
    }

    /// Uniform fan-in scaled initialization.
    pub fn init(cfg: PoolingConfig, rng: &mut Rng) -> Result<Self> {
        let mut p = Self::zeros(cfg)?;
        let a = (3.0 / cfg.head_dim() as f64).sqrt();
        p.attn_w.mapv_inplace(|_| rng.gen_range(-a..a));
        let a = (3.0 / cfg.hidden_dim() as f64).sqrt();
        p.queries.mapv_inplace(|_| rng.gen_range(-a..a));
        let a = (3.0 / cfg.stats_dim() as f64).sqrt();
        p.proj_w.mapv_inplace(|_| rng.gen_range(-a..a));
        Ok(p)
    }
}

impl Parameters for MqmhaParams {
    fn tensors(&self) -> Vec<NamedTensor<'_>> {
        let t = |name, shape, data| NamedTensor { name, index: None, shape, data };
        vec![
            t("attn_w", self.attn_w.shape(), self.attn_w.as_slice().expect("standard layout")),
            t("attn_b", self.attn_b.shape(), self.attn_b.as_slice().expect("standard layout")),
            t("queries", self.queries.shape(), self.queries.as_slice().expect("standard layout")),
            t("proj_w", self.proj_w.shape(), self.proj_w.as_slice().expect("standard layout")),
            t("proj_b", self.proj_b.shape(), self.proj_b.as_slice().expect("standard layout")),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.attn_w.as_slice_mut().expect("standard layout"),
            self.attn_b.as_slice_mut().expect("standard layout"),
            self.queries.as_slice_mut().expect("standard layout"),
            self.proj_w.as_slice_mut().expect("standard layout"),
            self.proj_b.as_slice_mut().expect("standard layout"),
        ]
    }
}

/// Intermediates kept by the forward pass.
#[derive(Debug, Clone)]
pub struct MqmhaCache {
    pub frames: Array2<f64>,
    /// Per head, `(T, hidden)` tanh activations.
    pub hidden: Vec<Array2<f64>>,
    /// `(heads, queries, T)` attention weights.
    pub alpha: Array3<f64>,
    /// `(heads, queries, head_dim)`
    pub mean: Array3<f64>,
    pub std: Array3<f64>,
    pub stats: Array1<f64>,
}

fn stat_offset(cfg: &PoolingConfig, h: usize, j: usize) -> usize {
    (h * cfg.n_queries + j) * 2 * cfg.head_dim()
}

pub fn mqmha_forward(frames: ArrayView2<f64>, params: &MqmhaParams) -> Result<(Array1<f64>, MqmhaCache)> {
    let cfg = params.cfg;
    let (t_len, d) = frames.dim();
    if t_len == 0 {
        return Err(Error::invalid("pooling over zero frames"));
    }
    if d != cfg.input_dim {
        return Err(Error::DimensionMismatch { expected: cfg.input_dim, got: d });
    }
    let (nh, nq, hd) = (cfg.n_heads, cfg.n_queries, cfg.head_dim());
    let mut hidden = Vec::with_capacity(nh);
    let mut alpha = Array3::zeros((nh, nq, t_len));
    let mut mean = Array3::zeros((nh, nq, hd));
    let mut std = Array3::zeros((nh, nq, hd));
    let mut stats = Array1::zeros(cfg.stats_dim());

    for h in 0..nh {
        let x = frames.slice(s![.., h * hd..(h + 1) * hd]);
        let a = params.attn_w.index_axis(Axis(0), h);
        let mut u = x.dot(&a.t());
        u += &params.attn_b.row(h);
        u.mapv_inplace(f64::tanh);
        for j in 0..nq {
            let logits = u.dot(&params.queries.slice(s![h, j, ..]));
            let m = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let mut w = logits.mapv(|v| (v - m).exp());
            w /= w.sum();
            let mu = w.dot(&x);
            let var = x
                .axis_iter(Axis(0))
                .zip(w.iter())
                .fold(Array1::<f64>::zeros(hd), |acc, (row, &wt)| acc + (&row - &mu).mapv(|v| v * v) * wt);
            let sigma = var.mapv(|v| (v + STD_EPS).sqrt());
            let off = stat_offset(&cfg, h, j);
            stats.slice_mut(s![off..off + hd]).assign(&mu);
            stats.slice_mut(s![off + hd..off + 2 * hd]).assign(&sigma);
            alpha.slice_mut(s![h, j, ..]).assign(&w);
            mean.slice_mut(s![h, j, ..]).assign(&mu);
            std.slice_mut(s![h, j, ..]).assign(&sigma);
        }
        hidden.push(u);
    }
    let out = params.proj_w.dot(&stats) + &params.proj_b;
    Ok((out, MqmhaCache { frames: frames.to_owned(), hidden, alpha, mean, std, stats }))
}

/// Gradient of the softmax logits given softmax output `w` and the gradient
/// with respect to `w`. The result always sums to zero.
pub(crate) fn softmax_backward(w: ArrayView1<f64>, grad_w: ArrayView1<f64>) -> Array1<f64> {
    let inner = w.dot(&grad_w);
    Array1::from_iter(w.iter().zip(grad_w.iter()).map(|(a, g)| a * (g - inner)))
}

/// Gradients with respect to the input frames and every parameter.
pub fn mqmha_backward(
    cache: &MqmhaCache,
    params: &MqmhaParams,
    grad_out: &Array1<f64>,
) -> Result<(Array2<f64>, MqmhaParams)> {
    let cfg = params.cfg;
    if grad_out.len() != cfg.out_dim {
        return Err(Error::DimensionMismatch { expected: cfg.out_dim, got: grad_out.len() });
    }
    let (t_len, d) = cache.frames.dim();
    if d != cfg.input_dim || cache.stats.len() != cfg.stats_dim() || cache.hidden.len() != cfg.n_heads {
        return Err(Error::invalid("pooling cache does not match parameters"));
    }
    let (nh, nq, hd) = (cfg.n_heads, cfg.n_queries, cfg.head_dim());
    let mut grads = MqmhaParams::zeros(cfg)?;
    grads.proj_b.assign(grad_out);
    grads.proj_w.assign(&grad_out.view().insert_axis(Axis(1)).dot(&cache.stats.view().insert_axis(Axis(0))));
    let grad_stats = params.proj_w.t().dot(grad_out);
    let mut grad_x = Array2::zeros((t_len, d));

    for h in 0..nh {
        let x = cache.frames.slice(s![.., h * hd..(h + 1) * hd]);
        let u = &cache.hidden[h];
        let mut grad_u = Array2::<f64>::zeros(u.dim());
        for j in 0..nq {
            let off = stat_offset(&cfg, h, j);
            let g_mu = grad_stats.slice(s![off..off + hd]);
            let g_sigma = grad_stats.slice(s![off + hd..off + 2 * hd]);
            let mu = cache.mean.slice(s![h, j, ..]);
            let sigma = cache.std.slice(s![h, j, ..]);
            let w = cache.alpha.slice(s![h, j, ..]);
            // d(var) where sigma = sqrt(var + eps).
            let g_var = &g_sigma / &(&sigma * 2.0);

            let mut g_alpha = Array1::<f64>::zeros(t_len);
            for t in 0..t_len {
                let dev = &x.row(t) - &mu;
                g_alpha[t] = g_mu.dot(&x.row(t)) + g_var.dot(&dev.mapv(|v| v * v));
                let gx = (&g_mu + &(&g_var * &dev * 2.0)) * w[t];
                let mut dst = grad_x.slice_mut(s![t, h * hd..(h + 1) * hd]);
                dst += &gx;
            }
            let g_logit = softmax_backward(w, g_alpha.view());
            let q = params.queries.slice(s![h, j, ..]);
            grads.queries.slice_mut(s![h, j, ..]).assign(&g_logit.dot(u));
            grad_u += &g_logit.view().insert_axis(Axis(1)).dot(&q.insert_axis(Axis(0)));
        }
        let g_pre = &grad_u * &u.mapv(|v| 1.0 - v * v);
        grads.attn_w.index_axis_mut(Axis(0), h).assign(&g_pre.t().dot(&x));
        grads.attn_b.row_mut(h).assign(&g_pre.sum_axis(Axis(0)));
        let a = params.attn_w.index_axis(Axis(0), h);
        let mut dst = grad_x.slice_mut(s![.., h * hd..(h + 1) * hd]);
        dst += &g_pre.dot(&a);
    }
    Ok((grad_x, grads))
}
