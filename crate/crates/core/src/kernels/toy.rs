//! Desk-scale training of encoder + MQMHA + margin loss on synthetic speakers.
//!
//! Synthetic utterances are frame sequences around a speaker-specific
//! spectral envelope, with utterance-level channel offsets and
//! speaker-independent content variation. The speed-perturbation analog
//! stretches a sequence in time and warps its feature axis by the factor, so
//! perturbed copies look like new speakers.
//!
//! Two steps are supported. `Initial` trains with speed-expanded labels
//! (3 × speakers) and either AAM + K-subcenter + Inter-TopK or SphereFace2.
//! `LargeMargin` drops the expansion and the Inter-TopK penalty, raises the
//! margin to 0.5, and triples the crop length.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{s, Array1, Array2, Array3, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::params::{NamedTensor, Parameters};
use super::{
    aam_loss, mqmha_backward, mqmha_forward, sphereface2_loss, tensors, MarginLossConfig, MqmhaParams, PoolingConfig,
    ResidualEncoder, Sphere2Config,
};
use crate::dspfeat::SpeedFactor;
use crate::metrics::{eer, EerMode};
use crate::rng::{self, Rng};
use crate::{Error, Result};

pub(crate) fn gauss(r: &mut Rng) -> f64 {
    // Box–Muller.
    let u1: f64 = 1.0 - r.gen::<f64>();
    let u2: f64 = r.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyDataConfig {
    pub n_speakers: usize,
    pub feat_dim: usize,
    pub train_utts_per_speaker: usize,
    pub heldout_utts_per_speaker: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    /// Per-frame noise standard deviation.
    pub frame_noise: f64,
    /// Per-utterance offset standard deviation.
    pub channel_noise: f64,
    /// Rank of the speaker-independent content subspace.
    pub content_rank: usize,
}

impl Default for ToyDataConfig {
    fn default() -> Self {
        Self {
            n_speakers: 20,
            feat_dim: 16,
            train_utts_per_speaker: 24,
            heldout_utts_per_speaker: 10,
            min_frames: 30,
            max_frames: 90,
            frame_noise: 2.0,
            channel_noise: 0.6,
            content_rank: 4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyUtterance {
    pub speaker: usize,
    pub frames: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct ToyDataset {
    pub n_speakers: usize,
    pub feat_dim: usize,
    pub train: Vec<ToyUtterance>,
    pub heldout: Vec<ToyUtterance>,
}

impl ToyDataset {
    pub fn synthetic(cfg: &ToyDataConfig, seed: u64) -> Result<Self> {
        if cfg.n_speakers < 2 || cfg.feat_dim == 0 || cfg.min_frames == 0 || cfg.min_frames > cfg.max_frames {
            return Err(Error::invalid(format!("invalid toy data config {cfg:?}")));
        }
        let mut r = rng::keyed(seed, "toy-data");
        let d = cfg.feat_dim;
        let content = Array2::from_shape_fn((d, cfg.content_rank), |_| gauss(&mut r) * 0.5);
        let envelopes: Vec<Array1<f64>> = (0..cfg.n_speakers)
            .map(|_| {
                let raw: Vec<f64> = (0..d + 2).map(|_| gauss(&mut r)).collect();
                Array1::from_iter((0..d).map(|i| 1.5 * (raw[i] + 2.0 * raw[i + 1] + raw[i + 2]) / 2.0))
            })
            .collect();
        let utterance = |spk: usize, r: &mut Rng| {
            let len = r.gen_range(cfg.min_frames..=cfg.max_frames);
            let channel = Array1::from_shape_fn(d, |_| gauss(r) * cfg.channel_noise);
            let mut frames = Array2::zeros((len, d));
            for t in 0..len {
                let z = Array1::from_shape_fn(cfg.content_rank, |_| gauss(r));
                let mut row = frames.row_mut(t);
                row.assign(&(&envelopes[spk] + &channel + content.dot(&z)));
                row.mapv_inplace(|v| v + gauss(r) * cfg.frame_noise);
            }
            ToyUtterance { speaker: spk, frames }
        };
        let mut train = Vec::new();
        let mut heldout = Vec::new();
        for spk in 0..cfg.n_speakers {
            for _ in 0..cfg.train_utts_per_speaker {
                train.push(utterance(spk, &mut r));
            }
            for _ in 0..cfg.heldout_utts_per_speaker {
                heldout.push(utterance(spk, &mut r));
            }
        }
        Ok(Self { n_speakers: cfg.n_speakers, feat_dim: d, train, heldout })
    }
}

fn lerp_row(row: &[f64], pos: f64) -> f64 {
    let n = row.len();
    let pos = pos.clamp(0.0, (n - 1) as f64);
    let i = pos.floor() as usize;
    if i + 1 >= n {
        row[n - 1]
    } else {
        let f = pos - i as f64;
        row[i] * (1.0 - f) + row[i + 1] * f
    }
}

/// Speed-perturbation analog for feature sequences: resample time by
/// `factor` (length `round(T / factor)`) and scale feature-axis "frequency"
/// up by `factor`.
pub fn perturb_sequence(frames: ArrayView2<f64>, factor: SpeedFactor) -> Array2<f64> {
    if factor == SpeedFactor::Unit {
        return frames.to_owned();
    }
    let f = factor.value();
    let (t_len, d) = frames.dim();
    let out_len = ((t_len as f64 / f).round() as usize).max(1);
    let mut out = Array2::zeros((out_len, d));
    let mut col = vec![0.0; t_len];
    for k in 0..d {
        col.iter_mut().zip(frames.column(k)).for_each(|(c, &v)| *c = v);
        for j in 0..out_len {
            out[[j, k]] = lerp_row(&col, j as f64 * f);
        }
    }
    let mut row = vec![0.0; d];
    for j in 0..out_len {
        row.copy_from_slice(out.row(j).as_slice().expect("standard layout"));
        for k in 0..d {
            out[[j, k]] = lerp_row(&row, k as f64 / f);
        }
    }
    out
}

/// Contiguous `len`-frame window at a random offset; short inputs wrap around.
pub fn crop_sequence(frames: ArrayView2<f64>, len: usize, r: &mut Rng) -> Array2<f64> {
    let t_len = frames.nrows();
    if t_len >= len {
        let off = r.gen_range(0..=t_len - len);
        frames.slice(s![off..off + len, ..]).to_owned()
    } else {
        Array2::from_shape_fn((len, frames.ncols()), |(t, k)| frames[[t % t_len, k]])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainStep {
    Initial,
    LargeMargin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossChoice {
    /// AAM + K-subcenter + Inter-TopK.
    Aam,
    Sphere2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyTrainConfig {
    pub lr_start: f64,
    pub lr_end: f64,
    pub epochs: usize,
    pub batch: usize,
    pub step: TrainStep,
    pub momentum: f64,
    /// Crop length in frames for the initial step; large-margin uses three times this.
    pub base_crop_frames: usize,
    pub seed: u64,
}

impl ToyTrainConfig {
    pub fn initial(seed: u64) -> Self {
        Self {
            lr_start: 0.1,
            lr_end: 1e-5,
            epochs: 12,
            batch: 32,
            step: TrainStep::Initial,
            momentum: 0.9,
            base_crop_frames: 20,
            seed,
        }
    }

    pub fn large_margin(seed: u64) -> Self {
        Self { epochs: 4, step: TrainStep::LargeMargin, ..Self::initial(seed) }
    }

    pub fn crop_frames(&self) -> usize {
        match self.step {
            TrainStep::Initial => self.base_crop_frames,
            TrainStep::LargeMargin => 3 * self.base_crop_frames,
        }
    }

    pub fn speed_expansion(&self) -> bool {
        self.step == TrainStep::Initial
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr_start > 0.0 && self.lr_end > 0.0 && self.lr_end < self.lr_start) {
            return Err(Error::invalid("learning rates need 0 < lr_end < lr_start"));
        }
        if self.epochs == 0 || self.batch == 0 || self.base_crop_frames == 0 {
            return Err(Error::invalid("epochs, batch and crop length must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        Ok(())
    }

    /// `lr_start · (lr_end / lr_start)^(t / total)`.
    pub fn lr_at(&self, t: usize, total: usize) -> f64 {
        self.lr_start * (self.lr_end / self.lr_start).powf(t as f64 / total as f64)
    }
}

/// Classification head and its loss configuration.
#[derive(Debug, Clone, PartialEq)]
pub enum Head {
    Aam {
        /// `(C, K, d)`
        weights: Array3<f64>,
        cfg: MarginLossConfig,
    },
    Sphere2 {
        /// `(C, d)`
        weights: Array2<f64>,
        /// Trainable bias, length 1.
        bias: Array1<f64>,
        cfg: Sphere2Config,
    },
}

impl Head {
    pub fn n_classes(&self) -> usize {
        match self {
            Head::Aam { weights, .. } => weights.dim().0,
            Head::Sphere2 { weights, .. } => weights.nrows(),
        }
    }

    fn zeros_like(&self) -> Self {
        match self {
            Head::Aam { weights, cfg } => Head::Aam { weights: Array3::zeros(weights.raw_dim()), cfg: *cfg },
            Head::Sphere2 { weights, cfg, .. } => {
                Head::Sphere2 { weights: Array2::zeros(weights.raw_dim()), bias: Array1::zeros(1), cfg: *cfg }
            }
        }
    }

    /// Loss and gradients for one embedding.
    pub fn loss(&self, embedding: &Array1<f64>, label: usize) -> Result<(f64, Array1<f64>, Head)> {
        match self {
            Head::Aam { weights, cfg } => {
                let out = aam_loss(embedding.view(), weights, label, cfg)?;
                Ok((out.loss, out.grad_embedding, Head::Aam { weights: out.grad_weights, cfg: *cfg }))
            }
            Head::Sphere2 { weights, bias, cfg } => {
                let out = sphereface2_loss(embedding.view(), weights, bias[0], label, cfg)?;
                Ok((
                    out.loss,
                    out.grad_embedding,
                    Head::Sphere2 { weights: out.grad_weights, bias: Array1::from(vec![out.grad_bias]), cfg: *cfg },
                ))
            }
        }
    }
}

impl Parameters for Head {
    fn tensors(&self) -> Vec<NamedTensor<'_>> {
        match self {
            Head::Aam { weights, .. } => vec![NamedTensor {
                name: "weights",
                index: None,
                shape: weights.shape(),
                data: weights.as_slice().expect("standard layout"),
            }],
            Head::Sphere2 { weights, bias, .. } => vec![
                NamedTensor {
                    name: "weights",
                    index: None,
                    shape: weights.shape(),
                    data: weights.as_slice().expect("standard layout"),
                },
                NamedTensor {
                    name: "bias",
                    index: None,
                    shape: bias.shape(),
                    data: bias.as_slice().expect("standard layout"),
                },
            ],
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Head::Aam { weights, .. } => vec![weights.as_slice_mut().expect("standard layout")],
            Head::Sphere2 { weights, bias, .. } => {
                vec![weights.as_slice_mut().expect("standard layout"), bias.as_slice_mut().expect("standard layout")]
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub encoder: ResidualEncoder,
    pub pooling: MqmhaParams,
    pub head: Head,
}

impl Parameters for ToyModel {
    fn tensors(&self) -> Vec<NamedTensor<'_>> {
        let mut v = self.encoder.tensors();
        v.extend(self.pooling.tensors());
        v.extend(self.head.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.encoder.tensors_mut();
        v.extend(self.pooling.tensors_mut());
        v.extend(self.head.tensors_mut());
        v
    }
}

pub const ENCODER_WIDTH: usize = 32;
pub const ENCODER_BLOCKS: usize = 2;

fn random_unit_rows(n: usize, d: usize, r: &mut Rng) -> Array2<f64> {
    let mut w = Array2::from_shape_fn((n, d), |_| gauss(r));
    for mut row in w.rows_mut() {
        let norm = row.dot(&row).sqrt();
        row /= norm;
    }
    w
}

impl ToyModel {
    /// Fresh model for the initial step.
    pub fn new(feat_dim: usize, n_classes: usize, loss: LossChoice, seed: u64) -> Result<Self> {
        let mut r = rng::keyed(seed, "toy-init");
        let encoder = ResidualEncoder::init(feat_dim, ENCODER_WIDTH, ENCODER_BLOCKS, &mut r);
        let pooling = MqmhaParams::init(PoolingConfig::new(ENCODER_WIDTH), &mut r)?;
        let d = pooling.cfg.out_dim;
        let head = match loss {
            LossChoice::Aam => {
                let cfg = MarginLossConfig::initial(n_classes);
                let flat = random_unit_rows(n_classes * cfg.n_subcenters, d, &mut r);
                Head::Aam { weights: flat.into_shape((n_classes, cfg.n_subcenters, d)).expect("sizes agree"), cfg }
            }
            LossChoice::Sphere2 => Head::Sphere2 {
                weights: random_unit_rows(n_classes, d, &mut r),
                bias: Array1::zeros(1),
                cfg: Sphere2Config::default(),
            },
        };
        Ok(Self { encoder, pooling, head })
    }

    pub fn embed(&self, frames: ArrayView2<f64>) -> Result<Array1<f64>> {
        let (h, _) = self.encoder.forward(frames)?;
        Ok(mqmha_forward(h.view(), &self.pooling)?.0)
    }

    fn zeros_like(&self) -> Self {
        let mut encoder = self.encoder.clone();
        encoder.fill_zero();
        let mut pooling = self.pooling.clone();
        pooling.fill_zero();
        Self { encoder, pooling, head: self.head.zeros_like() }
    }

    /// Loss and parameter gradients for one cropped sequence.
    pub fn loss_and_grad(&self, frames: ArrayView2<f64>, label: usize) -> Result<(f64, ToyModel)> {
        let (h, enc_cache) = self.encoder.forward(frames)?;
        let (emb, pool_cache) = mqmha_forward(h.view(), &self.pooling)?;
        let (loss, g_emb, g_head) = self.head.loss(&emb, label)?;
        let (g_h, g_pool) = mqmha_backward(&pool_cache, &self.pooling, &g_emb)?;
        let (_, g_enc) = self.encoder.backward(&enc_cache, g_h.view())?;
        Ok((loss, ToyModel { encoder: g_enc, pooling: g_pool, head: g_head }))
    }

    /// Model for large-margin fine-tuning: AAM + K-subcenter head over the
    /// unexpanded speakers, initialized from the unperturbed (`@1.0`) classes.
    pub fn for_large_margin(&self, n_speakers: usize, seed: u64) -> Result<Self> {
        let expanded = self.head.n_classes() == 3 * n_speakers;
        if !expanded && self.head.n_classes() != n_speakers {
            return Err(Error::invalid(format!(
                "head has {} classes, expected {} or {}",
                self.head.n_classes(),
                n_speakers,
                3 * n_speakers
            )));
        }
        let source = |spk: usize| if expanded { 3 * spk + 1 } else { spk };
        let cfg = MarginLossConfig::large_margin(n_speakers);
        let d = self.pooling.cfg.out_dim;
        let weights = match &self.head {
            Head::Aam { weights, .. } => {
                let k = weights.dim().1;
                Array3::from_shape_fn((n_speakers, k, d), |(c, j, i)| weights[[source(c), j, i]])
            }
            Head::Sphere2 { weights, .. } => {
                // Sub-centers start as jittered copies of the single class center.
                let mut r = rng::keyed(seed, "large-margin-head");
                Array3::from_shape_fn((n_speakers, cfg.n_subcenters, d), |(c, j, i)| {
                    let jitter = if j == 0 { 0.0 } else { 0.01 * gauss(&mut r) };
                    weights[[source(c), i]] + jitter
                })
            }
        };
        let n_subcenters = weights.dim().1;
        Ok(Self {
            encoder: self.encoder.clone(),
            pooling: self.pooling.clone(),
            head: Head::Aam { weights, cfg: MarginLossConfig { n_subcenters, ..cfg } },
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut stored = tensors::collect(&self.encoder, "encoder.");
        stored.extend(tensors::collect(&self.pooling, "pooling."));
        stored.extend(tensors::collect(&self.head, "head."));
        tensors::save(path, &stored)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
}

pub fn trace_csv(trace: &[TraceRow]) -> String {
    let mut out = String::from("epoch,loss,lr\n");
    for r in trace {
        writeln!(out, "{},{},{}", r.epoch, r.loss, r.lr).expect("writing to a String");
    }
    out
}

#[derive(Debug, Clone)]
pub struct ToyRun {
    pub model: ToyModel,
    pub trace: Vec<TraceRow>,
}

/// Class index of a training sample for the given step.
fn class_of(speaker: usize, factor: SpeedFactor, expanded: bool) -> usize {
    if expanded {
        let idx = SpeedFactor::ALL.iter().position(|&f| f == factor).expect("known factor");
        3 * speaker + idx
    } else {
        speaker
    }
}

/// Runs one training step with mini-batch SGD (momentum) and exponential
/// learning-rate decay. Per-sample gradients are reduced in batch order, so
/// results do not depend on the thread count.
pub fn toy_train(data: &ToyDataset, model: ToyModel, cfg: &ToyTrainConfig) -> Result<ToyRun> {
    cfg.validate()?;
    let expanded = cfg.speed_expansion();
    let n_classes = if expanded { 3 * data.n_speakers } else { data.n_speakers };
    if data.n_speakers < 2 {
        return Err(Error::invalid("toy training needs at least two speakers"));
    }
    if model.head.n_classes() != n_classes {
        return Err(Error::invalid(format!(
            "head has {} classes but the {:?} step needs {n_classes}",
            model.head.n_classes(),
            cfg.step
        )));
    }
    if let (TrainStep::LargeMargin, Head::Aam { cfg: loss_cfg, .. }) = (cfg.step, &model.head) {
        if loss_cfg.penalty != 0.0 && loss_cfg.topk != 0 {
            return Err(Error::invalid("large-margin step must not use the Inter-TopK penalty"));
        }
    }

    let mut model = model;
    let mut velocity = model.zeros_like();
    let steps_per_epoch = data.train.len().div_ceil(cfg.batch);
    let total = steps_per_epoch * cfg.epochs;
    let crop = cfg.crop_frames();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut t = 0;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        order.shuffle(&mut rng::keyed(cfg.seed, &format!("order:{:?}:{epoch}", cfg.step)));
        let mut epoch_loss = 0.0;
        let mut lr = cfg.lr_start;
        for (b, batch) in order.chunks(cfg.batch).enumerate() {
            let results: Vec<Result<(f64, ToyModel)>> = batch
                .par_iter()
                .map(|&i| {
                    let utt = &data.train[i];
                    let mut r = rng::keyed(cfg.seed, &format!("sample:{:?}:{epoch}:{i}", cfg.step));
                    let factor = if expanded { SpeedFactor::ALL[r.gen_range(0..3)] } else { SpeedFactor::Unit };
                    let seq = perturb_sequence(utt.frames.view(), factor);
                    let seq = crop_sequence(seq.view(), crop, &mut r);
                    model.loss_and_grad(seq.view(), class_of(utt.speaker, factor, expanded))
                })
                .collect();
            let mut grad = model.zeros_like();
            let mut batch_loss = 0.0;
            for res in results {
                let (loss, g) = res?;
                batch_loss += loss;
                grad.axpy(1.0, &g);
            }
            let n = batch.len() as f64;
            batch_loss /= n;
            if !batch_loss.is_finite() || !grad.all_finite() {
                return Err(Error::Diverged { epoch, step: b, loss: batch_loss });
            }
            grad.scale(1.0 / n);
            lr = cfg.lr_at(t, total);
            velocity.scale(cfg.momentum);
            velocity.axpy(1.0, &grad);
            model.axpy(-lr, &velocity);
            epoch_loss += batch_loss * n;
            t += 1;
        }
        trace.push(TraceRow { epoch, loss: epoch_loss / data.train.len() as f64, lr });
    }
    Ok(ToyRun { model, trace })
}

/// Embeddings of every held-out utterance.
pub fn heldout_embeddings(model: &ToyModel, data: &ToyDataset) -> Result<Vec<Array1<f64>>> {
    data.heldout.par_iter().map(|u| model.embed(u.frames.view())).collect()
}

/// EER of cosine scoring over all held-out pairs.
pub fn heldout_eer(model: &ToyModel, data: &ToyDataset) -> Result<f64> {
    let embs = heldout_embeddings(model, data)?;
    let units: Vec<Array1<f64>> = embs.iter().map(|e| e / e.dot(e).sqrt()).collect();
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for i in 0..units.len() {
        for j in i + 1..units.len() {
            scores.push(units[i].dot(&units[j]));
            labels.push(data.heldout[i].speaker == data.heldout[j].speaker);
        }
    }
    Ok(eer(&scores, &labels, EerMode::Interpolated)?.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoStepReport {
    pub initial_trace: Vec<TraceRow>,
    pub large_margin_trace: Vec<TraceRow>,
    pub eer_after_initial: f64,
    pub eer_after_large_margin: f64,
}

/// Initial training followed by large-margin fine-tuning.
pub fn two_step(
    data: &ToyDataset,
    loss: LossChoice,
    initial: &ToyTrainConfig,
    large_margin: &ToyTrainConfig,
) -> Result<(ToyModel, TwoStepReport)> {
    if initial.step != TrainStep::Initial || large_margin.step != TrainStep::LargeMargin {
        return Err(Error::invalid("two_step expects an initial then a large-margin config"));
    }
    let model = ToyModel::new(data.feat_dim, 3 * data.n_speakers, loss, initial.seed)?;
    let first = toy_train(data, model, initial)?;
    let eer_after_initial = heldout_eer(&first.model, data)?;
    let model = first.model.for_large_margin(data.n_speakers, large_margin.seed)?;
    let second = toy_train(data, model, large_margin)?;
    let eer_after_large_margin = heldout_eer(&second.model, data)?;
    Ok((
        second.model,
        TwoStepReport {
            initial_trace: first.trace,
            large_margin_trace: second.trace,
            eer_after_initial,
            eer_after_large_margin,
        },
    ))
}
