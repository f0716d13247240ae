//! Score fusion and QMF-aware calibration.
//!
//! A calibrated trial score is `v0 · Wᵀ s + Vᵀ q + b`, where `s` holds the
//! trial's per-system scores z-normalized with frozen column statistics, `W`
//! are fixed fusion weights and `q` is the trial's QMF vector. `v0`, `V` and
//! `b` are fit by L2-regularized logistic regression.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::qmf::{QmfVector, QMF_LEN};
use crate::trialdata::{ScoreSet, TrialList};
use crate::{Error, Result};

/// Per-system column statistics, serialized as `[mean, std]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl From<[f64; 2]> for NormStats {
    fn from([mean, std]: [f64; 2]) -> Self {
        Self { mean, std }
    }
}

impl From<NormStats> for [f64; 2] {
    fn from(s: NormStats) -> Self {
        [s.mean, s.std]
    }
}

/// Column-wise z-normalization with population standard deviation.
pub fn normalize_scores(raw: &ScoreSet) -> Result<(ScoreSet, Vec<NormStats>)> {
    let n = raw.n_trials() as f64;
    if raw.n_trials() == 0 {
        return Err(Error::invalid("cannot normalize an empty score set"));
    }
    let stats = (0..raw.n_systems())
        .map(|j| {
            let col = raw.column(j);
            let mean = col.iter().sum::<f64>() / n;
            let std = (col.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n).sqrt();
            if std > 0.0 {
                Ok(NormStats { mean, std })
            } else {
                Err(Error::ZeroVariance(j))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((normalize_with(raw, &stats)?, stats))
}

pub fn normalize_with(raw: &ScoreSet, stats: &[NormStats]) -> Result<ScoreSet> {
    if stats.len() != raw.n_systems() {
        return Err(Error::invalid(format!("{} normalization entries for {} systems", stats.len(), raw.n_systems())));
    }
    let n = raw.n_systems();
    let values = raw.values().iter().enumerate().map(|(i, s)| (s - stats[i % n].mean) / stats[i % n].std).collect();
    ScoreSet::new(raw.trials().clone(), n, values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationModel {
    pub n_systems: usize,
    #[serde(rename = "W")]
    pub weights: Vec<f64>,
    pub v0: f64,
    #[serde(rename = "V")]
    pub qmf_weights: [f64; QMF_LEN],
    pub b: f64,
    pub norm_stats: Vec<NormStats>,
}

impl CalibrationModel {
    pub fn validate(&self) -> Result<()> {
        if self.n_systems == 0 {
            return Err(Error::invalid("model has zero systems"));
        }
        if self.weights.len() != self.n_systems || self.norm_stats.len() != self.n_systems {
            return Err(Error::invalid(format!(
                "model for {} systems has {} weights and {} normalization entries",
                self.n_systems,
                self.weights.len(),
                self.norm_stats.len()
            )));
        }
        let finite = self.weights.iter().chain(&self.qmf_weights).chain([&self.v0, &self.b]).all(|v| v.is_finite())
            && self.norm_stats.iter().all(|s| s.mean.is_finite() && s.std.is_finite());
        if !finite {
            return Err(Error::NonFinite("calibration model parameter".into()));
        }
        if let Some(j) = self.norm_stats.iter().position(|s| !(s.std > 0.0)) {
            return Err(Error::ZeroVariance(j));
        }
        Ok(())
    }

    /// `v0 · Wᵀ s + Vᵀ q + b` for one already-normalized row.
    pub fn score_row(&self, normalized: &[f64], q: &QmfVector) -> f64 {
        let fused: f64 = self.weights.iter().zip(normalized).map(|(w, s)| w * s).sum();
        let side: f64 = self.qmf_weights.iter().zip(q.values()).map(|(v, x)| v * x).sum();
        self.v0 * fused + side + self.b
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: Self = serde_json::from_str(&text)?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Uniform fusion weights `1/n`.
pub fn uniform_weights(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

/// Calibrated scores for each trial of `raw`, normalized with the model's
/// stored statistics.
pub fn apply(model: &CalibrationModel, raw: &ScoreSet, qmfs: &[QmfVector]) -> Result<Vec<f64>> {
    model.validate()?;
    if raw.n_systems() != model.n_systems {
        return Err(Error::invalid(format!(
            "score set has {} systems, model expects {}",
            raw.n_systems(),
            model.n_systems
        )));
    }
    if qmfs.len() != raw.n_trials() {
        return Err(Error::invalid(format!("{} QMF rows for {} trials", qmfs.len(), raw.n_trials())));
    }
    let normalized = normalize_with(raw, &model.norm_stats)?;
    Ok((0..raw.n_trials()).map(|i| model.score_row(normalized.row(i), &qmfs[i])).collect())
}

/// Normalize, fuse and calibrate into a single-system score set.
pub fn fuse_and_calibrate(model: &CalibrationModel, raw: &ScoreSet, qmfs: &[QmfVector]) -> Result<ScoreSet> {
    let scores = apply(model, raw, qmfs)?;
    ScoreSet::single(raw.trials().clone(), scores)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub l2_lambda: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub seed: u64,
    /// Holds `V` at zero and fits only `v0` and `b`.
    #[serde(default)]
    pub freeze_qmf: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { l2_lambda: 1e-4, max_iters: 100, grad_tol: 1e-8, seed: 0, freeze_qmf: false }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return Err(Error::invalid("l2_lambda must be non-negative"));
        }
        if !(self.grad_tol > 0.0) {
            return Err(Error::invalid("grad_tol must be positive"));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub iterations: usize,
    pub final_loss: f64,
    pub grad_norm: f64,
    /// Objective after each accepted step, starting from the initial point.
    pub loss_trace: Vec<f64>,
}

/// Regularized logistic calibration problem over features
/// `x = [Wᵀ s, q₁ … q₆]` with parameters `θ = [v0, V₁ … V₆, b]`.
pub struct CalibrationProblem {
    features: Vec<[f64; QMF_LEN + 1]>,
    labels: Vec<f64>,
    l2_lambda: f64,
    /// Number of leading feature slots in use (1 when QMFs are frozen).
    active: usize,
}

pub const N_PARAMS: usize = QMF_LEN + 2;

impl CalibrationProblem {
    pub fn new(fused: &[f64], qmfs: &[QmfVector], labels: &[bool], l2_lambda: f64, freeze_qmf: bool) -> Result<Self> {
        if fused.len() != qmfs.len() || fused.len() != labels.len() {
            return Err(Error::invalid(format!(
                "misaligned inputs: {} scores, {} QMF rows, {} labels",
                fused.len(),
                qmfs.len(),
                labels.len()
            )));
        }
        if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
            return Err(Error::SingleClass);
        }
        let features: Vec<[f64; QMF_LEN + 1]> = fused
            .iter()
            .zip(qmfs)
            .map(|(&f, q)| {
                let mut x = [0.0; QMF_LEN + 1];
                x[0] = f;
                if !freeze_qmf {
                    x[1..].copy_from_slice(q.values());
                }
                x
            })
            .collect();
        if let Some(i) = features.iter().position(|x| x.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite(format!("calibration feature row {}", i + 1)));
        }
        Ok(Self {
            features,
            labels: labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect(),
            l2_lambda,
            active: if freeze_qmf { 1 } else { QMF_LEN + 1 },
        })
    }

    fn logit(x: &[f64; QMF_LEN + 1], theta: &[f64; N_PARAMS]) -> f64 {
        x.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>() + theta[N_PARAMS - 1]
    }

    /// Mean binary cross-entropy of `sigmoid(logit)` plus `λ(v0² + ‖V‖²)`.
    pub fn loss(&self, theta: &[f64; N_PARAMS]) -> f64 {
        let n = self.labels.len() as f64;
        let data: f64 = self
            .features
            .iter()
            .zip(&self.labels)
            .map(|(x, &y)| {
                let z = Self::logit(x, theta);
                softplus(z) - y * z
            })
            .sum::<f64>()
            / n;
        data + self.l2_lambda * theta[..N_PARAMS - 1].iter().map(|t| t * t).sum::<f64>()
    }

    pub fn gradient(&self, theta: &[f64; N_PARAMS]) -> [f64; N_PARAMS] {
        self.grad_hess(theta).0
    }

    fn grad_hess(&self, theta: &[f64; N_PARAMS]) -> ([f64; N_PARAMS], [[f64; N_PARAMS]; N_PARAMS]) {
        let n = self.labels.len() as f64;
        let mut g = [0.0; N_PARAMS];
        let mut h = [[0.0; N_PARAMS]; N_PARAMS];
        let mut xe = [0.0; N_PARAMS];
        for (x, &y) in self.features.iter().zip(&self.labels) {
            let z = Self::logit(x, theta);
            let p = sigmoid(z);
            let w = p * (1.0 - p);
            xe[..N_PARAMS - 1].copy_from_slice(x);
            xe[N_PARAMS - 1] = 1.0;
            for a in 0..N_PARAMS {
                g[a] += (p - y) * xe[a];
                for b in 0..=a {
                    h[a][b] += w * xe[a] * xe[b];
                }
            }
        }
        for a in 0..N_PARAMS {
            g[a] /= n;
            for b in 0..=a {
                h[a][b] /= n;
                h[b][a] = h[a][b];
            }
        }
        for a in 0..N_PARAMS - 1 {
            g[a] += 2.0 * self.l2_lambda * theta[a];
            h[a][a] += 2.0 * self.l2_lambda;
        }
        // Frozen slots: zero gradient, identity curvature.
        for a in self.active..N_PARAMS - 1 {
            g[a] = 0.0;
            for b in 0..N_PARAMS {
                h[a][b] = 0.0;
                h[b][a] = 0.0;
            }
            h[a][a] = 1.0;
        }
        (g, h)
    }

    /// Damped Newton with Armijo backtracking from `θ = 0`.
    pub fn solve(&self, max_iters: usize, grad_tol: f64) -> Result<([f64; N_PARAMS], TrainSummary)> {
        let mut theta = [0.0; N_PARAMS];
        let mut loss = self.loss(&theta);
        let mut trace = vec![loss];
        for iter in 0..=max_iters {
            let (g, h) = self.grad_hess(&theta);
            let gnorm = norm(&g);
            if gnorm <= grad_tol {
                return Ok((
                    theta,
                    TrainSummary { iterations: iter, final_loss: loss, grad_norm: gnorm, loss_trace: trace },
                ));
            }
            if iter == max_iters {
                return Err(Error::NotConverged { iters: max_iters, grad_norm: gnorm });
            }
            let step = newton_direction(&h, &g);
            let slope: f64 = g.iter().zip(&step).map(|(a, b)| a * b).sum();
            let mut t = 1.0;
            let mut accepted = false;
            while t > 1e-12 {
                let mut cand = theta;
                for (c, s) in cand.iter_mut().zip(&step) {
                    *c += t * s;
                }
                let cand_loss = self.loss(&cand);
                if cand_loss <= loss + 1e-4 * t * slope {
                    theta = cand;
                    loss = cand_loss;
                    trace.push(loss);
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                // No representable decrease left along the Newton direction.
                let (g, _) = self.grad_hess(&theta);
                let gnorm = norm(&g);
                if gnorm <= grad_tol {
                    continue;
                }
                return Err(Error::NotConverged { iters: iter + 1, grad_norm: gnorm });
            }
        }
        unreachable!("loop returns on its last iteration")
    }
}

/// Fits `(v0, V, b)` on labeled trials; `W` is held fixed.
pub fn train(
    trials: &TrialList,
    raw: &ScoreSet,
    qmfs: &[QmfVector],
    weights: &[f64],
    cfg: &TrainConfig,
) -> Result<(CalibrationModel, TrainSummary)> {
    cfg.validate()?;
    if raw.trials() != trials {
        return Err(Error::invalid("score rows are not aligned with the trial list"));
    }
    if weights.len() != raw.n_systems() {
        return Err(Error::invalid(format!("{} fusion weights for {} systems", weights.len(), raw.n_systems())));
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::NonFinite("fusion weight".into()));
    }
    let labels = trials.labels()?;
    let (normalized, norm_stats) = normalize_scores(raw)?;
    let fused: Vec<f64> =
        (0..normalized.n_trials()).map(|i| normalized.row(i).iter().zip(weights).map(|(s, w)| s * w).sum()).collect();
    let problem = CalibrationProblem::new(&fused, qmfs, &labels, cfg.l2_lambda, cfg.freeze_qmf)?;
    let (theta, summary) = problem.solve(cfg.max_iters, cfg.grad_tol)?;
    let mut qmf_weights = [0.0; QMF_LEN];
    qmf_weights.copy_from_slice(&theta[1..=QMF_LEN]);
    let model = CalibrationModel {
        n_systems: raw.n_systems(),
        weights: weights.to_vec(),
        v0: theta[0],
        qmf_weights,
        b: theta[N_PARAMS - 1],
        norm_stats,
    };
    model.validate()?;
    Ok((model, summary))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Solves `H d = -g` by Cholesky, adding diagonal damping until `H` is
/// numerically positive definite.
fn newton_direction(h: &[[f64; N_PARAMS]; N_PARAMS], g: &[f64; N_PARAMS]) -> [f64; N_PARAMS] {
    let scale = (0..N_PARAMS).map(|i| h[i][i].abs()).fold(0.0, f64::max).max(1e-300);
    let mut damping = 0.0;
    loop {
        if let Some(l) = cholesky(h, damping) {
            let mut y = [0.0; N_PARAMS];
            for i in 0..N_PARAMS {
                let s: f64 = (0..i).map(|k| l[i][k] * y[k]).sum();
                y[i] = (-g[i] - s) / l[i][i];
            }
            let mut d = [0.0; N_PARAMS];
            for i in (0..N_PARAMS).rev() {
                let s: f64 = (i + 1..N_PARAMS).map(|k| l[k][i] * d[k]).sum();
                d[i] = (y[i] - s) / l[i][i];
            }
            return d;
        }
        damping = if damping == 0.0 { scale * 1e-12 } else { damping * 10.0 };
    }
}

fn cholesky(h: &[[f64; N_PARAMS]; N_PARAMS], damping: f64) -> Option<[[f64; N_PARAMS]; N_PARAMS]> {
    let mut l = [[0.0; N_PARAMS]; N_PARAMS];
    for i in 0..N_PARAMS {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = h[i][i] + damping - s;
                if !(d > 0.0) {
                    return None;
                }
                l[i][i] = d.sqrt();
            } else {
                l[i][j] = (h[i][j] - s) / l[j][j];
            }
        }
    }
    Some(l)
}
