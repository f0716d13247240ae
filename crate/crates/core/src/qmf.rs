//! Quality measure functions: per-trial side information for calibration.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::dspfeat::{FrameGeometry, WaveBuffer};
use crate::trialdata::UtteranceMeta;
use crate::{Error, Result};

pub const QMF_LEN: usize = 6;

/// `(a, b, c, d, e, f)`:
/// a = enrollment duration, b = test duration, c = ln(a + b), d = ln(a + b)
/// (or ln(a·b) under [`DMode::LogProduct`]), e = test SNR, f = enrollment SNR.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QmfVector(pub [f64; QMF_LEN]);

impl QmfVector {
    pub const ZERO: QmfVector = QmfVector([0.0; QMF_LEN]);

    pub fn values(&self) -> &[f64; QMF_LEN] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DMode {
    /// d repeats c.
    #[default]
    Duplicate,
    /// d = ln(a·b).
    LogProduct,
}

impl std::str::FromStr for DMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "duplicate" => Ok(DMode::Duplicate),
            "log_product" => Ok(DMode::LogProduct),
            other => Err(Error::invalid(format!("unknown qmf.d_mode `{other}`"))),
        }
    }
}

pub fn qmf_vector(enroll: &UtteranceMeta, test: &UtteranceMeta, d_mode: DMode) -> Result<QmfVector> {
    let duration = |m: &UtteranceMeta| {
        if m.duration_seconds > 0.0 && m.duration_seconds.is_finite() {
            Ok(m.duration_seconds)
        } else {
            Err(Error::invalid(format!("utterance `{}` has no positive duration", m.id)))
        }
    };
    let snr = |m: &UtteranceMeta| match m.snr_db {
        Some(v) if v.is_finite() => Ok(v),
        Some(_) => Err(Error::NonFinite(format!("SNR of `{}`", m.id))),
        None => Err(Error::invalid(format!("utterance `{}` has no SNR", m.id))),
    };
    let a = duration(enroll)?;
    let b = duration(test)?;
    let c = (a + b).ln();
    let d = match d_mode {
        DMode::Duplicate => c,
        DMode::LogProduct => (a * b).ln(),
    };
    Ok(QmfVector([a, b, c, d, snr(test)?, snr(enroll)?]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrConfig {
    pub frame_length_ms: f64,
    pub frame_shift_ms: f64,
    /// Fraction of loudest frames treated as speech.
    pub top_fraction: f64,
    /// Fraction of quietest frames treated as noise.
    pub bottom_fraction: f64,
}

impl Default for SnrConfig {
    fn default() -> Self {
        Self { frame_length_ms: 25.0, frame_shift_ms: 10.0, top_fraction: 0.3, bottom_fraction: 0.1 }
    }
}

pub const MIN_SNR_FRAMES: usize = 10;

/// Energy-percentile SNR estimate in dB: mean log-energy of the loudest
/// frames minus mean log-energy of the quietest ones.
pub fn estimate_snr(wave: &WaveBuffer, cfg: &SnrConfig) -> Result<f64> {
    for f in [cfg.top_fraction, cfg.bottom_fraction] {
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::invalid(format!("SNR percentile fraction {f} not in (0, 1]")));
        }
    }
    let geom = FrameGeometry::new(wave.sample_rate_hz(), cfg.frame_length_ms, cfg.frame_shift_ms)?;
    let n_frames = geom.num_frames(wave.len());
    if n_frames < MIN_SNR_FRAMES {
        return Err(Error::invalid(format!("SNR estimation needs at least {MIN_SNR_FRAMES} frames, got {n_frames}")));
    }
    let s = wave.samples();
    let mut energies: Vec<f64> = (0..n_frames)
        .map(|t| {
            let frame = &s[t * geom.shift..t * geom.shift + geom.frame];
            frame.iter().map(|x| x * x).sum::<f64>() / geom.frame as f64
        })
        .collect();
    let max = energies.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return Err(Error::invalid("all-zero signal"));
    }
    // Relative floor keeps silent frames finite without breaking gain invariance.
    let floor = max * 1e-12;
    energies.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let db: Vec<f64> = energies.iter().map(|e| 10.0 * e.max(floor).log10()).collect();
    let count = |f: f64| ((f * n_frames as f64).round() as usize).clamp(1, n_frames);
    let n_top = count(cfg.top_fraction);
    let n_bottom = count(cfg.bottom_fraction);
    let top = db[n_frames - n_top..].iter().sum::<f64>() / n_top as f64;
    let bottom = db[..n_bottom].iter().sum::<f64>() / n_bottom as f64;
    Ok(top - bottom)
}
