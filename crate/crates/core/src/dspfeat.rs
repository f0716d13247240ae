//! Audio front end: log mel filter banks, speed perturbation, additive noise,
//! reverberation, random cropping and the per-utterance augmentation planner.

use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use rand::Rng as _;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::{Error, Result};

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, Clone, PartialEq)]
pub struct WaveBuffer {
    samples: Vec<f64>,
    sample_rate_hz: u32,
}

impl WaveBuffer {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("empty waveform"));
        }
        if sample_rate_hz == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("sample {i}")));
        }
        Ok(Self { samples, sample_rate_hz })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate_hz)
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self { samples: self.samples.iter().map(|s| s * gain).collect(), sample_rate_hz: self.sample_rate_hz }
    }

    /// Mean squared amplitude.
    pub fn power(&self) -> f64 {
        mean_square(&self.samples)
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, s| m.max(s.abs()))
    }
}

fn mean_square(x: &[f64]) -> f64 {
    x.iter().map(|s| s * s).sum::<f64>() / x.len() as f64
}

/// Reads a 16-bit PCM mono RIFF/WAVE file into `[-1, 1)` samples.
pub fn read_wav(path: impl AsRef<Path>) -> Result<WaveBuffer> {
    let path = path.as_ref();
    let wav_err = |message: String| Error::Wav { path: path.to_path_buf(), message };
    let mut reader = hound::WavReader::open(path).map_err(|e| wav_err(e.to_string()))?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(wav_err(format!(
            "expected 16-bit PCM mono, got {} channel(s), {} bits, {:?}",
            spec.channels, spec.bits_per_sample, spec.sample_format
        )));
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| f64::from(v) / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| wav_err(e.to_string()))?;
    WaveBuffer::new(samples, spec.sample_rate).map_err(|e| wav_err(e.to_string()))
}

/// Writes 16-bit PCM mono; samples are clipped to `[-1, 1]`.
pub fn write_wav(path: impl AsRef<Path>, wave: &WaveBuffer) -> Result<()> {
    let path = path.as_ref();
    let wav_err = |e: hound::Error| Error::Wav { path: path.to_path_buf(), message: e.to_string() };
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in &wave.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer.write_sample(v).map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FbankConfig {
    pub n_mels: usize,
    pub frame_length_ms: f64,
    pub frame_shift_ms: f64,
    pub fft_size: usize,
    pub low_hz: f64,
    /// Upper band edge; `None` means the Nyquist frequency.
    pub high_hz: Option<f64>,
    pub log_floor: f64,
}

impl Default for FbankConfig {
    fn default() -> Self {
        Self {
            n_mels: 80,
            frame_length_ms: 25.0,
            frame_shift_ms: 10.0,
            fft_size: 512,
            low_hz: 20.0,
            high_hz: None,
            log_floor: 1e-10,
        }
    }
}

/// Frame geometry in samples for a given sample rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameGeometry {
    pub frame: usize,
    pub shift: usize,
}

impl FrameGeometry {
    pub fn new(sample_rate_hz: u32, frame_ms: f64, shift_ms: f64) -> Result<Self> {
        let sr = f64::from(sample_rate_hz);
        let frame = (sr * frame_ms / 1000.0).round() as usize;
        let shift = (sr * shift_ms / 1000.0).round() as usize;
        if frame == 0 || shift == 0 {
            return Err(Error::invalid(format!(
                "frame geometry {frame_ms} ms / {shift_ms} ms is empty at {sample_rate_hz} Hz"
            )));
        }
        Ok(Self { frame, shift })
    }

    /// `1 + ⌊(n − frame) / shift⌋`, or 0 when `n < frame`.
    pub fn num_frames(&self, n: usize) -> usize {
        if n < self.frame {
            0
        } else {
            1 + (n - self.frame) / self.shift
        }
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

impl FbankConfig {
    fn band(&self, sample_rate_hz: u32) -> Result<(f64, f64)> {
        let nyquist = f64::from(sample_rate_hz) / 2.0;
        let high = self.high_hz.unwrap_or(nyquist);
        if !(0.0 <= self.low_hz && self.low_hz < high && high <= nyquist) {
            return Err(Error::invalid(format!(
                "mel band [{}, {high}] Hz invalid for sample rate {sample_rate_hz}",
                self.low_hz
            )));
        }
        Ok((self.low_hz, high))
    }

    /// Center frequency in Hz of each mel filter.
    pub fn mel_centers_hz(&self, sample_rate_hz: u32) -> Result<Vec<f64>> {
        let (low, high) = self.band(sample_rate_hz)?;
        let (ml, mh) = (hz_to_mel(low), hz_to_mel(high));
        let step = (mh - ml) / (self.n_mels + 1) as f64;
        Ok((1..=self.n_mels).map(|i| mel_to_hz(ml + step * i as f64)).collect())
    }

    /// Triangular filters in the mel domain, `n_mels × (fft_size/2 + 1)`.
    pub fn mel_bank(&self, sample_rate_hz: u32) -> Result<Array2<f64>> {
        let (low, high) = self.band(sample_rate_hz)?;
        let (ml, mh) = (hz_to_mel(low), hz_to_mel(high));
        let step = (mh - ml) / (self.n_mels + 1) as f64;
        let n_bins = self.fft_size / 2 + 1;
        let mut bank = Array2::zeros((self.n_mels, n_bins));
        for k in 0..n_bins {
            let mel = hz_to_mel(k as f64 * f64::from(sample_rate_hz) / self.fft_size as f64);
            for j in 0..self.n_mels {
                let left = ml + step * j as f64;
                let center = left + step;
                let right = center + step;
                let w = if mel > left && mel <= center {
                    (mel - left) / step
                } else if mel > center && mel < right {
                    (right - mel) / step
                } else {
                    0.0
                };
                bank[[j, k]] = w;
            }
        }
        Ok(bank)
    }
}

/// Log mel filter-bank energies, `frames × n_mels`. Hann window, power
/// spectrum, no pre-emphasis or dither.
pub fn fbank(wave: &WaveBuffer, cfg: &FbankConfig) -> Result<Array2<f64>> {
    let geom = FrameGeometry::new(wave.sample_rate_hz, cfg.frame_length_ms, cfg.frame_shift_ms)?;
    if !cfg.fft_size.is_power_of_two() || cfg.fft_size < geom.frame {
        return Err(Error::invalid(format!(
            "fft_size {} must be a power of two ≥ frame length {}",
            cfg.fft_size, geom.frame
        )));
    }
    if !(cfg.log_floor > 0.0) {
        return Err(Error::invalid("log_floor must be positive"));
    }
    let n_frames = geom.num_frames(wave.len());
    if n_frames == 0 {
        return Err(Error::invalid(format!(
            "waveform of {} samples is shorter than one frame ({})",
            wave.len(),
            geom.frame
        )));
    }
    let bank = cfg.mel_bank(wave.sample_rate_hz)?;
    let window = hann(geom.frame);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.fft_size);
    let n_bins = cfg.fft_size / 2 + 1;

    let mut out = Array2::zeros((n_frames, cfg.n_mels));
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.fft_size];
    let mut power = vec![0.0; n_bins];
    for t in 0..n_frames {
        let start = t * geom.shift;
        for (i, c) in buf.iter_mut().enumerate() {
            *c = if i < geom.frame {
                Complex::new(wave.samples[start + i] * window[i], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p = c.norm_sqr();
        }
        for j in 0..cfg.n_mels {
            let e: f64 = bank.row(j).iter().zip(&power).map(|(w, p)| w * p).sum();
            out[[t, j]] = e.max(cfg.log_floor).ln();
        }
    }
    Ok(out)
}

fn hann(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SpeedFactor {
    #[serde(rename = "0.9")]
    Slow,
    #[serde(rename = "1.0")]
    Unit,
    #[serde(rename = "1.1")]
    Fast,
}

impl SpeedFactor {
    pub const ALL: [SpeedFactor; 3] = [SpeedFactor::Slow, SpeedFactor::Unit, SpeedFactor::Fast];

    pub fn value(self) -> f64 {
        match self {
            SpeedFactor::Slow => 0.9,
            SpeedFactor::Unit => 1.0,
            SpeedFactor::Fast => 1.1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SpeedFactor::Slow => "0.9",
            SpeedFactor::Unit => "1.0",
            SpeedFactor::Fast => "1.1",
        }
    }

    pub fn from_value(v: f64) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|f| (f.value() - v).abs() < 1e-9)
            .ok_or_else(|| Error::invalid(format!("speed factor {v} not in {{0.9, 1.0, 1.1}}")))
    }

    /// Class label of a speed-perturbed copy, e.g. `spk@0.9`.
    pub fn label(self, speaker: &str) -> String {
        format!("{speaker}@{}", self.as_str())
    }
}

/// Output length `round(n / factor)`.
pub fn perturbed_len(n: usize, factor: SpeedFactor) -> usize {
    (n as f64 / factor.value()).round() as usize
}

/// Linear-interpolation resampling at rate `factor`; playback is `factor`
/// times faster, so frequencies scale up by `factor`.
pub fn speed_perturb(wave: &WaveBuffer, factor: SpeedFactor) -> WaveBuffer {
    if factor == SpeedFactor::Unit {
        return wave.clone();
    }
    let rate = factor.value();
    let n = wave.len();
    let out_len = perturbed_len(n, factor).max(1);
    let samples = (0..out_len)
        .map(|j| {
            let pos = j as f64 * rate;
            let i = pos.floor() as usize;
            if i + 1 >= n {
                wave.samples[n - 1]
            } else {
                let frac = pos - i as f64;
                wave.samples[i] * (1.0 - frac) + wave.samples[i + 1] * frac
            }
        })
        .collect();
    WaveBuffer { samples, sample_rate_hz: wave.sample_rate_hz }
}

fn tile(noise: &[f64], len: usize) -> Vec<f64> {
    noise.iter().copied().cycle().take(len).collect()
}

/// Gain applied to the (tiled) noise so the mixture has `target_snr_db`.
pub fn noise_gain(clean: &WaveBuffer, noise: &WaveBuffer, target_snr_db: f64) -> Result<f64> {
    if clean.sample_rate_hz != noise.sample_rate_hz {
        return Err(Error::invalid(format!(
            "sample rate mismatch: {} vs {}",
            clean.sample_rate_hz, noise.sample_rate_hz
        )));
    }
    let p_clean = clean.power();
    let p_noise = mean_square(&tile(&noise.samples, clean.len()));
    if p_clean == 0.0 || p_noise == 0.0 {
        return Err(Error::invalid("zero-power signal in noise mixing"));
    }
    Ok((p_clean / (p_noise * 10f64.powf(target_snr_db / 10.0))).sqrt())
}

/// Adds noise scaled to `target_snr_db` (powers as mean squared amplitude) and
/// clips the mixture to `[-1, 1]`. Noise is tiled or truncated to the clean length.
pub fn mix_noise(clean: &WaveBuffer, noise: &WaveBuffer, target_snr_db: f64) -> Result<WaveBuffer> {
    let gain = noise_gain(clean, noise, target_snr_db)?;
    let samples =
        clean.samples.iter().zip(noise.samples.iter().cycle()).map(|(c, n)| (c + gain * n).clamp(-1.0, 1.0)).collect();
    Ok(WaveBuffer { samples, sample_rate_hz: clean.sample_rate_hz })
}

/// Reverberates `clean` with `impulse`: full linear convolution truncated to
/// the clean length, rescaled to the clean peak amplitude.
pub fn rir_convolve(clean: &WaveBuffer, impulse: &WaveBuffer) -> Result<WaveBuffer> {
    if clean.sample_rate_hz != impulse.sample_rate_hz {
        return Err(Error::invalid(format!(
            "sample rate mismatch: {} vs {}",
            clean.sample_rate_hz, impulse.sample_rate_hz
        )));
    }
    if impulse.samples.iter().all(|&s| s == 0.0) {
        return Err(Error::invalid("impulse response is all zeros"));
    }
    let n = clean.len();
    let size = (n + impulse.len() - 1).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd: Arc<dyn Fft<f64>> = planner.plan_fft_forward(size);
    let inv: Arc<dyn Fft<f64>> = planner.plan_fft_inverse(size);
    let spectrum = |x: &[f64]| {
        let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
        buf.resize(size, Complex::new(0.0, 0.0));
        fwd.process(&mut buf);
        buf
    };
    let a = spectrum(&clean.samples);
    let b = spectrum(&impulse.samples);
    let mut prod: Vec<Complex<f64>> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
    inv.process(&mut prod);
    let scale = 1.0 / size as f64;
    let mut samples: Vec<f64> = prod[..n].iter().map(|c| c.re * scale).collect();

    let peak_in = clean.peak();
    let peak_out = samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if peak_out > 0.0 {
        let g = peak_in / peak_out;
        samples.iter_mut().for_each(|s| *s *= g);
    }
    Ok(WaveBuffer { samples, sample_rate_hz: clean.sample_rate_hz })
}

/// Start offset of a `crop_len` window inside `n` samples, uniform over
/// `0..=n-crop_len`.
pub fn crop_offset(n: usize, crop_len: usize, seed: u64) -> usize {
    if n <= crop_len {
        0
    } else {
        rng::seeded(seed).gen_range(0..=n - crop_len)
    }
}

/// Contiguous segment of `crop_seconds` at a seeded offset; shorter inputs
/// are repeated cyclically up to the crop length.
pub fn random_crop(wave: &WaveBuffer, crop_seconds: f64, seed: u64) -> Result<WaveBuffer> {
    if !(crop_seconds > 0.0) {
        return Err(Error::invalid("crop length must be positive"));
    }
    let crop_len = ((crop_seconds * f64::from(wave.sample_rate_hz)).round() as usize).max(1);
    let samples = if wave.len() >= crop_len {
        let off = crop_offset(wave.len(), crop_len, seed);
        wave.samples[off..off + crop_len].to_vec()
    } else {
        tile(&wave.samples, crop_len)
    };
    Ok(WaveBuffer { samples, sample_rate_hz: wave.sample_rate_hz })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    /// Mixed in additively at a target SNR.
    Additive,
    /// Convolved as a room impulse response.
    Reverb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSource {
    pub id: String,
    pub kind: NoiseKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanConfig {
    pub noise_probability: f64,
    pub noise_sources: Vec<NoiseSource>,
    pub snr_range_db: (f64, f64),
    pub crop_seconds: f64,
    pub speed_perturb: bool,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            noise_probability: 0.6,
            noise_sources: vec![
                NoiseSource { id: "musan".into(), kind: NoiseKind::Additive },
                NoiseSource { id: "rir".into(), kind: NoiseKind::Reverb },
            ],
            snr_range_db: (0.0, 20.0),
            crop_seconds: 2.0,
            speed_perturb: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentPlan {
    pub utterance_id: String,
    pub speed_factor: SpeedFactor,
    pub apply_noise: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_source: Option<NoiseSource>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_snr_db: Option<f64>,
    pub crop_seconds: f64,
    /// Seed for the crop offset.
    pub seed: u64,
}

impl AugmentPlan {
    pub fn speaker_label(&self, speaker: &str) -> String {
        self.speed_factor.label(speaker)
    }
}

/// One plan per utterance. Each plan is drawn from a stream keyed by
/// `(seed, utterance id)`, so plans do not depend on list order or threading.
pub fn plan_augmentation<S: AsRef<str> + Sync>(ids: &[S], seed: u64, cfg: &PlanConfig) -> Result<Vec<AugmentPlan>> {
    if !(0.0..=1.0).contains(&cfg.noise_probability) {
        return Err(Error::invalid("noise probability must lie in [0, 1]"));
    }
    if cfg.noise_probability > 0.0 && cfg.noise_sources.is_empty() {
        return Err(Error::invalid("noise augmentation enabled without noise sources"));
    }
    let (lo, hi) = cfg.snr_range_db;
    if !(lo <= hi) {
        return Err(Error::invalid("empty SNR range"));
    }
    Ok(ids
        .par_iter()
        .map(|id| {
            let id = id.as_ref();
            let mut r = rng::keyed(seed, id);
            let speed_factor = if cfg.speed_perturb { SpeedFactor::ALL[r.gen_range(0..3)] } else { SpeedFactor::Unit };
            let apply_noise = r.gen::<f64>() < cfg.noise_probability;
            let (noise_source, target_snr_db) = if apply_noise {
                let src = cfg.noise_sources[r.gen_range(0..cfg.noise_sources.len())].clone();
                let snr = if lo == hi { lo } else { r.gen_range(lo..hi) };
                (Some(src), Some(snr))
            } else {
                (None, None)
            };
            AugmentPlan {
                utterance_id: id.to_string(),
                speed_factor,
                apply_noise,
                noise_source,
                target_snr_db,
                crop_seconds: cfg.crop_seconds,
                seed: r.gen(),
            }
        })
        .collect())
}

/// Runs a plan: speed perturbation, then noise or reverberation, then cropping.
pub fn apply_plan(wave: &WaveBuffer, plan: &AugmentPlan, noise: Option<&WaveBuffer>) -> Result<WaveBuffer> {
    let mut out = speed_perturb(wave, plan.speed_factor);
    if let Some(src) = plan.noise_source.as_ref().filter(|_| plan.apply_noise) {
        let noise = noise.ok_or_else(|| Error::invalid(format!("plan needs noise source `{}`", src.id)))?;
        out = match src.kind {
            NoiseKind::Additive => mix_noise(&out, noise, plan.target_snr_db.unwrap_or(10.0))?,
            NoiseKind::Reverb => rir_convolve(&out, noise)?,
        };
    }
    random_crop(&out, plan.crop_seconds, plan.seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, amp: f64, n: usize, sr: u32) -> WaveBuffer {
        let s = (0..n).map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / f64::from(sr)).sin()).collect();
        WaveBuffer::new(s, sr).unwrap()
    }

    #[test]
    fn two_seconds_gives_198_frames() {
        let w = sine(440.0, 0.5, 32_000, 16_000);
        let f = fbank(&w, &FbankConfig::default()).unwrap();
        assert_eq!(f.dim(), (198, 80));
    }

    #[test]
    fn zero_signal_hits_floor() {
        let w = WaveBuffer::new(vec![0.0; 4000], 16_000).unwrap();
        let cfg = FbankConfig::default();
        let f = fbank(&w, &cfg).unwrap();
        let floor = cfg.log_floor.ln();
        assert!(f.iter().all(|&v| v == floor));
    }

    #[test]
    fn too_short_for_one_frame() {
        let w = WaveBuffer::new(vec![0.1; 399], 16_000).unwrap();
        assert!(fbank(&w, &FbankConfig::default()).is_err());
        let w = WaveBuffer::new(vec![0.1; 400], 16_000).unwrap();
        assert_eq!(fbank(&w, &FbankConfig::default()).unwrap().nrows(), 1);
    }

    #[test]
    fn bad_band_rejected() {
        let w = WaveBuffer::new(vec![0.1; 800], 16_000).unwrap();
        let cfg = FbankConfig { high_hz: Some(9000.0), ..FbankConfig::default() };
        assert!(fbank(&w, &cfg).is_err());
    }

    #[test]
    fn mel_scale_round_trip() {
        for hz in [0.0, 100.0, 1000.0, 7999.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
        assert!((hz_to_mel(700.0) - 2595.0 * 2f64.log10()).abs() < 1e-12);
    }

    #[test]
    fn speed_identity_and_length() {
        let w = sine(100.0, 0.3, 900, 16_000);
        assert_eq!(speed_perturb(&w, SpeedFactor::Unit), w);
        assert_eq!(speed_perturb(&w, SpeedFactor::Slow).len(), 1000);
        assert_eq!(speed_perturb(&w, SpeedFactor::Fast).len(), 818);
    }

    #[test]
    fn speed_factor_parsing_and_labels() {
        assert_eq!(SpeedFactor::from_value(1.1).unwrap(), SpeedFactor::Fast);
        assert!(SpeedFactor::from_value(1.2).is_err());
        assert_eq!(SpeedFactor::Unit.label("spk"), "spk@1.0");
        assert_ne!(SpeedFactor::Unit.label("spk"), SpeedFactor::Slow.label("spk"));
    }

    #[test]
    fn noise_gain_examples() {
        let clean = sine(200.0, 0.5, 1600, 16_000);
        let noise = sine(300.0, 0.5, 1600, 16_000);
        let g = noise_gain(&clean, &noise, 0.0).unwrap();
        assert!((g - 1.0).abs() < 1e-9, "{g}");
        let g = noise_gain(&clean, &noise, 20.0).unwrap();
        assert!((g * g - 0.01).abs() < 1e-12);
    }

    #[test]
    fn mix_noise_rejects_silence_and_clips() {
        let silent = WaveBuffer::new(vec![0.0; 100], 16_000).unwrap();
        let loud = WaveBuffer::new(vec![0.9; 100], 16_000).unwrap();
        assert!(mix_noise(&silent, &loud, 0.0).is_err());
        assert!(mix_noise(&loud, &silent, 0.0).is_err());
        let mixed = mix_noise(&loud, &loud, 0.0).unwrap();
        assert!(mixed.samples().iter().all(|&s| s == 1.0));
    }

    #[test]
    fn rir_identity_and_delay() {
        let clean = sine(250.0, 0.8, 500, 16_000);
        let unit = WaveBuffer::new(vec![1.0], 16_000).unwrap();
        let out = rir_convolve(&clean, &unit).unwrap();
        for (a, b) in out.samples().iter().zip(clean.samples()) {
            assert!((a - b).abs() < 1e-12);
        }

        let mut delayed = vec![0.0; 6];
        delayed[5] = 1.0;
        let delayed = WaveBuffer::new(delayed, 16_000).unwrap();
        let out = rir_convolve(&clean, &delayed).unwrap();
        assert_eq!(out.len(), clean.len());
        // Peak survives truncation here, so no rescaling.
        for i in 0..5 {
            assert!(out.samples()[i].abs() < 1e-12);
        }
        for i in 5..clean.len() {
            assert!((out.samples()[i] - clean.samples()[i - 5]).abs() < 1e-12);
        }

        let zero = WaveBuffer::new(vec![0.0; 3], 16_000).unwrap();
        assert!(rir_convolve(&clean, &zero).is_err());
    }

    #[test]
    fn crop_rules() {
        let w = sine(100.0, 0.5, 16_000, 16_000);
        assert_eq!(random_crop(&w, 1.0, 9).unwrap(), w);
        let two = random_crop(&w, 2.0, 9).unwrap();
        assert_eq!(two.len(), 32_000);
        assert_eq!(&two.samples()[..16_000], w.samples());
        assert_eq!(&two.samples()[16_000..], w.samples());
        let half = random_crop(&w, 0.5, 9).unwrap();
        let off = crop_offset(16_000, 8_000, 9);
        assert_eq!(half.samples(), &w.samples()[off..off + 8000]);
    }

    #[test]
    fn plans_are_deterministic_and_labelled() {
        let ids: Vec<String> = (0..50).map(|i| format!("utt{i}")).collect();
        let cfg = PlanConfig::default();
        let a = plan_augmentation(&ids, 11, &cfg).unwrap();
        let b = plan_augmentation(&ids, 11, &cfg).unwrap();
        assert_eq!(a, b);
        for p in &a {
            assert_eq!(p.apply_noise, p.noise_source.is_some());
            if let Some(snr) = p.target_snr_db {
                assert!((0.0..20.0).contains(&snr));
            }
        }
        let mut rev = ids.clone();
        rev.reverse();
        let mut c = plan_augmentation(&rev, 11, &cfg).unwrap();
        c.reverse();
        assert_eq!(a, c);
    }

    #[test]
    fn apply_plan_without_noise() {
        let w = sine(100.0, 0.5, 40_000, 16_000);
        let plan = AugmentPlan {
            utterance_id: "u".into(),
            speed_factor: SpeedFactor::Slow,
            apply_noise: false,
            noise_source: None,
            target_snr_db: None,
            crop_seconds: 2.0,
            seed: 3,
        };
        assert_eq!(apply_plan(&w, &plan, None).unwrap().len(), 32_000);
    }
}
