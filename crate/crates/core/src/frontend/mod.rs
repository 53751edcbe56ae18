//! Acoustic frontend: framing, spectrogram and log-mel filterbank features,
//! plus the augmentation families in [`augment`].
//!
//! Frames are 25 ms with a 10 ms shift at 16 kHz (400/160 samples), a 400-pt
//! DFT, and no pre-padding: every frame lies fully inside the signal, so
//! `T = 1 + floor((N - 400) / 160)`.

pub mod augment;
mod ftmx;

pub use ftmx::{read_ftmx, write_ftmx};

use thiserror::Error;

use crate::audio::AudioBuffer;
use crate::tensor::Tensor;

pub const WINDOW_SAMPLES: usize = 400;
pub const HOP_SAMPLES: usize = 160;
pub const SPECTRUM_BINS: usize = 201;
pub const MEL_BANDS: usize = 80;
/// Natural-log floor applied to filterbank energies: ln(1e-10).
pub const LOG_FLOOR: f64 = -23.025850929940457;

#[derive(Debug, Error)]
pub enum FrontendError {
    #[error("audio too short: {got} samples, need at least {needed}")]
    TooShort { got: usize, needed: usize },
    #[error("unsupported sample rate {got} Hz (need 16000; resample first)")]
    UnsupportedRate { got: u32 },
    #[error("augmentation policy invalid: {0}")]
    Policy(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("feature file {path}: {problem}")]
    FeatureFile { path: String, problem: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureKind {
    Fbank80,
    Spectrogram201,
}

impl FeatureKind {
    pub fn dim(self) -> usize {
        match self {
            FeatureKind::Fbank80 => MEL_BANDS,
            FeatureKind::Spectrogram201 => SPECTRUM_BINS,
        }
    }

    /// Value that represents "silence" when masking cells of this kind.
    pub fn mask_value(self) -> f64 {
        match self {
            FeatureKind::Fbank80 => LOG_FLOOR,
            FeatureKind::Spectrogram201 => 0.0,
        }
    }
}

/// A T x D feature matrix with frame metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub kind: FeatureKind,
    frames: Tensor,
    pub frame_shift_s: f64,
    pub frame_length_s: f64,
}

impl FeatureMatrix {
    pub fn new(kind: FeatureKind, frames: Tensor) -> Self {
        assert_eq!(frames.rank(), 2);
        assert_eq!(frames.shape()[1], kind.dim(), "feature dim mismatch");
        debug_assert!(frames.all_finite());
        FeatureMatrix {
            kind,
            frames,
            frame_shift_s: 0.010,
            frame_length_s: 0.025,
        }
    }

    pub fn n_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.frames
    }

    pub fn tensor_mut(&mut self) -> &mut Tensor {
        &mut self.frames
    }

    pub fn at(&self, t: usize, d: usize) -> f64 {
        self.frames.at2(t, d)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WindowKind {
    Hamming,
    /// Debug mode for bin-exact sinusoid tests.
    Rectangular,
}

#[derive(Clone, Debug)]
pub struct FrontendConfig {
    pub window: WindowKind,
    /// Pre-emphasis coefficient; off by default.
    pub pre_emphasis: Option<f64>,
    /// Per-utterance mean subtraction of the final features; off by default.
    pub mean_normalize: bool,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        FrontendConfig {
            window: WindowKind::Hamming,
            pre_emphasis: None,
            mean_normalize: false,
        }
    }
}

/// Frame count for a signal of `n` samples; requires n >= 400.
pub fn frame_count(n: usize) -> usize {
    1 + (n - WINDOW_SAMPLES) / HOP_SAMPLES
}

/// HTK mel scale: m = 2595 log10(1 + f/700).
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

fn check_input(audio: &AudioBuffer) -> Result<(), FrontendError> {
    if audio.sample_rate_hz != crate::audio::SAMPLE_RATE_HZ {
        return Err(FrontendError::UnsupportedRate {
            got: audio.sample_rate_hz,
        });
    }
    if audio.len() < WINDOW_SAMPLES {
        return Err(FrontendError::TooShort {
            got: audio.len(),
            needed: WINDOW_SAMPLES,
        });
    }
    Ok(())
}

/// Per-frame single-sided power spectrum, T x 201.
pub fn compute_spectrogram(
    audio: &AudioBuffer,
    cfg: &FrontendConfig,
) -> Result<FeatureMatrix, FrontendError> {
    check_input(audio)?;
    let power = power_spectrum(audio, cfg);
    let mut feat = FeatureMatrix::new(FeatureKind::Spectrogram201, power);
    if cfg.mean_normalize {
        mean_normalize(&mut feat);
    }
    Ok(feat)
}

/// 80-band log-mel filterbank features, T x 80.
pub fn compute_fbank(
    audio: &AudioBuffer,
    cfg: &FrontendConfig,
) -> Result<FeatureMatrix, FrontendError> {
    check_input(audio)?;
    let power = power_spectrum(audio, cfg);
    let filters = mel_filterbank();
    let t_len = power.shape()[0];
    let mut out = Tensor::zeros(&[t_len, MEL_BANDS]);
    for t in 0..t_len {
        let prow = power.row(t);
        let orow = out.row_mut(t);
        for (m, filter) in filters.iter().enumerate() {
            let mut energy = 0.0;
            for &(bin, weight) in filter {
                energy += weight * prow[bin];
            }
            orow[m] = energy.max(1e-10).ln();
        }
    }
    let mut feat = FeatureMatrix::new(FeatureKind::Fbank80, out);
    if cfg.mean_normalize {
        mean_normalize(&mut feat);
    }
    Ok(feat)
}

fn mean_normalize(feat: &mut FeatureMatrix) {
    let (t_len, d) = (feat.n_frames(), feat.dim());
    let tensor = feat.tensor_mut();
    for j in 0..d {
        let mean = (0..t_len).map(|t| tensor.at2(t, j)).sum::<f64>() / t_len as f64;
        for t in 0..t_len {
            let v = tensor.at2(t, j) - mean;
            tensor.set2(t, j, v);
        }
    }
}

fn power_spectrum(audio: &AudioBuffer, cfg: &FrontendConfig) -> Tensor {
    let samples: Vec<f64> = match cfg.pre_emphasis {
        None => audio.samples.clone(),
        Some(alpha) => {
            let mut out = audio.samples.clone();
            for i in (1..out.len()).rev() {
                out[i] -= alpha * out[i - 1];
            }
            out
        }
    };
    let window: Vec<f64> = match cfg.window {
        WindowKind::Rectangular => vec![1.0; WINDOW_SAMPLES],
        WindowKind::Hamming => (0..WINDOW_SAMPLES)
            .map(|n| {
                0.54 - 0.46
                    * (std::f64::consts::TAU * n as f64 / (WINDOW_SAMPLES as f64 - 1.0)).cos()
            })
            .collect(),
    };
    // Precomputed DFT twiddles for the 201 single-sided bins.
    let mut cos_t = vec![0.0; SPECTRUM_BINS * WINDOW_SAMPLES];
    let mut sin_t = vec![0.0; SPECTRUM_BINS * WINDOW_SAMPLES];
    for k in 0..SPECTRUM_BINS {
        for n in 0..WINDOW_SAMPLES {
            let phase = std::f64::consts::TAU * (k * n) as f64 / WINDOW_SAMPLES as f64;
            cos_t[k * WINDOW_SAMPLES + n] = phase.cos();
            sin_t[k * WINDOW_SAMPLES + n] = phase.sin();
        }
    }
    let t_len = frame_count(samples.len());
    let mut out = Tensor::zeros(&[t_len, SPECTRUM_BINS]);
    let mut frame = vec![0.0; WINDOW_SAMPLES];
    for t in 0..t_len {
        let start = t * HOP_SAMPLES;
        for n in 0..WINDOW_SAMPLES {
            frame[n] = samples[start + n] * window[n];
        }
        let orow = out.row_mut(t);
        for k in 0..SPECTRUM_BINS {
            let ct = &cos_t[k * WINDOW_SAMPLES..(k + 1) * WINDOW_SAMPLES];
            let st = &sin_t[k * WINDOW_SAMPLES..(k + 1) * WINDOW_SAMPLES];
            let mut re = 0.0;
            let mut im = 0.0;
            for n in 0..WINDOW_SAMPLES {
                re += frame[n] * ct[n];
                im -= frame[n] * st[n];
            }
            orow[k] = re * re + im * im;
        }
    }
    out
}

/// 80 triangular filters over 0-8000 Hz, peak 1, sampled at the 201 bin
/// centres (40 Hz apart). Each filter is a sparse list of (bin, weight).
fn mel_filterbank() -> Vec<Vec<(usize, f64)>> {
    let mel_hi = hz_to_mel(8000.0);
    let points: Vec<f64> = (0..MEL_BANDS + 2)
        .map(|i| mel_to_hz(mel_hi * i as f64 / (MEL_BANDS + 1) as f64))
        .collect();
    let bin_hz = 16000.0 / WINDOW_SAMPLES as f64;
    let mut filters = Vec::with_capacity(MEL_BANDS);
    for m in 1..=MEL_BANDS {
        let (lo, mid, hi) = (points[m - 1], points[m], points[m + 1]);
        let mut taps = Vec::new();
        for bin in 0..SPECTRUM_BINS {
            let f = bin as f64 * bin_hz;
            let w = if f >= lo && f <= mid && mid > lo {
                (f - lo) / (mid - lo)
            } else if f > mid && f <= hi && hi > mid {
                (hi - f) / (hi - mid)
            } else {
                0.0
            };
            if w > 0.0 {
                taps.push((bin, w));
            }
        }
        filters.push(taps);
    }
    filters
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::SAMPLE_RATE_HZ;
    use crate::rng::Rng;

    fn zeros(n: usize) -> AudioBuffer {
        AudioBuffer::new(vec![0.0; n], SAMPLE_RATE_HZ)
    }

    #[test]
    fn zero_signal_spectrogram_is_zero() {
        let feat = compute_spectrogram(&zeros(16000), &FrontendConfig::default()).unwrap();
        assert_eq!(feat.n_frames(), 98);
        assert_eq!(feat.dim(), 201);
        assert!(feat.tensor().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_signal_fbank_is_log_floor() {
        let feat = compute_fbank(&zeros(16000), &FrontendConfig::default()).unwrap();
        assert_eq!(feat.n_frames(), 98);
        assert_eq!(feat.dim(), 80);
        assert!(feat.tensor().as_slice().iter().all(|&v| v == LOG_FLOOR));
    }

    #[test]
    fn single_window_gives_one_frame() {
        let feat = compute_spectrogram(&zeros(400), &FrontendConfig::default()).unwrap();
        assert_eq!(feat.n_frames(), 1);
        assert_eq!(feat.dim(), 201);
    }

    #[test]
    fn too_short_and_wrong_rate_error() {
        let err = compute_spectrogram(&zeros(399), &FrontendConfig::default()).unwrap_err();
        assert!(matches!(err, FrontendError::TooShort { got: 399, .. }));
        let bad = AudioBuffer::new(vec![0.0; 16000], 8000);
        let err = compute_fbank(&bad, &FrontendConfig::default()).unwrap_err();
        assert!(matches!(err, FrontendError::UnsupportedRate { got: 8000 }));
    }

    #[test]
    fn bin_aligned_sine_concentrates_at_bin_25() {
        // 1000 Hz = bin 25 at 40 Hz/bin; rectangular window keeps it exact.
        let samples: Vec<f64> = (0..16000)
            .map(|n| (std::f64::consts::TAU * 1000.0 * n as f64 / 16000.0).sin())
            .collect();
        let audio = AudioBuffer::new(samples, SAMPLE_RATE_HZ);
        let cfg = FrontendConfig {
            window: WindowKind::Rectangular,
            ..FrontendConfig::default()
        };
        let feat = compute_spectrogram(&audio, &cfg).unwrap();
        for t in 0..feat.n_frames() {
            let peak = feat.at(t, 25);
            assert!((peak - 40000.0).abs() / 40000.0 < 1e-9, "peak {peak}");
            for d in 0..feat.dim() {
                if d != 25 {
                    assert!(
                        feat.at(t, d) < 1e-9 * peak,
                        "off-bin energy at {d}: {}",
                        feat.at(t, d)
                    );
                }
            }
        }
    }

    #[test]
    fn mel_scale_fixed_points() {
        assert_eq!(hz_to_mel(0.0), 0.0);
        assert!((hz_to_mel(700.0) - 781.17).abs() < 0.01);
        // Round trip across the band.
        for hz in [0.0, 133.3, 700.0, 3200.5, 8000.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
    }

    #[test]
    fn frame_count_formula_random_lengths() {
        let mut rng = Rng::seed(77);
        for _ in 0..200 {
            let n = 400 + rng.below(40_000);
            let feat = compute_spectrogram(&zeros(n), &FrontendConfig::default()).unwrap();
            assert_eq!(feat.n_frames(), 1 + (n - 400) / 160, "n={n}");
        }
    }

    #[test]
    fn fbank_invariant_to_polarity() {
        let mut rng = Rng::seed(78);
        let samples: Vec<f64> = (0..4000).map(|_| rng.uniform_in(-0.8, 0.8)).collect();
        let pos = AudioBuffer::new(samples.clone(), SAMPLE_RATE_HZ);
        let neg = AudioBuffer::new(samples.iter().map(|s| -s).collect(), SAMPLE_RATE_HZ);
        let cfg = FrontendConfig::default();
        let a = compute_fbank(&pos, &cfg).unwrap();
        let b = compute_fbank(&neg, &cfg).unwrap();
        for (x, y) in a.tensor().as_slice().iter().zip(b.tensor().as_slice()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn filterbank_covers_every_band() {
        let filters = mel_filterbank();
        assert_eq!(filters.len(), 80);
        for (m, taps) in filters.iter().enumerate() {
            assert!(!taps.is_empty(), "band {m} has no taps");
            assert!(taps.iter().all(|&(_, w)| w > 0.0 && w <= 1.0));
        }
    }
}
