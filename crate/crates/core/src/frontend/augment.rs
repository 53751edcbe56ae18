//! Data augmentation: SpecAugment-style masking, speed perturbation, and
//! additive noise at a target SNR.

use crate::audio::AudioBuffer;
use crate::frontend::{FeatureMatrix, FrontendError};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug)]
pub struct SpecAugmentPolicy {
    pub n_freq_masks: usize,
    pub max_freq_width: usize,
    pub n_time_masks: usize,
    pub max_time_width: usize,
}

impl Default for SpecAugmentPolicy {
    fn default() -> Self {
        SpecAugmentPolicy {
            n_freq_masks: 2,
            max_freq_width: 15,
            n_time_masks: 2,
            max_time_width: 20,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseKind {
    White,
    Pink,
}

#[derive(Clone, Copy, Debug)]
pub struct NoisePolicy {
    pub snr_db_min: f64,
    pub snr_db_max: f64,
    pub kind: NoiseKind,
}

impl Default for NoisePolicy {
    fn default() -> Self {
        NoisePolicy {
            snr_db_min: 5.0,
            snr_db_max: 15.0,
            kind: NoiseKind::White,
        }
    }
}

/// Which augmentations a training run applies, and in what combination.
#[derive(Clone, Debug, Default)]
pub struct AugmentPolicy {
    pub specaugment: Option<SpecAugmentPolicy>,
    /// Speed factors sampled uniformly per utterance; empty disables.
    pub speed_factors: Vec<f64>,
    pub noise: Option<NoisePolicy>,
    pub rng_seed: u64,
}

impl AugmentPolicy {
    pub fn validate(&self) -> Result<(), FrontendError> {
        if let Some(n) = &self.noise {
            if n.snr_db_min > n.snr_db_max {
                return Err(FrontendError::Policy(format!(
                    "snr_db_min {} > snr_db_max {}",
                    n.snr_db_min, n.snr_db_max
                )));
            }
        }
        for &f in &self.speed_factors {
            if !(0.5..=2.0).contains(&f) {
                return Err(FrontendError::Policy(format!(
                    "speed factor {f} outside [0.5, 2.0]"
                )));
            }
        }
        Ok(())
    }
}

/// Zero out `n_freq_masks` frequency bands and `n_time_masks` time bands.
/// Mask widths are uniform in \[0, max]; starts uniform over valid positions.
/// "Zero" is the log floor for fbank and 0 for spectrograms. Deterministic
/// given the rng state.
pub fn spec_augment(
    feat: &FeatureMatrix,
    policy: &SpecAugmentPolicy,
    rng: &mut Rng,
) -> Result<FeatureMatrix, FrontendError> {
    let (t_len, d) = (feat.n_frames(), feat.dim());
    if policy.max_freq_width >= d {
        return Err(FrontendError::Policy(format!(
            "max_freq_width {} must be < feature dim {d}",
            policy.max_freq_width
        )));
    }
    if policy.max_time_width >= t_len {
        return Err(FrontendError::Policy(format!(
            "max_time_width {} must be < frame count {t_len}",
            policy.max_time_width
        )));
    }
    let mask = feat.kind.mask_value();
    let mut out = feat.clone();
    for _ in 0..policy.n_freq_masks {
        let width = rng.range_inclusive(0, policy.max_freq_width);
        let start = rng.range_inclusive(0, d - width);
        for t in 0..t_len {
            for j in start..start + width {
                out.tensor_mut().set2(t, j, mask);
            }
        }
    }
    for _ in 0..policy.n_time_masks {
        let width = rng.range_inclusive(0, policy.max_time_width);
        let start = rng.range_inclusive(0, t_len - width);
        for t in start..start + width {
            for j in 0..d {
                out.tensor_mut().set2(t, j, mask);
            }
        }
    }
    Ok(out)
}

/// Mask a single frequency band [start, start+width); exposed for exact
/// mask-area checks.
pub fn mask_freq_band(feat: &mut FeatureMatrix, start: usize, width: usize) {
    let mask = feat.kind.mask_value();
    let t_len = feat.n_frames();
    assert!(start + width <= feat.dim());
    for t in 0..t_len {
        for j in start..start + width {
            feat.tensor_mut().set2(t, j, mask);
        }
    }
}

/// Playback-rate change by windowed-sinc resampling: output length
/// round(N/factor), pitch and duration both scale.
pub fn speed_perturb(audio: &AudioBuffer, factor: f64) -> Result<AudioBuffer, FrontendError> {
    if !(0.5..=2.0).contains(&factor) {
        return Err(FrontendError::Policy(format!(
            "speed factor {factor} outside [0.5, 2.0]"
        )));
    }
    if factor == 1.0 {
        return Ok(audio.clone());
    }
    let n = audio.len();
    let n_out = (n as f64 / factor).round() as usize;
    // Anti-alias when speeding up (effective downsampling).
    let cutoff = (1.0 / factor).min(1.0);
    const HALF_TAPS: isize = 32;
    let mut out = Vec::with_capacity(n_out);
    for m in 0..n_out {
        let t = m as f64 * factor;
        let nearest = t.round();
        if (t - nearest).abs() < 1e-9 && (nearest as usize) < n {
            out.push(audio.samples[nearest as usize]);
            continue;
        }
        let center = t.floor() as isize;
        let mut acc = 0.0;
        for j in center - HALF_TAPS + 1..=center + HALF_TAPS {
            if j < 0 || j as usize >= n {
                continue;
            }
            let tau = j as f64 - t;
            let x = std::f64::consts::PI * cutoff * tau;
            let sinc = if x.abs() < 1e-12 { 1.0 } else { x.sin() / x };
            let win = 0.5 * (1.0 + (std::f64::consts::PI * tau / HALF_TAPS as f64).cos());
            acc += audio.samples[j as usize] * cutoff * sinc * win;
        }
        out.push(acc);
    }
    Ok(AudioBuffer::new(out, audio.sample_rate_hz))
}

/// Add `noise` to `audio` scaled so the mixed segment hits `snr_db` exactly.
/// The noise is looped/cropped to the signal length starting at a random
/// offset drawn from `rng`.
pub fn mix_noise(
    audio: &AudioBuffer,
    noise: &AudioBuffer,
    snr_db: f64,
    rng: &mut Rng,
) -> Result<AudioBuffer, FrontendError> {
    let p_signal = audio.power();
    if p_signal <= 0.0 {
        return Err(FrontendError::Degenerate("zero-power signal".into()));
    }
    if noise.is_empty() {
        return Err(FrontendError::Degenerate("empty noise".into()));
    }
    let offset = rng.below(noise.len());
    let segment: Vec<f64> = (0..audio.len())
        .map(|i| noise.samples[(offset + i) % noise.len()])
        .collect();
    let p_noise = segment.iter().map(|s| s * s).sum::<f64>() / segment.len() as f64;
    if p_noise <= 0.0 {
        return Err(FrontendError::Degenerate("zero-power noise segment".into()));
    }
    let gain = (p_signal / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt();
    let mixed = audio
        .samples
        .iter()
        .zip(&segment)
        .map(|(s, n)| s + gain * n)
        .collect();
    Ok(AudioBuffer::new(mixed, audio.sample_rate_hz))
}

/// Gain for a signal/noise power pair at a target SNR; exposed for tests.
pub fn noise_gain(p_signal: f64, p_noise: f64, snr_db: f64) -> f64 {
    (p_signal / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt()
}

/// Unit-variance-ish white noise.
pub fn white_noise(n: usize, rng: &mut Rng) -> AudioBuffer {
    let samples = (0..n).map(|_| 0.2 * rng.gaussian()).collect();
    AudioBuffer::new(samples, crate::audio::SAMPLE_RATE_HZ)
}

/// Pink-ish noise via the Paul Kellet three-pole filter over white noise.
pub fn pink_noise(n: usize, rng: &mut Rng) -> AudioBuffer {
    let (mut b0, mut b1, mut b2) = (0.0, 0.0, 0.0);
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let white = rng.gaussian();
        b0 = 0.99765 * b0 + white * 0.0990460;
        b1 = 0.96300 * b1 + white * 0.2965164;
        b2 = 0.57000 * b2 + white * 1.0526913;
        samples.push(0.05 * (b0 + b1 + b2 + white * 0.1848));
    }
    AudioBuffer::new(samples, crate::audio::SAMPLE_RATE_HZ)
}

pub fn generate_noise(kind: NoiseKind, n: usize, rng: &mut Rng) -> AudioBuffer {
    match kind {
        NoiseKind::White => white_noise(n, rng),
        NoiseKind::Pink => pink_noise(n, rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::SAMPLE_RATE_HZ;
    use crate::frontend::{compute_fbank, FrontendConfig, LOG_FLOOR};

    fn fbank_98x80() -> FeatureMatrix {
        let mut rng = Rng::seed(100);
        let samples: Vec<f64> = (0..16000).map(|_| rng.uniform_in(-0.5, 0.5)).collect();
        compute_fbank(
            &AudioBuffer::new(samples, SAMPLE_RATE_HZ),
            &FrontendConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn zero_policy_is_identity() {
        let feat = fbank_98x80();
        let policy = SpecAugmentPolicy {
            n_freq_masks: 0,
            max_freq_width: 10,
            n_time_masks: 0,
            max_time_width: 10,
        };
        let out = spec_augment(&feat, &policy, &mut Rng::seed(1)).unwrap();
        assert_eq!(out.tensor().as_slice(), feat.tensor().as_slice());
    }

    #[test]
    fn freq_mask_of_width_10_changes_980_cells() {
        let mut feat = fbank_98x80();
        mask_freq_band(&mut feat, 30, 10);
        let orig = fbank_98x80();
        let changed = feat
            .tensor()
            .as_slice()
            .iter()
            .zip(orig.tensor().as_slice())
            .filter(|(a, b)| a != b)
            .count();
        assert_eq!(changed, 98 * 10);
        assert!(feat
            .tensor()
            .as_slice()
            .iter()
            .zip(orig.tensor().as_slice())
            .all(|(a, b)| *a == *b || *a == LOG_FLOOR));
    }

    #[test]
    fn masking_is_deterministic_given_seed() {
        let feat = fbank_98x80();
        let policy = SpecAugmentPolicy::default();
        let a = spec_augment(&feat, &policy, &mut Rng::seed(42)).unwrap();
        let b = spec_augment(&feat, &policy, &mut Rng::seed(42)).unwrap();
        assert_eq!(a.tensor().as_slice(), b.tensor().as_slice());
    }

    #[test]
    fn unmasked_cells_bit_identical_and_masked_cells_floored() {
        let feat = fbank_98x80();
        let policy = SpecAugmentPolicy::default();
        for seed in 0..100 {
            let out = spec_augment(&feat, &policy, &mut Rng::seed(seed)).unwrap();
            for (a, b) in out
                .tensor()
                .as_slice()
                .iter()
                .zip(feat.tensor().as_slice())
            {
                assert!(a == b || *a == LOG_FLOOR);
            }
        }
    }

    #[test]
    fn oversized_mask_rejected() {
        let feat = fbank_98x80();
        let policy = SpecAugmentPolicy {
            n_freq_masks: 1,
            max_freq_width: 80,
            n_time_masks: 0,
            max_time_width: 0,
        };
        assert!(matches!(
            spec_augment(&feat, &policy, &mut Rng::seed(0)),
            Err(FrontendError::Policy(_))
        ));
    }

    #[test]
    fn speed_identity_is_sample_exact() {
        let mut rng = Rng::seed(5);
        let samples: Vec<f64> = (0..8000).map(|_| rng.uniform_in(-0.9, 0.9)).collect();
        let audio = AudioBuffer::new(samples.clone(), SAMPLE_RATE_HZ);
        let out = speed_perturb(&audio, 1.0).unwrap();
        assert_eq!(out.samples, samples);
    }

    #[test]
    fn speed_output_lengths() {
        let audio = AudioBuffer::new(vec![0.1; 16000], SAMPLE_RATE_HZ);
        assert_eq!(speed_perturb(&audio, 1.1).unwrap().len(), 14545);
        assert_eq!(speed_perturb(&audio, 0.9).unwrap().len(), 17778);
        assert!(speed_perturb(&audio, 2.5).is_err());
        assert!(speed_perturb(&audio, 0.4).is_err());
    }

    #[test]
    fn speed_round_trip_recovers_bandlimited_signal() {
        // Band-limited multi-sine (< 6 kHz) so a 1/0.9 downsample loses
        // nothing; compare against a same-length crop.
        let mut rng = Rng::seed(9);
        for _ in 0..5 {
            let n = 16000;
            let freqs: Vec<(f64, f64)> = (0..6)
                .map(|_| (rng.uniform_in(50.0, 6000.0), rng.uniform_in(0.05, 0.2)))
                .collect();
            let samples: Vec<f64> = (0..n)
                .map(|i| {
                    freqs
                        .iter()
                        .map(|(f, a)| {
                            a * (std::f64::consts::TAU * f * i as f64 / 16000.0).sin()
                        })
                        .sum()
                })
                .collect();
            let audio = AudioBuffer::new(samples.clone(), SAMPLE_RATE_HZ);
            let factor = 0.9;
            let warped = speed_perturb(&audio, factor).unwrap();
            let back = speed_perturb(&warped, 1.0 / factor).unwrap();
            let keep = back.len().min(n);
            let mut err = 0.0;
            let mut ref_energy = 0.0;
            for i in 0..keep {
                let d = back.samples[i] - samples[i];
                err += d * d;
                ref_energy += samples[i] * samples[i];
            }
            let rel = (err / ref_energy).sqrt();
            assert!(rel <= 0.05, "round-trip relative L2 {rel}");
        }
    }

    #[test]
    fn noise_gain_formula() {
        assert!((noise_gain(1.0, 1.0, 0.0) - 1.0).abs() < 1e-12);
        assert!((noise_gain(1.0, 1.0, 10.0) - 10f64.powf(-0.5)).abs() < 1e-12);
    }

    #[test]
    fn mix_noise_hits_target_snr() {
        let mut rng = Rng::seed(31);
        for case in 0..100 {
            let n = 2000 + rng.below(2000);
            let signal = AudioBuffer::new(
                (0..n).map(|_| rng.uniform_in(-0.5, 0.5)).collect(),
                SAMPLE_RATE_HZ,
            );
            let noise = white_noise(n + rng.below(n), &mut rng);
            let snr_db = rng.uniform_in(-5.0, 30.0);
            let mixed = mix_noise(&signal, &noise, snr_db, &mut rng).unwrap();
            let p_signal = signal.power();
            let p_added = mixed
                .samples
                .iter()
                .zip(&signal.samples)
                .map(|(m, s)| (m - s) * (m - s))
                .sum::<f64>()
                / n as f64;
            let achieved = 10.0 * (p_signal / p_added).log10();
            assert!(
                (achieved - snr_db).abs() < 0.01,
                "case {case}: target {snr_db} achieved {achieved}"
            );
        }
    }

    #[test]
    fn high_snr_barely_perturbs() {
        let mut rng = Rng::seed(32);
        let signal = AudioBuffer::new(
            (0..8000).map(|_| rng.uniform_in(-0.5, 0.5)).collect(),
            SAMPLE_RATE_HZ,
        );
        let noise = white_noise(8000, &mut rng);
        let mixed = mix_noise(&signal, &noise, 60.0, &mut rng).unwrap();
        let num: f64 = mixed
            .samples
            .iter()
            .zip(&signal.samples)
            .map(|(m, s)| (m - s) * (m - s))
            .sum();
        let den: f64 = signal.samples.iter().map(|s| s * s).sum();
        assert!((num / den).sqrt() <= 0.002);
    }

    #[test]
    fn degenerate_inputs_error() {
        let mut rng = Rng::seed(33);
        let silence = AudioBuffer::new(vec![0.0; 1000], SAMPLE_RATE_HZ);
        let noise = white_noise(1000, &mut rng);
        assert!(matches!(
            mix_noise(&silence, &noise, 10.0, &mut rng),
            Err(FrontendError::Degenerate(_))
        ));
        let signal = AudioBuffer::new(vec![0.5; 1000], SAMPLE_RATE_HZ);
        let zero_noise = AudioBuffer::new(vec![0.0; 500], SAMPLE_RATE_HZ);
        assert!(matches!(
            mix_noise(&signal, &zero_noise, 10.0, &mut rng),
            Err(FrontendError::Degenerate(_))
        ));
    }
}
