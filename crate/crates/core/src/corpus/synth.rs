//! Synthetic desk-scale corpus: each character is rendered as 120 ms of a
//! token-specific two-harmonic tone (fundamental 300 + 150k Hz for token id
//! k, plus its octave) with white noise mixed at 20 dB SNR. Fully determined
//! by the seed, so repeated runs are byte-identical.

use std::io::Write;
use std::path::Path;

use crate::audio::{write_wav, AudioBuffer, SAMPLE_RATE_HZ};
use crate::frontend::augment::{mix_noise, white_noise};
use crate::rng::Rng;

use super::{CorpusError, CorpusManifest, ManifestRecord, Vocabulary};

pub const TOKEN_SECONDS: f64 = 0.12;
pub const TONE_SNR_DB: f64 = 20.0;
const MAX_ALPHABET: usize = 12;
const RAMP_SAMPLES: usize = 80; // 5 ms edge ramp against clicks

/// Fundamental frequency for token id k (1-based).
pub fn token_frequency_hz(token_id: usize) -> f64 {
    300.0 + 150.0 * token_id as f64
}

/// Render the tone for one token id.
pub fn render_token(token_id: usize) -> Vec<f64> {
    let n = (TOKEN_SECONDS * SAMPLE_RATE_HZ as f64).round() as usize;
    let f = token_frequency_hz(token_id);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / SAMPLE_RATE_HZ as f64;
        let mut v = 0.55 * (std::f64::consts::TAU * f * t).sin()
            + 0.275 * (std::f64::consts::TAU * 2.0 * f * t).sin();
        let ramp_in = (i as f64 + 1.0) / RAMP_SAMPLES as f64;
        let ramp_out = (n - i) as f64 / RAMP_SAMPLES as f64;
        v *= ramp_in.min(1.0).min(ramp_out);
        out.push(v);
    }
    out
}

/// Generate `n_utts` utterances of 3-10 random tokens into `out_dir`
/// (wavs/ + manifest.jsonl). Returns the manifest.
pub fn synth_corpus(
    n_utts: usize,
    alphabet_size: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<CorpusManifest, CorpusError> {
    if alphabet_size == 0 || alphabet_size > MAX_ALPHABET {
        return Err(CorpusError::Synth(format!(
            "alphabet size {alphabet_size} outside [1, {MAX_ALPHABET}]"
        )));
    }
    let chars: Vec<char> = ('a'..='l').take(alphabet_size).collect();
    let vocab = Vocabulary::from_chars(&chars);
    let wav_dir = out_dir.join("wavs");
    std::fs::create_dir_all(&wav_dir).map_err(|source| CorpusError::Io {
        path: wav_dir.display().to_string(),
        source,
    })?;

    let mut rng = Rng::seed(seed);
    let mut records = Vec::with_capacity(n_utts);
    for i in 0..n_utts {
        let n_tokens = rng.range_inclusive(3, 10);
        let ids: Vec<usize> = (0..n_tokens)
            .map(|_| rng.range_inclusive(1, alphabet_size))
            .collect();
        let text: String = ids.iter().map(|&id| vocab.char_of(id).unwrap()).collect();

        let mut samples = Vec::with_capacity(n_tokens * 1920);
        for &id in &ids {
            samples.extend(render_token(id));
        }
        let clean = AudioBuffer::new(samples, SAMPLE_RATE_HZ);
        let noise = white_noise(clean.len(), &mut rng);
        let noisy = mix_noise(&clean, &noise, TONE_SNR_DB, &mut rng)
            .map_err(|e| CorpusError::Synth(e.to_string()))?;

        let rel = format!("wavs/utt_{i:05}.wav");
        write_wav(&out_dir.join(&rel), &noisy).map_err(|e| CorpusError::Synth(e.to_string()))?;
        records.push(ManifestRecord {
            audio: rel,
            text,
            duration_s: n_tokens as f64 * TOKEN_SECONDS,
        });
    }

    let manifest_path = out_dir.join("manifest.jsonl");
    let mut file = std::fs::File::create(&manifest_path).map_err(|source| CorpusError::Io {
        path: manifest_path.display().to_string(),
        source,
    })?;
    for r in &records {
        let line = serde_json::to_string(r).expect("manifest record serializes");
        writeln!(file, "{line}").map_err(|source| CorpusError::Io {
            path: manifest_path.display().to_string(),
            source,
        })?;
    }
    Ok(CorpusManifest {
        records,
        root: out_dir.to_path_buf(),
    })
}
