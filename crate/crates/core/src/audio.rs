//! Audio buffers and 16-bit PCM WAV I/O.

use std::path::Path;

use thiserror::Error;

pub const SAMPLE_RATE_HZ: u32 = 16_000;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("wav read {path}: {source}")]
    Read {
        path: String,
        source: hound::Error,
    },
    #[error("wav write {path}: {source}")]
    Write {
        path: String,
        source: hound::Error,
    },
    #[error("{path}: expected 16-bit mono PCM at 16000 Hz, got {got}")]
    Format { path: String, got: String },
    #[error("audio buffer is empty")]
    Empty,
    #[error("audio contains non-finite samples")]
    NonFinite,
}

/// Mono PCM audio, samples in \[-1, 1].
#[derive(Clone, Debug)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Self {
        AudioBuffer {
            samples,
            sample_rate_hz,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    pub fn validate(&self) -> Result<(), AudioError> {
        if self.samples.is_empty() {
            return Err(AudioError::Empty);
        }
        if !self.samples.iter().all(|s| s.is_finite()) {
            return Err(AudioError::NonFinite);
        }
        Ok(())
    }

    /// Mean square power of the samples.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64
    }
}

pub fn read_wav(path: &Path) -> Result<AudioBuffer, AudioError> {
    let display = path.display().to_string();
    let mut reader = hound::WavReader::open(path).map_err(|source| AudioError::Read {
        path: display.clone(),
        source,
    })?;
    let spec = reader.spec();
    if spec.channels != 1
        || spec.bits_per_sample != 16
        || spec.sample_format != hound::SampleFormat::Int
        || spec.sample_rate != SAMPLE_RATE_HZ
    {
        return Err(AudioError::Format {
            path: display,
            got: format!(
                "{} ch, {} bit, {} Hz",
                spec.channels, spec.bits_per_sample, spec.sample_rate
            ),
        });
    }
    let samples: Result<Vec<i16>, _> = reader.samples::<i16>().collect();
    let samples = samples.map_err(|source| AudioError::Read {
        path: display,
        source,
    })?;
    Ok(AudioBuffer::new(
        samples.iter().map(|&s| s as f64 / 32768.0).collect(),
        SAMPLE_RATE_HZ,
    ))
}

pub fn write_wav(path: &Path, audio: &AudioBuffer) -> Result<(), AudioError> {
    let display = path.display().to_string();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|source| AudioError::Write {
        path: display.clone(),
        source,
    })?;
    for &s in &audio.samples {
        let q = (s * 32767.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(q).map_err(|source| AudioError::Write {
            path: display.clone(),
            source,
        })?;
    }
    writer.finalize().map_err(|source| AudioError::Write {
        path: display,
        source,
    })
}
