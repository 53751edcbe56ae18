//! Binary feature dump, one file per utterance.
//!
//! Layout: magic "FTMX", version u32, kind u8 (1 = fbank80,
//! 2 = spectrogram201), T u32, D u32, then T*D little-endian f64 values,
//! row-major by frame.

use std::io::{Read, Write};
use std::path::Path;

use crate::frontend::{FeatureKind, FeatureMatrix, FrontendError};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"FTMX";
const VERSION: u32 = 1;

fn kind_code(kind: FeatureKind) -> u8 {
    match kind {
        FeatureKind::Fbank80 => 1,
        FeatureKind::Spectrogram201 => 2,
    }
}

pub fn write_ftmx(path: &Path, feat: &FeatureMatrix) -> Result<(), FrontendError> {
    let mut buf = Vec::with_capacity(17 + feat.tensor().len() * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(kind_code(feat.kind));
    buf.extend_from_slice(&(feat.n_frames() as u32).to_le_bytes());
    buf.extend_from_slice(&(feat.dim() as u32).to_le_bytes());
    for v in feat.tensor().as_slice() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

pub fn read_ftmx(path: &Path) -> Result<FeatureMatrix, FrontendError> {
    let display = path.display().to_string();
    let bad = |problem: &str| FrontendError::FeatureFile {
        path: display.clone(),
        problem: problem.to_string(),
    };
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 17 || &bytes[..4] != MAGIC {
        return Err(bad("not an FTMX file"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let kind = match bytes[8] {
        1 => FeatureKind::Fbank80,
        2 => FeatureKind::Spectrogram201,
        k => return Err(bad(&format!("unknown feature kind {k}"))),
    };
    let t = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[13..17].try_into().unwrap()) as usize;
    if d != kind.dim() {
        return Err(bad(&format!("dim {d} inconsistent with kind")));
    }
    let need = 17 + t * d * 8;
    if bytes.len() != need {
        return Err(bad(&format!("expected {need} bytes, got {}", bytes.len())));
    }
    let data: Vec<f64> = bytes[17..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(FeatureMatrix::new(kind, Tensor::from_vec(&[t, d], data)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{AudioBuffer, SAMPLE_RATE_HZ};
    use crate::frontend::{compute_fbank, FrontendConfig};
    use crate::rng::Rng;

    #[test]
    fn round_trip_bit_exact() {
        let mut rng = Rng::seed(55);
        let samples: Vec<f64> = (0..2400).map(|_| rng.uniform_in(-0.5, 0.5)).collect();
        let feat = compute_fbank(
            &AudioBuffer::new(samples, SAMPLE_RATE_HZ),
            &FrontendConfig::default(),
        )
        .unwrap();
        let dir = std::env::temp_dir().join("asr_ftmx_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("utt.ftmx");
        write_ftmx(&path, &feat).unwrap();
        let back = read_ftmx(&path).unwrap();
        assert_eq!(back.kind, feat.kind);
        assert_eq!(back.tensor(), feat.tensor());
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn rejects_garbage() {
        let dir = std::env::temp_dir().join("asr_ftmx_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("garbage.ftmx");
        std::fs::write(&path, b"not a feature file").unwrap();
        assert!(matches!(
            read_ftmx(&path),
            Err(FrontendError::FeatureFile { .. })
        ));
        std::fs::remove_file(&path).ok();
    }
}
