//! Checkpoint format.
//!
//! Layout: magic "HCAM", version u32, config digest u64, tensor count u32,
//! then per tensor: name length u32 + UTF-8 bytes, rank u8, dims u32 each,
//! little-endian f64 data. Round-trips are bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use crate::params::ParamStore;
use crate::tensor::Tensor;

use super::ModelError;

const MAGIC: &[u8; 4] = b"HCAM";
const VERSION: u32 = 1;

pub fn save_checkpoint(path: &Path, store: &ParamStore, digest: u64) -> Result<(), ModelError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&digest.to_le_bytes());
    buf.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, tensor) in store.iter() {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(tensor.rank() as u8);
        for &d in tensor.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in tensor.as_slice() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ParamStore, u64), ModelError> {
    let display = path.display().to_string();
    let bad = |problem: String| ModelError::Checkpoint {
        path: display.clone(),
        problem,
    };
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8], ModelError> {
        if *pos + n > bytes.len() {
            return Err(ModelError::Checkpoint {
                path: display.clone(),
                problem: "truncated file".into(),
            });
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    if take(&mut pos, 4)? != MAGIC {
        return Err(bad("bad magic".into()));
    }
    let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let digest = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
    let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(take(&mut pos, name_len)?)
            .map_err(|_| bad("non-utf8 tensor name".into()))?
            .to_string();
        let rank = take(&mut pos, 1)?[0] as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize);
        }
        let len: usize = dims.iter().product();
        let data: Vec<f64> = take(&mut pos, len * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        store.insert(&name, Tensor::from_vec(&dims, data));
    }
    if pos != bytes.len() {
        return Err(bad("trailing bytes".into()));
    }
    Ok((store, digest))
}
