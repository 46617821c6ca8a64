//! Checkpoint format: little-endian, magic `NARC`, u32 version, JSON
//! model config (length-prefixed), u32 tensor count, then per tensor the
//! length-prefixed name, rank, dims and 64-bit values. Round-trips are
//! bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use ndarray::Array2;

use super::{ModelConfig, NnError, ParameterSet};

const MAGIC: &[u8; 4] = b"NARC";
const VERSION: u32 = 1;

pub fn write_checkpoint(params: &ParameterSet, mut w: impl Write) -> Result<(), NnError> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let config_json = serde_json::to_vec(params.config())
        .map_err(|e| NnError::MalformedCheckpoint(e.to_string()))?;
    w.write_all(&(config_json.len() as u32).to_le_bytes())?;
    w.write_all(&config_json)?;
    let count = params.names().count() as u32;
    w.write_all(&count.to_le_bytes())?;
    for (name, tensor) in params.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&2u32.to_le_bytes())?; // rank
        w.write_all(&(tensor.nrows() as u32).to_le_bytes())?;
        w.write_all(&(tensor.ncols() as u32).to_le_bytes())?;
        for v in tensor.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint(mut r: impl Read) -> Result<ParameterSet, NnError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NnError::MalformedCheckpoint(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(NnError::MalformedCheckpoint(format!("unsupported version {version}")));
    }
    let config_len = read_u32(&mut r)? as usize;
    let mut config_bytes = vec![0u8; config_len];
    r.read_exact(&mut config_bytes)?;
    let config: ModelConfig = serde_json::from_slice(&config_bytes)
        .map_err(|e| NnError::MalformedCheckpoint(e.to_string()))?;
    config.validate()?;

    let count = read_u32(&mut r)? as usize;
    let mut tensors = IndexMap::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|e| NnError::MalformedCheckpoint(e.to_string()))?;
        let rank = read_u32(&mut r)?;
        if rank != 2 {
            return Err(NnError::MalformedCheckpoint(format!(
                "tensor {name:?} has rank {rank}, expected 2"
            )));
        }
        let rows = read_u32(&mut r)? as usize;
        let cols = read_u32(&mut r)? as usize;
        let mut values = Vec::with_capacity(rows * cols);
        let mut buf = [0u8; 8];
        for _ in 0..rows * cols {
            r.read_exact(&mut buf)?;
            values.push(f64::from_le_bytes(buf));
        }
        let tensor = Array2::from_shape_vec((rows, cols), values)
            .map_err(|e| NnError::MalformedCheckpoint(e.to_string()))?;
        tensors.insert(name, tensor);
    }

    // Rebuild through init to check the name/shape inventory, then adopt
    // the stored values.
    let mut params = ParameterSet::init(&config)?;
    let expected: Vec<String> = params.names().cloned().collect();
    if expected.len() != tensors.len() {
        return Err(NnError::MalformedCheckpoint(format!(
            "expected {} tensors, found {}",
            expected.len(),
            tensors.len()
        )));
    }
    for name in expected {
        let stored = tensors.shift_remove(&name).ok_or_else(|| {
            NnError::MalformedCheckpoint(format!("missing tensor {name:?}"))
        })?;
        let slot = params.get_mut(&name)?;
        if slot.raw_dim() != stored.raw_dim() {
            return Err(NnError::MalformedCheckpoint(format!(
                "tensor {name:?} has shape {:?}, expected {:?}",
                stored.dim(),
                slot.dim()
            )));
        }
        *slot = stored;
    }
    Ok(params)
}

pub fn save_checkpoint(params: &ParameterSet, path: &Path) -> Result<(), NnError> {
    let mut buf = Vec::new();
    write_checkpoint(params, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ParameterSet, NnError> {
    let bytes = std::fs::read(path)?;
    read_checkpoint(&bytes[..])
}

fn read_u32(r: &mut impl Read) -> Result<u32, NnError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}
