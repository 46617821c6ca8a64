//! Lattice file formats.
//!
//! Binary: little-endian, magic `CTCL`, u32 version = 1, u32 T, u32 V,
//! then T*V 64-bit log-probabilities row-major. A JSON form with fields
//! `{"T", "V", "logprobs"}` is accepted for hand-written fixtures.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{CtcError, LogProbLattice};

const MAGIC: &[u8; 4] = b"CTCL";
const VERSION: u32 = 1;

pub fn write_lattice(lattice: &LogProbLattice, mut w: impl Write) -> Result<(), CtcError> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(lattice.frames() as u32).to_le_bytes())?;
    w.write_all(&(lattice.vocab_size() as u32).to_le_bytes())?;
    for v in lattice.values().iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_lattice(mut r: impl Read) -> Result<LogProbLattice, CtcError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CtcError::MalformedFile(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(CtcError::MalformedFile(format!("unsupported version {version}")));
    }
    let t = read_u32(&mut r)? as usize;
    let v = read_u32(&mut r)? as usize;
    let mut values = Vec::with_capacity(t * v);
    let mut buf = [0u8; 8];
    for _ in 0..t * v {
        r.read_exact(&mut buf)?;
        values.push(f64::from_le_bytes(buf));
    }
    let arr = Array2::from_shape_vec((t, v), values)
        .map_err(|e| CtcError::MalformedFile(e.to_string()))?;
    LogProbLattice::new(arr)
}

#[derive(Serialize, Deserialize)]
struct LatticeJson {
    #[serde(rename = "T")]
    t: usize,
    #[serde(rename = "V")]
    v: usize,
    logprobs: Vec<Vec<f64>>,
}

pub fn write_lattice_json(lattice: &LogProbLattice, w: impl Write) -> Result<(), CtcError> {
    let doc = LatticeJson {
        t: lattice.frames(),
        v: lattice.vocab_size(),
        logprobs: lattice.values().rows().into_iter().map(|r| r.to_vec()).collect(),
    };
    serde_json::to_writer(w, &doc).map_err(|e| CtcError::MalformedFile(e.to_string()))
}

pub fn read_lattice_json(r: impl Read) -> Result<LogProbLattice, CtcError> {
    let doc: LatticeJson =
        serde_json::from_reader(r).map_err(|e| CtcError::MalformedFile(e.to_string()))?;
    if doc.logprobs.len() != doc.t || doc.logprobs.iter().any(|row| row.len() != doc.v) {
        return Err(CtcError::MalformedFile("logprobs shape disagrees with T/V".into()));
    }
    let flat: Vec<f64> = doc.logprobs.into_iter().flatten().collect();
    let arr = Array2::from_shape_vec((doc.t, doc.v), flat)
        .map_err(|e| CtcError::MalformedFile(e.to_string()))?;
    LogProbLattice::new(arr)
}

/// Load a lattice from disk, sniffing binary vs. JSON by the magic bytes.
pub fn load_lattice_file(path: &Path) -> Result<LogProbLattice, CtcError> {
    let bytes = std::fs::read(path)?;
    if bytes.len() >= 4 && &bytes[..4] == MAGIC {
        read_lattice(&bytes[..])
    } else {
        read_lattice_json(&bytes[..])
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32, CtcError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}
