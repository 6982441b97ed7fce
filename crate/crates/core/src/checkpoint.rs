//! Flat named-tensor checkpoint files.
//!
//! Layout: magic `MSSL0001`, then per entry: name length (u32 LE), UTF-8
//! name, rank (u32 LE), dims (u64 LE each), values (f64 LE, row-major).
//! Entries run to end of file; order is preserved.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"MSSL0001";

/// Reserved entry name for the JSON config embedded in model checkpoints.
/// The JSON bytes are stored as a rank-1 tensor of byte values.
pub const CONFIG_ENTRY: &str = "__config__";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic header (expected MSSL0001)")]
    BadMagic { path: String },
    #[error("{path}: truncated entry while reading {what}")]
    Truncated { path: String, what: &'static str },
    #[error("{path}: entry name is not valid UTF-8")]
    BadName { path: String },
    #[error("{path}: entry {name} has no such tensor")]
    MissingEntry { path: String, name: String },
}

type Result<T> = std::result::Result<T, CheckpointError>;

fn io_err(path: &Path, source: std::io::Error) -> CheckpointError {
    CheckpointError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn save(path: &Path, entries: &[(String, Tensor)]) -> Result<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC).map_err(|e| io_err(path, e))?;
    for (name, tensor) in entries {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u32).to_le_bytes())
            .map_err(|e| io_err(path, e))?;
        w.write_all(bytes).map_err(|e| io_err(path, e))?;
        w.write_all(&(tensor.rank() as u32).to_le_bytes())
            .map_err(|e| io_err(path, e))?;
        for &d in tensor.dims() {
            w.write_all(&(d as u64).to_le_bytes())
                .map_err(|e| io_err(path, e))?;
        }
        for &v in tensor.values() {
            w.write_all(&v.to_le_bytes()).map_err(|e| io_err(path, e))?;
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn load(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut r = BufReader::new(file);
    let disp = path.display().to_string();
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|e| io_err(path, e))?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic { path: disp });
    }
    let mut entries = Vec::new();
    loop {
        let mut len4 = [0u8; 4];
        match r.read_exact(&mut len4) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(io_err(path, e)),
        }
        let name_len = u32::from_le_bytes(len4) as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)
            .map_err(|_| CheckpointError::Truncated {
                path: disp.clone(),
                what: "name",
            })?;
        let name = String::from_utf8(name_bytes).map_err(|_| CheckpointError::BadName {
            path: disp.clone(),
        })?;
        r.read_exact(&mut len4)
            .map_err(|_| CheckpointError::Truncated {
                path: disp.clone(),
                what: "rank",
            })?;
        let rank = u32::from_le_bytes(len4) as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut d8 = [0u8; 8];
            r.read_exact(&mut d8).map_err(|_| CheckpointError::Truncated {
                path: disp.clone(),
                what: "dims",
            })?;
            dims.push(u64::from_le_bytes(d8) as usize);
        }
        let count: usize = dims.iter().product();
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            let mut v8 = [0u8; 8];
            r.read_exact(&mut v8).map_err(|_| CheckpointError::Truncated {
                path: disp.clone(),
                what: "values",
            })?;
            values.push(f64::from_le_bytes(v8));
        }
        let tensor = Tensor::from_values(&dims, values).map_err(|_| CheckpointError::Truncated {
            path: disp.clone(),
            what: "shape",
        })?;
        entries.push((name, tensor));
    }
    Ok(entries)
}

/// Store a UTF-8 string as a rank-1 tensor of byte values.
pub fn string_to_tensor(s: &str) -> Tensor {
    let bytes: Vec<f64> = s.bytes().map(f64::from).collect();
    if bytes.is_empty() {
        Tensor::scalar(0.0)
    } else {
        Tensor::from_values(&[bytes.len()], bytes).unwrap()
    }
}

pub fn tensor_to_string(t: &Tensor) -> Option<String> {
    let bytes: Vec<u8> = t.values().iter().map(|&v| v as u8).collect();
    String::from_utf8(bytes).ok()
}

pub fn find<'a>(entries: &'a [(String, Tensor)], name: &str) -> Option<&'a Tensor> {
    entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
}
