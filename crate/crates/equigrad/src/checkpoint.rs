//! Parameter checkpoints: a JSON header (name, shape, byte offset per
//! tensor) followed by raw little-endian f64 arrays. Round-trips are
//! bit-exact because values never pass through decimal text.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{shape_string, Error, Result};
use crate::tensor::Tensor;

const FORMAT: &str = "equigrad-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the payload that follows the header.
    offset: u64,
}

/// Writes named tensors in the given order.
pub fn save_checkpoint(path: &Path, params: &[(String, &Tensor)]) -> Result<()> {
    let mut entries = Vec::with_capacity(params.len());
    let mut offset = 0u64;
    for (name, t) in params {
        entries.push(TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset,
        });
        offset += (t.len() * 8) as u64;
    }
    let header = serde_json::to_vec(&Header {
        format: FORMAT.to_string(),
        version: VERSION,
        tensors: entries,
    })?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    for (_, t) in params {
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One loaded tensor: name, shape, row-major values.
pub type LoadedTensor = (String, Vec<usize>, Vec<f64>);

/// Reads every tensor in file order.
pub fn load_checkpoint(path: &Path) -> Result<Vec<LoadedTensor>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut len_bytes = [0u8; 8];
    r.read_exact(&mut len_bytes)
        .map_err(|_| Error::Checkpoint(format!("{}: truncated header", path.display())))?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    if header_len > 1 << 30 {
        return Err(Error::Checkpoint(format!(
            "{}: implausible header length {header_len}",
            path.display()
        )));
    }
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)
        .map_err(|_| Error::Checkpoint(format!("{}: truncated header", path.display())))?;
    let header: Header = serde_json::from_slice(&header_bytes)?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: not a version-{VERSION} {FORMAT} file",
            path.display()
        )));
    }
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    let mut out = Vec::with_capacity(header.tensors.len());
    for e in header.tensors {
        let count: usize = e.shape.iter().product();
        let start = e.offset as usize;
        let end = start + count * 8;
        if end > payload.len() {
            return Err(Error::Checkpoint(format!(
                "{}: tensor {} runs past the payload",
                path.display(),
                e.name
            )));
        }
        let data: Vec<f64> = payload[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        out.push((e.name, e.shape, data));
    }
    Ok(out)
}

/// Loads a checkpoint into existing parameters, matching strictly by name
/// and shape in order. The first mismatch is named.
pub fn restore_checkpoint(path: &Path, params: Vec<(String, &mut Tensor)>) -> Result<()> {
    let loaded = load_checkpoint(path)?;
    if loaded.len() != params.len() {
        return Err(Error::CheckpointMismatch {
            name: "(tensor count)".to_string(),
            expected: params.len().to_string(),
            found: loaded.len().to_string(),
        });
    }
    for ((name, t), (got_name, got_shape, data)) in params.into_iter().zip(loaded) {
        if name != got_name {
            return Err(Error::CheckpointMismatch {
                name,
                expected: "same tensor name".to_string(),
                found: got_name,
            });
        }
        if t.shape() != got_shape.as_slice() {
            return Err(Error::CheckpointMismatch {
                name,
                expected: shape_string(t.shape()),
                found: shape_string(&got_shape),
            });
        }
        t.data_mut().copy_from_slice(&data);
    }
    Ok(())
}
