//! Binary parameter checkpoints.
//!
//! Layout: magic `DPW1`, then per parameter in store order:
//! name length (u32 LE), UTF-8 name, rank (u32 LE), dims (u32 LE each),
//! values (f64 LE, row-major).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::params::ParamStore;
use super::tensor::{Scalar, Tensor};
use super::DiffError;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DPW1";

pub fn save_checkpoint<S: Scalar>(store: &ParamStore<S>, path: &Path) -> Result<(), DiffError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    for (_, p) in store.iter() {
        let name = p.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        let shape = p.value.shape();
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &d in shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in p.value.to_f64_vec() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32, DiffError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

/// Loads a checkpoint into an existing store. Every file entry must match
/// a parameter by name and shape, and every parameter must be covered.
/// Gradients are zeroed.
pub fn load_checkpoint<S: Scalar>(
    store: &mut ParamStore<S>,
    path: &Path,
) -> Result<(), DiffError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(DiffError::Checkpoint(format!(
            "bad magic {magic:?} in {}",
            path.display()
        )));
    }
    let mut loaded = vec![false; store.len()];
    loop {
        let name_len = match read_u32(&mut r) {
            Ok(v) => v as usize,
            Err(DiffError::Io(e)) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e),
        };
        let mut name_buf = vec![0u8; name_len];
        r.read_exact(&mut name_buf)?;
        let name = String::from_utf8(name_buf)
            .map_err(|e| DiffError::Checkpoint(format!("non-utf8 parameter name: {e}")))?;
        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut r)? as usize);
        }
        let count: usize = shape.iter().product();
        let mut values = Vec::with_capacity(count);
        let mut buf = [0u8; 8];
        for _ in 0..count {
            r.read_exact(&mut buf)?;
            values.push(f64::from_le_bytes(buf));
        }
        let id = store.by_name(&name).ok_or_else(|| {
            DiffError::Checkpoint(format!("unknown parameter `{name}` in checkpoint"))
        })?;
        let p = store.get_mut(id);
        if p.value.shape() != shape.as_slice() {
            return Err(DiffError::Checkpoint(format!(
                "shape mismatch for `{name}`: store {:?} vs file {:?}",
                p.value.shape(),
                shape
            )));
        }
        p.value = Tensor::from_f64_slice(shape, &values);
        p.grad.fill(S::zero());
        loaded[id.0] = true;
    }
    if let Some((_, p)) = store.iter().find(|(id, _)| !loaded[id.0]) {
        return Err(DiffError::Checkpoint(format!(
            "checkpoint is missing parameter `{}`",
            p.name
        )));
    }
    Ok(())
}
