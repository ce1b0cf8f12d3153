//! `PPTVMDL1` checkpoint files.
//!
//! ```text
//! magic        8 bytes  "PPTVMDL1"
//! config_len   u64      byte length of the config block
//! config       UTF-8    "key=value\n" lines
//! n_tensors    u64
//! per tensor:  u64 name length, name bytes, u64 rank, rank x u64 extents,
//!              product(extents) x f64
//! ```
//!
//! All integers and floats are little-endian.

use std::path::Path;

use crate::binio::{put_f64s, put_u64, Reader};
use crate::error::{Error, FormatError, Result};
use crate::tensor::Tensor;

use super::{Model, ModelConfig};

const MAGIC: &[u8; 8] = b"PPTVMDL1";

pub fn write_checkpoint(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    let config: String = model
        .config()
        .to_key_values()
        .iter()
        .map(|(k, v)| format!("{k}={v}\n"))
        .collect();
    put_u64(&mut out, config.len() as u64);
    out.extend_from_slice(config.as_bytes());
    put_u64(&mut out, model.params().len() as u64);
    for (name, t) in model.param_names().iter().zip(model.params()) {
        put_u64(&mut out, name.len() as u64);
        out.extend_from_slice(name.as_bytes());
        put_u64(&mut out, t.rank() as u64);
        for &d in t.shape() {
            put_u64(&mut out, d as u64);
        }
        put_f64s(&mut out, t.data());
    }
    out
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    let len = r.count("config length")?;
    let text = std::str::from_utf8(r.bytes(len, "config block")?)
        .map_err(|_| FormatError::Malformed("config block is not UTF-8".into()))?;
    let pairs = text
        .lines()
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.split_once('=')
                .ok_or_else(|| FormatError::Malformed(format!("config line {l:?} has no '='")))
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let config = ModelConfig::from_key_values(pairs)?;
    let mut model = Model::build(config)?;

    let n = r.count("tensor count")?;
    if n != model.params().len() {
        return Err(FormatError::Malformed(format!(
            "checkpoint holds {n} tensors, architecture has {}",
            model.params().len()
        ))
        .into());
    }
    for _ in 0..n {
        let name_len = r.count("tensor name length")?;
        let name = std::str::from_utf8(r.bytes(name_len, "tensor name")?)
            .map_err(|_| FormatError::Malformed("tensor name is not UTF-8".into()))?
            .to_owned();
        let rank = r.count("tensor rank")?;
        if rank > 8 {
            return Err(FormatError::ExtentOverflow(format!("tensor {name} has rank {rank}")).into());
        }
        let shape = (0..rank).map(|_| r.count("tensor extent")).collect::<std::result::Result<Vec<_>, _>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| FormatError::ExtentOverflow(format!("tensor {name} extents {shape:?}")))?;
        let data = r.f64s(numel, "tensor data")?;
        let slot = model
            .param_mut(&name)
            .ok_or_else(|| FormatError::Malformed(format!("unexpected tensor {name}")))?;
        if slot.shape() != shape.as_slice() {
            return Err(FormatError::Malformed(format!(
                "tensor {name} has shape {shape:?}, architecture expects {:?}",
                slot.shape()
            ))
            .into());
        }
        *slot = Tensor::new(&shape, data)?;
    }
    r.finish()?;
    Ok(model)
}

pub fn save_checkpoint(path: &Path, model: &Model) -> Result<()> {
    std::fs::write(path, write_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}
