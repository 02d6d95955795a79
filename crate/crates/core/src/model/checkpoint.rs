//! Binary checkpoints.
//!
//! Little-endian layout: magic `EPCK`, `u32` version (1), config echo
//! (`u32` joint dim, `u32` blocks, `u32` feature dim, `u32` hidden,
//! `f64` lambda), `u32` tensor count, then per tensor a `u16`-prefixed
//! name, `u32` rank, `u32` dims and row-major `f32` data.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::params::{slot, ModelConfig, ModelParams, PARAM_NAMES};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"EPCK";
const VERSION: u32 = 1;

fn eof(e: io::Error) -> Error {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        Error::Format("truncated checkpoint".into())
    } else {
        Error::Io(e)
    }
}

pub fn write_checkpoint<W: Write>(mut w: W, params: &ModelParams) -> Result<()> {
    let c = &params.config;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    for v in [c.joint_dim, c.blocks, c.feature_dim, c.hidden] {
        w.write_u32::<LittleEndian>(v as u32)?;
    }
    w.write_f64::<LittleEndian>(c.lambda)?;
    w.write_u32::<LittleEndian>(params.tensors.len() as u32)?;
    for (name, t) in PARAM_NAMES.iter().zip(&params.tensors) {
        w.write_u16::<LittleEndian>(name.len() as u16)?;
        w.write_all(name.as_bytes())?;
        w.write_u32::<LittleEndian>(t.shape().len() as u32)?;
        for &d in t.shape() {
            w.write_u32::<LittleEndian>(d as u32)?;
        }
        for &v in t.data() {
            w.write_f32::<LittleEndian>(v as f32)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a checkpoint. Model variant and embedding freezing are not part
/// of the file; they come from `defaults`.
pub fn read_checkpoint<R: Read>(mut r: R, defaults: &ModelConfig, frozen: bool) -> Result<ModelParams> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(eof)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("bad checkpoint magic {magic:?}")));
    }
    let version = r.read_u32::<LittleEndian>().map_err(eof)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let mut dims = [0usize; 4];
    for d in &mut dims {
        *d = r.read_u32::<LittleEndian>().map_err(eof)? as usize;
    }
    let lambda = r.read_f64::<LittleEndian>().map_err(eof)?;
    let config = ModelConfig {
        joint_dim: dims[0],
        blocks: dims[1],
        feature_dim: dims[2],
        hidden: dims[3],
        lambda,
        variant: defaults.variant,
    };
    config
        .validate()
        .map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;
    let count = r.read_u32::<LittleEndian>().map_err(eof)? as usize;
    if count != slot::COUNT {
        return Err(Error::Format(format!("checkpoint has {count} tensors, expected {}", slot::COUNT)));
    }
    let mut tensors = Vec::with_capacity(count);
    for expected in PARAM_NAMES {
        let len = r.read_u16::<LittleEndian>().map_err(eof)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(eof)?;
        if name != expected.as_bytes() {
            return Err(Error::Format(format!(
                "expected tensor `{expected}`, found `{}`",
                String::from_utf8_lossy(&name)
            )));
        }
        let rank = r.read_u32::<LittleEndian>().map_err(eof)? as usize;
        if rank > 4 {
            return Err(Error::Format(format!("tensor `{expected}` has rank {rank}")));
        }
        let shape = (0..rank)
            .map(|_| r.read_u32::<LittleEndian>().map(|d| d as usize).map_err(eof))
            .collect::<Result<Vec<_>>>()?;
        let mut raw = vec![0f32; shape.iter().product()];
        r.read_f32_into::<LittleEndian>(&mut raw).map_err(eof)?;
        let t = Tensor::new(shape, raw.into_iter().map(f64::from).collect())
            .map_err(|e| Error::Format(format!("tensor `{expected}`: {e}")))?;
        tensors.push(t);
    }
    let params = ModelParams {
        config,
        tensors,
        frozen_embeddings: frozen,
    };
    params.check_shapes()?;
    Ok(params)
}

pub fn save_checkpoint(path: &Path, params: &ModelParams) -> Result<()> {
    write_checkpoint(BufWriter::new(File::create(path)?), params)
}

pub fn load_checkpoint(path: &Path, defaults: &ModelConfig, frozen: bool) -> Result<ModelParams> {
    let file = File::open(path).map_err(|e| {
        if e.kind() == io::ErrorKind::NotFound {
            Error::Data(format!("checkpoint {} not found", path.display()))
        } else {
            Error::Io(e)
        }
    })?;
    read_checkpoint(BufReader::new(file), defaults, frozen)
}
