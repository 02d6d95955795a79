//! Binary block-feature files.
//!
//! Little-endian layout: magic `EPCF`, `u32` version (1), `u32` item count,
//! then per item: `u16`-prefixed UTF-8 id, attribute token and object token,
//! `u32` block count, `u32` feature width, and the block matrix as row-major
//! `f32`.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{ImageItem, Manifest, Vocab};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const FEATURE_MAGIC: &[u8; 4] = b"EPCF";
const VERSION: u32 = 1;

/// A feature record before its label tokens are resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct RawItem {
    pub id: String,
    pub attr: String,
    pub obj: String,
    pub blocks: Tensor,
}

fn truncated(e: io::Error) -> Error {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        Error::Format("truncated feature file".into())
    } else {
        Error::Io(e)
    }
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    let len = u16::try_from(s.len()).map_err(|_| Error::Format(format!("string too long: {s}")))?;
    w.write_u16::<LittleEndian>(len)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = r.read_u16::<LittleEndian>().map_err(truncated)? as usize;
    let mut buf = vec![0; len];
    r.read_exact(&mut buf).map_err(truncated)?;
    String::from_utf8(buf).map_err(|_| Error::Format("invalid UTF-8 string".into()))
}

pub fn write_features<W: Write>(mut w: W, items: &[ImageItem], vocab: &Vocab) -> Result<()> {
    w.write_all(FEATURE_MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u32::<LittleEndian>(items.len() as u32)?;
    for item in items {
        write_str(&mut w, &item.id)?;
        write_str(&mut w, vocab.attr(item.label.attr))?;
        write_str(&mut w, vocab.obj(item.label.obj))?;
        let (b, d) = item.blocks.dims2()?;
        w.write_u32::<LittleEndian>(b as u32)?;
        w.write_u32::<LittleEndian>(d as u32)?;
        for &v in item.blocks.data() {
            w.write_f32::<LittleEndian>(v as f32)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_features<R: Read>(mut r: R) -> Result<Vec<RawItem>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != FEATURE_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let version = r.read_u32::<LittleEndian>().map_err(truncated)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported feature version {version}")));
    }
    let count = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
    let mut items = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let id = read_str(&mut r)?;
        let attr = read_str(&mut r)?;
        let obj = read_str(&mut r)?;
        let b = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        let d = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        if b == 0 {
            return Err(Error::Format(format!("item {id} has no blocks")));
        }
        let mut raw = vec![0f32; b * d];
        r.read_f32_into::<LittleEndian>(&mut raw).map_err(truncated)?;
        let blocks = Tensor::new(vec![b, d], raw.into_iter().map(f64::from).collect())
            .map_err(|_| Error::Format(format!("item {id} has non-finite features")))?;
        items.push(RawItem { id, attr, obj, blocks });
    }
    Ok(items)
}

/// Reads a feature file and resolves each label against the manifest.
pub fn load_features(path: &Path, manifest: &Manifest) -> Result<Vec<ImageItem>> {
    let raw = read_features(BufReader::new(File::open(path)?))?;
    raw.into_iter().map(|r| manifest.resolve(r)).collect()
}

pub fn save_features(path: &Path, items: &[ImageItem], vocab: &Vocab) -> Result<()> {
    write_features(BufWriter::new(File::create(path)?), items, vocab)
}
