//! Checkpoint file.
//!
//! `DIMOCKPT`, u32 version, u32 byte length of a UTF-8 `key=value` block
//! (model config plus `meta.*` entries), u32 tensor count, then per tensor:
//! u32 name length, name, u32 rank, u32 dims, f32 values. Little-endian.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{DenoiserParams, ModelConfig};
use crate::error::{DimoError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DIMOCKPT";
const VERSION: u32 = 1;

fn put_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn write_checkpoint<W: Write>(params: &DenoiserParams<f32>, meta: &BTreeMap<String, String>, mut w: W) -> Result<()> {
    let mut kv = params.config.to_map();
    for (k, v) in meta {
        if k.contains(['=', '\n']) || v.contains('\n') {
            return Err(DimoError::Format(format!("metadata entry {k:?} cannot be stored")));
        }
        kv.insert(format!("meta.{k}"), v.clone());
    }
    let block: String = kv.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    w.write_all(CHECKPOINT_MAGIC)?;
    put_u32(&mut w, VERSION)?;
    put_u32(&mut w, block.len() as u32)?;
    w.write_all(block.as_bytes())?;
    put_u32(&mut w, params.tensors.len() as u32)?;
    for (i, t) in params.tensors.iter().enumerate() {
        let name = params.layout.names[i].as_bytes();
        put_u32(&mut w, name.len() as u32)?;
        w.write_all(name)?;
        let shape = &params.layout.shapes[i];
        put_u32(&mut w, shape.len() as u32)?;
        for &d in shape {
            put_u32(&mut w, d as u32)?;
        }
        for &v in t {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(DenoiserParams<f32>, BTreeMap<String, String>)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(DimoError::Format("not a checkpoint file".into()));
    }
    let version = get_u32(&mut r)?;
    if version != VERSION {
        return Err(DimoError::Format(format!("unsupported checkpoint version {version}")));
    }
    let len = get_u32(&mut r)? as usize;
    let mut block = vec![0u8; len];
    r.read_exact(&mut block)?;
    let block = String::from_utf8(block).map_err(|_| DimoError::Format("config block is not UTF-8".into()))?;
    let mut config_map = BTreeMap::new();
    let mut meta = BTreeMap::new();
    for line in block.lines() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| DimoError::Format(format!("bad config line {line:?}")))?;
        match k.strip_prefix("meta.") {
            Some(mk) => meta.insert(mk.to_string(), v.to_string()),
            None => config_map.insert(k.to_string(), v.to_string()),
        };
    }
    let config = ModelConfig::from_map(&config_map)?;
    let template = DenoiserParams::<f32>::init(config, 0)?;
    let count = get_u32(&mut r)? as usize;
    if count != template.layout.len() {
        return Err(DimoError::Format(format!("expected {} tensors, found {count}", template.layout.len())));
    }
    let mut tensors = Vec::with_capacity(count);
    for i in 0..count {
        let nlen = get_u32(&mut r)? as usize;
        let mut name = vec![0u8; nlen];
        r.read_exact(&mut name)?;
        if name != template.layout.names[i].as_bytes() {
            return Err(DimoError::Format(format!(
                "tensor {i} is {:?}, expected {}",
                String::from_utf8_lossy(&name),
                template.layout.names[i]
            )));
        }
        let rank = get_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(get_u32(&mut r)? as usize);
        }
        if shape != template.layout.shapes[i] {
            return Err(DimoError::Format(format!("tensor {} has shape {shape:?}", template.layout.names[i])));
        }
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; n * 4];
        r.read_exact(&mut bytes)?;
        tensors.push(bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect());
    }
    Ok((DenoiserParams::from_tensors(config, tensors)?, meta))
}

pub fn save_checkpoint(path: &Path, params: &DenoiserParams<f32>, meta: &BTreeMap<String, String>) -> Result<()> {
    write_checkpoint(params, meta, BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint(path: &Path) -> Result<(DenoiserParams<f32>, BTreeMap<String, String>)> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
