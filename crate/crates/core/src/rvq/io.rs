//! Codebook file: `DIMORVQ1`, then u32 R, N, dim, r, then `R × N × dim` f32
//! codewords, all little-endian.

use std::io::{Read, Write};

use super::RvqCodebooks;
use crate::error::{DimoError, Result};

pub const CODEBOOK_MAGIC: &[u8; 8] = b"DIMORVQ1";

pub fn write_codebooks<W: Write>(books: &RvqCodebooks, mut w: W) -> Result<()> {
    w.write_all(CODEBOOK_MAGIC)?;
    for v in [books.layers, books.size, books.dim, books.ratio] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    for &c in &books.codewords {
        w.write_all(&c.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_codebooks<R: Read>(mut r: R) -> Result<RvqCodebooks> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| DimoError::Format("codebook file truncated before magic".into()))?;
    if &magic != CODEBOOK_MAGIC {
        return Err(DimoError::Format("bad codebook magic".into()));
    }
    let mut header = [0u32; 4];
    for h in header.iter_mut() {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)
            .map_err(|_| DimoError::Format("codebook header truncated".into()))?;
        *h = u32::from_le_bytes(b);
    }
    let [layers, size, dim, ratio] = header.map(|v| v as usize);
    let count = layers
        .checked_mul(size)
        .and_then(|x| x.checked_mul(dim))
        .ok_or_else(|| DimoError::Format("codebook shape overflows".into()))?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != count * 4 {
        return Err(DimoError::Format(format!(
            "expected {} codeword bytes, found {}",
            count * 4,
            bytes.len()
        )));
    }
    let codewords = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    RvqCodebooks::from_codewords(layers, size, dim, ratio, codewords)
}
