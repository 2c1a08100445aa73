//! Token files: `PDTK` binary (16-byte header, little-endian `u32` ids) and a
//! one-id-per-line text dump.

use std::fmt::Write as _;
use std::path::Path;

use super::TokenSequence;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"PDTK";
const VERSION: u32 = 1;

pub fn encode_token_file(seq: &TokenSequence) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * seq.ids().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(seq.block_len() as u32).to_le_bytes());
    out.extend_from_slice(&(seq.block_count() as u32).to_le_bytes());
    for &id in seq.ids() {
        out.extend_from_slice(&id.to_le_bytes());
    }
    out
}

pub fn decode_token_file(bytes: &[u8]) -> Result<TokenSequence> {
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing PDTK header".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let version = word(4);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported token file version {version}")));
    }
    let block_len = word(8) as usize;
    let blocks = word(12) as usize;
    let expected = 16 + 4 * block_len * blocks;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "token file has {} bytes, header implies {expected}",
            bytes.len()
        )));
    }
    let ids = (0..block_len * blocks).map(|i| word(16 + 4 * i)).collect();
    TokenSequence::new(ids, block_len)
}

pub fn write_token_file(seq: &TokenSequence, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_token_file(seq)).map_err(|e| Error::io(path, e))
}

pub fn read_token_file(path: impl AsRef<Path>) -> Result<TokenSequence> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_token_file(&bytes)
}

pub fn write_token_text(seq: &TokenSequence, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut s = String::with_capacity(seq.ids().len() * 5);
    for id in seq.ids() {
        let _ = writeln!(s, "{id}");
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Reads a text dump; the block length must be supplied.
pub fn read_token_text(path: impl AsRef<Path>, block_len: usize) -> Result<TokenSequence> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut ids = Vec::new();
    for (i, l) in text.lines().enumerate() {
        if l.trim().is_empty() {
            continue;
        }
        ids.push(l.trim().parse().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: "expected a token id".into(),
        })?);
    }
    TokenSequence::new(ids, block_len)
}
