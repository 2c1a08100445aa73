//! Blocked-and-patchified serialization of part meshes into fixed-length
//! token blocks, its inverse, and token file formats.

mod io;
mod patch;
mod vocab;

pub use io::{
    decode_token_file, encode_token_file, read_token_file, read_token_text, write_token_file,
    write_token_text,
};
pub use patch::{patchify, Patch};
pub use vocab::{TokenKind, TokenVocabulary, VertexRole, MASK, PAD};

use crate::error::{Error, Result};
use crate::mesh::QuantizedMesh;

/// Flat token ids made of equal-length blocks, one per part.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    ids: Vec<u32>,
    block_len: usize,
}

impl TokenSequence {
    pub fn new(ids: Vec<u32>, block_len: usize) -> Result<Self> {
        if block_len == 0 || ids.len() % block_len != 0 {
            return Err(Error::Length(format!(
                "{} tokens is not a multiple of block length {block_len}",
                ids.len()
            )));
        }
        Ok(Self { ids, block_len })
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn block_len(&self) -> usize {
        self.block_len
    }

    pub fn block_count(&self) -> usize {
        self.ids.len() / self.block_len
    }

    pub fn block(&self, i: usize) -> &[u32] {
        &self.ids[i * self.block_len..(i + 1) * self.block_len]
    }

    pub fn blocks(&self) -> impl Iterator<Item = &[u32]> {
        self.ids.chunks(self.block_len)
    }

    pub fn into_ids(self) -> Vec<u32> {
        self.ids
    }
}

/// Tokens of a patch list, patches ordered by their center token pair.
pub fn encode_patches(patches: &[Patch], vocab: &TokenVocabulary) -> Vec<u32> {
    let mut order: Vec<&Patch> = patches.iter().collect();
    order.sort_by_key(|p| vocab.center_key(p.center));
    let mut out = Vec::new();
    for p in order {
        out.extend(vocab.encode_vertex(p.center, VertexRole::Center));
        for &r in &p.ring {
            out.extend(vocab.encode_vertex(r, VertexRole::Neighbor));
        }
    }
    out
}

/// Unpadded token count of a part.
pub fn part_token_count(part: &QuantizedMesh, vocab: &TokenVocabulary) -> usize {
    patchify(part, vocab)
        .iter()
        .map(|p| 2 + 2 * p.ring.len())
        .sum()
}

/// Accepts an unpadded block length inside `[len_min, block_len]`.
pub fn check_block_length(len: usize, len_min: usize, block_len: usize) -> Result<()> {
    if len < len_min || len > block_len {
        Err(Error::BlockLength {
            len,
            min: len_min,
            max: block_len,
        })
    } else {
        Ok(())
    }
}

/// Serializes one part and pads it to `block_len`.
pub fn tokenize_part(
    part: &QuantizedMesh,
    vocab: &TokenVocabulary,
    block_len: usize,
    len_min: usize,
) -> Result<TokenSequence> {
    if part.resolution() != vocab.resolution() {
        return Err(Error::invalid(format!(
            "part resolution {} does not match vocabulary resolution {}",
            part.resolution(),
            vocab.resolution()
        )));
    }
    let mut ids = encode_patches(&patchify(part, vocab), vocab);
    check_block_length(ids.len(), len_min, block_len)?;
    ids.resize(block_len, PAD);
    TokenSequence::new(ids, block_len)
}

/// Result of decoding a possibly corrupted block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Detokenized {
    pub mesh: QuantizedMesh,
    /// Fragments that could not be decoded: stray tokens before a patch,
    /// half-encoded vertices and rings shorter than two vertices.
    pub malformed: usize,
    /// Faces dropped because they repeat a vertex.
    pub degenerate_faces: usize,
}

/// Decodes any id sequence. PAD and MASK are removed first; each center
/// block id starts a patch; anything that does not fit the grammar is
/// dropped and counted.
pub fn detokenize_part(ids: &[u32], vocab: &TokenVocabulary) -> Detokenized {
    let toks: Vec<(u32, TokenKind)> = ids
        .iter()
        .map(|&id| (id, vocab.kind(id)))
        .filter(|(_, k)| !matches!(k, TokenKind::Pad | TokenKind::Mask))
        .collect();
    let n = toks.len();
    let next_center = |from: usize| {
        (from..n)
            .find(|&j| toks[j].1 == TokenKind::CenterBlock)
            .unwrap_or(n)
    };
    let mut faces = Vec::new();
    let mut malformed = 0;
    let mut i = 0;
    while i < n {
        if toks[i].1 != TokenKind::CenterBlock {
            malformed += 1;
            i = next_center(i);
            continue;
        }
        let center = if i + 1 < n {
            vocab.decode_vertex(toks[i].0, toks[i + 1].0)
        } else {
            None
        };
        let Some(center) = center else {
            malformed += 1;
            i = next_center(i + 1);
            continue;
        };
        i += 2;
        let mut ring = Vec::new();
        let mut broken = false;
        while i < n && toks[i].1 != TokenKind::CenterBlock {
            let v = if i + 1 < n {
                vocab.decode_vertex(toks[i].0, toks[i + 1].0)
            } else {
                None
            };
            match v {
                Some(v) if toks[i].1 == TokenKind::NeighborBlock => {
                    ring.push(v);
                    i += 2;
                }
                _ => {
                    broken = true;
                    i = next_center(i + 1);
                    break;
                }
            }
        }
        if ring.len() < 2 || broken {
            malformed += 1;
        }
        faces.extend(ring.windows(2).map(|w| [center, w[0], w[1]]));
    }
    let (mesh, degenerate_faces) = QuantizedMesh::from_coordinate_faces(vocab.resolution(), faces);
    Detokenized {
        mesh,
        malformed,
        degenerate_faces,
    }
}

/// Concatenates equal-length blocks.
pub fn assemble(blocks: &[Vec<u32>], block_len: usize) -> Result<TokenSequence> {
    let mut ids = Vec::with_capacity(blocks.len() * block_len);
    for (i, b) in blocks.iter().enumerate() {
        if b.len() != block_len {
            return Err(Error::Length(format!(
                "block {i} has {} tokens, expected {block_len}",
                b.len()
            )));
        }
        ids.extend_from_slice(b);
    }
    TokenSequence::new(ids, block_len)
}

/// Slices a full sequence into blocks.
pub fn split_sequence(ids: &[u32], block_len: usize) -> Result<Vec<Vec<u32>>> {
    let seq = TokenSequence::new(ids.to_vec(), block_len)?;
    Ok(seq.blocks().map(<[u32]>::to_vec).collect())
}
