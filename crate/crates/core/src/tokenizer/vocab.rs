use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const MASK: u32 = 1;

/// Which half of a vertex encoding a token belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TokenKind {
    Pad,
    Mask,
    CenterBlock,
    CenterOffset,
    NeighborBlock,
    NeighborOffset,
    /// Outside the vocabulary.
    Invalid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VertexRole {
    Center,
    Neighbor,
}

/// Dual-block vocabulary: every vertex is a (coarse block, offset) pair and
/// centers and neighbors use disjoint id ranges.
///
/// Layout: `PAD=0`, `MASK=1`, then center blocks `[2, 2+G)`, center offsets
/// `[2+G, 2+G+O)`, neighbor blocks `[2+G+O, 2+2G+O)` and neighbor offsets
/// `[2+2G+O, 2+2G+2O)` where `G = (R/B)^3` and `O = B^3`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TokenVocabulary {
    resolution: u32,
    block: u32,
}

impl Default for TokenVocabulary {
    fn default() -> Self {
        Self {
            resolution: 128,
            block: 8,
        }
    }
}

impl TokenVocabulary {
    pub fn new(resolution: u32, block: u32) -> Result<Self> {
        if resolution < 2 || block == 0 || resolution % block != 0 {
            return Err(Error::invalid(format!(
                "block size {block} must divide resolution {resolution}"
            )));
        }
        Ok(Self { resolution, block })
    }

    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    pub fn block(&self) -> u32 {
        self.block
    }

    /// Coarse cells per axis.
    fn cells(&self) -> u32 {
        self.resolution / self.block
    }

    /// Number of coarse blocks `G`.
    pub fn block_count(&self) -> u32 {
        self.cells().pow(3)
    }

    /// Number of offsets `O`.
    pub fn offset_count(&self) -> u32 {
        self.block.pow(3)
    }

    pub fn size(&self) -> usize {
        2 + 2 * self.block_count() as usize + 2 * self.offset_count() as usize
    }

    fn center_block_base(&self) -> u32 {
        2
    }

    fn center_offset_base(&self) -> u32 {
        2 + self.block_count()
    }

    fn neighbor_block_base(&self) -> u32 {
        2 + self.block_count() + self.offset_count()
    }

    fn neighbor_offset_base(&self) -> u32 {
        2 + 2 * self.block_count() + self.offset_count()
    }

    pub fn kind(&self, id: u32) -> TokenKind {
        if id == PAD {
            TokenKind::Pad
        } else if id == MASK {
            TokenKind::Mask
        } else if id < self.center_offset_base() {
            TokenKind::CenterBlock
        } else if id < self.neighbor_block_base() {
            TokenKind::CenterOffset
        } else if id < self.neighbor_offset_base() {
            TokenKind::NeighborBlock
        } else if (id as usize) < self.size() {
            TokenKind::NeighborOffset
        } else {
            TokenKind::Invalid
        }
    }

    /// Two ids: coarse block then offset, flattened x-major.
    pub fn encode_vertex(&self, v: [u32; 3], role: VertexRole) -> [u32; 2] {
        debug_assert!(v.iter().all(|&c| c < self.resolution), "coordinate off grid");
        let (cells, b) = (self.cells(), self.block);
        let coarse = ((v[0] / b) * cells + v[1] / b) * cells + v[2] / b;
        let fine = ((v[0] % b) * b + v[1] % b) * b + v[2] % b;
        match role {
            VertexRole::Center => [
                self.center_block_base() + coarse,
                self.center_offset_base() + fine,
            ],
            VertexRole::Neighbor => [
                self.neighbor_block_base() + coarse,
                self.neighbor_offset_base() + fine,
            ],
        }
    }

    /// Inverse of [`TokenVocabulary::encode_vertex`]; `None` unless the pair
    /// is a block id followed by an offset id of the same role.
    pub fn decode_vertex(&self, block_id: u32, offset_id: u32) -> Option<[u32; 3]> {
        let (coarse, fine) = match (self.kind(block_id), self.kind(offset_id)) {
            (TokenKind::CenterBlock, TokenKind::CenterOffset) => (
                block_id - self.center_block_base(),
                offset_id - self.center_offset_base(),
            ),
            (TokenKind::NeighborBlock, TokenKind::NeighborOffset) => (
                block_id - self.neighbor_block_base(),
                offset_id - self.neighbor_offset_base(),
            ),
            _ => return None,
        };
        let (cells, b) = (self.cells(), self.block);
        let cx = coarse / (cells * cells);
        let cy = (coarse / cells) % cells;
        let cz = coarse % cells;
        let fx = fine / (b * b);
        let fy = (fine / b) % b;
        let fz = fine % b;
        Some([cx * b + fx, cy * b + fy, cz * b + fz])
    }

    /// Sort key matching the encoded center token pair.
    pub fn center_key(&self, v: [u32; 3]) -> [u32; 2] {
        self.encode_vertex(v, VertexRole::Center)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_sizes() {
        let v = TokenVocabulary::default();
        assert_eq!(v.block_count(), 4096);
        assert_eq!(v.offset_count(), 512);
        assert_eq!(v.size(), 9218);
    }

    #[test]
    fn ranges_are_contiguous_and_disjoint() {
        let v = TokenVocabulary::new(16, 4).unwrap();
        let kinds: Vec<_> = (0..v.size() as u32 + 1).map(|i| v.kind(i)).collect();
        let g = v.block_count() as usize;
        let o = v.offset_count() as usize;
        assert_eq!(kinds[0], TokenKind::Pad);
        assert_eq!(kinds[1], TokenKind::Mask);
        assert!(kinds[2..2 + g].iter().all(|&k| k == TokenKind::CenterBlock));
        assert!(kinds[2 + g..2 + g + o].iter().all(|&k| k == TokenKind::CenterOffset));
        assert!(kinds[2 + g + o..2 + 2 * g + o].iter().all(|&k| k == TokenKind::NeighborBlock));
        assert!(kinds[2 + 2 * g + o..2 + 2 * g + 2 * o].iter().all(|&k| k == TokenKind::NeighborOffset));
        assert_eq!(kinds[v.size()], TokenKind::Invalid);
    }

    #[test]
    fn origin_and_max_coordinates() {
        let v = TokenVocabulary::default();
        let g = v.block_count();
        let o = v.offset_count();
        assert_eq!(v.encode_vertex([0, 0, 0], VertexRole::Center), [2, 2 + g]);
        assert_eq!(
            v.encode_vertex([127, 127, 127], VertexRole::Neighbor),
            [2 + 2 * g + o - 1, 2 + 2 * g + 2 * o - 1]
        );
    }

    #[test]
    fn exhaustive_round_trip_r16_b4() {
        let v = TokenVocabulary::new(16, 4).unwrap();
        let mut seen = std::collections::HashSet::new();
        for x in 0..16 {
            for y in 0..16 {
                for z in 0..16 {
                    for role in [VertexRole::Center, VertexRole::Neighbor] {
                        let [b, o] = v.encode_vertex([x, y, z], role);
                        assert_eq!(v.decode_vertex(b, o), Some([x, y, z]));
                        assert!(seen.insert((b, o)));
                    }
                }
            }
        }
        assert_eq!(seen.len(), 2 * 4096);
    }

    #[test]
    fn mixed_roles_do_not_decode() {
        let v = TokenVocabulary::new(16, 4).unwrap();
        let [cb, _] = v.encode_vertex([1, 2, 3], VertexRole::Center);
        let [_, no] = v.encode_vertex([1, 2, 3], VertexRole::Neighbor);
        assert_eq!(v.decode_vertex(cb, no), None);
        assert!(TokenVocabulary::new(16, 3).is_err());
    }
}
