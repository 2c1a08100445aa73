use std::sync::Arc;

use crate::autodiff::AttnMask;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskMode {
    /// `N` noisy blocks followed by `N` clean blocks.
    Train,
    /// Committed clean blocks followed by one active noisy block.
    Sample,
}

/// One token block in a sequence layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockSlot {
    /// Serialization index of the part this block encodes.
    pub part: usize,
    pub noisy: bool,
}

/// Block-level attention rule plus pad handling, materialized as a grid.
///
/// A query may see a key when both sit in the same slot (pads included), or
/// when the key sits in a clean slot of an earlier part and is not a pad.
#[derive(Clone, Debug)]
pub struct CompositeMask {
    mode: MaskMode,
    block_len: usize,
    slots: Vec<BlockSlot>,
    pad: Vec<bool>,
    grid: Arc<AttnMask>,
}

impl CompositeMask {
    pub fn from_layout(
        mode: MaskMode,
        slots: Vec<BlockSlot>,
        block_len: usize,
        pad: Vec<bool>,
    ) -> Result<Self> {
        if block_len == 0 {
            return Err(Error::invalid("block length must be positive"));
        }
        if pad.len() != slots.len() * block_len {
            return Err(Error::Length(format!(
                "{} pad flags for {} blocks of {block_len}",
                pad.len(),
                slots.len()
            )));
        }
        let n = pad.len();
        let grid = AttnMask::from_fn(n, n, |q, k| {
            let (sq, sk) = (&slots[q / block_len], &slots[k / block_len]);
            q / block_len == k / block_len || (!sk.noisy && sk.part < sq.part && !pad[k])
        });
        Ok(Self {
            mode,
            block_len,
            slots,
            pad,
            grid: Arc::new(grid),
        })
    }

    pub fn mode(&self) -> MaskMode {
        self.mode
    }

    pub fn block_len(&self) -> usize {
        self.block_len
    }

    pub fn slots(&self) -> &[BlockSlot] {
        &self.slots
    }

    /// Sequence length.
    pub fn len(&self) -> usize {
        self.pad.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pad.is_empty()
    }

    pub fn slot_of(&self, pos: usize) -> usize {
        pos / self.block_len
    }

    pub fn is_noisy(&self, pos: usize) -> bool {
        self.slots[pos / self.block_len].noisy
    }

    pub fn is_pad(&self, pos: usize) -> bool {
        self.pad[pos]
    }

    pub fn allow(&self, q: usize, k: usize) -> bool {
        self.grid.allowed(q, k)
    }

    pub fn grid(&self) -> &Arc<AttnMask> {
        &self.grid
    }
}

/// Train layout over `n` parts; `pad` covers all `2n` blocks.
pub fn build_train_mask(n: usize, block_len: usize, pad: &[bool]) -> Result<CompositeMask> {
    let slots = (0..n)
        .map(|part| BlockSlot { part, noisy: true })
        .chain((0..n).map(|part| BlockSlot { part, noisy: false }))
        .collect();
    CompositeMask::from_layout(MaskMode::Train, slots, block_len, pad.to_vec())
}

/// Sample layout: `committed` clean blocks then the active block for part
/// `committed`; `pad` covers all `committed + 1` blocks.
pub fn build_sample_mask(committed: usize, block_len: usize, pad: &[bool]) -> Result<CompositeMask> {
    let slots = (0..committed)
        .map(|part| BlockSlot { part, noisy: false })
        .chain(std::iter::once(BlockSlot {
            part: committed,
            noisy: true,
        }))
        .collect();
    CompositeMask::from_layout(MaskMode::Sample, slots, block_len, pad.to_vec())
}
