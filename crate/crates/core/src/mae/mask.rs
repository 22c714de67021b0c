use alloc::vec::Vec;

use rand::Rng;

use super::config::masked_count;

/// Partition of token positions into visible and masked sets, both sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskPlan {
    pub visible_indices: Vec<usize>,
    pub masked_indices: Vec<usize>,
}

impl MaskPlan {
    /// Everything visible.
    pub fn none(seq_len: usize) -> Self {
        Self {
            visible_indices: (0..seq_len).collect(),
            masked_indices: Vec::new(),
        }
    }

    pub fn seq_len(&self) -> usize {
        self.visible_indices.len() + self.masked_indices.len()
    }

    /// For every position, the row it reads from in `[latents; mask_token]`.
    pub(crate) fn decoder_sources(&self) -> Vec<usize> {
        let mut src = alloc::vec![self.visible_indices.len(); self.seq_len()];
        for (row, &pos) in self.visible_indices.iter().enumerate() {
            src[pos] = row;
        }
        src
    }
}

/// Draws `round(mask_ratio * seq_len)` distinct positions uniformly at
/// random to mask.
pub fn make_mask<R: Rng + ?Sized>(seq_len: usize, mask_ratio: f64, rng: &mut R) -> MaskPlan {
    let n = masked_count(seq_len, mask_ratio).min(seq_len);
    let mut masked = rand::seq::index::sample(rng, seq_len, n).into_vec();
    masked.sort_unstable();
    let mut is_masked = alloc::vec![false; seq_len];
    for &m in &masked {
        is_masked[m] = true;
    }
    let visible = (0..seq_len).filter(|&i| !is_masked[i]).collect();
    MaskPlan {
        visible_indices: visible,
        masked_indices: masked,
    }
}
