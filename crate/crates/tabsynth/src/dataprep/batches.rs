//! Epoch-seeded mini-batch index blocks.

use rand::seq::SliceRandom;

use crate::seeds;

/// Shuffled index blocks for one epoch. The order is a pure function of
/// `(seed, epoch)`. A trailing block shorter than two rows is merged into
/// the previous one so every batch can serve as contrastive negatives.
pub fn batches(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    debug_assert!(batch_size >= 2, "mini-batches need at least two rows");
    if n == 0 {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = seeds::derive_rng(seed, "batches", &[epoch]);
    order.shuffle(&mut rng);

    let mut blocks: Vec<Vec<usize>> = order
        .chunks(batch_size.max(1))
        .map(|c| c.to_vec())
        .collect();
    if blocks.len() > 1 && blocks.last().map_or(false, |b| b.len() < 2) {
        let tail = blocks.pop().expect("checked non-empty");
        blocks.last_mut().expect("checked len > 1").extend(tail);
    }
    blocks
}
