//! Seeded, stream-addressable randomness and a deterministic chunked
//! Monte Carlo driver.
//!
//! Every random quantity in the crate is a function of a [`Seed`]. Parallel
//! work is cut into fixed-size chunks; chunk `i` draws from its own ChaCha
//! stream and results are folded in chunk order, so output never depends on
//! the rayon pool size.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Samples per Monte Carlo chunk. Part of the determinism contract: changing
/// it changes every seeded result.
pub const CHUNK_SIZE: usize = 8192;

/// The RNG used throughout.
pub type SimRng = ChaCha8Rng;

/// A root seed plus a stream index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Seed {
    pub root: u64,
    pub stream: u64,
}

impl Seed {
    pub fn new(root: u64) -> Self {
        Self { root, stream: 0 }
    }

    pub fn with_stream(self, stream: u64) -> Self {
        Self { stream, ..self }
    }

    /// Generator positioned at draw 0 of this (root, stream).
    pub fn rng(&self) -> SimRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.root);
        rng.set_stream(self.stream);
        rng
    }

    /// An independent seed for a labelled sub-task (grid point, iteration,
    /// item index, ...).
    pub fn derive(&self, label: u64) -> Seed {
        Seed::new(splitmix64(
            splitmix64(self.root ^ 0x9e37_79b9_7f4a_7c15) ^ splitmix64(self.stream.wrapping_add(label.rotate_left(32))),
        ))
    }

    fn chunk_rng(&self, chunk: usize) -> SimRng {
        let key = splitmix64(self.root ^ splitmix64(self.stream ^ 0xa076_1d64_78bd_642f));
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        rng.set_stream(chunk as u64);
        rng
    }
}

impl Default for Seed {
    fn default() -> Self {
        Seed::new(0x5eed)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Runs `total` samples in chunks of `chunk_size`, calling `work(rng, count)`
/// once per chunk, and returns the per-chunk results in chunk order.
pub fn run_chunks<A, F>(seed: Seed, total: usize, chunk_size: usize, work: F) -> Vec<A>
where
    A: Send,
    F: Fn(&mut SimRng, usize) -> A + Sync,
{
    assert!(chunk_size > 0);
    let chunks = total.div_ceil(chunk_size);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let count = chunk_size.min(total - c * chunk_size);
            let mut rng = seed.chunk_rng(c);
            work(&mut rng, count)
        })
        .collect()
}

/// [`run_chunks`] followed by an in-order fold.
pub fn fold_chunks<A, F, M>(seed: Seed, total: usize, work: F, merge: M) -> A
where
    A: Send + Default,
    F: Fn(&mut SimRng, usize) -> A + Sync,
    M: Fn(A, A) -> A,
{
    run_chunks(seed, total, CHUNK_SIZE, work)
        .into_iter()
        .fold(A::default(), merge)
}
