//! Deterministic random-stream derivation.
//!
//! Every consumer of randomness takes an explicit stream derived from a
//! `(master_seed, index)` pair, so replications are independent of execution
//! order and of the number of worker threads.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// The stream type used throughout the crate.
pub type Stream = ChaCha12Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn mix_state(master_seed: u64, index: u64, lane: u64) -> u64 {
    let mut s = master_seed ^ index.wrapping_mul(GOLDEN) ^ lane.wrapping_mul(0xD6E8_FEB8_6659_FD93);
    // One round to decorrelate adjacent (seed, index) pairs.
    splitmix64(&mut s)
}

/// Substream for replication `index` under `master_seed`. Identical inputs
/// produce bit-identical streams on every platform.
pub fn substream(master_seed: u64, index: u64) -> Stream {
    let mut state = mix_state(master_seed, index, 0);
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha12Rng::from_seed(seed)
}

/// A derived scalar seed, independent of the stream produced by
/// [`substream`] for the same pair. Used to seed nested procedures such as
/// fold assignment inside a replication.
pub fn derive_seed(master_seed: u64, index: u64) -> u64 {
    let mut state = mix_state(master_seed, index, 1);
    splitmix64(&mut state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn substream_is_deterministic() {
        let a: Vec<f64> = substream(7, 3).random_iter().take(8).collect();
        let b: Vec<f64> = substream(7, 3).random_iter().take(8).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn substreams_differ_across_indices_and_seeds() {
        let base: f64 = substream(7, 3).random();
        assert_ne!(base, substream(7, 4).random::<f64>());
        assert_ne!(base, substream(8, 3).random::<f64>());
    }

    #[test]
    fn derived_seed_is_stable_and_distinct_from_stream_lane() {
        assert_eq!(derive_seed(7, 3), derive_seed(7, 3));
        assert_ne!(derive_seed(7, 3), derive_seed(7, 4));
    }
}
