//! Shared fixtures for the criterion benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ttopt_core::tt::Core;
use ttopt_core::TensorTrain;

/// A seeded random tensor train with the given uniform mode size and rank.
pub fn random_tt(d: usize, n: usize, rank: usize, seed: u64) -> TensorTrain {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cores = (0..d)
        .map(|k| {
            let rl = if k == 0 { 1 } else { rank };
            let rr = if k == d - 1 { 1 } else { rank };
            Core::from_fn(rl, n, rr, |_, _, _| rng.gen_range(-1.0..1.0))
        })
        .collect();
    TensorTrain::new(cores).expect("consistent ranks")
}
