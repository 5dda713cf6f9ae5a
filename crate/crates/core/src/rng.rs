//! Seeded random number generation with derivable child streams.
//!
//! Every random decision in a run flows from one root seed. Children are
//! derived by hashing the parent seed together with integer tags, never by
//! consuming draws, so the stream a component sees does not depend on what
//! other components did before it. That property is what makes client-level
//! parallelism and baseline/protocol degeneracy comparisons bit-exact.

use rand::distributions::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Purpose tags for derived streams. Keeping them in one place guarantees two
/// components never collide on the same child seed.
pub mod stream {
    /// Synthetic dataset generation; second tag is the silo index.
    pub const DATA: u64 = 1;
    /// The iid partition shuffle.
    pub const SPLIT: u64 = 2;
    /// Client-to-tier assignment draws.
    pub const ASSIGN: u64 = 3;
    /// Encoder stack initialization (drawn once, deepest tier).
    pub const INIT_ENCODER: u64 = 4;
    /// Task head initialization; second tag is the tier index.
    pub const INIT_HEAD: u64 = 5;
    /// Per-round client sampling; second tag is the round index.
    pub const SAMPLE: u64 = 6;
    /// Local training batches; tags are (client id, round index).
    pub const CLIENT: u64 = 7;
}

/// splitmix64 finalizer; good avalanche behavior for seed mixing.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic generator: a ChaCha8 stream keyed by a 64-bit seed.
///
/// Same seed, same platform or not, same draw sequence.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { seed, inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// The seed this generator was constructed with (not its current state).
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derive an independent child stream from the root seed and `tags`.
    ///
    /// Derivation hashes the construction seed, not the evolving state, so
    /// the child is the same no matter how many draws the parent made.
    pub fn derive(&self, tags: &[u64]) -> Rng {
        let mut s = mix64(self.seed);
        for &t in tags {
            s = mix64(s ^ mix64(t));
        }
        Rng::new(s)
    }

    /// Uniform draw in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    /// Standard normal draw.
    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Uniform integer in [0, n). n must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0) is meaningless");
        self.inner.gen_range(0..n)
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        xs.shuffle(&mut self.inner);
    }
}
