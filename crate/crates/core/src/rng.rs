//! Deterministic random streams.
//!
//! Every sampler takes a single `u64` seed. Independent noise sources inside
//! one sampler (one per exogenous error term, one per latent dimension of an
//! interventional draw) are separate ChaCha8 streams of that seed, selected
//! with [`ChaCha8Rng::set_stream`]. Stream ids are built as
//! `(family << 32) | index`, so adding components or instruments never
//! shifts the noise of existing ones.
//!
//! Replicated experiments derive one seed per task from the master seed and
//! the task's integer key with [`derive_seed`], a SplitMix64 fold. The key
//! identifies the task (configuration, grid point, replicate), never the
//! worker that runs it, so results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const STREAM_INSTRUMENT: u32 = 1;
pub const STREAM_CONFOUNDER: u32 = 2;
pub const STREAM_COMPONENT: u32 = 3;
pub const STREAM_OUTCOME: u32 = 4;
pub const STREAM_LATENT: u32 = 5;
pub const STREAM_UNIFORM: u32 = 6;

pub fn stream_id(family: u32, index: u32) -> u64 {
    (u64::from(family) << 32) | u64::from(index)
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `n` independent standard normal draws from one stream.
pub fn standard_normals(seed: u64, stream: u64, n: usize) -> Vec<f64> {
    let mut rng = stream_rng(seed, stream);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for the task identified by `key` under `master`.
pub fn derive_seed(master: u64, key: &[u64]) -> u64 {
    key.iter().fold(splitmix64(master), |acc, &k| {
        splitmix64(acc ^ splitmix64(k))
    })
}
