//! Seeded categorical sampling.
//!
//! Every attribute gets its own ChaCha8 stream seeded with
//! `seed ^ attribute_index`, so per-attribute draws do not depend on the
//! order in which attributes are processed. A draw takes the top 53 bits of
//! one `u64` as a uniform `u` in `[0, 1)` and returns the first index whose
//! cumulative probability exceeds `u`.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::compat::AttributeDistribution;

/// Name of the generator, recorded in run configs.
pub const GENERATOR: &str = "chacha8";

pub fn attribute_stream(seed: u64, attribute: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ attribute as u64)
}

pub fn uniform(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// One categorical draw. Zero-probability entries are never returned.
pub fn categorical(probs: &[f64], rng: &mut impl RngCore) -> usize {
    let u = uniform(rng);
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc && *p > 0.0 {
            return i;
        }
    }
    // rounding left u above the final cumulative sum
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

/// `k` independent draws from `dist` on the stream of `attribute`.
pub fn sample_objects(dist: &AttributeDistribution, k: usize, seed: u64, attribute: usize) -> Vec<usize> {
    let mut rng = attribute_stream(seed, attribute);
    (0..k).map(|_| categorical(&dist.probs, &mut rng)).collect()
}
