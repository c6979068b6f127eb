//! Seed derivation for independent, reproducible random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used for every stream in the crate.
pub type StreamRng = ChaCha8Rng;

/// Named streams derived from a master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Environment,
    Policy,
    Baseline,
    Target,
    Features,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Environment => 0x656e_7669,
            Stream::Policy => 0x706f_6c69,
            Stream::Baseline => 0x6261_7365,
            Stream::Target => 0x7461_7267,
            Stream::Features => 0x6665_6174,
        }
    }
}

/// splitmix64 finalizer.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a sequence of indices.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix(seed), |acc, &p| mix(acc ^ mix(p)))
}

pub fn stream(seed: u64, stream: Stream, path: &[u64]) -> StreamRng {
    let mut full = Vec::with_capacity(path.len() + 1);
    full.push(stream.tag());
    full.extend_from_slice(path);
    StreamRng::seed_from_u64(derive_seed(seed, &full))
}

/// Hashes a slice of floats bitwise, for keying deterministic draws on inputs.
pub fn hash_f64s(seed: u64, values: &[f64]) -> u64 {
    values
        .iter()
        .fold(mix(seed), |acc, v| mix(acc ^ v.to_bits()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_distinct_and_reproducible() {
        let a: u64 = stream(7, Stream::Environment, &[1]).random();
        let b: u64 = stream(7, Stream::Environment, &[1]).random();
        let c: u64 = stream(7, Stream::Policy, &[1]).random();
        let d: u64 = stream(7, Stream::Environment, &[2]).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }
}
