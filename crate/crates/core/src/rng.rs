//! Named child RNG streams.
//!
//! All randomness in a run descends from a single `u64` seed. Each consumer
//! derives its own stream from the parent seed and a list of string/integer
//! labels, so adding a consumer never shifts the draws of another one and
//! per-document streams are independent of iteration order.

use std::hash::Hasher;

use fnv::FnvHasher;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// A component of a stream path.
#[derive(Debug, Clone, Copy)]
pub enum Label<'a> {
    Str(&'a str),
    Int(u64),
}

impl<'a> From<&'a str> for Label<'a> {
    fn from(s: &'a str) -> Self {
        Label::Str(s)
    }
}

impl From<u64> for Label<'_> {
    fn from(v: u64) -> Self {
        Label::Int(v)
    }
}

impl From<usize> for Label<'_> {
    fn from(v: usize) -> Self {
        Label::Int(v as u64)
    }
}

/// Derive a child seed from `parent` and a path of labels.
pub fn derive_seed(parent: u64, path: &[Label<'_>]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(&parent.to_le_bytes());
    for label in path {
        match label {
            Label::Str(s) => {
                h.write(&[0x01]);
                h.write(&(s.len() as u64).to_le_bytes());
                h.write(s.as_bytes());
            }
            Label::Int(v) => {
                h.write(&[0x02]);
                h.write(&v.to_le_bytes());
            }
        }
    }
    // FNV alone mixes the high bits poorly; finish with splitmix64.
    splitmix64(h.finish())
}

pub fn stream(parent: u64, path: &[Label<'_>]) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(parent, path))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
