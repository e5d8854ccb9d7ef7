//! Seed management. A single root seed is split into named, independent
//! streams so each stage (design, chain, optimizer, sampler) can be replayed
//! on its own.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Named sub-streams of a root seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Design,
    Chain,
    Optimizer,
    Sampler,
}

impl Stream {
    fn tag(self) -> &'static str {
        match self {
            Stream::Design => "design",
            Stream::Chain => "chain",
            Stream::Optimizer => "optimizer",
            Stream::Sampler => "sampler",
        }
    }
}

/// FNV-1a, used only to turn stream tags and index sets into seeds.
pub(crate) fn fnv1a(bytes: impl IntoIterator<Item = u8>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub(crate) fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for a named stream of `root`.
pub fn stream_seed(root: u64, stream: Stream) -> u64 {
    splitmix(root ^ fnv1a(stream.tag().bytes()))
}

pub fn stream_rng(root: u64, stream: Stream) -> Rng {
    Rng::seed_from_u64(stream_seed(root, stream))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
