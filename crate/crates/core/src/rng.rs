//! Seed streams.
//!
//! A single root seed is split into independent named streams through a
//! counter-based mix, so any stage of the pipeline (network, mask, splits,
//! derandomisation repetitions) can be regenerated in isolation and tasks
//! never share generator state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Named sub-streams derived from a root seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Network,
    Mask,
    Thresholds,
    Splits,
    Repetition,
    Ties,
    Replication,
    Holdout,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Network => 0x6e65_7477,
            Stream::Mask => 0x6d61_736b,
            Stream::Thresholds => 0x7468_7273,
            Stream::Splits => 0x7370_6c74,
            Stream::Repetition => 0x7265_7073,
            Stream::Ties => 0x7469_6573,
            Stream::Replication => 0x7265_706c,
            Stream::Holdout => 0x686f_6c64,
        }
    }
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a 64-bit seed from `root`, a stream tag and a path of counters.
pub fn derive_seed(root: u64, stream: Stream, path: &[u64]) -> u64 {
    let mut h = splitmix64(root ^ splitmix64(stream.tag()));
    for &p in path {
        h = splitmix64(h ^ splitmix64(p.wrapping_add(0x632b_e59b_d9b4_e019)));
    }
    h
}

pub fn stream_rng(root: u64, stream: Stream, path: &[u64]) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, stream, path))
}
