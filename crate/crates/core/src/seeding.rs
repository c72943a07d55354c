//! Independent deterministic random streams derived from one scenario seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Which party consumes a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// The initiator's choice of public numbers for one bucket.
    BucketParams { bucket: usize },
    /// One participant's exponent pair for one bucket.
    ExponentPair { participant: usize, bucket: usize },
    /// Scenario generation in tests and tools.
    Scenario { index: u64 },
}

impl Stream {
    fn words(self) -> [u64; 3] {
        match self {
            Stream::BucketParams { bucket } => [1, bucket as u64, 0],
            Stream::ExponentPair {
                participant,
                bucket,
            } => [2, participant as u64, bucket as u64],
            Stream::Scenario { index } => [3, index, 0],
        }
    }
}

/// ChaCha stream keyed by `(seed, stream)`; distinct streams never overlap.
pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    for (chunk, word) in key[8..].chunks_exact_mut(8).zip(stream.words()) {
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
