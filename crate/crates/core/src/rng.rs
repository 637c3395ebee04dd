use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator handed out by [`SeedSpec::rng`].
pub type GapRng = ChaCha8Rng;

/// Seed plus substream identifier.
///
/// Equal specs produce bit-identical sequences; distinct `stream_id`s under
/// the same seed are independent ChaCha streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct SeedSpec {
    pub seed: u64,
    pub stream_id: u64,
}

impl SeedSpec {
    pub const fn new(seed: u64) -> Self {
        Self { seed, stream_id: 0 }
    }

    pub const fn with_stream(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    /// The seed with its stream id advanced by `offset`.
    pub const fn substream(self, offset: u64) -> Self {
        Self {
            seed: self.seed,
            stream_id: self.stream_id.wrapping_add(offset),
        }
    }

    pub fn rng(&self) -> GapRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}
