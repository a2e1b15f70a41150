//! Named random streams split from one root seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent stream identities. Changing how one stream is consumed
/// never perturbs another.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Init,
    Sampling,
    Dropout,
    Data,
}

impl Stream {
    pub const ALL: [Stream; 4] = [Stream::Init, Stream::Sampling, Stream::Dropout, Stream::Data];

    fn id(self) -> u64 {
        match self {
            Stream::Init => 1,
            Stream::Sampling => 2,
            Stream::Dropout => 3,
            Stream::Data => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stream::Init => "init",
            Stream::Sampling => "sampling",
            Stream::Dropout => "dropout",
            Stream::Data => "data",
        }
    }
}

pub fn stream(root_seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(root_seed);
    rng.set_stream(which.id());
    rng
}

/// Reopens a stream at a saved word position.
pub fn stream_at(root_seed: u64, which: Stream, word_pos: u128) -> ChaCha8Rng {
    let mut rng = stream(root_seed, which);
    rng.set_word_pos(word_pos);
    rng
}
