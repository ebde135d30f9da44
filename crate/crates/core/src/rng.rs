//! Named random sub-streams derived from a single master seed.
//!
//! Every consumer of randomness gets its own ChaCha stream, so changing how
//! often one component draws never shifts the numbers seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stream {
    /// Left/right side selection.
    Bernoulli,
    /// Sketch factor draws.
    Sketch,
    /// Sample indices for stochastic estimators.
    Data,
    /// Full-synchronization coins of PAGE and MARINA.
    Coin,
    /// Compressor randomness, one stream per client.
    Compressor,
}

impl Stream {
    pub fn name(self) -> &'static str {
        match self {
            Stream::Bernoulli => "bernoulli-p",
            Stream::Sketch => "sketch",
            Stream::Data => "data-sampling",
            Stream::Coin => "estimator-coin",
            Stream::Compressor => "compressor",
        }
    }

    fn id(self) -> u64 {
        match self {
            Stream::Bernoulli => 1,
            Stream::Sketch => 2,
            Stream::Data => 3,
            Stream::Coin => 4,
            Stream::Compressor => 5,
        }
    }
}

pub fn stream(master: u64, which: Stream) -> StreamRng {
    indexed_stream(master, which, 0)
}

/// Stream for a numbered consumer, e.g. the compressor of client `index`.
pub fn indexed_stream(master: u64, which: Stream, index: usize) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(which.id() | ((index as u64) << 8));
    rng
}

#[derive(Clone, Debug)]
pub struct RunStreams {
    pub bernoulli: StreamRng,
    pub sketch: StreamRng,
    pub data: StreamRng,
    pub coin: StreamRng,
    pub compressors: Vec<StreamRng>,
}

impl RunStreams {
    pub fn new(master: u64, clients: usize) -> Self {
        RunStreams {
            bernoulli: stream(master, Stream::Bernoulli),
            sketch: stream(master, Stream::Sketch),
            data: stream(master, Stream::Data),
            coin: stream(master, Stream::Coin),
            compressors: (0..clients)
                .map(|l| indexed_stream(master, Stream::Compressor, l))
                .collect(),
        }
    }
}
