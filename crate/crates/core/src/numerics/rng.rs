//! Seeded, labelled random streams.
//!
//! Every consumer of randomness owns an [`RngStream`] derived from the run seed and a
//! [`StreamId`], so environment noise, action sampling, pair selection and estimator
//! splits never perturb each other's sequences.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamId {
    Environment,
    Policy,
    QuerySelection,
    EstimatorSplit,
    Init,
    Shuffle,
    Custom(u32),
}

impl StreamId {
    fn word(self) -> u64 {
        match self {
            StreamId::Environment => 1,
            StreamId::Policy => 2,
            StreamId::QuerySelection => 3,
            StreamId::EstimatorSplit => 4,
            StreamId::Init => 5,
            StreamId::Shuffle => 6,
            StreamId::Custom(k) => 0x1000 + u64::from(k),
        }
    }
}

/// A deterministic random stream: identical `(seed, stream_id)` pairs yield identical draws.
#[derive(Debug, Clone, PartialEq)]
pub struct RngStream {
    seed: u64,
    stream_id: StreamId,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: StreamId) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id.word());
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> StreamId {
        self.stream_id
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn uniform_range(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Uniform index in `0..n`. Panics if `n == 0`.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Fisher-Yates shuffle driven by this stream.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }

    /// Child stream for a sub-task (e.g. one episode), deterministic in the parent's state.
    pub fn fork(&mut self, stream_id: StreamId) -> RngStream {
        let seed = self.next_u64();
        RngStream::new(seed, stream_id)
    }
}
