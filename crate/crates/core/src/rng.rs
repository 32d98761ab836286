//! Counter-based random substreams.
//!
//! Every draw is keyed by `(master seed, purpose, timestep, counter)`. The key
//! is packed verbatim into a ChaCha8 seed, so distinct keys can never alias and
//! a new purpose never shifts the draws of an existing one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a block of noise is used for. Each purpose owns an independent family
/// of substreams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Scene,
    Target,
    Ddpm,
    Resample,
    Init,
}

impl Purpose {
    pub const ALL: [Purpose; 5] = [
        Purpose::Scene,
        Purpose::Target,
        Purpose::Ddpm,
        Purpose::Resample,
        Purpose::Init,
    ];

    fn id(self) -> u64 {
        match self {
            Purpose::Scene => 1,
            Purpose::Target => 2,
            Purpose::Ddpm => 3,
            Purpose::Resample => 4,
            Purpose::Init => 5,
        }
    }

    fn slot(self) -> usize {
        self.id() as usize - 1
    }

    pub fn label(self) -> &'static str {
        match self {
            Purpose::Scene => "scene",
            Purpose::Target => "target",
            Purpose::Ddpm => "ddpm",
            Purpose::Resample => "resample",
            Purpose::Init => "init",
        }
    }
}

/// Seed plus per-purpose draw counters for a single run.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    counters: [u64; Purpose::ALL.len()],
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            counters: [0; Purpose::ALL.len()],
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn counter(&self, purpose: Purpose) -> u64 {
        self.counters[purpose.slot()]
    }

    /// The substream for an explicit key. Pure: same key, same stream.
    pub fn stream_at(seed: u64, purpose: Purpose, t: usize, counter: u64) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        key[8..16].copy_from_slice(&purpose.id().to_le_bytes());
        key[16..24].copy_from_slice(&(t as u64).to_le_bytes());
        key[24..].copy_from_slice(&counter.to_le_bytes());
        ChaCha8Rng::from_seed(key)
    }

    /// Hands out the next fresh substream for `(purpose, t)` and bumps the
    /// purpose's counter.
    pub fn substream(&mut self, purpose: Purpose, t: usize) -> ChaCha8Rng {
        let slot = purpose.slot();
        let counter = self.counters[slot];
        self.counters[slot] += 1;
        Self::stream_at(self.seed, purpose, t, counter)
    }
}
