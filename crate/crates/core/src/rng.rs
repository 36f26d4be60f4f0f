//! Keyed random streams.
//!
//! Every source of randomness in a trial is an independent ChaCha stream whose
//! seed is derived from `(master_seed, label, indices...)`. Two runs that share
//! a master seed therefore see the same event draws and the same client noise
//! regardless of which method consumes them or how many local steps it takes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn absorb(acc: u64, word: u64) -> u64 {
    let mut s = acc ^ word.wrapping_mul(GOLDEN);
    splitmix(&mut s)
}

/// Derives the 256-bit ChaCha seed for a labelled stream.
pub fn stream_seed(master_seed: u64, label: &str, indices: &[u64]) -> [u8; 32] {
    let mut acc = absorb(0x243F_6A88_85A3_08D3, master_seed);
    for chunk in label.as_bytes().chunks(8) {
        let mut word = [0u8; 8];
        word[..chunk.len()].copy_from_slice(chunk);
        acc = absorb(acc, u64::from_le_bytes(word));
    }
    acc = absorb(acc, label.len() as u64);
    for &i in indices {
        acc = absorb(acc, i);
    }
    acc = absorb(acc, indices.len() as u64);

    let mut seed = [0u8; 32];
    let mut state = acc;
    for block in seed.chunks_mut(8) {
        block.copy_from_slice(&splitmix(&mut state).to_le_bytes());
    }
    seed
}

pub fn stream(master_seed: u64, label: &str, indices: &[u64]) -> StreamRng {
    StreamRng::from_seed(stream_seed(master_seed, label, indices))
}

/// The named streams of one trial.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Streams {
    pub master_seed: u64,
}

impl Streams {
    pub fn new(master_seed: u64) -> Self {
        Self { master_seed }
    }

    /// Noise for client `client`'s `round`-th local computation.
    pub fn noise(&self, client: usize, round: u64) -> StreamRng {
        stream(self.master_seed, "noise", &[client as u64, round])
    }

    pub fn events(&self) -> StreamRng {
        stream(self.master_seed, "events", &[])
    }

    /// Client selection for a synchronous round.
    pub fn sampling(&self, round: u64) -> StreamRng {
        stream(self.master_seed, "sampling", &[round])
    }

    /// Response-time draw of `client` in synchronous round `round`.
    pub fn latency(&self, client: usize, round: u64) -> StreamRng {
        stream(self.master_seed, "latency", &[client as u64, round])
    }

    pub fn labelled(&self, label: &str) -> StreamRng {
        stream(self.master_seed, label, &[])
    }
}

/// Seed of trial `trial` within an experiment.
pub fn trial_seed(master_seed: u64, trial: usize) -> u64 {
    let seed = stream_seed(master_seed, "trial", &[trial as u64]);
    u64::from_le_bytes(seed[..8].try_into().expect("8 bytes"))
}
