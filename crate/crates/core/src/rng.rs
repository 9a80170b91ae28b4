//! Named, independent random streams.
//!
//! Every consumer of randomness derives its own ChaCha stream from a master
//! seed and a textual name, so adding draws to one stream never perturbs
//! another (growing |D| leaves V and T untouched, for instance).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

/// Seed material for the stream called `name` under `master`.
pub fn stream_seed(master: u64, name: &str) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(b"gam-dpg/stream/v1");
    hasher.update(master.to_le_bytes());
    hasher.update((name.len() as u64).to_le_bytes());
    hasher.update(name.as_bytes());
    hasher.finalize().into()
}

pub fn stream(master: u64, name: &str) -> StreamRng {
    ChaCha8Rng::from_seed(stream_seed(master, name))
}

/// A child stream of `parent`, e.g. one per worker or per iteration.
pub fn substream(master: u64, parent: &str, index: u64) -> StreamRng {
    stream(master, &format!("{parent}/{index}"))
}
