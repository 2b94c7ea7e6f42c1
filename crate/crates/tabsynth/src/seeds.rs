//! Deterministic seed derivation.
//!
//! Every command takes one master seed; all randomness flows through
//! streams derived as `SHA-256(master_le || domain || index_le...)`, so
//! sub-streams never collide and parallel execution matches serial.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

fn digest(master: u64, domain: &str, indices: &[u64]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(domain.as_bytes());
    for idx in indices {
        hasher.update(idx.to_le_bytes());
    }
    hasher.finalize().into()
}

/// A 64-bit sub-seed for the given domain and coordinates.
pub fn derive_u64(master: u64, domain: &str, indices: &[u64]) -> u64 {
    let d = digest(master, domain, indices);
    u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
}

/// A full-width RNG stream for the given domain and coordinates.
pub fn derive_rng(master: u64, domain: &str, indices: &[u64]) -> ChaCha12Rng {
    ChaCha12Rng::from_seed(digest(master, domain, indices))
}

/// One N(0,1) draw via Box-Muller.
pub fn standard_normal(rng: &mut impl rand::Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>(); // (0, 1]
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
