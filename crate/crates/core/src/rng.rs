//! Seed derivation and Gaussian fills.
//!
//! Every random stream in the crate is a `ChaCha8Rng` seeded from a master
//! seed plus a purpose tag (and optional indices), so results never depend
//! on scheduling or worker count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::ndcore::Matrix;

pub type SeededRng = ChaCha8Rng;

/// Derives a 64-bit seed from `(master, tag, indices)` with SHA-256.
pub fn derive_seed(master: u64, tag: &str, indices: &[u64]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update((tag.len() as u64).to_le_bytes());
    hasher.update(tag.as_bytes());
    for i in indices {
        hasher.update(i.to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived(master: u64, tag: &str, indices: &[u64]) -> SeededRng {
    seeded(derive_seed(master, tag, indices))
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// `rows × cols` matrix of i.i.d. N(0, scale²) draws, filled row-major.
pub fn normal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| scale * standard_normal(rng))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("length matches by construction")
}
