//! Geometry, synthetic building data, isosurface extraction and evaluation
//! metrics for shape completion in occupancy-function space.
//!
//! Everything in this crate is plain `f64` geometry with no learning
//! framework attached; the learned components live in `occdiff-model`.

pub mod evalkit;
pub mod geometry;
pub mod isoext;
pub mod synthbuild;

mod error;

pub use error::{Error, Result};

/// A 3D position in normalized object coordinates.
pub type Point3 = nalgebra::Point3<f64>;
/// A 3D direction or displacement.
pub type Vec3 = nalgebra::Vector3<f64>;

/// Seeded generator used by every stochastic routine in the workspace.
pub type SeededRng = rand_chacha::ChaCha8Rng;

/// Builds the workspace generator from a 64-bit seed.
pub fn seeded_rng(seed: u64) -> SeededRng {
    use rand::SeedableRng;
    SeededRng::seed_from_u64(seed)
}

/// Derives an independent child seed from a parent seed and a stream index.
///
/// SplitMix64 finalizer; used so record `i` of a dataset does not depend on
/// how many random draws records `0..i` consumed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
