//! Coarse-to-fine clothed avatar reconstruction.
//!
//! A canonical-space signed distance network conditioned on pixel-aligned
//! normal-map features recovers the general body shape; a posed-space SDF,
//! warm-started by a hyper-network, is then refined against front and back
//! normal maps. Synthetic capsule bodies with analytic SDFs stand in for scan
//! data so every stage can be checked against closed-form answers.
//!
//! The crate is `no_std` (with `alloc`). Enable the `std` feature for runtime
//! SIMD dispatch in the matrix kernels.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

#[cfg(all(test, not(feature = "std")))]
extern crate std;

mod error;
pub mod math;

pub mod dense;
pub mod encoder;
pub mod geometry;
pub mod mesh;
pub mod refinement;
pub mod sdf_net;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
pub use math::{Mat3, RigidTransform, Vec3};

/// Seeded generator used throughout. ChaCha8 is reproducible across platforms.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Builds the crate's generator from a 64-bit seed.
pub fn rng_from_seed(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}
