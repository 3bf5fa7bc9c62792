//! Geometric texture synthesis from a single reference mesh.
//!
//! The pipeline: fit a subdivision pyramid to the reference ([`remesh`]),
//! train one face-convolutional generator/critic pair per pyramid level
//! ([`train`]), then displace the vertices of any closed target mesh level by
//! level ([`synth`]).

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod features;
pub mod mesh;
pub mod net;
pub mod nn_search;
pub mod obj;
pub mod remesh;
pub mod shapes;
pub mod subdivision;
pub mod synth;
pub mod train;

pub use mesh::{mesh_stats, normalize_centered, normalize_mean_edge, sample_surface, Mesh, MeshError, MeshStats, SurfaceSample, Topology};

/// Independent child seed for a numbered sub-stream of `seed`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    use rand::{RngCore, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.wrapping_add(1));
    rng.next_u64()
}
