//! Inference: transferring a trained texture onto new meshes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::derive_seed;
use crate::mesh::{normalize_centered, Mesh, MeshError};
use crate::net::{gaussian_noise, generator_forward, NetError};
use crate::train::{next_level_input, LevelCheckpoint};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("start level {start} outside 1..={levels}")]
    StartLevel { start: usize, levels: usize },
    #[error("interpolation needs at least 2 steps, got {0}")]
    Steps(usize),
    #[error("checkpoint {index} declares level {level}")]
    Chain { index: usize, level: usize },
    #[error("expected {expected} noise tensors, got {got}")]
    NoiseCount { expected: usize, got: usize },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

fn check_chain(checkpoints: &[LevelCheckpoint], start_level: usize) -> Result<(), SynthError> {
    for (index, ck) in checkpoints.iter().enumerate() {
        if ck.level != index {
            return Err(SynthError::Chain { index, level: ck.level });
        }
    }
    if start_level == 0 || start_level > checkpoints.len() {
        return Err(SynthError::StartLevel {
            start: start_level,
            levels: checkpoints.len(),
        });
    }
    Ok(())
}

/// Noise for one level, drawn from its own sub-stream of `seed`.
pub fn level_noise(seed: u64, level: usize, vertices: usize, sigma: f64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, level as u64));
    gaussian_noise(vertices, sigma, &mut rng)
}

/// Run the generators from `start_level` (counted from 1) to the finest
/// level. `noise(level, vertex_count, sigma)` supplies the noise added at
/// each 0-based level.
pub fn synthesize_with(
    checkpoints: &[LevelCheckpoint],
    target: &Mesh,
    start_level: usize,
    noise: &mut dyn FnMut(usize, usize, f64) -> Tensor<f32>,
) -> Result<Mesh, SynthError> {
    check_chain(checkpoints, start_level)?;
    let mut mesh = normalize_centered(target)?;
    for (i, ck) in checkpoints.iter().enumerate().skip(start_level - 1) {
        if i + 1 > start_level {
            mesh = next_level_input(&mesh)?;
        }
        let z = noise(i, mesh.vertex_count(), ck.noise_sigma);
        mesh = generator_forward(&ck.generator, &mesh, &z)?;
    }
    Ok(mesh)
}

/// Texture `target` with the trained generators; `noise_seed` selects the
/// latent sample.
pub fn synthesize(
    checkpoints: &[LevelCheckpoint],
    target: &Mesh,
    start_level: usize,
    noise_seed: u64,
) -> Result<Mesh, SynthError> {
    synthesize_with(checkpoints, target, start_level, &mut |level, n, sigma| {
        level_noise(noise_seed, level, n, sigma)
    })
}

/// Meshes for `steps` evenly spaced blends of the latents of two seeds. The
/// first and last equal [`synthesize`] with `seed_a` and `seed_b`.
pub fn interpolate_latents(
    checkpoints: &[LevelCheckpoint],
    target: &Mesh,
    start_level: usize,
    seed_a: u64,
    seed_b: u64,
    steps: usize,
) -> Result<Vec<Mesh>, SynthError> {
    if steps < 2 {
        return Err(SynthError::Steps(steps));
    }
    (0..steps)
        .map(|s| {
            let t = s as f32 / (steps - 1) as f32;
            synthesize_with(checkpoints, target, start_level, &mut |level, n, sigma| {
                let a = level_noise(seed_a, level, n, sigma);
                if s == 0 {
                    return a;
                }
                let b = level_noise(seed_b, level, n, sigma);
                if s == steps - 1 {
                    return b;
                }
                a.zip_map(&b, |x, y| (1.0 - t) * x + t * y)
            })
        })
        .collect()
}
