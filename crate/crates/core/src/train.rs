//! Hierarchical single-mesh adversarial training.
//!
//! Each level trains a generator/critic pair with a Wasserstein loss plus
//! gradient penalty, and a reconstruction term that ties the generator's
//! output under a fixed noise tensor `c` to the training mesh of that level.
//! Level `k + 1` starts from the subdivided output of the frozen level `k`.

use log::{debug, info};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{lit, Adam, AdamConfig, AutodiffError, Real, Tape, Tensor, Var};
use crate::config::{ConfigError, KvConfig};
use crate::derive_seed;
use crate::mesh::{normalize_centered, Mesh, MeshError};
use crate::net::{
    critic_graph, gaussian_noise, generator_graph, layer_vars_flat, mesh_from_tensor, vertices_tensor, Discriminator, FaceIndex,
    Generator, LayerVars, NetError, NetworkConfig,
};
use crate::remesh::MultiscalePyramid;
use crate::subdivision::uniform_subdivide;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("level {level}: input and training mesh have different connectivity")]
    ConnectivityMismatch { level: usize },
    #[error("level {level}: loss became non-finite at iteration {iter}")]
    Divergence { level: usize, iter: usize },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Checkpoint(Box<crate::checkpoint::CheckpointError>),
}

impl From<crate::checkpoint::CheckpointError> for TrainError {
    fn from(e: crate::checkpoint::CheckpointError) -> Self {
        TrainError::Checkpoint(Box::new(e))
    }
}

impl From<crate::features::FeatureError> for TrainError {
    fn from(e: crate::features::FeatureError) -> Self {
        TrainError::Net(e.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub iters_per_level: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub decay_interval: usize,
    pub gamma: f64,
    pub gp_lambda: f64,
    pub d_steps: usize,
    pub g_steps: usize,
    /// Noise standard deviation at the coarsest level, in mean-edge units;
    /// halved at every finer level.
    pub noise_sigma: f64,
    pub seed: u64,
    /// First level (counted from 1) whose networks start from the previous
    /// level's weights.
    pub inherit_from_level: usize,
    /// When false, only the reconstruction term is optimized and the critic
    /// is left untouched.
    pub adversarial: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iters_per_level: 2000,
            lr: 5e-4,
            lr_decay: 0.5,
            decay_interval: 500,
            gamma: 5.0,
            gp_lambda: 10.0,
            d_steps: 3,
            g_steps: 3,
            noise_sigma: 0.1,
            seed: 0,
            inherit_from_level: 4,
            adversarial: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.iters_per_level == 0 || self.decay_interval == 0 || self.d_steps == 0 || self.g_steps == 0 {
            return bad("iteration, interval and step counts must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.lr_decay > 0.0 && self.lr_decay.is_finite()) {
            return bad("lr and lr_decay must be positive");
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) || !(self.gp_lambda >= 0.0 && self.gp_lambda.is_finite()) {
            return bad("gamma and gp_lambda must be finite and non-negative");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be finite and non-negative");
        }
        Ok(())
    }

    /// Learning rate in effect at iteration `iter` (0-based).
    pub fn lr_at(&self, iter: usize) -> f64 {
        self.lr * self.lr_decay.powi((iter / self.decay_interval) as i32)
    }

    /// Noise standard deviation at a 0-based level.
    pub fn sigma_at(&self, level: usize) -> f64 {
        self.noise_sigma * 0.5f64.powi(level as i32)
    }

    /// Whether a 0-based level starts from the previous level's weights.
    pub fn inherits(&self, level: usize) -> bool {
        level > 0 && level + 1 >= self.inherit_from_level
    }

    pub fn from_config(cfg: &KvConfig, section: &str) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        cfg.read_into(section, "iters_per_level", &mut c.iters_per_level)?;
        cfg.read_into(section, "lr", &mut c.lr)?;
        cfg.read_into(section, "lr_decay", &mut c.lr_decay)?;
        cfg.read_into(section, "decay_interval", &mut c.decay_interval)?;
        cfg.read_into(section, "gamma", &mut c.gamma)?;
        cfg.read_into(section, "gp_lambda", &mut c.gp_lambda)?;
        cfg.read_into(section, "d_steps", &mut c.d_steps)?;
        cfg.read_into(section, "g_steps", &mut c.g_steps)?;
        cfg.read_into(section, "noise_sigma", &mut c.noise_sigma)?;
        cfg.read_into(section, "seed", &mut c.seed)?;
        cfg.read_into(section, "inherit_from_level", &mut c.inherit_from_level)?;
        cfg.read_into(section, "adversarial", &mut c.adversarial)?;
        Ok(c)
    }

    pub fn write_config(&self, cfg: &mut KvConfig, section: &str) {
        cfg.set(section, "iters_per_level", self.iters_per_level)
            .set(section, "lr", self.lr)
            .set(section, "lr_decay", self.lr_decay)
            .set(section, "decay_interval", self.decay_interval)
            .set(section, "gamma", self.gamma)
            .set(section, "gp_lambda", self.gp_lambda)
            .set(section, "d_steps", self.d_steps)
            .set(section, "g_steps", self.g_steps)
            .set(section, "noise_sigma", self.noise_sigma)
            .set(section, "seed", self.seed)
            .set(section, "inherit_from_level", self.inherit_from_level)
            .set(section, "adversarial", self.adversarial);
    }
}

/// Position of a ChaCha8 stream, enough to resume it exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Trained state of one level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelCheckpoint {
    /// 0-based level index.
    pub level: usize,
    pub generator: Generator<f32>,
    pub discriminator: Discriminator<f32>,
    /// Fixed reconstruction noise; all zeros above the coarsest level.
    pub noise_c: Tensor<f32>,
    /// Standard deviation of the noise injected at this level.
    pub noise_sigma: f64,
    pub rng: RngState,
}

impl LevelCheckpoint {
    pub fn embed_dim(&self) -> usize {
        self.generator.net.config().embed_dim
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainLogRow {
    pub iter: usize,
    pub level: usize,
    pub d_loss: f64,
    pub g_loss: f64,
    pub gp: f64,
    pub recon_mse: f64,
    /// Mean critic score of the real mesh minus that of the generated one.
    pub wasserstein: f64,
}

pub const TRAIN_LOG_HEADER: [&str; 6] = ["iter", "level", "d_loss", "g_loss", "gp", "recon_mse"];

impl TrainLogRow {
    pub fn csv_fields(&self) -> [String; 6] {
        [
            self.iter.to_string(),
            self.level.to_string(),
            self.d_loss.to_string(),
            self.g_loss.to_string(),
            self.gp.to_string(),
            self.recon_mse.to_string(),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct LevelOutcome {
    pub checkpoint: LevelCheckpoint,
    pub log: Vec<TrainLogRow>,
    /// Reconstruction error at noise `c` after the last update.
    pub final_recon_mse: f64,
}

/// `gp_lambda * (|grad_x D(x)| - 1)^2` at `x = eps * real + (1 - eps) * fake`
/// for an arbitrary differentiable critic; the result is differentiable with
/// respect to whatever the critic depends on.
pub fn gradient_penalty_with<'t, T: Real>(
    tape: &'t Tape<T>,
    real: &Tensor<T>,
    fake: &Tensor<T>,
    eps: T,
    gp_lambda: f64,
    critic: impl FnOnce(Var<'t, T>) -> Result<Var<'t, T>, AutodiffError>,
) -> Result<Var<'t, T>, AutodiffError> {
    let mixed = real.zip_map(fake, |r, f| eps * r + (T::one() - eps) * f);
    let x = tape.param(mixed);
    let score = critic(x)?;
    let g = tape.grad(score, &[x], true)?[0];
    Ok(g.l2_norm().affine(T::one(), -T::one()).square().scale(lit(gp_lambda)))
}

/// Gradient penalty of the face-convolutional critic, whose mesh-level
/// value is the mean of its per-face scores.
pub fn gradient_penalty<'t, T: Real>(
    layers: &[LayerVars<'t, T>],
    real: &Tensor<T>,
    fake: &Tensor<T>,
    eps: T,
    gp_lambda: f64,
    index: &FaceIndex,
) -> Result<Var<'t, T>, AutodiffError> {
    let tape = layers[0].w_s.tape();
    gradient_penalty_with(tape, real, fake, eps, gp_lambda, |x| Ok(critic_graph(layers, x, index)?.mean_all()))
}

fn generate(gen: &Generator<f32>, input: &Mesh, noise: &Tensor<f32>, index: &FaceIndex) -> Result<Tensor<f32>, NetError> {
    let tape = Tape::new();
    let bound = gen.bind(&tape, false);
    let out = generator_graph(&bound, input, noise, index)?;
    let value = out.value();
    Ok(value.as_ref().clone())
}

fn check_finite(value: f64, level: usize, iter: usize) -> Result<f64, TrainError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(TrainError::Divergence { level, iter })
    }
}

fn grads_finite(grads: &[Tensor<f32>]) -> bool {
    grads.iter().all(|g| g.all_finite())
}

/// Train the networks of one level. `input` and `real` must share
/// connectivity; `init` supplies starting weights (otherwise random).
pub fn train_level(
    level: usize,
    input: &Mesh,
    real: &Mesh,
    init: Option<&LevelCheckpoint>,
    config: &TrainConfig,
    on_row: &mut dyn FnMut(&TrainLogRow),
) -> Result<LevelOutcome, TrainError> {
    config.validate()?;
    if input.faces() != real.faces() || input.vertex_count() != real.vertex_count() {
        return Err(TrainError::ConnectivityMismatch { level });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, level as u64));
    let sigma = config.sigma_at(level);
    let (mut gen, mut disc) = match init {
        Some(ck) => {
            if ck.generator.net.config() != NetworkConfig::generator(level)
                || ck.discriminator.net.config() != NetworkConfig::discriminator(level)
            {
                return Err(TrainError::InvalidConfig(format!(
                    "level {level} cannot inherit weights of a different width"
                )));
            }
            (ck.generator.clone(), ck.discriminator.clone())
        }
        None => {
            let g = Generator::<f32>::new(NetworkConfig::generator(level), &mut rng);
            let d = Discriminator::<f32>::new(NetworkConfig::discriminator(level), &mut rng);
            (g, d)
        }
    };
    let noise_c = if level == 0 {
        gaussian_noise(input.vertex_count(), sigma, &mut rng)
    } else {
        Tensor::zeros(input.vertex_count(), 3)
    };

    let index = FaceIndex::new(input);
    let real_t: Tensor<f32> = vertices_tensor(real);
    let adam_cfg = AdamConfig {
        lr: config.lr,
        ..Default::default()
    };
    let mut adam_g = Adam::new(adam_cfg, gen.tensors());
    let mut adam_d = Adam::new(adam_cfg, disc.tensors());
    let mut log = Vec::with_capacity(config.iters_per_level);

    for iter in 0..config.iters_per_level {
        let lr = config.lr_at(iter);
        adam_g.set_lr(lr);
        adam_d.set_lr(lr);

        let (mut d_loss, mut gp_value, mut wasserstein) = (0.0, 0.0, 0.0);
        let d_steps = if config.adversarial { config.d_steps } else { 0 };
        for _ in 0..d_steps {
            let z = gaussian_noise(input.vertex_count(), sigma, &mut rng);
            let fake = generate(&gen, input, &z, &index)?;
            let eps: f32 = rng.gen();
            let tape = Tape::new();
            let layers = disc.net.bind(&tape, true);
            let params = layer_vars_flat(&layers);
            let d_real = critic_graph(&layers, tape.constant(real_t.clone()), &index)?.mean_all();
            let d_fake = critic_graph(&layers, tape.constant(fake.clone()), &index)?.mean_all();
            let gp = gradient_penalty(&layers, &real_t, &fake, eps, config.gp_lambda, &index)?;
            let loss = d_fake.sub(d_real)?.add(gp)?;
            d_loss = check_finite(loss.item() as f64, level, iter)?;
            gp_value = gp.item() as f64;
            wasserstein = (d_real.item() - d_fake.item()) as f64;
            let grads = tape.backward(loss, &params)?;
            if !grads_finite(&grads) {
                return Err(TrainError::Divergence { level, iter });
            }
            adam_d.step(&mut disc.tensors_mut(), &grads);
        }

        let (mut g_loss, mut recon_mse) = (0.0, 0.0);
        for _ in 0..config.g_steps {
            let z = gaussian_noise(input.vertex_count(), sigma, &mut rng);
            let tape = Tape::new();
            let bound = gen.bind(&tape, true);
            let layers = disc.net.bind(&tape, false);
            let recon = generator_graph(&bound, input, &noise_c, &index)?;
            let mse = recon.sub(tape.constant(real_t.clone()))?.mean_square();
            let mut loss = mse.scale(lit(config.gamma));
            if config.adversarial {
                let fake = generator_graph(&bound, input, &z, &index)?;
                let adv = critic_graph(&layers, fake, &index)?.mean_all().neg();
                loss = adv.add(loss)?;
            }
            g_loss = check_finite(loss.item() as f64, level, iter)?;
            recon_mse = mse.item() as f64;
            let grads = tape.backward(loss, &bound.params())?;
            if !grads_finite(&grads) {
                return Err(TrainError::Divergence { level, iter });
            }
            adam_g.step(&mut gen.tensors_mut(), &grads);
        }

        let row = TrainLogRow {
            iter,
            level,
            d_loss,
            g_loss,
            gp: gp_value,
            recon_mse,
            wasserstein,
        };
        if iter % 50 == 0 {
            debug!("level {level} iter {iter}: d {d_loss:.4} g {g_loss:.4} gp {gp_value:.4} rec {recon_mse:.6}");
        }
        on_row(&row);
        log.push(row);
    }

    let recon = generate(&gen, input, &noise_c, &index)?;
    let final_recon_mse = recon
        .data()
        .iter()
        .zip(real_t.data())
        .map(|(a, b)| ((a - b) as f64).powi(2))
        .sum::<f64>()
        / recon.len() as f64;
    Ok(LevelOutcome {
        checkpoint: LevelCheckpoint {
            level,
            generator: gen,
            discriminator: disc,
            noise_c,
            noise_sigma: sigma,
            rng: RngState::capture(&rng),
        },
        log,
        final_recon_mse,
    })
}

/// Generator output at the fixed noise `c`.
pub fn reconstruct(checkpoint: &LevelCheckpoint, input: &Mesh) -> Result<Mesh, TrainError> {
    let index = FaceIndex::new(input);
    let out = generate(&checkpoint.generator, input, &checkpoint.noise_c, &index)?;
    Ok(mesh_from_tensor(input, &out)?)
}

/// Input of the next level: subdivide, then restore unit mean edge length.
pub fn next_level_input(output: &Mesh) -> Result<Mesh, MeshError> {
    normalize_centered(&uniform_subdivide(output, true).0)
}

/// Training meshes of every level, centred with unit mean edge length, and
/// the level-0 input.
pub fn training_meshes(pyramid: &MultiscalePyramid) -> Result<(Mesh, Vec<Mesh>), TrainError> {
    let input = normalize_centered(&pyramid.template)?;
    let reals = pyramid
        .levels
        .iter()
        .map(normalize_centered)
        .collect::<Result<Vec<_>, _>>()?;
    Ok((input, reals))
}

#[derive(Debug, Clone)]
pub struct HierarchyOutcome {
    pub levels: Vec<LevelOutcome>,
}

impl HierarchyOutcome {
    pub fn checkpoints(&self) -> Vec<LevelCheckpoint> {
        self.levels.iter().map(|l| l.checkpoint.clone()).collect()
    }
}

/// Train every pyramid level in order.
pub fn train_hierarchy(
    pyramid: &MultiscalePyramid,
    config: &TrainConfig,
    on_row: &mut dyn FnMut(&TrainLogRow),
    on_level: &mut dyn FnMut(&LevelOutcome) -> Result<(), TrainError>,
) -> Result<HierarchyOutcome, TrainError> {
    config.validate()?;
    if pyramid.levels.len() < 2 {
        return Err(TrainError::InvalidConfig("training needs a pyramid of at least 2 levels".into()));
    }
    let (mut input, reals) = training_meshes(pyramid)?;
    let mut levels: Vec<LevelOutcome> = Vec::with_capacity(reals.len());
    for (level, real) in reals.iter().enumerate() {
        if level > 0 {
            let prev = &levels[level - 1].checkpoint;
            input = next_level_input(&reconstruct(prev, &input)?)?;
        }
        let init = config.inherits(level).then(|| &levels[level - 1].checkpoint);
        info!(
            "training level {level}: {} faces{}",
            real.face_count(),
            if init.is_some() { ", inherited weights" } else { "" }
        );
        let outcome = train_level(level, &input, real, init, config, on_row)?;
        info!("level {level}: reconstruction mse {:.6}", outcome.final_recon_mse);
        on_level(&outcome)?;
        levels.push(outcome);
    }
    Ok(HierarchyOutcome { levels })
}

/// Mean squared per-coordinate vertex difference.
pub fn vertex_mse(a: &Mesh, b: &Mesh) -> f64 {
    let sum: f64 = a
        .vertices()
        .iter()
        .zip(b.vertices())
        .map(|(p, q)| (p - q).norm_squared())
        .sum();
    sum / (3 * a.vertex_count()) as f64
}

#[cfg(test)]
mod tests;
