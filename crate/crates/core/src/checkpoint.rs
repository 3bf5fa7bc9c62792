//! Binary level checkpoints.
//!
//! Layout (little-endian): magic `MTEX1`, `u32` level, `u32` embedding
//! width, `f64` noise sigma, the generator layers, the generator output
//! scale, the critic layers, the fixed noise tensor, and the RNG state.
//! Each layer is a flag byte (bit 0: self weight present, bit 1:
//! normalization present), `u32` input and output widths, then `f32` blobs
//! in the order `w_s`, `w_f`, `bias`, `scale`, `shift`.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::autodiff::Tensor;
use crate::config::{write_atomic, ConfigError, KvConfig};
use crate::net::{Discriminator, Generator, LayerParams, Network, NormParams};
use crate::train::{LevelCheckpoint, RngState, TrainConfig};

pub const MAGIC: &[u8; 5] = b"MTEX1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("checkpoint truncated")]
    Truncated,
    #[error("checkpoint corrupt: {0}")]
    Corrupt(String),
    #[error("checkpoints do not form a chain: {0}")]
    Chain(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn blob(&mut self, t: &Tensor<f32>) {
        for v in t.data() {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fn layer(&mut self, l: &LayerParams<f32>) {
        let flags = u8::from(l.w_f.is_some()) | (u8::from(l.norm.is_some()) << 1);
        self.u8(flags);
        self.u32(l.input_dim());
        self.u32(l.output_dim());
        self.blob(&l.w_s);
        if let Some(w) = &l.w_f {
            self.blob(w);
        }
        self.blob(&l.bias);
        if let Some(n) = &l.norm {
            self.blob(&n.scale);
            self.blob(&n.shift);
        }
    }
    fn network(&mut self, n: &Network<f32>) {
        self.u32(n.layers.len());
        for l in &n.layers {
            self.layer(l);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.bytes.len() < n {
            return Err(CheckpointError::Truncated);
        }
        let (head, rest) = self.bytes.split_at(n);
        self.bytes = rest;
        Ok(head)
    }
    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn blob(&mut self, rows: usize, cols: usize) -> Result<Tensor<f32>, CheckpointError> {
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| CheckpointError::Corrupt("tensor size overflows".into()))?;
        let raw = self.take(n)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::new(rows, cols, data).map_err(|e| CheckpointError::Corrupt(e.to_string()))
    }
    fn layer(&mut self) -> Result<LayerParams<f32>, CheckpointError> {
        let flags = self.u8()?;
        if flags > 3 {
            return Err(CheckpointError::Corrupt(format!("layer flags {flags}")));
        }
        let (i, o) = (self.u32()?, self.u32()?);
        let w_s = self.blob(i, o)?;
        let w_f = if flags & 1 != 0 { Some(self.blob(i, o)?) } else { None };
        let bias = self.blob(1, o)?;
        let norm = if flags & 2 != 0 {
            Some(NormParams {
                scale: self.blob(1, o)?,
                shift: self.blob(1, o)?,
            })
        } else {
            None
        };
        Ok(LayerParams { w_s, w_f, bias, norm })
    }
    fn network(&mut self) -> Result<Network<f32>, CheckpointError> {
        let count = self.u32()?;
        if !(2..=1024).contains(&count) {
            return Err(CheckpointError::Corrupt(format!("{count} layers")));
        }
        let layers = (0..count).map(|_| self.layer()).collect::<Result<Vec<_>, _>>()?;
        for pair in layers.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(CheckpointError::Corrupt("layer widths do not chain".into()));
            }
        }
        Ok(Network { layers })
    }
}

pub fn encode(ck: &LevelCheckpoint) -> Vec<u8> {
    let mut w = Writer { buf: Vec::new() };
    w.buf.extend_from_slice(MAGIC);
    w.u32(ck.level);
    w.u32(ck.embed_dim());
    w.f64(ck.noise_sigma);
    w.network(&ck.generator.net);
    w.blob(&ck.generator.output_scale);
    w.network(&ck.discriminator.net);
    w.u32(ck.noise_c.rows());
    w.u32(ck.noise_c.cols());
    w.blob(&ck.noise_c);
    w.buf.extend_from_slice(&ck.rng.seed);
    w.u64(ck.rng.stream);
    w.buf.extend_from_slice(&ck.rng.word_pos.to_le_bytes());
    w.buf
}

pub fn decode(bytes: &[u8]) -> Result<LevelCheckpoint, CheckpointError> {
    let mut r = Reader { bytes };
    if r.take(MAGIC.len()).map_err(|_| CheckpointError::BadMagic)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let level = r.u32()?;
    let embed_dim = r.u32()?;
    let noise_sigma = r.f64()?;
    let gen_net = r.network()?;
    let output_scale = r.blob(1, 1)?;
    let disc_net = r.network()?;
    let (rows, cols) = (r.u32()?, r.u32()?);
    let noise_c = r.blob(rows, cols)?;
    let seed: [u8; 32] = r.take(32)?.try_into().unwrap();
    let stream = r.u64()?;
    let word_pos = u128::from_le_bytes(r.take(16)?.try_into().unwrap());
    if !r.bytes.is_empty() {
        return Err(CheckpointError::Corrupt(format!("{} trailing bytes", r.bytes.len())));
    }
    if gen_net.config().embed_dim != embed_dim {
        return Err(CheckpointError::Corrupt("embedding width disagrees with the header".into()));
    }
    Ok(LevelCheckpoint {
        level,
        generator: Generator {
            net: gen_net,
            output_scale,
        },
        discriminator: Discriminator { net: disc_net },
        noise_c,
        noise_sigma,
        rng: RngState { seed, stream, word_pos },
    })
}

pub fn checkpoint_path(dir: &Path, level: usize) -> PathBuf {
    dir.join(format!("level_{level}.ckpt"))
}

pub fn manifest_path(dir: &Path, level: usize) -> PathBuf {
    dir.join(format!("level_{level}.manifest"))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError {
    let path = path.display().to_string();
    move |source| CheckpointError::Io { path, source }
}

/// Write `level_{k}.ckpt` and its `key = value` sidecar into `dir`.
pub fn save_checkpoint(dir: &Path, ck: &LevelCheckpoint, config: &TrainConfig) -> Result<(), CheckpointError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = checkpoint_path(dir, ck.level);
    write_atomic(&path, &encode(ck)).map_err(io_err(&path))?;
    let mut m = KvConfig::new();
    m.set("checkpoint", "format", "MTEX1")
        .set("checkpoint", "level", ck.level)
        .set("checkpoint", "embed_dim", ck.embed_dim())
        .set("checkpoint", "layers", ck.generator.net.layers.len())
        .set("checkpoint", "vertices", ck.noise_c.rows())
        .set("checkpoint", "noise_sigma", ck.noise_sigma)
        .set("seeds", "train_seed", config.seed)
        .set("seeds", "level_seed", crate::derive_seed(config.seed, ck.level as u64));
    config.write_config(&mut m, "train");
    m.save(&manifest_path(dir, ck.level))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<LevelCheckpoint, CheckpointError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    decode(&bytes)
}

/// Load `level_0.ckpt`, `level_1.ckpt`, ... until the first missing file.
pub fn load_chain(dir: &Path) -> Result<Vec<LevelCheckpoint>, CheckpointError> {
    let mut out = Vec::new();
    loop {
        let path = checkpoint_path(dir, out.len());
        if !path.exists() {
            break;
        }
        let ck = load_checkpoint(&path)?;
        if ck.level != out.len() {
            return Err(CheckpointError::Chain(format!(
                "{} declares level {}",
                path.display(),
                ck.level
            )));
        }
        out.push(ck);
    }
    if out.is_empty() {
        return Err(CheckpointError::Chain(format!("no level_0.ckpt in {}", dir.display())));
    }
    Ok(out)
}

pub fn train_config_from_sidecar(dir: &Path, level: usize) -> Result<TrainConfig, CheckpointError> {
    let m = KvConfig::load(&manifest_path(dir, level))?;
    Ok(TrainConfig::from_config(&m, "train")?)
}
