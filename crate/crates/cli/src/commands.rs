use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use log::{info, warn};
use thiserror::Error;

use meshtex::checkpoint::{load_chain, save_checkpoint, CheckpointError};
use meshtex::config::{write_atomic, ConfigError, KvConfig};
use meshtex::obj::{load_obj, write_obj_string, ObjError};
use meshtex::remesh::{build_multiscale, place_template, FitConfig, MultiscalePyramid, RemeshError};
use meshtex::subdivision::uniform_subdivide;
use meshtex::synth::{interpolate_latents, synthesize as run_synthesis, SynthError};
use meshtex::train::{train_hierarchy, TrainConfig, TrainError, TrainLogRow, TRAIN_LOG_HEADER};
use meshtex::{shapes, Mesh, MeshError};

use crate::manifest::RunManifest;
use crate::GlobalArgs;

/// Invalid input or settings; maps to exit code 2.
#[derive(Debug, Error)]
#[error("{0}")]
pub struct Invalid(String);

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

pub fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if matches!(cause.downcast_ref::<RemeshError>(), Some(RemeshError::Divergence { .. }))
            || matches!(cause.downcast_ref::<TrainError>(), Some(TrainError::Divergence { .. }))
        {
            return 3;
        }
    }
    for cause in e.chain() {
        let validation = cause.is::<Invalid>()
            || cause.is::<MeshError>()
            || cause.is::<ConfigError>()
            || matches!(
                cause.downcast_ref::<ObjError>(),
                Some(ObjError::Parse { .. } | ObjError::NonTriangle { .. } | ObjError::IndexOutOfRange { .. } | ObjError::Mesh(_))
            )
            || matches!(
                cause.downcast_ref::<SynthError>(),
                Some(SynthError::StartLevel { .. } | SynthError::Steps(_) | SynthError::Chain { .. })
            )
            || matches!(
                cause.downcast_ref::<RemeshError>(),
                Some(RemeshError::InvalidConfig(_) | RemeshError::EmptySamples)
            )
            || matches!(
                cause.downcast_ref::<TrainError>(),
                Some(TrainError::InvalidConfig(_) | TrainError::ConnectivityMismatch { .. })
            )
            || matches!(
                cause.downcast_ref::<CheckpointError>(),
                Some(CheckpointError::BadMagic | CheckpointError::Corrupt(_) | CheckpointError::Chain(_))
            );
        if validation {
            return 2;
        }
    }
    1
}

/// Settings from `--config` plus the flags of this invocation; flags win.
struct Settings {
    cfg: KvConfig,
    seed: u64,
    out: PathBuf,
}

impl Settings {
    fn resolve(global: &GlobalArgs) -> Result<Self> {
        let cfg = match &global.config {
            Some(p) => KvConfig::load(p).with_context(|| format!("reading config {}", p.display()))?,
            None => KvConfig::new(),
        };
        let seed = match global.seed {
            Some(s) => s,
            None => cfg.get("run", "seed")?.unwrap_or(0),
        };
        let deterministic = global.deterministic || cfg.get("run", "deterministic")?.unwrap_or(false);
        let out = global.out.clone().unwrap_or_else(|| PathBuf::from("meshtex_out"));
        crate::configure_threads(deterministic);
        let mut s = Self { cfg, seed, out };
        s.cfg.set("run", "seed", seed).set("run", "deterministic", deterministic);
        Ok(s)
    }

    fn path(&mut self, flag: Option<PathBuf>, section: &str, key: &str) -> Result<PathBuf> {
        let p = match flag {
            Some(p) => p,
            None => self
                .cfg
                .get_str(section, key)
                .map(PathBuf::from)
                .ok_or_else(|| invalid(format!("missing --{} (or [{section}] {key})", key.replace('_', "-"))))?,
        };
        let abs = std::path::absolute(&p).unwrap_or(p);
        self.cfg.set(section, key, abs.display());
        Ok(abs)
    }

    fn value<T>(&mut self, flag: Option<T>, section: &str, key: &str, default: T) -> Result<T>
    where
        T: std::str::FromStr + std::fmt::Display + Clone,
        T::Err: std::fmt::Display,
    {
        let v = match flag {
            Some(v) => v,
            None => self.cfg.get(section, key)?.unwrap_or(default),
        };
        self.cfg.set(section, key, v.clone());
        Ok(v)
    }

    fn manifest(&self, command: &str) -> RunManifest {
        RunManifest::new(command, self.cfg.clone())
    }
}

fn write_mesh(path: &Path, mesh: &Mesh) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    write_atomic(path, write_obj_string(mesh).as_bytes()).with_context(|| format!("writing {}", path.display()))
}

fn read_mesh(path: &Path) -> Result<Mesh> {
    load_obj(path).with_context(|| format!("loading {}", path.display()))
}

fn template_mesh(name: &str) -> Result<Mesh> {
    match name {
        "icosahedron" => Ok(shapes::icosahedron()),
        "torus" => Ok(shapes::torus(1.0, 0.4, 12, 8)),
        other => match other.strip_prefix("obj:") {
            Some(path) => read_mesh(Path::new(path)),
            None => Err(invalid(format!(
                "unknown template {other:?}; expected icosahedron, torus or obj:PATH"
            ))),
        },
    }
}

#[derive(Debug, Args)]
pub struct RemeshArgs {
    /// Reference mesh (OBJ).
    #[arg(long, value_name = "PATH")]
    reference: Option<PathBuf>,
    /// icosahedron, torus or obj:PATH.
    #[arg(long, value_name = "SPEC")]
    template: Option<String>,
    /// Number of pyramid levels.
    #[arg(long, value_name = "K")]
    levels: Option<usize>,
}

pub fn remesh(global: &GlobalArgs, args: RemeshArgs) -> Result<()> {
    let mut s = Settings::resolve(global)?;
    let reference_path = s.path(args.reference, "remesh", "reference")?;
    let template_name = s.value(args.template, "remesh", "template", "icosahedron".to_string())?;
    let mut fit = FitConfig::from_config(&s.cfg, "fit")?;
    if let Some(k) = args.levels {
        fit.levels = k;
    }
    fit.write_config(&mut s.cfg, "fit");

    let reference = read_mesh(&reference_path)?;
    let template = place_template(&template_mesh(&template_name)?, &reference)?;
    info!(
        "fitting {} levels of {template_name} ({} faces) to {}",
        fit.levels,
        template.face_count(),
        reference_path.display()
    );
    let pyramid = match build_multiscale(&template, &reference, &fit, s.seed, &template_name) {
        Ok(p) => p,
        Err(RemeshError::Divergence { iter, last_finite }) => {
            let path = s.out.join("diverged.obj");
            write_mesh(&path, &last_finite)?;
            warn!("last finite iterate written to {}", path.display());
            return Err(RemeshError::Divergence { iter, last_finite }.into());
        }
        Err(e) => return Err(e.into()),
    };
    pyramid.save(&s.out)?;

    let mut m = s.manifest("remesh");
    m.input("reference", &reference_path);
    for k in 0..pyramid.level_count() {
        m.output(&format!("level_{k}"), &s.out.join(format!("level_{k}.obj")));
    }
    for (k, r) in pyramid.final_records().iter().enumerate() {
        m.metric(&format!("level_{k}_chamfer"), r.chamfer);
        m.metric(&format!("level_{k}_faces"), pyramid.levels[k].face_count());
    }
    m.write(&s.out)?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory written by `remesh`.
    #[arg(long, value_name = "DIR")]
    pyramid: Option<PathBuf>,
    /// Train only the coarsest K pyramid levels.
    #[arg(long, value_name = "K")]
    levels: Option<usize>,
    /// Training log destination (default: OUT/train_log.csv).
    #[arg(long, value_name = "PATH")]
    log_csv: Option<PathBuf>,
}

fn write_log(path: &Path, rows: &[TrainLogRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TRAIN_LOG_HEADER)?;
    for r in rows {
        w.write_record(r.csv_fields())?;
    }
    let bytes = w.into_inner().map_err(|e| anyhow!("{e}"))?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    write_atomic(path, &bytes).with_context(|| format!("writing {}", path.display()))
}

pub fn train(global: &GlobalArgs, args: TrainArgs) -> Result<()> {
    let mut s = Settings::resolve(global)?;
    let pyramid_dir = s.path(args.pyramid, "train", "pyramid")?;
    let mut pyramid = MultiscalePyramid::load(&pyramid_dir).with_context(|| format!("loading {}", pyramid_dir.display()))?;
    let available = pyramid.level_count();
    let levels = s.value(args.levels, "train", "levels", available)?;
    if levels < 2 || levels > available {
        return Err(invalid(format!("--levels must lie in 2..={available}")));
    }
    pyramid.levels.truncate(levels);
    let mut config = TrainConfig::from_config(&s.cfg, "train")?;
    config.seed = s.seed;
    config.write_config(&mut s.cfg, "train");
    let log_path = args.log_csv.unwrap_or_else(|| s.out.join("train_log.csv"));

    std::fs::create_dir_all(&s.out).with_context(|| format!("creating {}", s.out.display()))?;
    let mut rows = Vec::new();
    let out_dir = s.out.clone();
    let result = train_hierarchy(&pyramid, &config, &mut |r| rows.push(*r), &mut |level| {
        save_checkpoint(&out_dir, &level.checkpoint, &config).map_err(TrainError::from)
    });
    write_log(&log_path, &rows)?;
    let outcome = result?;

    let mut m = s.manifest("train");
    m.input("pyramid", &pyramid_dir);
    m.output("log_csv", &log_path);
    for l in &outcome.levels {
        let k = l.checkpoint.level;
        m.output(&format!("level_{k}"), &meshtex::checkpoint::checkpoint_path(&s.out, k));
        m.metric(&format!("level_{k}_recon_mse"), l.final_recon_mse);
        m.metric(&format!("level_{k}_faces"), pyramid.levels[k].face_count());
    }
    m.write(&s.out)?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    /// Directory of `level_{k}.ckpt` files.
    #[arg(long, value_name = "DIR")]
    checkpoints: Option<PathBuf>,
    /// Target mesh (OBJ); any closed manifold.
    #[arg(long, value_name = "PATH")]
    target: Option<PathBuf>,
    /// First generator level to apply, counted from 1.
    #[arg(long, value_name = "K")]
    start_level: Option<usize>,
}

pub fn synthesize(global: &GlobalArgs, args: SynthesizeArgs) -> Result<()> {
    let mut s = Settings::resolve(global)?;
    let ck_dir = s.path(args.checkpoints, "synthesize", "checkpoints")?;
    let target_path = s.path(args.target, "synthesize", "target")?;
    let start = s.value(args.start_level, "synthesize", "start_level", 2)?;
    let chain = load_chain(&ck_dir)?;
    let target = read_mesh(&target_path)?;
    let out = run_synthesis(&chain, &target, start, s.seed)?;
    let path = s.out.join("synthesized.obj");
    write_mesh(&path, &out)?;
    info!("wrote {} ({} faces)", path.display(), out.face_count());

    let mut m = s.manifest("synthesize");
    m.input("checkpoints", &ck_dir);
    m.input("target", &target_path);
    m.output("mesh", &path);
    m.metric("faces", out.face_count());
    m.metric("genus", out.stats().genus);
    m.write(&s.out)?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct InterpolateArgs {
    #[arg(long, value_name = "DIR")]
    checkpoints: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    target: Option<PathBuf>,
    #[arg(long, value_name = "K")]
    start_level: Option<usize>,
    /// Latent at the first frame (default: --seed).
    #[arg(long, value_name = "N")]
    seed_a: Option<u64>,
    /// Latent at the last frame (default: --seed + 1).
    #[arg(long, value_name = "N")]
    seed_b: Option<u64>,
    /// Number of frames, endpoints included.
    #[arg(long, value_name = "N")]
    steps: Option<usize>,
}

pub fn interpolate(global: &GlobalArgs, args: InterpolateArgs) -> Result<()> {
    let mut s = Settings::resolve(global)?;
    let ck_dir = s.path(args.checkpoints, "interpolate", "checkpoints")?;
    let target_path = s.path(args.target, "interpolate", "target")?;
    let start = s.value(args.start_level, "interpolate", "start_level", 2)?;
    let seed_a = s.value(args.seed_a, "interpolate", "seed_a", s.seed)?;
    let seed_b = s.value(args.seed_b, "interpolate", "seed_b", s.seed.wrapping_add(1))?;
    let steps = s.value(args.steps, "interpolate", "steps", 5)?;
    let chain = load_chain(&ck_dir)?;
    let target = read_mesh(&target_path)?;
    let frames = interpolate_latents(&chain, &target, start, seed_a, seed_b, steps)?;

    let mut m = s.manifest("interpolate");
    m.input("checkpoints", &ck_dir);
    m.input("target", &target_path);
    for (i, f) in frames.iter().enumerate() {
        let path = s.out.join(format!("frame_{i:03}.obj"));
        write_mesh(&path, f)?;
        m.output(&format!("frame_{i:03}"), &path);
    }
    m.metric("frames", frames.len());
    m.metric("faces", frames[0].face_count());
    m.write(&s.out)?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct SubdivideArgs {
    #[arg(long, value_name = "PATH")]
    input: Option<PathBuf>,
    /// Number of 1-to-4 splits.
    #[arg(long, value_name = "N")]
    times: Option<usize>,
    /// Keep the mean edge length of the input.
    #[arg(long)]
    rescale: bool,
}

pub fn subdivide(global: &GlobalArgs, args: SubdivideArgs) -> Result<()> {
    let mut s = Settings::resolve(global)?;
    let input = s.path(args.input, "subdivide", "input")?;
    let times = s.value(args.times, "subdivide", "times", 1)?;
    let rescale = args.rescale || s.cfg.get("subdivide", "rescale")?.unwrap_or(false);
    s.cfg.set("subdivide", "rescale", rescale);
    let mut mesh = read_mesh(&input)?;
    for _ in 0..times {
        mesh = uniform_subdivide(&mesh, rescale).0;
    }
    let path = s.out.join("subdivided.obj");
    write_mesh(&path, &mesh)?;

    let mut m = s.manifest("subdivide");
    m.input("input", &input);
    m.output("mesh", &path);
    m.metric("faces", mesh.face_count());
    m.write(&s.out)?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// Mesh to inspect (OBJ).
    #[arg(value_name = "PATH")]
    input: PathBuf,
}

fn print_stats(mesh: &Mesh) {
    let st = mesh.stats();
    println!("vertices = {}", st.vertices);
    println!("edges = {}", st.edges);
    println!("faces = {}", st.faces);
    println!("euler_characteristic = {}", st.euler_characteristic);
    println!("genus = {}", st.genus);
    println!("mean_edge_length = {}", mesh.mean_edge_length());
    println!("surface_area = {}", mesh.total_area());
}

fn inspect(global: &GlobalArgs, args: InspectArgs, command: &str) -> Result<()> {
    let mut s = Settings::resolve(global)?;
    let path = s.path(Some(args.input), command, "input")?;
    let mesh = match load_obj(&path) {
        Ok(m) => m,
        Err(e) => {
            println!("valid = false");
            bail!(anyhow::Error::new(e).context(format!("{} is not a valid closed manifold", path.display())));
        }
    };
    if command == "validate" {
        println!("valid = true");
    }
    print_stats(&mesh);
    if global.out.is_some() {
        let mut m = s.manifest(command);
        m.input("input", &path);
        m.metric("faces", mesh.face_count());
        m.metric("genus", mesh.stats().genus);
        m.write(&s.out)?;
    }
    Ok(())
}

pub fn validate(global: &GlobalArgs, args: InspectArgs) -> Result<()> {
    inspect(global, args, "validate")
}

pub fn stats(global: &GlobalArgs, args: InspectArgs) -> Result<()> {
    inspect(global, args, "stats")
}
