//! Fitting a subdivided template to a reference surface, level by level,
//! to produce the multiscale training meshes.

use std::path::Path;
use std::rc::Rc;

use log::{debug, info, warn};
use nalgebra::{Point3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::autodiff::{Adam, AdamConfig, AutodiffError, Tape, Tensor, Var};
use crate::config::{write_atomic, ConfigError, KvConfig};
use crate::mesh::{sample_surface_with, Mesh, MeshError, SurfaceSample};
use crate::net::{mesh_from_tensor, vertices_tensor};
use crate::nn_search::PointIndex;
use crate::obj::{load_obj, write_obj_string, ObjError};
use crate::subdivision::uniform_subdivide;
use crate::derive_seed;

/// Added under the square root of the differentiable point distance.
pub const DISTANCE_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum RemeshError {
    #[error("empty sample set")]
    EmptySamples,
    #[error("invalid fit configuration: {0}")]
    InvalidConfig(String),
    #[error("loss became non-finite at iteration {iter}")]
    Divergence { iter: usize, last_finite: Box<Mesh> },
    #[error("template and reference connectivity differ in kind: {0}")]
    Topology(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Obj(#[from] ObjError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub samples_per_side: usize,
    pub iters_per_level: usize,
    pub learning_rate: f64,
    pub weight_normal: f64,
    pub weight_uniform: f64,
    pub weight_smooth: f64,
    pub levels: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            samples_per_side: 5000,
            iters_per_level: 1000,
            learning_rate: 5e-3,
            weight_normal: 0.1,
            weight_uniform: 1.0,
            weight_smooth: 0.5,
            levels: 5,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), RemeshError> {
        let bad = |m: &str| Err(RemeshError::InvalidConfig(m.to_string()));
        if self.samples_per_side == 0 || self.iters_per_level == 0 || self.levels == 0 {
            return bad("sample, iteration and level counts must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        for w in [self.weight_normal, self.weight_uniform, self.weight_smooth] {
            if !(w.is_finite() && w >= 0.0) {
                return bad("weights must be finite and non-negative");
            }
        }
        Ok(())
    }

    pub fn from_config(cfg: &KvConfig, section: &str) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        cfg.read_into(section, "samples_per_side", &mut c.samples_per_side)?;
        cfg.read_into(section, "iters_per_level", &mut c.iters_per_level)?;
        cfg.read_into(section, "learning_rate", &mut c.learning_rate)?;
        cfg.read_into(section, "weight_normal", &mut c.weight_normal)?;
        cfg.read_into(section, "weight_uniform", &mut c.weight_uniform)?;
        cfg.read_into(section, "weight_smooth", &mut c.weight_smooth)?;
        cfg.read_into(section, "levels", &mut c.levels)?;
        Ok(c)
    }

    pub fn write_config(&self, cfg: &mut KvConfig, section: &str) {
        cfg.set(section, "samples_per_side", self.samples_per_side)
            .set(section, "iters_per_level", self.iters_per_level)
            .set(section, "learning_rate", self.learning_rate)
            .set(section, "weight_normal", self.weight_normal)
            .set(section, "weight_uniform", self.weight_uniform)
            .set(section, "weight_smooth", self.weight_smooth)
            .set(section, "levels", self.levels);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChamferTerms {
    /// Mean nearest-neighbour distance, summed over both directions.
    pub distance: f64,
    /// Mean negative normal cosine of matched pairs, summed over both
    /// directions.
    pub normal: f64,
    /// `distance + weight_normal * normal`.
    pub total: f64,
}

fn points_of(samples: &[SurfaceSample]) -> Vec<Point3<f64>> {
    samples.iter().map(|s| s.position).collect()
}

fn direction_terms(from: &[SurfaceSample], to: &[SurfaceSample], nearest: &[usize]) -> (f64, f64) {
    let mut dist = 0.0;
    let mut cos = 0.0;
    for (s, &j) in from.iter().zip(nearest) {
        dist += (s.position - to[j].position).norm();
        cos -= s.normal.dot(&to[j].normal);
    }
    let n = from.len() as f64;
    (dist / n, cos / n)
}

fn combine(ab: (f64, f64), ba: (f64, f64), weight_normal: f64) -> ChamferTerms {
    let distance = ab.0 + ba.0;
    let normal = ab.1 + ba.1;
    ChamferTerms {
        distance,
        normal,
        total: distance + weight_normal * normal,
    }
}

/// Bidirectional Chamfer distance with a normal-agreement term.
pub fn chamfer_normal_loss(
    a: &[SurfaceSample],
    b: &[SurfaceSample],
    weight_normal: f64,
) -> Result<ChamferTerms, RemeshError> {
    if a.is_empty() || b.is_empty() {
        return Err(RemeshError::EmptySamples);
    }
    let nn_ab = PointIndex::new(points_of(b)).nearest_all(&points_of(a));
    let nn_ba = PointIndex::new(points_of(a)).nearest_all(&points_of(b));
    Ok(combine(
        direction_terms(a, b, &nn_ab),
        direction_terms(b, a, &nn_ba),
        weight_normal,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regularizers {
    /// Variance of the undirected edge lengths.
    pub uniform: f64,
    /// Mean distance of each vertex from the average of its one-ring.
    pub smooth: f64,
}

pub fn regularizers(mesh: &Mesh) -> Regularizers {
    let lengths = mesh.edge_lengths();
    let n = lengths.len() as f64;
    let mean = lengths.iter().sum::<f64>() / n;
    let uniform = lengths.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / n;
    let verts = mesh.vertices();
    let smooth = mesh
        .topology()
        .vertex_neighbors()
        .iter()
        .enumerate()
        .map(|(v, ring)| {
            let avg = ring.iter().fold(Vector3::zeros(), |acc, &j| acc + verts[j].coords) / ring.len() as f64;
            (verts[v].coords - avg).norm()
        })
        .sum::<f64>()
        / verts.len() as f64;
    Regularizers { uniform, smooth }
}

/// Connectivity-dependent index arrays for the differentiable objective.
struct ObjectiveIndex {
    edge_a: Rc<[usize]>,
    edge_b: Rc<[usize]>,
    inv_valence: Rc<Tensor<f64>>,
    vertex_count: usize,
}

impl ObjectiveIndex {
    fn new(mesh: &Mesh) -> Self {
        let edges = mesh.edges();
        let mut valence = vec![0usize; mesh.vertex_count()];
        for &[a, b] in edges {
            valence[a] += 1;
            valence[b] += 1;
        }
        Self {
            edge_a: edges.iter().map(|e| e[0]).collect(),
            edge_b: edges.iter().map(|e| e[1]).collect(),
            inv_valence: Rc::new(Tensor::from_fn(valence.len(), 3, |v, _| 1.0 / valence[v] as f64)),
            vertex_count: mesh.vertex_count(),
        }
    }
}

fn uniform_graph<'t>(verts: Var<'t, f64>, index: &ObjectiveIndex) -> Result<Var<'t, f64>, AutodiffError> {
    let a = verts.gather_rows(Rc::clone(&index.edge_a))?;
    let b = verts.gather_rows(Rc::clone(&index.edge_b))?;
    let lengths = b.sub(a)?.row_norm(0.0);
    let mean = lengths.mean_all().expand(lengths.shape())?;
    Ok(lengths.sub(mean)?.square().mean_all())
}

fn smooth_graph<'t>(verts: Var<'t, f64>, index: &ObjectiveIndex) -> Result<Var<'t, f64>, AutodiffError> {
    let a = verts.gather_rows(Rc::clone(&index.edge_a))?;
    let b = verts.gather_rows(Rc::clone(&index.edge_b))?;
    let ring_sum = b
        .scatter_add_rows(Rc::clone(&index.edge_a), index.vertex_count)?
        .add(a.scatter_add_rows(Rc::clone(&index.edge_b), index.vertex_count)?)?;
    let ring_avg = ring_sum.mul_const(Rc::clone(&index.inv_valence))?;
    Ok(verts.sub(ring_avg)?.row_norm(DISTANCE_EPS).mean_all())
}

/// Sample positions and unit face normals as functions of the vertices.
fn sample_graph<'t>(
    verts: Var<'t, f64>,
    mesh: &Mesh,
    samples: &[SurfaceSample],
) -> Result<(Var<'t, f64>, Var<'t, f64>), AutodiffError> {
    let corner = |c: usize| -> Rc<[usize]> { samples.iter().map(|s| mesh.faces()[s.face_index][c]).collect() };
    let weight = |c: usize| Rc::new(Tensor::from_fn(samples.len(), 3, |r, _| samples[r].barycentric[c]));
    let a = verts.gather_rows(corner(0))?;
    let b = verts.gather_rows(corner(1))?;
    let c = verts.gather_rows(corner(2))?;
    let points = a
        .mul_const(weight(0))?
        .add(b.mul_const(weight(1))?)?
        .add(c.mul_const(weight(2))?)?;
    let normals = b.sub(a)?.cross3(c.sub(a)?)?.normalize_rows()?;
    Ok((points, normals))
}

fn matched(samples: &[SurfaceSample], idx: &[usize]) -> (Tensor<f64>, Tensor<f64>) {
    let pos = Tensor::from_fn(idx.len(), 3, |r, c| samples[idx[r]].position[c]);
    let nrm = Tensor::from_fn(idx.len(), 3, |r, c| samples[idx[r]].normal[c]);
    (pos, nrm)
}

/// One evaluation of the fitting objective on the current mesh.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitRecord {
    pub iter: usize,
    pub chamfer: f64,
    pub normal: f64,
    pub uniform: f64,
    pub smooth: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Lowest-loss iterate.
    pub mesh: Mesh,
    pub log: Vec<FitRecord>,
    pub best_iter: usize,
}

impl FitResult {
    pub fn best(&self) -> &FitRecord {
        &self.log[self.best_iter]
    }
}

/// Optimize the vertex positions of `current` toward `reference`, keeping
/// connectivity. Runs `iters_per_level` Adam steps; the objective is also
/// evaluated after the final step, and the best evaluated iterate is
/// returned.
pub fn fit_level(current: &Mesh, reference: &Mesh, config: &FitConfig, seed: u64) -> Result<FitResult, RemeshError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let index = ObjectiveIndex::new(current);
    let mut verts = vertices_tensor::<f64>(current);
    let mut mesh = current.clone();
    let mut adam = Adam::new(
        AdamConfig {
            lr: config.learning_rate,
            ..Default::default()
        },
        [&verts],
    );
    let mut log = Vec::with_capacity(config.iters_per_level + 1);
    let mut best: Option<(f64, usize, Mesh)> = None;
    let n = config.samples_per_side;

    for iter in 0..=config.iters_per_level {
        let diverged = |mesh: &Mesh, best: &Option<(f64, usize, Mesh)>| RemeshError::Divergence {
            iter,
            last_finite: Box::new(best.as_ref().map_or(mesh.clone(), |b| b.2.clone())),
        };
        let own = match sample_surface_with(&mesh, n, &mut rng) {
            Ok(s) => s,
            Err(MeshError::ZeroArea) => return Err(diverged(&mesh, &best)),
            Err(e) => return Err(e.into()),
        };
        let target = sample_surface_with(reference, n, &mut rng)?;
        let nn_ab = PointIndex::new(points_of(&target)).nearest_all(&points_of(&own));
        let nn_ba = PointIndex::new(points_of(&own)).nearest_all(&points_of(&target));
        let terms = combine(
            direction_terms(&own, &target, &nn_ab),
            direction_terms(&target, &own, &nn_ba),
            config.weight_normal,
        );
        let reg = regularizers(&mesh);
        let total = terms.total + config.weight_uniform * reg.uniform + config.weight_smooth * reg.smooth;
        if !total.is_finite() {
            return Err(diverged(&mesh, &best));
        }
        log.push(FitRecord {
            iter,
            chamfer: terms.distance,
            normal: terms.normal,
            uniform: reg.uniform,
            smooth: reg.smooth,
            total,
        });
        if best.as_ref().is_none_or(|b| total < b.0) {
            best = Some((total, iter, mesh.clone()));
        }
        if iter % 100 == 0 {
            debug!("fit iter {iter}: chamfer {:.5} total {:.5}", terms.distance, total);
        }
        if iter == config.iters_per_level {
            break;
        }

        let tape = Tape::new();
        let v = tape.param(verts.clone());
        let (pts, nrm) = sample_graph(v, &mesh, &own)?;
        let (t_pos, t_nrm) = matched(&target, &nn_ab);
        let d_ab = pts.sub(tape.constant(t_pos))?.row_norm(DISTANCE_EPS).mean_all();
        let c_ab = nrm.row_dot(tape.constant(t_nrm))?.mean_all();
        let back: Rc<[usize]> = nn_ba.into();
        let t_all = tape.constant(Tensor::from_fn(target.len(), 3, |r, c| target[r].position[c]));
        let tn_all = tape.constant(Tensor::from_fn(target.len(), 3, |r, c| target[r].normal[c]));
        let d_ba = pts.gather_rows(Rc::clone(&back))?.sub(t_all)?.row_norm(DISTANCE_EPS).mean_all();
        let c_ba = nrm.gather_rows(back)?.row_dot(tn_all)?.mean_all();
        let chamfer = d_ab.add(d_ba)?.sub(c_ab.add(c_ba)?.scale(config.weight_normal))?;
        let loss = chamfer
            .add(uniform_graph(v, &index)?.scale(config.weight_uniform))?
            .add(smooth_graph(v, &index)?.scale(config.weight_smooth))?;
        let grads = tape.backward(loss, &[v])?;
        if !grads[0].all_finite() {
            return Err(diverged(&mesh, &best));
        }
        adam.step(&mut [&mut verts], &grads);
        mesh = match mesh_from_tensor(&mesh, &verts) {
            Ok(m) => m,
            Err(_) => return Err(diverged(&mesh, &best)),
        };
    }

    let (_, best_iter, mesh) = best.expect("at least one evaluation");
    Ok(FitResult { mesh, log, best_iter })
}

/// Translate `template` to the reference's vertex centroid and scale it to
/// the reference's surface area.
pub fn place_template(template: &Mesh, reference: &Mesh) -> Result<Mesh, MeshError> {
    let scale = (reference.total_area() / template.total_area()).sqrt();
    let (tc, rc) = (template.centroid(), reference.centroid());
    let verts = template.vertices().iter().map(|p| rc + (p - tc) * scale).collect();
    template.with_vertices(verts)
}

pub fn mesh_hash(mesh: &Mesh) -> String {
    let digest = Sha256::digest(write_obj_string(mesh).as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone)]
pub struct MultiscalePyramid {
    /// The template as it entered level 0.
    pub template: Mesh,
    /// Fitted meshes, coarsest first.
    pub levels: Vec<Mesh>,
    pub logs: Vec<Vec<FitRecord>>,
    pub config: FitConfig,
    pub seed: u64,
    pub template_name: String,
    pub reference_hash: String,
}

pub const PYRAMID_MANIFEST: &str = "pyramid.manifest";

impl MultiscalePyramid {
    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    /// Best logged loss record of each level.
    pub fn final_records(&self) -> Vec<FitRecord> {
        self.logs
            .iter()
            .map(|log| {
                *log.iter()
                    .min_by(|a, b| a.total.total_cmp(&b.total))
                    .expect("non-empty log")
            })
            .collect()
    }

    pub fn manifest(&self) -> KvConfig {
        let mut cfg = KvConfig::new();
        cfg.set("pyramid", "template", &self.template_name)
            .set("pyramid", "levels", self.levels.len())
            .set("pyramid", "seed", self.seed)
            .set("pyramid", "reference_hash", &self.reference_hash)
            .set("pyramid", "losses", "losses.csv");
        self.config.write_config(&mut cfg, "fit");
        cfg
    }

    /// Write `template.obj`, `level_{k}.obj`, `losses.csv`, `fit_log.csv`
    /// and the manifest into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), RemeshError> {
        let io = |path: &Path| {
            let path = path.display().to_string();
            move |source| RemeshError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let put = |name: &str, text: String| {
            let p = dir.join(name);
            write_atomic(&p, text.as_bytes()).map_err(io(&p))
        };
        put("template.obj", write_obj_string(&self.template))?;
        for (k, m) in self.levels.iter().enumerate() {
            put(&format!("level_{k}.obj"), write_obj_string(m))?;
        }
        let mut losses = String::from("level,best_iter,chamfer,normal,uniform,smooth,total\n");
        for (k, r) in self.final_records().iter().enumerate() {
            losses.push_str(&format!(
                "{k},{},{},{},{},{},{}\n",
                r.iter, r.chamfer, r.normal, r.uniform, r.smooth, r.total
            ));
        }
        put("losses.csv", losses)?;
        let mut full = String::from("level,iter,chamfer,normal,uniform,smooth,total\n");
        for (k, log) in self.logs.iter().enumerate() {
            for r in log {
                full.push_str(&format!(
                    "{k},{},{},{},{},{},{}\n",
                    r.iter, r.chamfer, r.normal, r.uniform, r.smooth, r.total
                ));
            }
        }
        put("fit_log.csv", full)?;
        self.manifest().save(&dir.join(PYRAMID_MANIFEST))?;
        Ok(())
    }

    /// Load meshes and settings written by [`MultiscalePyramid::save`].
    /// Fit logs are not reloaded.
    pub fn load(dir: &Path) -> Result<Self, RemeshError> {
        let cfg = KvConfig::load(&dir.join(PYRAMID_MANIFEST))?;
        let count: usize = cfg
            .get("pyramid", "levels")?
            .ok_or_else(|| RemeshError::InvalidConfig("manifest lacks [pyramid] levels".into()))?;
        let template = load_obj(dir.join("template.obj"))?;
        let levels = (0..count)
            .map(|k| load_obj(dir.join(format!("level_{k}.obj"))))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            template,
            levels,
            logs: vec![Vec::new(); count],
            config: FitConfig::from_config(&cfg, "fit")?,
            seed: cfg.get("pyramid", "seed")?.unwrap_or(0),
            template_name: cfg.get_str("pyramid", "template").unwrap_or("unknown").to_string(),
            reference_hash: cfg.get_str("pyramid", "reference_hash").unwrap_or("").to_string(),
        })
    }
}

/// Fit the template, then repeatedly subdivide and refit, producing
/// `config.levels` meshes. The reference is used only for fitting.
pub fn build_multiscale(
    template: &Mesh,
    reference: &Mesh,
    config: &FitConfig,
    seed: u64,
    template_name: &str,
) -> Result<MultiscalePyramid, RemeshError> {
    config.validate()?;
    if config.levels < 2 {
        return Err(RemeshError::InvalidConfig("a pyramid needs at least 2 levels".into()));
    }
    let (tg, rg) = (template.stats().genus, reference.stats().genus);
    if tg != rg {
        warn!("template genus {tg} differs from reference genus {rg}; the fit cannot be faithful");
    }
    let mut levels = Vec::with_capacity(config.levels);
    let mut logs = Vec::with_capacity(config.levels);
    let mut current = template.clone();
    for level in 0..config.levels {
        if level > 0 {
            current = uniform_subdivide(&current, false).0;
        }
        let fit = fit_level(&current, reference, config, derive_seed(seed, level as u64))?;
        info!(
            "level {level}: {} faces, chamfer {:.5} -> {:.5}",
            fit.mesh.face_count(),
            fit.log[0].chamfer,
            fit.best().chamfer
        );
        current = fit.mesh;
        levels.push(current.clone());
        logs.push(fit.log);
    }
    Ok(MultiscalePyramid {
        template: template.clone(),
        levels,
        logs,
        config: *config,
        seed,
        template_name: template_name.to_string(),
        reference_hash: mesh_hash(reference),
    })
}

#[cfg(test)]
mod tests;
