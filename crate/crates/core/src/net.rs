//! Face-convolutional generator and critic.
//!
//! Both networks share one layer stack: a face feature embedding (a linear
//! map of each of the three feature rows followed by a row-wise max), then
//! symmetric face convolutions over each face and its three neighbours.
//! Every layer but the last is followed by instance normalization over the
//! faces of the mesh and a leaky rectifier.
//!
//! Face `f`, edge slot `k` always occupies row `3f + k` of the per-edge
//! tensors built here.

use std::rc::Rc;

use nalgebra::Point3;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::autodiff::{lit, AutodiffError, Real, Tape, Tensor, Var};
use crate::features::{edge_frames, extract_features, neighbor_opposite_vertices, FeatureError};
use crate::mesh::{Mesh, MeshError, Topology};

pub const LEAKY_SLOPE: f64 = 0.2;
pub const NORM_EPS: f64 = 1e-5;
pub const FEATURES_PER_EDGE: usize = 4;
/// Initial value of the generator's learned output multiplier.
pub const OUTPUT_SCALE_INIT: f64 = 0.1;

#[derive(Debug, Error)]
pub enum NetError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("noise has shape {got:?}, expected {expected:?}")]
    NoiseShape { expected: [usize; 2], got: [usize; 2] },
    #[error("network expects {expected} input features, found {got}")]
    InputWidth { expected: usize, got: usize },
}

/// Hidden width used at a (0-based) hierarchy level.
pub fn embed_dim_for_level(level: usize) -> usize {
    match level {
        0 => 32,
        1 => 64,
        _ => 128,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetworkConfig {
    pub num_layers: usize,
    pub embed_dim: usize,
    pub output_dim: usize,
}

impl NetworkConfig {
    pub fn generator(level: usize) -> Self {
        Self {
            num_layers: 7,
            embed_dim: embed_dim_for_level(level),
            output_dim: 3,
        }
    }

    pub fn discriminator(level: usize) -> Self {
        Self {
            num_layers: 7,
            embed_dim: embed_dim_for_level(level),
            output_dim: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormParams<T> {
    pub scale: Tensor<T>,
    pub shift: Tensor<T>,
}

/// Weights of one layer. The embedding layer has no `w_f`; the output head
/// has no normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub w_s: Tensor<T>,
    pub w_f: Option<Tensor<T>>,
    pub bias: Tensor<T>,
    pub norm: Option<NormParams<T>>,
}

impl<T: Real> LayerParams<T> {
    fn init<R: Rng>(input: usize, output: usize, embedding: bool, head: bool, rng: &mut R) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let mut uniform = |r, c| Tensor::from_fn(r, c, |_, _| lit(rng.gen_range(-bound..bound)));
        let w_s = uniform(input, output);
        let w_f = (!embedding).then(|| uniform(input, output));
        let bias = uniform(1, output);
        let norm = (!head).then(|| NormParams {
            scale: Tensor::filled(1, output, T::one()),
            shift: Tensor::zeros(1, output),
        });
        Self {
            w_s,
            w_f,
            bias,
            norm,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_s.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.w_s.cols()
    }

    fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut out = vec![&self.w_s];
        out.extend(self.w_f.as_ref());
        out.push(&self.bias);
        if let Some(n) = &self.norm {
            out.push(&n.scale);
            out.push(&n.shift);
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = vec![&mut self.w_s];
        out.extend(self.w_f.as_mut());
        out.push(&mut self.bias);
        if let Some(n) = &mut self.norm {
            out.push(&mut n.scale);
            out.push(&mut n.shift);
        }
        out
    }
}

/// Layer weights bound to a tape.
#[derive(Debug, Clone, Copy)]
pub struct LayerVars<'t, T: Real> {
    pub w_s: Var<'t, T>,
    pub w_f: Option<Var<'t, T>>,
    pub bias: Var<'t, T>,
    pub norm: Option<(Var<'t, T>, Var<'t, T>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    pub layers: Vec<LayerParams<T>>,
}

impl<T: Real> Network<T> {
    pub fn new<R: Rng>(config: NetworkConfig, rng: &mut R) -> Self {
        assert!(config.num_layers >= 2, "a network needs an embedding and a head");
        let d = config.embed_dim;
        let mut layers = Vec::with_capacity(config.num_layers);
        layers.push(LayerParams::init(FEATURES_PER_EDGE, d, true, false, rng));
        for _ in 1..config.num_layers - 1 {
            layers.push(LayerParams::init(d, d, false, false, rng));
        }
        layers.push(LayerParams::init(d, config.output_dim, false, true, rng));
        Self { layers }
    }

    pub fn config(&self) -> NetworkConfig {
        NetworkConfig {
            num_layers: self.layers.len(),
            embed_dim: self.layers[0].output_dim(),
            output_dim: self.layers.last().map_or(0, |l| l.output_dim()),
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        self.layers.iter().flat_map(|l| l.tensors()).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers.iter_mut().flat_map(|l| l.tensors_mut()).collect()
    }

    /// Put every weight on `tape`, as parameters or as constants.
    pub fn bind<'t>(&self, tape: &'t Tape<T>, trainable: bool) -> Vec<LayerVars<'t, T>> {
        let leaf = |t: &Tensor<T>| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        self.layers
            .iter()
            .map(|l| LayerVars {
                w_s: leaf(&l.w_s),
                w_f: l.w_f.as_ref().map(leaf),
                bias: leaf(&l.bias),
                norm: l.norm.as_ref().map(|n| (leaf(&n.scale), leaf(&n.shift))),
            })
            .collect()
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    w_s: l.w_s.cast(),
                    w_f: l.w_f.as_ref().map(|w| w.cast()),
                    bias: l.bias.cast(),
                    norm: l.norm.as_ref().map(|n| NormParams {
                        scale: n.scale.cast(),
                        shift: n.shift.cast(),
                    }),
                })
                .collect(),
        }
    }
}

/// Flatten bound layers in the same order as [`Network::tensors`].
pub fn layer_vars_flat<'t, T: Real>(layers: &[LayerVars<'t, T>]) -> Vec<Var<'t, T>> {
    let mut out = Vec::new();
    for l in layers {
        out.push(l.w_s);
        out.extend(l.w_f);
        out.push(l.bias);
        if let Some((s, b)) = l.norm {
            out.push(s);
            out.push(b);
        }
    }
    out
}

/// Index arrays describing one connectivity, shared by every forward pass
/// on meshes with that connectivity.
#[derive(Debug, Clone)]
pub struct FaceIndex {
    pub face_count: usize,
    pub vertex_count: usize,
    /// Per edge row: start and end vertex of the edge.
    pub edge_start: Rc<[usize]>,
    pub edge_end: Rc<[usize]>,
    /// Per edge row: the face's own vertex opposite the edge (receives the
    /// decoded displacement).
    pub own_opposite: Rc<[usize]>,
    /// Per edge row: the neighbouring face's vertex off the shared edge.
    pub neighbor_opposite: Rc<[usize]>,
    /// Per edge row: the neighbouring face.
    pub neighbor_face: Rc<[usize]>,
    /// Per edge row: the owning face.
    pub face_of_row: Rc<[usize]>,
    pub corners: [Rc<[usize]>; 3],
    /// `1 / (incident faces)` per vertex, repeated over 3 columns.
    pub inv_vertex_degree: Rc<Tensor<f64>>,
}

impl FaceIndex {
    pub fn new(mesh: &Mesh) -> Self {
        let faces = mesh.faces();
        let nb_opp = neighbor_opposite_vertices(mesh);
        let rows = 3 * faces.len();
        let mut edge_start = Vec::with_capacity(rows);
        let mut edge_end = Vec::with_capacity(rows);
        let mut own_opposite = Vec::with_capacity(rows);
        let mut neighbor_opposite = Vec::with_capacity(rows);
        let mut neighbor_face = Vec::with_capacity(rows);
        let mut face_of_row = Vec::with_capacity(rows);
        for (f, face) in faces.iter().enumerate() {
            for k in 0..3 {
                edge_start.push(face[k]);
                edge_end.push(face[(k + 1) % 3]);
                own_opposite.push(face[(k + 2) % 3]);
                neighbor_opposite.push(nb_opp[f][k]);
                neighbor_face.push(mesh.adjacency()[f][k]);
                face_of_row.push(f);
            }
        }
        let corner = |c: usize| -> Rc<[usize]> { faces.iter().map(|f| f[c]).collect() };
        let counts = mesh.topology().vertex_face_counts();
        let inv_vertex_degree = Tensor::from_fn(counts.len(), 3, |v, _| 1.0 / counts[v] as f64);
        Self {
            face_count: faces.len(),
            vertex_count: mesh.vertex_count(),
            edge_start: edge_start.into(),
            edge_end: edge_end.into(),
            own_opposite: own_opposite.into(),
            neighbor_opposite: neighbor_opposite.into(),
            neighbor_face: neighbor_face.into(),
            face_of_row: face_of_row.into(),
            corners: [corner(0), corner(1), corner(2)],
            inv_vertex_degree: Rc::new(inv_vertex_degree),
        }
    }

    pub fn matches(&self, topology: &Topology) -> bool {
        self.face_count == topology.face_count() && self.vertex_count == topology.vertex_count()
    }
}

fn one_hot<T: Real>(rows: usize, cols: usize, at: usize) -> Tensor<T> {
    Tensor::from_fn(rows, cols, |r, c| if r * cols + c == at { T::one() } else { T::zero() })
}

/// Place `m × 1` columns side by side.
fn stack_columns<'t, T: Real>(tape: &'t Tape<T>, columns: &[Var<'t, T>]) -> Result<Var<'t, T>, AutodiffError> {
    let n = columns.len();
    let mut acc: Option<Var<'t, T>> = None;
    for (j, c) in columns.iter().enumerate() {
        let placed = c.matmul(tape.constant(one_hot(1, n, j)))?;
        acc = Some(match acc {
            Some(a) => a.add(placed)?,
            None => placed,
        });
    }
    Ok(acc.expect("at least one column"))
}

/// Differentiable edge features and frame axes from vertex positions
/// (`n × 3`). Returns the `3F × 4` features.
pub fn features_graph<'t, T: Real>(
    verts: Var<'t, T>,
    index: &FaceIndex,
) -> Result<Var<'t, T>, AutodiffError> {
    let tape = verts.tape();
    let p0 = verts.gather_rows(Rc::clone(&index.edge_start))?;
    let p1 = verts.gather_rows(Rc::clone(&index.edge_end))?;
    let q = verts.gather_rows(Rc::clone(&index.neighbor_opposite))?;

    let a = verts.gather_rows(Rc::clone(&index.corners[0]))?;
    let b = verts.gather_rows(Rc::clone(&index.corners[1]))?;
    let c = verts.gather_rows(Rc::clone(&index.corners[2]))?;
    let normal = b.sub(a)?.cross3(c.sub(a)?)?.normalize_rows()?;
    let z = normal.gather_rows(Rc::clone(&index.face_of_row))?;

    let edge = p1.sub(p0)?;
    let length = edge.square().sum_cols().sqrt();
    let x = edge.normalize_rows()?;
    let y = z.cross3(x)?;
    let mid = p0.add(p1)?.scale(lit(0.5));
    let d = q.sub(mid)?;
    stack_columns(tape, &[length, d.row_dot(x)?, d.row_dot(y)?, d.row_dot(z)?])
}

/// `rowmax(S W + b)` per face; `s` is `3F × 4`.
pub fn face_embedding<'t, T: Real>(s: Var<'t, T>, layer: &LayerVars<'t, T>) -> Result<Var<'t, T>, AutodiffError> {
    let rows = s.matmul(layer.w_s)?.add_row(layer.bias)?;
    Ok(rows.group_max(3)?.0)
}

/// Symmetric face convolution before normalization:
/// `rowmax(N W_S + f W_f + b)` where `N` stacks the three neighbour
/// embeddings of each face.
pub fn face_conv<'t, T: Real>(
    h: Var<'t, T>,
    index: &FaceIndex,
    layer: &LayerVars<'t, T>,
) -> Result<Var<'t, T>, AutodiffError> {
    let w_f = layer.w_f.expect("convolution layer has a self weight");
    let neighbors = h.gather_rows(Rc::clone(&index.neighbor_face))?.matmul(layer.w_s)?;
    let own = h.matmul(w_f)?.add_row(layer.bias)?;
    let rows = neighbors.add(own.gather_rows(Rc::clone(&index.face_of_row))?)?;
    Ok(rows.group_max(3)?.0)
}

/// Instance normalization with learned affine, then the leaky rectifier.
pub fn norm_act<'t, T: Real>(h: Var<'t, T>, layer: &LayerVars<'t, T>) -> Result<Var<'t, T>, AutodiffError> {
    match layer.norm {
        Some((scale, shift)) => Ok(h
            .instance_norm(lit(NORM_EPS))?
            .mul_row(scale)?
            .add_row(shift)?
            .leaky_relu(lit(LEAKY_SLOPE))),
        None => Ok(h),
    }
}

/// Run the whole stack on `3F × 4` features; returns `F × output_dim`.
pub fn network_graph<'t, T: Real>(
    layers: &[LayerVars<'t, T>],
    features: Var<'t, T>,
    index: &FaceIndex,
) -> Result<Var<'t, T>, AutodiffError> {
    let mut h = norm_act(face_embedding(features, &layers[0])?, &layers[0])?;
    for layer in &layers[1..] {
        h = norm_act(face_conv(h, index, layer)?, layer)?;
    }
    Ok(h)
}

pub fn vertices_tensor<T: Real>(mesh: &Mesh) -> Tensor<T> {
    Tensor::from_fn(mesh.vertex_count(), 3, |v, c| lit(mesh.vertices()[v][c]))
}

pub fn mesh_from_tensor<T: Real>(like: &Mesh, verts: &Tensor<T>) -> Result<Mesh, MeshError> {
    let points = (0..verts.rows())
        .map(|v| {
            let r = verts.row(v);
            Point3::new(
                r[0].to_f64().unwrap_or(f64::NAN),
                r[1].to_f64().unwrap_or(f64::NAN),
                r[2].to_f64().unwrap_or(f64::NAN),
            )
        })
        .collect();
    like.with_vertices(points)
}

/// I.i.d. Gaussian noise, one 3-vector per vertex.
pub fn gaussian_noise<T: Real, R: Rng>(vertices: usize, sigma: f64, rng: &mut R) -> Tensor<T> {
    let normal = Normal::new(0.0, sigma.max(0.0)).expect("finite sigma");
    Tensor::from_fn(vertices, 3, |_, _| lit(normal.sample(rng)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator<T> {
    pub net: Network<T>,
    /// `1 × 1` multiplier on the raw per-face output.
    pub output_scale: Tensor<T>,
}

impl<T: Real> Generator<T> {
    pub fn new<R: Rng>(config: NetworkConfig, rng: &mut R) -> Self {
        Self {
            net: Network::new(config, rng),
            output_scale: Tensor::scalar(lit(OUTPUT_SCALE_INIT)),
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut t = self.net.tensors();
        t.push(&self.output_scale);
        t
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut t = self.net.tensors_mut();
        t.push(&mut self.output_scale);
        t
    }

    pub fn bind<'t>(&self, tape: &'t Tape<T>, trainable: bool) -> BoundGenerator<'t, T> {
        let layers = self.net.bind(tape, trainable);
        let output_scale = if trainable {
            tape.param(self.output_scale.clone())
        } else {
            tape.constant(self.output_scale.clone())
        };
        BoundGenerator { layers, output_scale }
    }

    pub fn cast<U: Real>(&self) -> Generator<U> {
        Generator {
            net: self.net.cast(),
            output_scale: self.output_scale.cast(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BoundGenerator<'t, T: Real> {
    pub layers: Vec<LayerVars<'t, T>>,
    pub output_scale: Var<'t, T>,
}

impl<'t, T: Real> BoundGenerator<'t, T> {
    pub fn params(&self) -> Vec<Var<'t, T>> {
        let mut p = layer_vars_flat(&self.layers);
        p.push(self.output_scale);
        p
    }
}

/// Network input derived from a (noisy) mesh: features and frame axes,
/// computed in double precision.
#[derive(Debug, Clone)]
pub struct GeneratorInput<T> {
    pub features: Tensor<T>,
    /// `3F × 3` frame axes per edge row.
    pub axes: [Rc<Tensor<T>>; 3],
}

impl<T: Real> GeneratorInput<T> {
    pub fn new(noisy: &Mesh) -> Result<Self, FeatureError> {
        let feats = extract_features(noisy)?;
        let features = Tensor::new(3 * feats.face_count(), FEATURES_PER_EDGE, feats.flatten().into_iter().map(lit).collect())
            .expect("3 rows of 4 features per face");
        let frames = edge_frames(noisy)?;
        let axis = |which: usize| {
            Rc::new(Tensor::from_fn(3 * frames.len(), 3, |r, c| {
                let fr = frames[r / 3][r % 3];
                let v = match which {
                    0 => fr.x_axis,
                    1 => fr.y_axis,
                    _ => fr.z_axis,
                };
                lit(v[c])
            }))
        };
        Ok(Self {
            features,
            axes: [axis(0), axis(1), axis(2)],
        })
    }
}

/// Add noise to the clean vertices and build the network input.
pub fn noisy_input<T: Real>(clean: &Mesh, noise: &Tensor<T>) -> Result<GeneratorInput<T>, NetError> {
    let expected = [clean.vertex_count(), 3];
    if noise.shape() != expected {
        return Err(NetError::NoiseShape {
            expected,
            got: noise.shape(),
        });
    }
    let points = clean
        .vertices()
        .iter()
        .enumerate()
        .map(|(v, p)| {
            let r = noise.row(v);
            Point3::new(
                p.x + r[0].to_f64().unwrap_or(0.0),
                p.y + r[1].to_f64().unwrap_or(0.0),
                p.z + r[2].to_f64().unwrap_or(0.0),
            )
        })
        .collect();
    Ok(GeneratorInput::new(&clean.with_vertices(points)?)?)
}

/// Per-vertex displacement (`n × 3`): each face's output is mapped through
/// the frame of edge `k` and assigned to the vertex opposite that edge, then
/// contributions are averaged per vertex.
pub fn generator_displacement<'t, T: Real>(
    gen: &BoundGenerator<'t, T>,
    input: &GeneratorInput<T>,
    index: &FaceIndex,
) -> Result<Var<'t, T>, AutodiffError> {
    let tape = gen.output_scale.tape();
    let feats = tape.constant(input.features.clone());
    let raw = network_graph(&gen.layers, feats, index)?;
    let u = raw.mul(gen.output_scale.expand(raw.shape())?)?;
    let per_row = u.gather_rows(Rc::clone(&index.face_of_row))?;
    let mut world: Option<Var<'t, T>> = None;
    for (j, axis) in input.axes.iter().enumerate() {
        let coef = per_row.matmul(tape.constant(one_hot(3, 1, j)))?.broadcast_cols(3)?;
        let term = coef.mul_const(Rc::clone(axis))?;
        world = Some(match world {
            Some(w) => w.add(term)?,
            None => term,
        });
    }
    let summed = world
        .expect("three axes")
        .scatter_add_rows(Rc::clone(&index.own_opposite), index.vertex_count)?;
    summed.mul_const(Rc::new(index.inv_vertex_degree.cast()))
}

/// Generated vertex positions `clean + displacement(clean + noise)`.
pub fn generator_graph<'t, T: Real>(
    gen: &BoundGenerator<'t, T>,
    clean: &Mesh,
    noise: &Tensor<T>,
    index: &FaceIndex,
) -> Result<Var<'t, T>, NetError> {
    let input = noisy_input(clean, noise)?;
    let tape = gen.output_scale.tape();
    let disp = generator_displacement(gen, &input, index)?;
    Ok(tape.constant(vertices_tensor(clean)).add(disp)?)
}

/// Inference: displaced copy of `mesh`.
pub fn generator_forward<T: Real>(gen: &Generator<T>, mesh: &Mesh, noise: &Tensor<T>) -> Result<Mesh, NetError> {
    let tape = Tape::new();
    let bound = gen.bind(&tape, false);
    let index = FaceIndex::new(mesh);
    let out = generator_graph(&bound, mesh, noise, &index)?;
    Ok(mesh_from_tensor(mesh, &out.value())?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator<T> {
    pub net: Network<T>,
}

impl<T: Real> Discriminator<T> {
    pub fn new<R: Rng>(config: NetworkConfig, rng: &mut R) -> Self {
        Self {
            net: Network::new(config, rng),
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        self.net.tensors()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.net.tensors_mut()
    }

    pub fn cast<U: Real>(&self) -> Discriminator<U> {
        Discriminator { net: self.net.cast() }
    }
}

/// Per-face critic scores (`F × 1`) for vertex positions `verts`.
pub fn critic_graph<'t, T: Real>(
    layers: &[LayerVars<'t, T>],
    verts: Var<'t, T>,
    index: &FaceIndex,
) -> Result<Var<'t, T>, AutodiffError> {
    let feats = features_graph(verts, index)?;
    network_graph(layers, feats, index)
}

/// Per-face critic scores of a mesh.
pub fn discriminator_forward<T: Real>(disc: &Discriminator<T>, mesh: &Mesh) -> Result<Vec<T>, NetError> {
    let tape = Tape::new();
    let layers = disc.net.bind(&tape, false);
    let index = FaceIndex::new(mesh);
    let verts = tape.constant(vertices_tensor(mesh));
    let scores = critic_graph(&layers, verts, &index)?;
    let out = scores.value().data().to_vec();
    Ok(out)
}
