//! Closed, consistently oriented triangle meshes.
//!
//! A [`Mesh`] owns its vertex positions and shares an immutable
//! [`Topology`] (faces, face adjacency and the undirected edge list) so that
//! meshes differing only in geometry can be produced cheaply.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("face {face} references vertex {index}, but the mesh has {count} vertices")]
    IndexOutOfRange { face: usize, index: usize, count: usize },
    #[error("face {face} repeats a vertex: {indices:?}")]
    RepeatedVertex { face: usize, indices: [usize; 3] },
    #[error("edge ({0}, {1}) is shared by {2} faces; expected exactly 2")]
    NonManifoldEdge(usize, usize, usize),
    #[error("edge ({0}, {1}) lies on an open boundary; only closed meshes are supported")]
    BoundaryEdge(usize, usize),
    #[error("edge ({0}, {1}) has the same direction in both incident faces")]
    InconsistentWinding(usize, usize),
    #[error("vertex {0} is not referenced by any face")]
    IsolatedVertex(usize),
    #[error("mesh has no faces")]
    Empty,
    #[error("vertex {0} has a non-finite coordinate")]
    NonFinite(usize),
    #[error("all edges have zero length")]
    ZeroEdgeLength,
    #[error("mesh surface has zero area")]
    ZeroArea,
    #[error("vertex count mismatch: expected {expected}, got {got}")]
    VertexCount { expected: usize, got: usize },
}

/// Connectivity of a closed manifold triangle mesh.
///
/// `adjacency[f][k]` is the face across edge `k` of face `f`, where edge `k`
/// runs from corner `k` to corner `(k + 1) % 3`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    faces: Vec<[usize; 3]>,
    adjacency: Vec<[usize; 3]>,
    edges: Vec<[usize; 2]>,
    vertex_count: usize,
}

impl Topology {
    pub fn new(vertex_count: usize, faces: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        if faces.is_empty() {
            return Err(MeshError::Empty);
        }
        let mut used = vec![false; vertex_count];
        for (fi, face) in faces.iter().enumerate() {
            for &v in face {
                if v >= vertex_count {
                    return Err(MeshError::IndexOutOfRange {
                        face: fi,
                        index: v,
                        count: vertex_count,
                    });
                }
                used[v] = true;
            }
            if face[0] == face[1] || face[1] == face[2] || face[2] == face[0] {
                return Err(MeshError::RepeatedVertex {
                    face: fi,
                    indices: *face,
                });
            }
        }
        if let Some(v) = used.iter().position(|u| !u) {
            return Err(MeshError::IsolatedVertex(v));
        }

        // undirected edge -> list of (face, slot)
        let mut incident: HashMap<[usize; 2], Vec<(usize, usize)>> =
            HashMap::with_capacity(faces.len() * 3 / 2);
        let mut edges = Vec::with_capacity(faces.len() * 3 / 2);
        for (fi, face) in faces.iter().enumerate() {
            for k in 0..3 {
                let key = edge_key(face[k], face[(k + 1) % 3]);
                let entry = incident.entry(key).or_insert_with(|| {
                    edges.push(key);
                    Vec::with_capacity(2)
                });
                entry.push((fi, k));
            }
        }

        let mut adjacency = vec![[usize::MAX; 3]; faces.len()];
        for key in &edges {
            let inc = &incident[key];
            match inc.len() {
                1 => return Err(MeshError::BoundaryEdge(key[0], key[1])),
                2 => {}
                n => return Err(MeshError::NonManifoldEdge(key[0], key[1], n)),
            }
            let (fa, ka) = inc[0];
            let (fb, kb) = inc[1];
            if faces[fa][ka] == faces[fb][kb] {
                return Err(MeshError::InconsistentWinding(key[0], key[1]));
            }
            adjacency[fa][ka] = fb;
            adjacency[fb][kb] = fa;
        }

        Ok(Self {
            faces,
            adjacency,
            edges,
            vertex_count,
        })
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn adjacency(&self) -> &[[usize; 3]] {
        &self.adjacency
    }

    /// Undirected edges as sorted vertex pairs, in first-encounter order.
    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.vertex_count as i64 - self.edges.len() as i64 + self.faces.len() as i64
    }

    /// Number of incident faces per vertex.
    pub fn vertex_face_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.vertex_count];
        for face in &self.faces {
            for &v in face {
                counts[v] += 1;
            }
        }
        counts
    }

    /// One-ring vertex neighbours of every vertex, sorted.
    pub fn vertex_neighbors(&self) -> Vec<Vec<usize>> {
        let mut ring = vec![Vec::new(); self.vertex_count];
        for &[a, b] in &self.edges {
            ring[a].push(b);
            ring[b].push(a);
        }
        for r in &mut ring {
            r.sort_unstable();
        }
        ring
    }
}

pub(crate) fn edge_key(a: usize, b: usize) -> [usize; 2] {
    if a < b {
        [a, b]
    } else {
        [b, a]
    }
}

/// A point drawn on a mesh surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceSample {
    pub position: Point3<f64>,
    pub normal: Vector3<f64>,
    pub face_index: usize,
    pub barycentric: [f64; 3],
}

/// Vertex, edge and face counts plus the topological invariants they imply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MeshStats {
    pub vertices: usize,
    pub edges: usize,
    pub faces: usize,
    pub euler_characteristic: i64,
    pub genus: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    vertices: Vec<Point3<f64>>,
    topology: Arc<Topology>,
}

impl Mesh {
    pub fn new(vertices: Vec<Point3<f64>>, faces: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        let topology = Topology::new(vertices.len(), faces)?;
        Self::from_topology(vertices, Arc::new(topology))
    }

    pub fn from_topology(
        vertices: Vec<Point3<f64>>,
        topology: Arc<Topology>,
    ) -> Result<Self, MeshError> {
        if vertices.len() != topology.vertex_count() {
            return Err(MeshError::VertexCount {
                expected: topology.vertex_count(),
                got: vertices.len(),
            });
        }
        if let Some(i) = vertices
            .iter()
            .position(|p| !p.coords.iter().all(|c| c.is_finite()))
        {
            return Err(MeshError::NonFinite(i));
        }
        Ok(Self { vertices, topology })
    }

    /// Same connectivity, new positions.
    pub fn with_vertices(&self, vertices: Vec<Point3<f64>>) -> Result<Self, MeshError> {
        Self::from_topology(vertices, Arc::clone(&self.topology))
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        self.topology.faces()
    }

    pub fn adjacency(&self) -> &[[usize; 3]] {
        self.topology.adjacency()
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        self.topology.edges()
    }

    pub fn topology(&self) -> &Arc<Topology> {
        &self.topology
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.topology.face_count()
    }

    pub fn corners(&self, face: usize) -> [Point3<f64>; 3] {
        let [a, b, c] = self.faces()[face];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Unnormalized face normal; its length is twice the face area.
    pub fn face_cross(&self, face: usize) -> Vector3<f64> {
        let [a, b, c] = self.corners(face);
        (b - a).cross(&(c - a))
    }

    pub fn face_area(&self, face: usize) -> f64 {
        0.5 * self.face_cross(face).norm()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.face_count()).map(|f| self.face_area(f)).sum()
    }

    pub fn edge_lengths(&self) -> Vec<f64> {
        self.edges()
            .iter()
            .map(|&[a, b]| (self.vertices[b] - self.vertices[a]).norm())
            .collect()
    }

    pub fn mean_edge_length(&self) -> f64 {
        let lengths = self.edge_lengths();
        lengths.iter().sum::<f64>() / lengths.len() as f64
    }

    pub fn centroid(&self) -> Point3<f64> {
        let sum = self
            .vertices
            .iter()
            .fold(Vector3::zeros(), |acc, p| acc + p.coords);
        Point3::from(sum / self.vertices.len() as f64)
    }

    /// Uniform scale about the vertex centroid.
    pub fn scaled_about_centroid(&self, factor: f64) -> Mesh {
        let c = self.centroid();
        let vertices = self
            .vertices
            .iter()
            .map(|p| c + (p - c) * factor)
            .collect();
        Mesh {
            vertices,
            topology: Arc::clone(&self.topology),
        }
    }

    pub fn stats(&self) -> MeshStats {
        mesh_stats(self)
    }
}

pub fn mesh_stats(mesh: &Mesh) -> MeshStats {
    let chi = mesh.topology.euler_characteristic();
    MeshStats {
        vertices: mesh.vertex_count(),
        edges: mesh.topology.edge_count(),
        faces: mesh.face_count(),
        euler_characteristic: chi,
        genus: (2 - chi) / 2,
    }
}

/// Scale about the centroid so that the mean undirected edge length is one.
pub fn normalize_mean_edge(mesh: &Mesh) -> Result<Mesh, MeshError> {
    let mean = mesh.mean_edge_length();
    if mean <= 0.0 || !mean.is_finite() {
        return Err(MeshError::ZeroEdgeLength);
    }
    Ok(mesh.scaled_about_centroid(1.0 / mean))
}

/// Move the vertex centroid to the origin and scale to unit mean edge
/// length.
pub fn normalize_centered(mesh: &Mesh) -> Result<Mesh, MeshError> {
    let scaled = normalize_mean_edge(mesh)?;
    let c = scaled.centroid().coords;
    let vertices = scaled.vertices.iter().map(|p| p - c).collect();
    scaled.with_vertices(vertices)
}

/// Area-weighted uniform samples; deterministic in `seed`.
pub fn sample_surface(mesh: &Mesh, count: usize, seed: u64) -> Result<Vec<SurfaceSample>, MeshError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_surface_with(mesh, count, &mut rng)
}

pub fn sample_surface_with<R: Rng>(
    mesh: &Mesh,
    count: usize,
    rng: &mut R,
) -> Result<Vec<SurfaceSample>, MeshError> {
    sample_triangles(mesh.vertices(), mesh.faces(), count, rng)
}

/// Area-weighted sampling over an arbitrary triangle list (no manifold
/// requirement).
pub fn sample_triangles<R: Rng>(
    vertices: &[Point3<f64>],
    faces: &[[usize; 3]],
    count: usize,
    rng: &mut R,
) -> Result<Vec<SurfaceSample>, MeshError> {
    let crosses: Vec<Vector3<f64>> = faces
        .iter()
        .map(|&[a, b, c]| (vertices[b] - vertices[a]).cross(&(vertices[c] - vertices[a])))
        .collect();
    let mut cumulative = Vec::with_capacity(crosses.len());
    let mut total = 0.0;
    for c in &crosses {
        total += c.norm();
        cumulative.push(total);
    }
    if total <= 0.0 || !total.is_finite() {
        return Err(MeshError::ZeroArea);
    }

    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let target = rng.gen::<f64>() * total;
        let face = cumulative
            .partition_point(|&c| c <= target)
            .min(cumulative.len() - 1);
        let r1: f64 = rng.gen::<f64>().sqrt();
        let r2: f64 = rng.gen();
        let bary = [1.0 - r1, r1 * (1.0 - r2), r1 * r2];
        let [a, b, c] = faces[face].map(|i| vertices[i]);
        let position =
            Point3::from(a.coords * bary[0] + b.coords * bary[1] + c.coords * bary[2]);
        let n = crosses[face];
        let len = n.norm();
        let normal = if len > 0.0 { n / len } else { Vector3::z() };
        out.push(SurfaceSample {
            position,
            normal,
            face_index: face,
            barycentric: bary,
        });
    }
    Ok(out)
}
