//! Per-edge local frames and the rigid-invariant face features built on
//! them.
//!
//! For face `(v0, v1, v2)`, edge `k` runs from `v_k` to `v_{k+1}` and its
//! opposite vertex is `v_{k+2}`. The frame of edge `k` sits at the edge
//! midpoint with `x` along the edge, `z` along the face normal and
//! `y = z × x`. Feature row `k` is the edge length followed by the vertex of
//! the neighbouring face across edge `k` that does not lie on the edge,
//! expressed in that frame. The `z` entry therefore carries the fold between
//! the two faces, and the rows of all faces determine the mesh up to a rigid
//! motion.

use nalgebra::{Point3, Vector3};
use thiserror::Error;

use crate::mesh::Mesh;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("face {face} has a zero-length edge {edge}")]
    ZeroLengthEdge { face: usize, edge: usize },
    #[error("face {0} has zero area")]
    ZeroAreaFace(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeFrame {
    pub origin: Point3<f64>,
    pub x_axis: Vector3<f64>,
    pub y_axis: Vector3<f64>,
    pub z_axis: Vector3<f64>,
}

impl EdgeFrame {
    /// Coordinates of `p` in this frame.
    pub fn local(&self, p: &Point3<f64>) -> Vector3<f64> {
        let d = p - self.origin;
        Vector3::new(d.dot(&self.x_axis), d.dot(&self.y_axis), d.dot(&self.z_axis))
    }

    /// World-space direction of a local vector.
    pub fn to_world(&self, local: &Vector3<f64>) -> Vector3<f64> {
        self.x_axis * local.x + self.y_axis * local.y + self.z_axis * local.z
    }
}

/// Per-face 3×4 feature matrices, row `k` belonging to edge `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceFeatureTensor {
    rows: Vec<[[f64; 4]; 3]>,
}

impl FaceFeatureTensor {
    pub fn face(&self, f: usize) -> &[[f64; 4]; 3] {
        &self.rows[f]
    }

    pub fn face_count(&self) -> usize {
        self.rows.len()
    }

    /// Row-major `(3F) × 4` layout: face `f` edge `k` at row `3f + k`.
    pub fn flatten(&self) -> Vec<f64> {
        self.rows
            .iter()
            .flat_map(|face| face.iter().flat_map(|row| row.iter().copied()))
            .collect()
    }

    pub fn max_abs_diff(&self, other: &FaceFeatureTensor) -> f64 {
        self.flatten()
            .iter()
            .zip(other.flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

pub fn face_frames(mesh: &Mesh, face: usize) -> Result<[EdgeFrame; 3], FeatureError> {
    let corners = mesh.corners(face);
    let cross = (corners[1] - corners[0]).cross(&(corners[2] - corners[0]));
    let area2 = cross.norm();
    if area2 <= 0.0 || !area2.is_finite() {
        for k in 0..3 {
            if corners[k] == corners[(k + 1) % 3] {
                return Err(FeatureError::ZeroLengthEdge { face, edge: k });
            }
        }
        return Err(FeatureError::ZeroAreaFace(face));
    }
    let normal = cross / area2;
    let frame = |k: usize| -> Result<EdgeFrame, FeatureError> {
        let (a, b) = (corners[k], corners[(k + 1) % 3]);
        let edge = b - a;
        let len = edge.norm();
        if len <= 0.0 {
            return Err(FeatureError::ZeroLengthEdge { face, edge: k });
        }
        let x_axis = edge / len;
        Ok(EdgeFrame {
            origin: Point3::from((a.coords + b.coords) * 0.5),
            x_axis,
            y_axis: normal.cross(&x_axis),
            z_axis: normal,
        })
    };
    Ok([frame(0)?, frame(1)?, frame(2)?])
}

pub fn edge_frames(mesh: &Mesh) -> Result<Vec<[EdgeFrame; 3]>, FeatureError> {
    (0..mesh.face_count()).map(|f| face_frames(mesh, f)).collect()
}

/// For every face and edge slot, the vertex of the adjacent face that is not
/// on the shared edge.
pub fn neighbor_opposite_vertices(mesh: &Mesh) -> Vec<[usize; 3]> {
    let faces = mesh.faces();
    mesh.adjacency()
        .iter()
        .enumerate()
        .map(|(f, adj)| {
            let mut out = [0; 3];
            for k in 0..3 {
                let (a, b) = (faces[f][k], faces[f][(k + 1) % 3]);
                out[k] = *faces[adj[k]]
                    .iter()
                    .find(|&&v| v != a && v != b)
                    .expect("adjacent face shares exactly one edge");
            }
            out
        })
        .collect()
}

pub fn extract_features(mesh: &Mesh) -> Result<FaceFeatureTensor, FeatureError> {
    let frames = edge_frames(mesh)?;
    let opposite = neighbor_opposite_vertices(mesh);
    let rows = frames
        .iter()
        .enumerate()
        .map(|(f, fr)| {
            let corners = mesh.corners(f);
            let mut s = [[0.0; 4]; 3];
            for k in 0..3 {
                let len = (corners[(k + 1) % 3] - corners[k]).norm();
                let local = fr[k].local(&mesh.vertices()[opposite[f][k]]);
                s[k] = [len, local.x, local.y, local.z];
            }
            s
        })
        .collect();
    Ok(FaceFeatureTensor { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes;
    use nalgebra::{Rotation3, Unit};
    use std::collections::VecDeque;

    fn rigid(mesh: &Mesh, axis: Vector3<f64>, angle: f64, t: Vector3<f64>) -> Mesh {
        let r = Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle);
        mesh.with_vertices(mesh.vertices().iter().map(|p| r * p + t).collect())
            .unwrap()
    }

    #[test]
    fn equilateral_frame_by_hand() {
        // embed the equilateral face ABC as face 0 of a closed mesh
        let h = 3f64.sqrt() / 2.0;
        let v = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.5, h, 0.0),
            Point3::new(0.5, h / 3.0, -0.8),
        ];
        let mesh = Mesh::new(v, vec![[0, 1, 2], [0, 3, 1], [1, 3, 2], [2, 3, 0]]).unwrap();
        let fr = face_frames(&mesh, 0).unwrap()[0];
        assert!((fr.origin - Point3::new(0.5, 0.0, 0.0)).norm() < 1e-15);
        assert!((fr.x_axis - Vector3::x()).norm() < 1e-15);
        assert!((fr.y_axis - Vector3::y()).norm() < 1e-15);
        assert!((fr.z_axis - Vector3::z()).norm() < 1e-15);
    }

    #[test]
    fn frames_are_orthonormal_and_equivariant() {
        let mesh = shapes::bumpy_sphere(1, 0.2, 5.0);
        let axis = Vector3::new(0.3, -1.0, 0.5);
        let moved = rigid(&mesh, axis, 1.1, Vector3::new(2.0, -3.0, 0.5));
        let r = Rotation3::from_axis_angle(&Unit::new_normalize(axis), 1.1);
        for (fa, fb) in edge_frames(&mesh).unwrap().iter().zip(edge_frames(&moved).unwrap()) {
            for (a, b) in fa.iter().zip(fb.iter()) {
                for ax in [a.x_axis, a.y_axis, a.z_axis] {
                    assert!((ax.norm() - 1.0).abs() < 1e-12);
                }
                assert!(a.x_axis.dot(&a.y_axis).abs() < 1e-12);
                assert!(a.x_axis.dot(&a.z_axis).abs() < 1e-12);
                assert!((a.z_axis.cross(&a.x_axis) - a.y_axis).norm() < 1e-12);
                assert!((r * a.x_axis - b.x_axis).norm() < 1e-12);
                assert!((r * a.y_axis - b.y_axis).norm() < 1e-12);
                assert!((r * a.origin + Vector3::new(2.0, -3.0, 0.5) - b.origin).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn degenerate_face_is_rejected() {
        let tet = shapes::tetrahedron();
        let mut v = tet.vertices().to_vec();
        v[1] = v[0];
        let squashed = tet.with_vertices(v).unwrap();
        assert!(matches!(
            extract_features(&squashed),
            Err(FeatureError::ZeroLengthEdge { .. })
        ));
    }

    #[test]
    fn tetrahedron_rows() {
        // the neighbour's apex is the fourth vertex, which sits at height
        // sqrt(2/3) above the face centroid, i.e. sqrt(3)/6 from each edge
        // midpoint along the in-plane bisector
        let feats = extract_features(&shapes::tetrahedron()).unwrap();
        let expected = [1.0, 0.0, 3f64.sqrt() / 6.0, -(6f64.sqrt()) / 3.0];
        for f in 0..4 {
            for row in feats.face(f) {
                for (a, b) in row.iter().zip(expected) {
                    assert!((a - b).abs() < 1e-12, "{row:?}");
                }
            }
        }
    }

    #[test]
    fn rigid_motion_leaves_features_unchanged() {
        let mesh = shapes::bumpy_sphere(1, 0.2, 5.0);
        let moved = rigid(&mesh, Vector3::new(1.0, 2.0, -0.3), 2.3, Vector3::new(-4.0, 0.1, 9.0));
        let a = extract_features(&mesh).unwrap();
        let b = extract_features(&moved).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-6);
    }

    #[test]
    fn mirroring_flips_the_fold_column() {
        let tet = shapes::bumpy_sphere(0, 0.2, 3.0);
        let mirrored = tet
            .with_vertices(tet.vertices().iter().map(|p| Point3::new(-p.x, p.y, p.z)).collect())
            .unwrap();
        let a = extract_features(&tet).unwrap();
        let b = extract_features(&mirrored).unwrap();
        for f in 0..a.face_count() {
            for k in 0..3 {
                let (ra, rb) = (a.face(f)[k], b.face(f)[k]);
                assert!((ra[0] - rb[0]).abs() < 1e-12);
                assert!((ra[1] - rb[1]).abs() < 1e-12);
                assert!((ra[2] - rb[2]).abs() < 1e-12);
                assert!((ra[3] + rb[3]).abs() < 1e-12);
                assert!(ra[3].abs() > 1e-3);
            }
        }
    }

    #[test]
    fn scaling_doubles_every_entry() {
        let mesh = shapes::bumpy_sphere(1, 0.15, 4.0);
        let a = extract_features(&mesh).unwrap().flatten();
        let b = extract_features(&mesh.scaled_about_centroid(2.0)).unwrap().flatten();
        for (x, y) in a.iter().zip(b) {
            assert!((2.0 * x - y).abs() < 1e-12 * (1.0 + x.abs()));
        }
    }

    /// Breadth-first unfold: place the seed face, then recover each
    /// neighbour's free vertex from the current face's frames and rows.
    fn unfold(mesh: &Mesh, feats: &FaceFeatureTensor, seed: usize) -> Vec<Option<Point3<f64>>> {
        let mut pos = vec![None; mesh.vertex_count()];
        for &v in &mesh.faces()[seed] {
            pos[v] = Some(mesh.vertices()[v]);
        }
        let mut visited = vec![false; mesh.face_count()];
        visited[seed] = true;
        let mut queue = VecDeque::from([seed]);
        while let Some(f) = queue.pop_front() {
            let c = mesh.faces()[f].map(|v| pos[v].expect("face placed before expansion"));
            let n = (c[1] - c[0]).cross(&(c[2] - c[0])).normalize();
            for (k, &nb) in mesh.adjacency()[f].iter().enumerate() {
                if visited[nb] {
                    continue;
                }
                let (a, b) = (c[k], c[(k + 1) % 3]);
                let x = (b - a).normalize();
                let y = n.cross(&x);
                let origin = Point3::from((a.coords + b.coords) * 0.5);
                let row = feats.face(f)[k];
                let free = *mesh.faces()[nb]
                    .iter()
                    .find(|&&v| v != mesh.faces()[f][k] && v != mesh.faces()[f][(k + 1) % 3])
                    .unwrap();
                if pos[free].is_none() {
                    pos[free] = Some(origin + x * row[1] + y * row[2] + n * row[3]);
                }
                visited[nb] = true;
                queue.push_back(nb);
            }
        }
        pos
    }

    #[test]
    fn features_reproduce_the_mesh_from_one_face() {
        let mesh = shapes::bumpy_sphere(2, 0.2, 5.0);
        let feats = extract_features(&mesh).unwrap();
        for seed in [0, 17, 200] {
            let pos = unfold(&mesh, &feats, seed);
            for (p, q) in pos.iter().zip(mesh.vertices()) {
                assert!((p.unwrap() - q).norm() < 1e-5);
            }
        }
    }
}
