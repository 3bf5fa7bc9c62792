//! Uniform 1-to-4 midpoint subdivision.
//!
//! Connectivity of the refined mesh depends only on the input connectivity:
//! edge midpoints are appended after the original vertices in the order of
//! [`Topology::edges`], and each parent `(v0, v1, v2)` emits the children
//! `(v0, m01, m20)`, `(v1, m12, m01)`, `(v2, m20, m12)`, `(m01, m12, m20)`.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::Point3;

use crate::mesh::{edge_key, Mesh, Topology};

#[derive(Debug, Clone, PartialEq)]
pub struct SubdivisionMap {
    /// Parent face of every child face.
    pub parent_face: Vec<usize>,
    midpoint_of: HashMap<[usize; 2], usize>,
}

impl SubdivisionMap {
    /// Index of the vertex inserted on the undirected parent edge `(a, b)`.
    pub fn midpoint(&self, a: usize, b: usize) -> Option<usize> {
        self.midpoint_of.get(&edge_key(a, b)).copied()
    }

    pub fn midpoint_count(&self) -> usize {
        self.midpoint_of.len()
    }
}

pub fn subdivide_topology(topology: &Topology) -> (Topology, SubdivisionMap) {
    let base = topology.vertex_count();
    let midpoint_of: HashMap<[usize; 2], usize> = topology
        .edges()
        .iter()
        .enumerate()
        .map(|(i, &e)| (e, base + i))
        .collect();

    let mut faces = Vec::with_capacity(topology.face_count() * 4);
    let mut parent_face = Vec::with_capacity(topology.face_count() * 4);
    for (fi, &[v0, v1, v2]) in topology.faces().iter().enumerate() {
        let m01 = midpoint_of[&edge_key(v0, v1)];
        let m12 = midpoint_of[&edge_key(v1, v2)];
        let m20 = midpoint_of[&edge_key(v2, v0)];
        faces.extend_from_slice(&[[v0, m01, m20], [v1, m12, m01], [v2, m20, m12], [m01, m12, m20]]);
        parent_face.extend_from_slice(&[fi; 4]);
    }
    let refined = Topology::new(base + topology.edge_count(), faces)
        .expect("subdivision of a closed manifold is a closed manifold");
    (
        refined,
        SubdivisionMap {
            parent_face,
            midpoint_of,
        },
    )
}

/// Split every face into four at the edge midpoints. With `rescale`, the
/// result is scaled about its centroid so its mean edge length matches the
/// input's.
pub fn uniform_subdivide(mesh: &Mesh, rescale: bool) -> (Mesh, SubdivisionMap) {
    let (topology, map) = subdivide_topology(mesh.topology());
    let mut vertices: Vec<Point3<f64>> = Vec::with_capacity(topology.vertex_count());
    vertices.extend_from_slice(mesh.vertices());
    for &[a, b] in mesh.edges() {
        let (pa, pb) = (mesh.vertices()[a], mesh.vertices()[b]);
        vertices.push(Point3::from((pa.coords + pb.coords) * 0.5));
    }
    let refined = Mesh::from_topology(vertices, Arc::new(topology))
        .expect("midpoints of finite vertices are finite");
    if rescale {
        let target = mesh.mean_edge_length();
        let current = refined.mean_edge_length();
        if current > 0.0 {
            return (refined.scaled_about_centroid(target / current), map);
        }
    }
    (refined, map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes;

    #[test]
    fn icosahedron_counts() {
        let (fine, map) = uniform_subdivide(&shapes::icosahedron(), false);
        let s = fine.stats();
        assert_eq!((s.vertices, s.edges, s.faces, s.euler_characteristic), (42, 120, 80, 2));
        assert_eq!(map.parent_face.len(), 80);
        assert_eq!(map.midpoint_count(), 30);
    }

    #[test]
    fn tetrahedron_counts() {
        let (fine, _) = uniform_subdivide(&shapes::tetrahedron(), false);
        assert_eq!((fine.vertex_count(), fine.face_count()), (10, 16));
    }

    #[test]
    fn torus_keeps_euler_characteristic() {
        let torus = shapes::torus(2.0, 0.5, 10, 6);
        let (fine, _) = uniform_subdivide(&torus, true);
        assert_eq!(fine.stats().euler_characteristic, 0);
    }

    #[test]
    fn connectivity_ignores_positions() {
        let a = shapes::icosahedron();
        let b = shapes::bumpy_sphere(0, 0.3, 5.0);
        let (fa, _) = uniform_subdivide(&a, false);
        let (fb, _) = uniform_subdivide(&b, true);
        assert_eq!(fa.faces(), fb.faces());
    }

    #[test]
    fn rescale_preserves_mean_edge() {
        let mesh = shapes::bumpy_sphere(1, 0.2, 4.0);
        let (fine, _) = uniform_subdivide(&mesh, true);
        let (a, b) = (mesh.mean_edge_length(), fine.mean_edge_length());
        assert!((a - b).abs() < 1e-9 * a);
    }

    #[test]
    fn children_share_parent_winding() {
        let mesh = shapes::icosahedron();
        let (fine, map) = uniform_subdivide(&mesh, false);
        for (child, &parent) in map.parent_face.iter().enumerate() {
            let n_child = fine.face_cross(child).normalize();
            let n_parent = mesh.face_cross(parent).normalize();
            assert!((n_child - n_parent).norm() < 1e-12);
        }
        let [v0, v1, _] = mesh.faces()[0];
        let m = map.midpoint(v1, v0).unwrap();
        let expected = (mesh.vertices()[v0].coords + mesh.vertices()[v1].coords) * 0.5;
        assert!((fine.vertices()[m].coords - expected).norm() < 1e-15);
    }
}
