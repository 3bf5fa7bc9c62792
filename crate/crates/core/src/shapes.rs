//! Procedural closed meshes used as templates and fixtures.

use std::f64::consts::PI;

use nalgebra::{Point3, Vector3};

use crate::mesh::Mesh;
use crate::subdivision::uniform_subdivide;

/// Regular tetrahedron with unit edges, centred at the origin.
pub fn tetrahedron() -> Mesh {
    let s = 1.0 / (2.0 * 2f64.sqrt());
    let vertices = vec![
        Point3::new(s, s, s),
        Point3::new(s, -s, -s),
        Point3::new(-s, s, -s),
        Point3::new(-s, -s, s),
    ];
    let faces = vec![[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]];
    Mesh::new(vertices, faces).expect("tetrahedron is a valid closed mesh")
}

/// Regular icosahedron with unit edges, centred at the origin.
pub fn icosahedron() -> Mesh {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let raw = [
        (-1.0, phi, 0.0),
        (1.0, phi, 0.0),
        (-1.0, -phi, 0.0),
        (1.0, -phi, 0.0),
        (0.0, -1.0, phi),
        (0.0, 1.0, phi),
        (0.0, -1.0, -phi),
        (0.0, 1.0, -phi),
        (phi, 0.0, -1.0),
        (phi, 0.0, 1.0),
        (-phi, 0.0, -1.0),
        (-phi, 0.0, 1.0),
    ];
    let vertices = raw
        .iter()
        .map(|&(x, y, z)| Point3::new(x / 2.0, y / 2.0, z / 2.0))
        .collect();
    let faces = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    Mesh::new(vertices, faces).expect("icosahedron is a valid closed mesh")
}

/// Icosahedron subdivided `levels` times with every vertex pushed onto the
/// unit sphere.
pub fn icosphere(levels: usize) -> Mesh {
    let mut mesh = project_to_sphere(&icosahedron());
    for _ in 0..levels {
        let (fine, _) = uniform_subdivide(&mesh, false);
        mesh = project_to_sphere(&fine);
    }
    mesh
}

fn project_to_sphere(mesh: &Mesh) -> Mesh {
    let vertices = mesh
        .vertices()
        .iter()
        .map(|p| Point3::from(p.coords.normalize()))
        .collect();
    mesh.with_vertices(vertices).expect("same vertex count")
}

/// Axis-aligned ellipsoid built from an icosphere.
pub fn ellipsoid(axes: [f64; 3], levels: usize) -> Mesh {
    let sphere = icosphere(levels);
    let vertices = sphere
        .vertices()
        .iter()
        .map(|p| Point3::new(p.x * axes[0], p.y * axes[1], p.z * axes[2]))
        .collect();
    sphere.with_vertices(vertices).expect("same vertex count")
}

/// Ring torus around the z axis with `major` segments along the tube path
/// and `minor` around the tube.
pub fn torus(major_radius: f64, minor_radius: f64, major: usize, minor: usize) -> Mesh {
    assert!(major >= 3 && minor >= 3, "torus needs at least 3x3 segments");
    let mut vertices = Vec::with_capacity(major * minor);
    for i in 0..major {
        let phi = 2.0 * PI * i as f64 / major as f64;
        for j in 0..minor {
            let theta = 2.0 * PI * j as f64 / minor as f64;
            let ring = major_radius + minor_radius * theta.cos();
            vertices.push(Point3::new(
                ring * phi.cos(),
                ring * phi.sin(),
                minor_radius * theta.sin(),
            ));
        }
    }
    let idx = |i: usize, j: usize| (i % major) * minor + (j % minor);
    let mut faces = Vec::with_capacity(2 * major * minor);
    for i in 0..major {
        for j in 0..minor {
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
    Mesh::new(vertices, faces).expect("torus is a valid closed mesh")
}

/// Unit icosphere with a periodic radial bump pattern.
pub fn bumpy_sphere(levels: usize, amplitude: f64, frequency: f64) -> Mesh {
    let sphere = icosphere(levels);
    let vertices = sphere
        .vertices()
        .iter()
        .map(|p| {
            let n: Vector3<f64> = p.coords;
            let bump = (frequency * n.x).sin() * (frequency * n.y).sin() * (frequency * n.z).sin();
            Point3::from(n * (1.0 + amplitude * bump))
        })
        .collect();
    sphere.with_vertices(vertices).expect("same vertex count")
}

/// Signed enclosed volume; positive for outward-facing winding.
pub fn signed_volume(mesh: &Mesh) -> f64 {
    mesh.faces()
        .iter()
        .map(|&[a, b, c]| {
            let (a, b, c) = (
                mesh.vertices()[a].coords,
                mesh.vertices()[b].coords,
                mesh.vertices()[c].coords,
            );
            a.dot(&b.cross(&c)) / 6.0
        })
        .sum()
}
