//! Minimal Wavefront OBJ reading and writing (`v` and triangular `f`
//! records only).

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use nalgebra::Point3;
use thiserror::Error;

use crate::mesh::{Mesh, MeshError};

#[derive(Debug, Error)]
pub enum ObjError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: face has {count} vertices; only triangles are supported")]
    NonTriangle { line: usize, count: usize },
    #[error("line {line}: vertex index {index} out of range ({count} vertices)")]
    IndexOutOfRange { line: usize, index: i64, count: usize },
    #[error("invalid mesh: {0}")]
    Mesh(#[from] MeshError),
}

pub fn load_obj(path: impl AsRef<Path>) -> Result<Mesh, ObjError> {
    let text = fs::read_to_string(path)?;
    parse_obj(&text)
}

pub fn parse_obj(text: &str) -> Result<Mesh, ObjError> {
    let mut vertices = Vec::new();
    let mut raw_faces: Vec<(usize, [i64; 3])> = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let tag = tokens.next().unwrap_or_default();
        match tag {
            "v" => {
                let coords: Vec<&str> = tokens.collect();
                if coords.len() < 3 || coords.len() > 4 {
                    return Err(ObjError::Parse {
                        line: line_no,
                        message: format!("expected 3 coordinates, found {}", coords.len()),
                    });
                }
                let mut xyz = [0.0; 3];
                for (slot, tok) in xyz.iter_mut().zip(&coords) {
                    *slot = tok.parse().map_err(|_| ObjError::Parse {
                        line: line_no,
                        message: format!("bad coordinate {tok:?}"),
                    })?;
                }
                vertices.push(Point3::new(xyz[0], xyz[1], xyz[2]));
            }
            "f" => {
                let refs: Vec<&str> = tokens.collect();
                if refs.len() != 3 {
                    return Err(ObjError::NonTriangle {
                        line: line_no,
                        count: refs.len(),
                    });
                }
                let mut idx = [0i64; 3];
                for (slot, tok) in idx.iter_mut().zip(&refs) {
                    // `v`, `v/vt`, `v//vn` and `v/vt/vn` all start with the position index
                    let head = tok.split('/').next().unwrap_or("");
                    *slot = head.parse().map_err(|_| ObjError::Parse {
                        line: line_no,
                        message: format!("bad face index {tok:?}"),
                    })?;
                }
                raw_faces.push((line_no, idx));
            }
            other => log::warn!("line {line_no}: ignoring unsupported OBJ record {other:?}"),
        }
    }

    let count = vertices.len();
    let mut faces = Vec::with_capacity(raw_faces.len());
    for (line, idx) in raw_faces {
        let mut face = [0usize; 3];
        for (slot, &i) in face.iter_mut().zip(&idx) {
            // negative indices count back from the most recent vertex
            let resolved = if i > 0 { i - 1 } else { count as i64 + i };
            if i == 0 || resolved < 0 || resolved >= count as i64 {
                return Err(ObjError::IndexOutOfRange {
                    line,
                    index: i,
                    count,
                });
            }
            *slot = resolved as usize;
        }
        faces.push(face);
    }
    Ok(Mesh::new(vertices, faces)?)
}

/// Round to nine significant digits and print the shortest representation
/// of the rounded value.
fn fmt_coord(x: f64) -> String {
    let rounded: f64 = format!("{x:.8e}").parse().unwrap_or(x);
    let rounded = if rounded == 0.0 { 0.0 } else { rounded };
    format!("{rounded}")
}

pub fn write_obj_string(mesh: &Mesh) -> String {
    let mut out = String::with_capacity(mesh.vertex_count() * 40 + mesh.face_count() * 20);
    for p in mesh.vertices() {
        let _ = writeln!(out, "v {} {} {}", fmt_coord(p.x), fmt_coord(p.y), fmt_coord(p.z));
    }
    for &[a, b, c] in mesh.faces() {
        let _ = writeln!(out, "f {} {} {}", a + 1, b + 1, c + 1);
    }
    out
}

pub fn save_obj(mesh: &Mesh, path: impl AsRef<Path>) -> Result<(), ObjError> {
    fs::write(path, write_obj_string(mesh))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes;
    use proptest::prelude::*;

    const TETRA: &str = "# regular tetrahedron
v 1 1 1
v 1 -1 -1
v -1 1 -1
v -1 -1 1
f 1 2 3
f 1 4 2
f 1 3 4
f 2 4 3
";

    #[test]
    fn parses_tetrahedron() {
        let mesh = parse_obj(TETRA).unwrap();
        assert_eq!((mesh.vertex_count(), mesh.face_count()), (4, 4));
        for adj in mesh.adjacency() {
            assert!(adj[0] != adj[1] && adj[1] != adj[2] && adj[0] != adj[2]);
        }
    }

    #[test]
    fn parses_icosahedron_text() {
        let text = write_obj_string(&shapes::icosahedron());
        let mesh = parse_obj(&text).unwrap();
        assert_eq!((mesh.vertex_count(), mesh.face_count(), mesh.edges().len()), (12, 20, 30));
    }

    #[test]
    fn slash_forms_and_unknown_records() {
        let text = TETRA.replace("f 1 2 3", "f 1/1/1 2//2 3/3\nvn 0 0 1\nusemtl x");
        assert!(parse_obj(&text).is_ok());
    }

    #[test]
    fn rejects_quads_and_garbage() {
        let quad = format!("{TETRA}f 1 2 3 4\n");
        assert!(matches!(parse_obj(&quad), Err(ObjError::NonTriangle { count: 4, .. })));
        let bad = TETRA.replace("v 1 1 1", "v 1 one 1");
        assert!(matches!(parse_obj(&bad), Err(ObjError::Parse { line: 2, .. })));
        let oob = TETRA.replace("f 2 4 3", "f 2 4 7");
        assert!(matches!(parse_obj(&oob), Err(ObjError::IndexOutOfRange { index: 7, .. })));
    }

    #[test]
    fn rejects_non_manifold_edge() {
        let text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 -1 0\nv 0 0 1\nf 1 2 3\nf 2 1 4\nf 1 2 5\n";
        assert!(matches!(
            parse_obj(text),
            Err(ObjError::Mesh(MeshError::NonManifoldEdge(..)))
        ));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.obj");
        let mesh = shapes::torus(2.0, 0.5, 9, 5);
        save_obj(&mesh, &path).unwrap();
        let back = load_obj(&path).unwrap();
        assert_eq!(back.faces(), mesh.faces());
    }

    proptest! {
        #[test]
        fn writer_round_trips_to_nine_digits(scale in 1e-3f64..1e3, shift in -50.0f64..50.0) {
            let base = shapes::icosphere(1);
            let mesh = base.with_vertices(
                base.vertices().iter().map(|p| Point3::from(p.coords * scale).map(|c| c + shift)).collect(),
            ).unwrap();
            let back = parse_obj(&write_obj_string(&mesh)).unwrap();
            prop_assert_eq!(back.faces(), mesh.faces());
            for (a, b) in mesh.vertices().iter().zip(back.vertices()) {
                for i in 0..3 {
                    prop_assert!((a[i] - b[i]).abs() <= 1e-8 * a[i].abs().max(1e-300));
                }
            }
        }
    }
}
