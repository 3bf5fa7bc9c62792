use nalgebra::{Point3, Rotation3, Unit, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use meshtex::autodiff::{Tape, Tensor};
use meshtex::config::KvConfig;
use meshtex::features::{edge_frames, extract_features};
use meshtex::net::{discriminator_forward, generator_forward, gaussian_noise, Discriminator, Generator, NetworkConfig};
use meshtex::obj::{parse_obj, write_obj_string};
use meshtex::remesh::regularizers;
use meshtex::subdivision::uniform_subdivide;
use meshtex::synth::synthesize;
use meshtex::train::{LevelCheckpoint, RngState};
use meshtex::{sample_surface, shapes, Mesh};

fn jitter(mesh: &Mesh, amount: f64, seed: u64) -> Mesh {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let verts = mesh
        .vertices()
        .iter()
        .map(|p| p + Vector3::from_fn(|_, _| r.gen_range(-amount..amount)))
        .collect();
    mesh.with_vertices(verts).unwrap()
}

/// Closed meshes of genus 0 and 1 with perturbed vertices.
fn closed_mesh() -> impl Strategy<Value = Mesh> {
    let sphere = (0usize..3, any::<u64>()).prop_map(|(l, s)| jitter(&shapes::icosphere(l), 0.05, s));
    let torus = (3usize..9, 3usize..7, 1.5f64..3.0, 0.3f64..0.9, any::<u64>())
        .prop_map(|(m, n, big, small, s)| jitter(&shapes::torus(big, small, m, n), 0.03, s));
    let tet = any::<u64>().prop_map(|s| jitter(&shapes::tetrahedron(), 0.05, s));
    prop_oneof![sphere, torus, tet]
}

fn rigid_motion() -> impl Strategy<Value = (Rotation3<f64>, Vector3<f64>)> {
    (
        prop::array::uniform3(-1.0f64..1.0),
        -3.1f64..3.1,
        prop::array::uniform3(-20.0f64..20.0),
    )
        .prop_filter("axis", |(a, _, _)| Vector3::from(*a).norm() > 0.1)
        .prop_map(|(a, angle, t)| {
            (
                Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::from(a)), angle),
                Vector3::from(t),
            )
        })
}

fn moved(mesh: &Mesh, rot: &Rotation3<f64>, t: &Vector3<f64>) -> Mesh {
    mesh.with_vertices(mesh.vertices().iter().map(|p| rot * p + t).collect()).unwrap()
}

fn small_chain(levels: usize, seed: u64) -> Vec<LevelCheckpoint> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let cfg = NetworkConfig {
        num_layers: 3,
        embed_dim: 6,
        output_dim: 3,
    };
    (0..levels)
        .map(|level| LevelCheckpoint {
            level,
            generator: Generator::new(cfg, &mut r),
            discriminator: Discriminator::new(NetworkConfig { output_dim: 1, ..cfg }, &mut r),
            noise_c: Tensor::zeros(1, 3),
            noise_sigma: 0.05,
            rng: RngState::capture(&r),
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn adjacency_is_symmetric_and_edges_match(mesh in closed_mesh()) {
        let adj = mesh.adjacency();
        for (f, nbrs) in adj.iter().enumerate() {
            for &g in nbrs {
                prop_assert!(adj[g].contains(&f));
            }
        }
        prop_assert_eq!(3 * mesh.face_count(), 2 * mesh.edges().len());
    }

    #[test]
    fn obj_text_round_trips(mesh in closed_mesh()) {
        let back = parse_obj(&write_obj_string(&mesh)).unwrap();
        prop_assert_eq!(back.faces(), mesh.faces());
        for (p, q) in back.vertices().iter().zip(mesh.vertices()) {
            // nine significant digits
            prop_assert!((p - q).amax() <= 1e-8 * q.coords.amax().max(1e-300));
        }
    }

    #[test]
    fn samples_lie_on_their_faces(mesh in closed_mesh(), seed in any::<u64>()) {
        for s in sample_surface(&mesh, 200, seed).unwrap() {
            let b = s.barycentric;
            prop_assert!(b.iter().all(|&x| x >= 0.0));
            prop_assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let [p0, p1, p2] = mesh.corners(s.face_index);
            let expect = p0.coords * b[0] + p1.coords * b[1] + p2.coords * b[2];
            prop_assert!((s.position.coords - expect).norm() < 1e-9);
            prop_assert!((s.normal.norm() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn frames_are_orthonormal(mesh in closed_mesh()) {
        for frames in edge_frames(&mesh).unwrap() {
            for fr in frames {
                let [x, y, z] = [fr.x_axis, fr.y_axis, fr.z_axis];
                prop_assert!(x.dot(&y).abs() < 1e-6 && y.dot(&z).abs() < 1e-6 && x.dot(&z).abs() < 1e-6);
                prop_assert!([x, y, z].iter().all(|a| (a.norm() - 1.0).abs() < 1e-6));
                prop_assert!((z.cross(&x) - y).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn features_are_rigid_invariant((rot, t) in rigid_motion(), mesh in closed_mesh()) {
        let a = extract_features(&mesh).unwrap();
        let b = extract_features(&moved(&mesh, &rot, &t)).unwrap();
        for f in 0..mesh.face_count() {
            let corners = mesh.corners(f);
            for k in 0..3 {
                let len = (corners[(k + 1) % 3] - corners[k]).norm();
                prop_assert!((a.face(f)[k][0] - len).abs() < 1e-12);
                for c in 0..4 {
                    prop_assert!((a.face(f)[k][c] - b.face(f)[k][c]).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn features_scale_linearly(mesh in closed_mesh()) {
        let a = extract_features(&mesh).unwrap();
        let doubled = mesh.with_vertices(mesh.vertices().iter().map(|p| Point3::from(p.coords * 2.0)).collect()).unwrap();
        let b = extract_features(&doubled).unwrap();
        for f in 0..mesh.face_count() {
            for k in 0..3 {
                for c in 0..4 {
                    let (x, y) = (a.face(f)[k][c], b.face(f)[k][c]);
                    prop_assert!((2.0 * x - y).abs() <= 1e-12 * (1.0 + y.abs()));
                }
            }
        }
    }

    #[test]
    fn subdivision_preserves_topology(mesh in closed_mesh()) {
        let (out, map) = uniform_subdivide(&mesh, true);
        let (si, so) = (mesh.stats(), out.stats());
        prop_assert_eq!(si.euler_characteristic, so.euler_characteristic);
        prop_assert_eq!(so.faces, 4 * si.faces);
        prop_assert_eq!(so.vertices, si.vertices + si.edges);
        prop_assert_eq!(map.parent_face.len(), so.faces);
        let rel = (out.mean_edge_length() - mesh.mean_edge_length()).abs() / mesh.mean_edge_length();
        prop_assert!(rel < 1e-9);
        let (again, _) = uniform_subdivide(&jitter(&mesh, 0.01, 5), false);
        prop_assert_eq!(again.faces(), out.faces());
    }

    #[test]
    fn regularizers_are_nonnegative_and_covariant(mesh in closed_mesh(), s in 0.2f64..5.0) {
        let r = regularizers(&mesh);
        prop_assert!(r.uniform >= 0.0 && r.smooth >= 0.0);
        let scaled = mesh.with_vertices(mesh.vertices().iter().map(|p| Point3::from(p.coords * s)).collect()).unwrap();
        let rs = regularizers(&scaled);
        prop_assert!((rs.uniform - s * s * r.uniform).abs() <= 1e-9 * (1.0 + rs.uniform));
    }

    #[test]
    fn critic_is_rigid_invariant((rot, t) in rigid_motion(), seed in any::<u64>()) {
        let mesh = jitter(&shapes::icosphere(1), 0.05, seed);
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let disc = Discriminator::<f64>::new(NetworkConfig { num_layers: 4, embed_dim: 8, output_dim: 1 }, &mut r);
        let a = discriminator_forward(&disc, &mesh).unwrap();
        let b = discriminator_forward(&disc, &moved(&mesh, &rot, &t)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn generator_is_rigid_equivariant((rot, t) in rigid_motion(), seed in any::<u64>()) {
        let mesh = jitter(&shapes::icosphere(1), 0.05, seed);
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let gen = Generator::<f64>::new(NetworkConfig { num_layers: 4, embed_dim: 8, output_dim: 3 }, &mut r);
        let noise: Tensor<f64> = gaussian_noise(mesh.vertex_count(), 0.0, &mut r);
        let a = generator_forward(&gen, &mesh, &noise).unwrap();
        let b = generator_forward(&gen, &moved(&mesh, &rot, &t), &noise).unwrap();
        for (p, q) in a.vertices().iter().zip(b.vertices()) {
            prop_assert!((rot * p + t - q).norm() < 1e-6);
        }
    }

    #[test]
    fn synthesis_preserves_genus(mesh in closed_mesh(), seed in any::<u64>(), start in 1usize..=2) {
        let out = synthesize(&small_chain(2, seed), &mesh, start, seed).unwrap();
        prop_assert_eq!(out.stats().genus, mesh.stats().genus);
        prop_assert_eq!(out.face_count(), mesh.face_count() * 4usize.pow((2 - start) as u32));
    }

    #[test]
    fn config_text_round_trips(entries in prop::collection::vec(("[a-z]{1,6}", "[a-z_]{1,8}", "[A-Za-z0-9_./-]{0,12}"), 0..12)) {
        let mut cfg = KvConfig::new();
        for (s, k, v) in &entries {
            cfg.set(s, k, v);
        }
        let back = KvConfig::parse(&cfg.to_text()).unwrap();
        for (s, k, _) in &entries {
            prop_assert_eq!(back.get_str(s, k), cfg.get_str(s, k));
        }
    }
}

#[test]
fn gradients_are_bitwise_reproducible_through_the_network() {
    let mesh = jitter(&shapes::icosphere(1), 0.05, 3);
    let run = || {
        let mut r = ChaCha8Rng::seed_from_u64(11);
        let disc = Discriminator::<f32>::new(NetworkConfig::discriminator(0), &mut r);
        let tape = Tape::new();
        let layers = disc.net.bind(&tape, true);
        let index = meshtex::net::FaceIndex::new(&mesh);
        let verts = tape.constant(meshtex::net::vertices_tensor(&mesh));
        let loss = meshtex::net::critic_graph(&layers, verts, &index).unwrap().mean_square();
        let grads = tape.backward(loss, &meshtex::net::layer_vars_flat(&layers)).unwrap();
        grads.iter().flat_map(|g| g.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}
