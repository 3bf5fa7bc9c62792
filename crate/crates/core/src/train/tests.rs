use super::*;
use crate::autodiff::grad_check;
use crate::checkpoint::{decode, encode};
use crate::remesh::{build_multiscale, FitConfig};
use crate::shapes;
use std::sync::OnceLock;

fn tiny_pyramid() -> &'static MultiscalePyramid {
    static P: OnceLock<MultiscalePyramid> = OnceLock::new();
    P.get_or_init(|| {
        let config = FitConfig {
            samples_per_side: 600,
            iters_per_level: 40,
            levels: 2,
            ..Default::default()
        };
        build_multiscale(&shapes::icosahedron(), &shapes::bumpy_sphere(3, 0.15, 4.0), &config, 1, "icosahedron").unwrap()
    })
}

fn quick_train(iters: usize) -> TrainConfig {
    TrainConfig {
        iters_per_level: iters,
        d_steps: 1,
        g_steps: 1,
        seed: 3,
        ..Default::default()
    }
}

#[test]
fn default_training_schedule() {
    let c = TrainConfig::default();
    assert_eq!((c.gamma, c.lr, c.lr_decay, c.decay_interval), (5.0, 5e-4, 0.5, 500));
    assert_eq!((c.gp_lambda, c.d_steps, c.g_steps), (10.0, 3, 3));
    assert_eq!(c.lr_at(0), 5e-4);
    assert_eq!(c.lr_at(499), 5e-4);
    assert_eq!(c.lr_at(500), 2.5e-4);
    assert_eq!(c.lr_at(1999), 6.25e-5);
    assert!((c.sigma_at(2) - 0.025).abs() < 1e-15);
}

#[test]
fn inheritance_starts_at_fourth_level() {
    let c = TrainConfig::default();
    let inherited: Vec<bool> = (0..6).map(|l| c.inherits(l)).collect();
    assert_eq!(inherited, [false, false, false, true, true, true]);
}

#[test]
fn config_round_trips() {
    let c = TrainConfig {
        seed: 99,
        adversarial: false,
        ..Default::default()
    };
    let mut kv = KvConfig::new();
    c.write_config(&mut kv, "train");
    assert_eq!(TrainConfig::from_config(&kv, "train").unwrap(), c);
}

#[test]
fn penalty_of_unit_gradient_critic_is_zero() {
    let tape = Tape::<f64>::new();
    let real = Tensor::from_fn(4, 3, |r, c| (r + c) as f64);
    let fake = real.map(|x| x * 0.5);
    let w = Tensor::from_fn(4, 3, |r, c| if (r, c) == (1, 2) { 1.0 } else { 0.0 });
    let gp = gradient_penalty_with(&tape, &real, &fake, 0.3, 10.0, |x| {
        Ok(x.mul(tape.constant(w.clone()))?.sum_all())
    })
    .unwrap();
    assert_eq!(gp.item(), 0.0);
}

#[test]
fn penalty_of_linear_critic() {
    // |w| = 3 so the penalty is 10 * (3 - 1)^2
    let tape = Tape::<f64>::new();
    let real = Tensor::zeros(1, 3);
    let fake = Tensor::filled(1, 3, 1.0);
    let w = Tensor::new(1, 3, vec![1.0, 2.0, 2.0]).unwrap();
    let gp = gradient_penalty_with(&tape, &real, &fake, 0.7, 10.0, |x| {
        Ok(x.mul(tape.constant(w.clone()))?.sum_all())
    })
    .unwrap();
    assert!((gp.item() - 40.0).abs() < 1e-12);
}

#[test]
fn penalty_weight_gradient_matches_finite_differences() {
    let mesh = shapes::bumpy_sphere(1, 0.1, 3.0);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = NetworkConfig {
        num_layers: 3,
        embed_dim: 6,
        output_dim: 1,
    };
    let disc = Discriminator::<f64>::new(cfg, &mut rng);
    let index = FaceIndex::new(&mesh);
    let real = vertices_tensor::<f64>(&mesh);
    let fake = Tensor::from_fn(real.rows(), 3, |r, c| real.get(r, c) * 1.05 + 0.01 * ((r * 3 + c) % 7) as f64);
    let params: Vec<Tensor<f64>> = disc.tensors().into_iter().cloned().collect();
    let report = grad_check(
        |tape, vars| {
            let mut layers = disc.net.bind(tape, false);
            let mut it = vars.iter().copied();
            for l in &mut layers {
                l.w_s = it.next().unwrap();
                if l.w_f.is_some() {
                    l.w_f = it.next();
                }
                l.bias = it.next().unwrap();
                if l.norm.is_some() {
                    l.norm = Some((it.next().unwrap(), it.next().unwrap()));
                }
            }
            gradient_penalty(&layers, &real, &fake, 0.4, 10.0, &index)
        },
        &params,
        1e-6,
    )
    .unwrap();
    assert!(!report.nonsmooth);
    assert!(report.max_rel_error < 1e-3, "{report:?}");
}

#[test]
fn reconstruction_only_recovers_identity() {
    let mesh = normalize_centered(&shapes::bumpy_sphere(1, 0.1, 3.0)).unwrap();
    let config = TrainConfig {
        iters_per_level: 150,
        gamma: 100.0,
        adversarial: false,
        lr: 2e-3,
        ..quick_train(0)
    };
    let out = train_level(1, &mesh, &mesh, None, &config, &mut |_| {}).unwrap();
    let rec = reconstruct(&out.checkpoint, &mesh).unwrap();
    let mean_err = rec
        .vertices()
        .iter()
        .zip(mesh.vertices())
        .map(|(p, q)| (p - q).norm())
        .sum::<f64>()
        / mesh.vertex_count() as f64;
    assert!(mean_err < 1e-3, "mean error {mean_err}");
}

#[test]
fn connectivity_mismatch_is_rejected() {
    let a = shapes::icosahedron();
    let b = shapes::icosphere(1);
    assert!(matches!(
        train_level(0, &a, &b, None, &quick_train(1), &mut |_| {}),
        Err(TrainError::ConnectivityMismatch { level: 0 })
    ));
}

#[test]
fn inheriting_across_widths_is_rejected() {
    let mesh = normalize_centered(&shapes::icosahedron()).unwrap();
    let first = train_level(0, &mesh, &mesh, None, &quick_train(1), &mut |_| {}).unwrap();
    assert!(matches!(
        train_level(1, &mesh, &mesh, Some(&first.checkpoint), &quick_train(1), &mut |_| {}),
        Err(TrainError::InvalidConfig(_))
    ));
}

#[test]
fn hierarchy_smoke_run_is_finite_and_deterministic() {
    let pyramid = tiny_pyramid();
    let config = quick_train(6);
    let mut rows = Vec::new();
    let mut frozen = Vec::new();
    let run = train_hierarchy(pyramid, &config, &mut |r| rows.push(*r), &mut |l| {
        frozen.push(encode(&l.checkpoint));
        Ok(())
    })
    .unwrap();
    assert_eq!(rows.len(), 12);
    assert!(rows.iter().all(|r| r.d_loss.is_finite() && r.g_loss.is_finite() && r.wasserstein.is_finite()));
    let cks = run.checkpoints();
    assert_eq!(cks.len(), 2);
    assert_eq!(cks[0].noise_c.rows(), 12);
    assert!(cks[0].noise_c.max_abs() > 0.0);
    assert_eq!(cks[1].noise_c.rows(), 42);
    assert_eq!(cks[1].noise_c.max_abs(), 0.0);
    assert_eq!((cks[0].embed_dim(), cks[1].embed_dim()), (32, 64));
    // the coarse checkpoint is untouched by training the next level
    assert_eq!(frozen[0], encode(&cks[0]));

    let again = train_hierarchy(pyramid, &config, &mut |_| {}, &mut |_| Ok(())).unwrap();
    for (a, b) in again.checkpoints().iter().zip(&cks) {
        assert_eq!(encode(a), encode(b));
    }
}

#[test]
fn checkpoint_round_trip_preserves_output() {
    let pyramid = tiny_pyramid();
    let (input, reals) = training_meshes(pyramid).unwrap();
    let out = train_level(0, &input, &reals[0], None, &quick_train(3), &mut |_| {}).unwrap();
    let back = decode(&encode(&out.checkpoint)).unwrap();
    let a = reconstruct(&out.checkpoint, &input).unwrap();
    let b = reconstruct(&back, &input).unwrap();
    assert_eq!(a.vertices(), b.vertices());
}
