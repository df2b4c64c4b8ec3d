//! End-to-end paths through the public API.

use fmdt_core::analysis::{jacobian_spectral_norm, power_iteration};
use fmdt_core::closedform::ClosedFormVelocity;
use fmdt_core::datagen::{generate, preset, GenSpec, FIG5A_3PT};
use fmdt_core::field::LinearVelocity;
use fmdt_core::net::{Activation, Checkpoint, NetModel, NetSpec, ParamClass, ParametrizedDenoiser};
use fmdt_core::rng::{seeded, SourceKind};
use fmdt_core::sampling::{sample_endpoints, states_at, IntegratorSpec, Scheme};
use fmdt_core::training::{train, TrainConfig, WeightingScheme};
use fmdt_core::{Dataset, Denoiser};
use rand::Rng;

#[test]
fn generated_datasets_survive_a_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for spec in [
        GenSpec::GaussianMixture { n: 200, components: 4, radius: 3.0, std: 0.3 },
        GenSpec::Blobs8x8 { n: 5 },
        GenSpec::Preset { name: FIG5A_3PT.into() },
    ] {
        let ds = generate(&spec, 9).unwrap();
        let path = dir.path().join("data.fmdt");
        ds.save(&path).unwrap();
        let back = Dataset::load(&path).unwrap();
        let stored: Vec<f64> = ds.as_flat().iter().map(|&v| v as f32 as f64).collect();
        assert_eq!(back.as_flat(), &stored[..]);
        assert_eq!(back.shape(), ds.shape());
        let again = dir.path().join("again.fmdt");
        back.save(&again).unwrap();
        assert_eq!(std::fs::read(&again).unwrap(), std::fs::read(&path).unwrap());
    }
}

#[test]
fn trained_checkpoint_reloads_and_samples_near_the_data() {
    let ds = Dataset::from_rows("two", vec![vec![-1.0], vec![1.0]], None).unwrap();
    let spec = NetSpec::new(1, vec![32, 32], Activation::Tanh);
    let init = ParametrizedDenoiser::new(NetModel::init(&spec, 4).unwrap(), ParamClass::IdentityPlus);
    let cfg = TrainConfig {
        epochs: 1,
        steps_per_epoch: Some(2000),
        batch_size: 128,
        learning_rate: 3e-3,
        ema_decay: 0.99,
        seed: 4,
        ..Default::default()
    };
    let out = train(&ds, &init, &WeightingScheme::fm(), &cfg).unwrap();
    assert!(out.epoch_losses[0].is_finite());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.json");
    Checkpoint::new(&out.model, Some(&out.ema.net)).save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap().ema_model().unwrap().unwrap();
    for t in [0.0, 0.3, 0.9] {
        assert_eq!(back.denoise(&[0.2], t).unwrap(), out.ema.denoise(&[0.2], t).unwrap());
    }

    let mut rng = seeded(5);
    let x0s: Vec<Vec<f64>> = (0..64).map(|_| SourceKind::Gaussian.draw(&mut rng, 1)).collect();
    let ends = sample_endpoints(&back, &x0s, &IntegratorSpec::fixed(Scheme::Heun, 50)).unwrap();
    let near = ends.iter().filter(|e| (e[0].abs() - 1.0).abs() < 0.25).count();
    assert!(near >= 56, "{near}/64 endpoints near the data");
}

#[test]
fn power_iteration_matches_nalgebra_svd() {
    let mut rng = seeded(11);
    for d in [2, 5, 9] {
        let m: Vec<f64> = (0..d * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let want = nalgebra::DMatrix::from_row_slice(d, d, &m).singular_values().max();
        let v = LinearVelocity::new(d, m).unwrap();
        let x = vec![0.0; d];
        let est = power_iteration(&v, &x, 0.5, 2000, 1).unwrap();
        assert!((est.sigma - want).abs() < 1e-6 * want, "d={d}: {} vs {want}", est.sigma);
    }
}

/// Mean finite-difference Jacobian norm of the cone field along the exact
/// flow, by quadrature over equispaced sources. At t = 0 the cones coincide
/// and the field is `-x`. While all three cones of
/// `{-4, 0, 4}` overlap it tends to `1/(1-t) + 8/(3(1-t)^2)`; once the outer
/// cones have separated (t > 0.2) it tends to `1/(1-t) + 2/(1-t)^2`. The two
/// regimes differ by over 20%; quadrature aliasing at the edges is about 5%.
#[test]
fn cone_profile_matches_the_edge_flux_formula() {
    let ds = preset(FIG5A_3PT).unwrap();
    let v = ClosedFormVelocity::uniform(ds).with_cone_fd_step(0.005).extended_outside_support();
    let grid = [0.0, 0.1, 0.26];
    let spec = IntegratorSpec::fixed(Scheme::Euler, 2000);
    let n = 4000;
    let mut mean = [0.0; 3];
    for i in 0..n {
        let x0 = [-1.0 + 2.0 * (i as f64 + 0.5) / n as f64];
        let states = states_at(&v, &x0, &grid, &spec).unwrap();
        for (k, (x, &t)) in states.iter().zip(&grid).enumerate() {
            mean[k] += jacobian_spectral_norm(&v, x, t, 3, 0).unwrap() / n as f64;
        }
    }
    let s = |t: f64| 1.0 - t;
    let want = [
        1.0,
        1.0 / s(0.1) + 8.0 / (3.0 * s(0.1) * s(0.1)),
        1.0 / s(0.26) + 2.0 / (s(0.26) * s(0.26)),
    ];
    for k in 0..3 {
        assert!((mean[k] - want[k]).abs() < 0.1 * want[k], "t={}: {} vs {}", grid[k], mean[k], want[k]);
    }
}
