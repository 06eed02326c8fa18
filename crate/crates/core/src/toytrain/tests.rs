use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::basis::{BasisSpec, Family};
use crate::dynamics::Method;
use crate::grid::{make_synthetic, GridImage, Synthetic};
use crate::regularizer::{Decoder, Distance, Encoder, LossWeights};
use crate::scalespace::BlurKind;
use crate::transition::{build_a_closed, Normalization};

fn projection_model(cfg: &TrainConfig) -> LinearAutoencoder {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    init_model(&cfg.basis_spec().unwrap(), &cfg.channels().unwrap(), InitMode::ProjectionInit, &mut rng).unwrap()
}

fn corpus() -> Vec<GridImage> {
    synthetic_corpus(6, 16, 3).unwrap()
}

#[test]
fn projection_init_reproduces_span_members() {
    let cfg = TrainConfig::default();
    let model = projection_model(&cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let z = crate::regularizer::LatentTensor::new(
        5,
        4,
        4,
        (0..80).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let image = model.decode(&z).unwrap();
    let again = model.decode(&model.encode(&image).unwrap()).unwrap();
    let err = image
        .values()
        .iter()
        .zip(again.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(err <= 1e-8, "{err}");
}

#[test]
fn projection_init_dc_channel_is_patch_mean() {
    let cfg = TrainConfig::default();
    let model = projection_model(&cfg);
    let img = GridImage::from_fn(8, 8, |_, _| 2.5).unwrap();
    let z = model.encode(&img).unwrap();
    let dc = z.channel(0);
    let scale = dc[0];
    assert!(scale.abs() > 1e-6);
    assert!(dc.iter().all(|v| (v - scale).abs() < 1e-12));
    for c in 1..5 {
        assert!(z.channel(c).iter().all(|v| v.abs() < 1e-12));
    }
}

#[test]
fn same_seed_same_parameters() {
    let cfg = TrainConfig {
        steps: 20,
        ..TrainConfig::default()
    };
    let a = train(&cfg, &corpus()).unwrap();
    let b = train(&cfg, &corpus()).unwrap();
    assert_eq!(a.state.model, b.state.model);
    assert_eq!(a.state.ssm, b.state.ssm);
    assert_eq!(a.log, b.log);
    let c = train(&TrainConfig { seed: 1, ..cfg }, &corpus()).unwrap();
    assert_ne!(a.state.model, c.state.model);
}

#[test]
fn zero_image_zero_latent() {
    let state = TrainState::new(TrainConfig::default()).unwrap();
    let z = state.model.encode(&GridImage::zeros(8, 8, 1).unwrap()).unwrap();
    assert!(z.values().iter().all(|&v| v == 0.0));
}

#[test]
fn alpha_zero_only_reconstructs() {
    let cfg = TrainConfig {
        alpha: 0.0,
        steps: 50,
        ..TrainConfig::default()
    };
    let out = train(&cfg, &corpus()).unwrap();
    assert!(out.log.iter().all(|m| m.branch == Branch::Recon));
    let init = TrainState::new(cfg).unwrap();
    assert_eq!(out.state.ssm, init.ssm);
}

#[test]
fn alpha_one_only_regularizes() {
    let cfg = TrainConfig {
        alpha: 1.0,
        steps: 10,
        ..TrainConfig::default()
    };
    let out = train(&cfg, &corpus()).unwrap();
    assert!(out.log.iter().all(|m| m.branch == Branch::Reg));
    assert!(out.log.iter().all(|m| (m.loss.tau2 - m.loss.tau1 - 4.0).abs() < 1e-12));
}

#[test]
fn zero_rate_leaves_parameters() {
    let cfg = TrainConfig {
        learning_rate: 0.0,
        alpha: 0.5,
        steps: 30,
        ..TrainConfig::default()
    };
    let init = TrainState::new(cfg.clone()).unwrap();
    let out = train(&cfg, &corpus()).unwrap();
    assert_eq!(out.state.model, init.model);
    assert_eq!(out.state.ssm, init.ssm);
    let diff = (&out.state.target_encoder - init.model.encoder()).amax();
    assert!(diff < 1e-14);
}

#[test]
fn ema_follows_hand_trace() {
    let cfg = TrainConfig {
        ema_decay: 0.5,
        momentum: 0.0,
        alpha: 0.0,
        ..TrainConfig::default()
    };
    let mut state = TrainState::new(cfg).unwrap();
    let images = corpus();
    let mut expected = state.model.encoder().clone();
    for _ in 0..3 {
        state.grad_step(&images[..2]).unwrap();
        expected = expected * 0.5 + state.model.encoder() * 0.5;
    }
    assert!((&state.target_encoder - expected).amax() < 1e-14);
}

#[test]
fn zero_steps_is_identity() {
    let cfg = TrainConfig {
        steps: 0,
        ..TrainConfig::default()
    };
    let out = train(&cfg, &corpus()).unwrap();
    assert!(out.log.is_empty());
    assert_eq!(out.state.model, TrainState::new(cfg).unwrap().model);
}

#[test]
fn training_reduces_reconstruction_error() {
    let cfg = TrainConfig {
        steps: 400,
        ..TrainConfig::default()
    };
    let images = corpus();
    let init = TrainState::new(cfg.clone()).unwrap();
    let before = reconstruction_mse(&init.model, &images).unwrap();
    let out = train(&cfg, &images).unwrap();
    let after = reconstruction_mse(&out.state.model, &images).unwrap();
    assert!(after < 0.5 * before, "{before} -> {after}");
}

#[test]
fn csv_log_has_header_and_rows() {
    let cfg = TrainConfig {
        steps: 3,
        ..TrainConfig::default()
    };
    let out = train(&cfg, &corpus()).unwrap();
    let csv = log_to_csv(&out.log);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "step,branch,total,latent_term,pixel_term,recon_mse");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("0,"));
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = [
        TrainConfig {
            alpha: 1.5,
            ..TrainConfig::default()
        },
        TrainConfig {
            latent_channels: 17,
            ..TrainConfig::default()
        },
        TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        },
        TrainConfig {
            family: Family::Legendre,
            method: Method::Zoh,
            ..TrainConfig::default()
        },
    ];
    for cfg in bad {
        assert!(TrainState::new(cfg).is_err());
    }
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

struct Instance {
    model: LinearAutoencoder,
    target: DMatrix<f64>,
    ssm: SsmParams,
    x1: DMatrix<f64>,
    x2: DMatrix<f64>,
}

fn instance(family: Family, method: Method, seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = BasisSpec::new(family, 4, 4, 4, 4)
        .unwrap()
        .with_fourier(crate::basis::FourierConvention::Centered);
    let channels = [1, 2, 3, 5];
    let ssm = SsmParams::from_basis(&spec, &channels, Normalization::MaxAbsOne, 0.3, method).unwrap();
    Instance {
        model: LinearAutoencoder::new(4, random_matrix(4, 16, &mut rng), random_matrix(16, 4, &mut rng)).unwrap(),
        target: random_matrix(4, 16, &mut rng),
        ssm,
        x1: random_matrix(16, 6, &mut rng),
        x2: random_matrix(16, 6, &mut rng),
    }
}

fn total(inst: &Instance, weights: &LossWeights) -> f64 {
    reg_objective(&inst.model, &inst.target, &inst.ssm, &inst.x1, &inst.x2, 3, weights, true)
        .unwrap()
        .0
        .total
}

fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = numeric.iter().map(|v| v * v).sum::<f64>().sqrt();
    diff / norm.max(1e-12)
}

fn check_gradients(family: Family, method: Method, d_i: Distance) {
    let weights = LossWeights {
        d_i,
        ..LossWeights::default()
    };
    let inst = instance(family, method, 4);
    let (_, g) = reg_objective(&inst.model, &inst.target, &inst.ssm, &inst.x1, &inst.x2, 3, &weights, true).unwrap();
    let h = 1e-6;
    let fd = |perturb: &dyn Fn(&mut Instance, f64)| {
        let mut plus = instance(family, method, 4);
        perturb(&mut plus, h);
        let mut minus = instance(family, method, 4);
        perturb(&mut minus, -h);
        (total(&plus, &weights) - total(&minus, &weights)) / (2.0 * h)
    };
    let num_e: Vec<f64> = (0..64).map(|k| fd(&|i, d| i.model.encoder_mut()[k] += d)).collect();
    let num_d: Vec<f64> = (0..64).map(|k| fd(&|i, d| i.model.decoder_mut()[k] += d)).collect();
    assert!(rel_err(g.encoder.as_slice(), &num_e) < 1e-5, "encoder");
    assert!(rel_err(g.decoder.as_slice(), &num_d) < 1e-5, "decoder");
    let support = inst.ssm.support.clone();
    let ana_a: Vec<f64> = support.iter().map(|&rc| g.a[rc]).collect();
    let num_a: Vec<f64> = support.iter().map(|&rc| fd(&|i, d| i.ssm.a[rc] += d)).collect();
    assert!(rel_err(&ana_a, &num_a) < 1e-5, "A");
    let num_delta = fd(&|i, d| i.ssm.delta += d);
    assert!((g.delta - num_delta).abs() <= 1e-5 * num_delta.abs().max(1e-8), "delta");
}

#[test]
fn gradients_match_finite_differences_euler() {
    check_gradients(Family::Legendre, Method::Euler, Distance::Mse);
}

#[test]
fn gradients_match_finite_differences_zoh() {
    check_gradients(Family::Fourier, Method::Zoh, Distance::Mse);
    check_gradients(Family::Fourier, Method::Zoh, Distance::Mae);
}

#[test]
fn zoh_gradient_refuses_dense_a() {
    let inst = instance(Family::Legendre, Method::Zoh, 1);
    assert!(!inst.ssm.is_diagonal());
    let r = reg_objective(
        &inst.model,
        &inst.target,
        &inst.ssm,
        &inst.x1,
        &inst.x2,
        3,
        &LossWeights::default(),
        true,
    );
    assert!(r.is_err());
}

#[test]
fn trajectory_decay_matches_raw_a() {
    let cfg = TrainConfig::default();
    let model = projection_model(&cfg);
    let a = build_a_closed(&cfg.basis_spec().unwrap()).unwrap();
    let raw = a.restrict(&cfg.channels().unwrap()).unwrap();
    let image = make_synthetic(&Synthetic::RandomSmooth { bandlimit: 6 }, 16, 16, 5).unwrap();
    let taus: Vec<f64> = (0..6).map(|k| k as f64 * 0.4).collect();
    let fits = trajectory_fit(&model, &image, &taus, BlurKind::Spectral).unwrap();
    for fit in &fits {
        assert!(!fit.skipped);
        let expected = raw[(fit.channel, fit.channel)];
        assert!((fit.decay_rate - expected).abs() <= 0.05 * expected.abs().max(1e-9), "{fit:?}");
        assert!(fit.r_squared > 0.999);
    }
    assert!(median_r_squared(&fits).unwrap() > 0.999);
}

#[test]
fn trajectory_fit_skips_vanishing_channels() {
    let model = projection_model(&TrainConfig::default());
    let image = GridImage::from_fn(8, 8, |_, _| 1.0).unwrap();
    let fits = trajectory_fit(&model, &image, &[0.0, 1.0, 2.0], BlurKind::Spectral).unwrap();
    assert!(!fits[0].skipped);
    assert!(fits[0].decay_rate.abs() < 1e-12);
    assert!(fits[1..].iter().all(|f| f.skipped));
    assert!(trajectory_fit(&model, &image, &[1.0, 2.0], BlurKind::Spectral).is_err());
}

#[test]
fn norm_probe_edge_cases() {
    let model = projection_model(&TrainConfig::default());
    let report = norm_probe(&model, &model, &corpus()).unwrap();
    assert!((report.ratio - 1.0).abs() < 1e-15);
    let zeros = vec![GridImage::zeros(8, 8, 1).unwrap(); 2];
    let report = norm_probe(&model, &model, &zeros).unwrap();
    assert_eq!(report.ratio, 1.0);
    assert_eq!(report.centered_mean_norm, 0.0);
}

#[test]
fn unmask_curve_decreases_under_projection() {
    let model = projection_model(&TrainConfig::default());
    let image = make_synthetic(&Synthetic::RandomSmooth { bandlimit: 4 }, 16, 16, 2).unwrap();
    let curve = unmask_curve(&model, &image, &[1, 2, 3, 4, 5]).unwrap();
    assert_eq!(curve.len(), 6);
    assert!(curve.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{curve:?}");
    let full = reconstruction_mse(&model, std::slice::from_ref(&image)).unwrap();
    assert!((curve[5] - full).abs() < 1e-12);
    assert!(unmask_curve(&model, &image, &[1, 1, 2, 3, 4]).is_err());
}
