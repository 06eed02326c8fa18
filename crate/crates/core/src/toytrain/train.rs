use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basis::{frequency_permutation, BasisSpec, Family, FourierConvention};
use crate::dynamics::{discretize, Direction, DiscreteUpdate, Method};
use crate::error::{Error, Result};
use crate::grid::GridImage;
use crate::io::format_g17;
use crate::regularizer::{Distance, LossBreakdown, LossWeights};
use crate::scalespace::{sample_pair, BlurKind, BlurSchedule};
use crate::transition::{build_a_closed, normalize_a, Normalization};

use super::model::{init_model, InitMode, LinearAutoencoder};

/// Training protocol parameters. Missing JSON fields take the defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub alpha: f64,
    pub learning_rate: f64,
    pub ssm_lr_factor: f64,
    pub momentum: f64,
    pub ema_decay: f64,
    pub delta_init: f64,
    pub tau_max: f64,
    pub delta_i: f64,
    pub lambda_z: f64,
    pub lambda_i: f64,
    pub d_i: Distance,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub centering: bool,
    pub learn_a: bool,
    pub patch: usize,
    pub latent_channels: usize,
    pub family: Family,
    pub normalization: Normalization,
    pub method: Method,
    pub blur: BlurKind,
    pub init: InitMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.25,
            learning_rate: 0.05,
            ssm_lr_factor: 0.1,
            momentum: 0.9,
            ema_decay: 0.999,
            delta_init: 0.1,
            tau_max: 10.0,
            delta_i: 4.0,
            lambda_z: 0.25,
            lambda_i: 1.0,
            d_i: Distance::Mae,
            steps: 2000,
            batch_size: 8,
            seed: 0,
            centering: true,
            learn_a: true,
            patch: 4,
            latent_channels: 5,
            family: Family::Fourier,
            normalization: Normalization::MaxAbsOne,
            method: Method::Zoh,
            blur: BlurKind::default(),
            init: InitMode::Random,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::param("alpha must lie in [0, 1]"));
        }
        if !(self.learning_rate >= 0.0) || !positive(self.ssm_lr_factor) || !positive(self.delta_init) {
            return Err(Error::param("rates and the initial step must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(0.0..=1.0).contains(&self.ema_decay) {
            return Err(Error::param("momentum and EMA decay must lie in [0, 1)"));
        }
        if self.batch_size == 0 || self.patch == 0 {
            return Err(Error::param("batch size and patch size must be positive"));
        }
        if !(1..=self.patch * self.patch).contains(&self.latent_channels) {
            return Err(Error::param("latent channels must lie in 1..=patch^2"));
        }
        self.schedule().validate()?;
        self.weights().validate()
    }

    pub fn schedule(&self) -> BlurSchedule {
        BlurSchedule {
            tau_max: self.tau_max,
            delta_i: self.delta_i,
            ..BlurSchedule::default()
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda_z: self.lambda_z,
            lambda_i: self.lambda_i,
            alpha: self.alpha,
            d_z: Distance::Mse,
            d_i: self.d_i,
        }
    }

    /// The `p x p` basis behind the latent channels. Fourier uses the centered
    /// convention so that channels can be real.
    pub fn basis_spec(&self) -> Result<BasisSpec> {
        let spec = BasisSpec::new(self.family, self.patch, self.patch, self.patch, self.patch)?;
        Ok(spec.with_fourier(FourierConvention::Centered))
    }

    /// The first `latent_channels` modes in low-to-high frequency order.
    pub fn channels(&self) -> Result<Vec<usize>> {
        let mut order = frequency_permutation(&self.basis_spec()?);
        order.truncate(self.latent_channels);
        Ok(order)
    }
}

/// Learnable transition matrix on a frozen support, with its step size.
#[derive(Debug, Clone, PartialEq)]
pub struct SsmParams {
    pub a: DMatrix<f64>,
    pub support: Vec<(usize, usize)>,
    pub delta: f64,
    pub method: Method,
}

impl SsmParams {
    pub fn new(a: DMatrix<f64>, delta: f64, method: Method) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::shape("square matrix", format!("{}x{}", a.nrows(), a.ncols())));
        }
        let mut support = Vec::new();
        for c in 0..a.ncols() {
            for r in 0..a.nrows() {
                if a[(r, c)] != 0.0 {
                    support.push((r, c));
                }
            }
        }
        Ok(Self { a, support, delta, method })
    }

    /// `A` of `spec`, normalized over the whole matrix, restricted to `channels`.
    pub fn from_basis(
        spec: &BasisSpec,
        channels: &[usize],
        normalization: Normalization,
        delta: f64,
        method: Method,
    ) -> Result<Self> {
        let a = normalize_a(&build_a_closed(spec)?, normalization);
        Self::new(a.restrict(channels)?, delta, method)
    }

    pub fn is_diagonal(&self) -> bool {
        self.support.iter().all(|&(r, c)| r == c)
    }

    pub fn update(&self) -> Result<DiscreteUpdate> {
        discretize(&self.a, self.delta, self.method, Direction::Blur)
    }
}

/// Gradients of one branch objective.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub encoder: DMatrix<f64>,
    pub decoder: DMatrix<f64>,
    /// Only support entries are nonzero.
    pub a: DMatrix<f64>,
    pub delta: f64,
}

/// Subtracts per-block column means: each block of `block` columns is one
/// image's spatial grid.
pub(crate) fn center_blocks(z: &DMatrix<f64>, block: usize) -> DMatrix<f64> {
    let mut out = z.clone();
    for start in (0..z.ncols()).step_by(block) {
        for r in 0..z.nrows() {
            let mean = (start..start + block).map(|c| z[(r, c)]).sum::<f64>() / block as f64;
            for c in start..start + block {
                out[(r, c)] -= mean;
            }
        }
    }
    out
}

/// Reconstruction MSE `mean((D E X - X)^2)` and its gradients.
pub fn recon_objective(model: &LinearAutoencoder, x: &DMatrix<f64>) -> (f64, DMatrix<f64>, DMatrix<f64>) {
    let z = model.encoder() * x;
    let r = model.decoder() * &z - x;
    let count = r.len() as f64;
    let loss = r.norm_squared() / count;
    let dr = r * (2.0 / count);
    let grad_d = &dr * z.transpose();
    let grad_e = model.decoder().transpose() * dr * x.transpose();
    (loss, grad_e, grad_d)
}

/// Regularization objective on patch matrices `x1 = patches(I_tau1)` and
/// `x2 = patches(I_tau2)`, `block` patches per image, with analytic
/// gradients for the encoder, decoder, `A` support and `delta`.
#[allow(clippy::too_many_arguments)]
pub fn reg_objective(
    model: &LinearAutoencoder,
    target_encoder: &DMatrix<f64>,
    ssm: &SsmParams,
    x1: &DMatrix<f64>,
    x2: &DMatrix<f64>,
    block: usize,
    weights: &LossWeights,
    centering: bool,
) -> Result<(LossBreakdown, Gradients)> {
    let center = |z: DMatrix<f64>| if centering { center_blocks(&z, block) } else { z };
    let update = ssm.update()?;
    let abar = &update.matrix;
    let z1c = center(model.encoder() * x1);
    let z2c = center(target_encoder * x2);
    let zhat = abar * &z1c;
    let decoded = model.decoder() * &zhat;

    let diff_z = &z2c - &zhat;
    let latent = diff_z.norm_squared() / diff_z.len() as f64;
    let resid = &decoded - x2;
    let count = resid.len() as f64;
    let (pixel, g_i) = match weights.d_i {
        Distance::Mae => (
            resid.iter().map(|v| v.abs()).sum::<f64>() / count,
            resid.map(|v| weights.lambda_i * v.signum() * (v != 0.0) as u8 as f64 / count),
        ),
        Distance::Mse => (resid.norm_squared() / count, resid * (2.0 * weights.lambda_i / count)),
    };
    let loss = LossBreakdown {
        total: weights.lambda_z * latent + weights.lambda_i * pixel,
        latent_term: latent,
        pixel_term: pixel,
        tau1: 0.0,
        tau2: 0.0,
    };

    let d_zhat = diff_z * (-2.0 * weights.lambda_z / (zhat.len() as f64)) + model.decoder().transpose() * &g_i;
    let grad_d = &g_i * zhat.transpose();
    let d_abar = &d_zhat * z1c.transpose();
    let d_z1 = center(abar.transpose() * &d_zhat);
    let grad_e = d_z1 * x1.transpose();

    let n = ssm.a.nrows();
    let mut grad_a = DMatrix::zeros(n, n);
    let mut grad_delta = 0.0;
    match ssm.method {
        Method::Euler => {
            for &(r, c) in &ssm.support {
                grad_a[(r, c)] = ssm.delta * d_abar[(r, c)];
            }
            grad_delta = d_abar.component_mul(&ssm.a).sum();
        }
        Method::Zoh => {
            if !ssm.is_diagonal() {
                return Err(Error::param(
                    "ZOH gradients are only available for a diagonal transition matrix",
                ));
            }
            for k in 0..n {
                let g = d_abar[(k, k)] * abar[(k, k)];
                if ssm.support.contains(&(k, k)) {
                    grad_a[(k, k)] = g * ssm.delta;
                }
                grad_delta += g * ssm.a[(k, k)];
            }
        }
    }
    Ok((
        loss,
        Gradients {
            encoder: grad_e,
            decoder: grad_d,
            a: grad_a,
            delta: grad_delta,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Recon,
    Reg,
}

impl Branch {
    pub fn name(self) -> &'static str {
        match self {
            Branch::Recon => "recon",
            Branch::Reg => "reg",
        }
    }
}

/// One row of the metric log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepMetrics {
    pub step: usize,
    pub branch: Branch,
    pub loss: LossBreakdown,
    /// Reconstruction MSE of the unblurred batch before the update.
    pub recon_mse: f64,
}

/// Model, learnable dynamics, EMA target, optimizer state and generator.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub config: TrainConfig,
    pub model: LinearAutoencoder,
    pub target_encoder: DMatrix<f64>,
    pub ssm: SsmParams,
    velocity: (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, f64),
    rng: ChaCha8Rng,
    step: usize,
}

fn check_finite(m: &DMatrix<f64>, term: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence { term: term.into() })
    }
}

impl TrainState {
    /// Initializes the model and dynamics from the master seed.
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let spec = config.basis_spec()?;
        let channels = config.channels()?;
        let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
        let model = init_model(&spec, &channels, config.init, &mut init_rng)?;
        let ssm = SsmParams::from_basis(&spec, &channels, config.normalization, config.delta_init, config.method)?;
        if config.learn_a && ssm.method == Method::Zoh && !ssm.is_diagonal() {
            return Err(Error::param(
                "learnable A under ZOH needs a diagonal matrix; use the euler method",
            ));
        }
        Self::from_parts(config, model, ssm)
    }

    /// Starts training from given parameters.
    pub fn from_parts(config: TrainConfig, model: LinearAutoencoder, ssm: SsmParams) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        let n = ssm.a.nrows();
        Ok(Self {
            velocity: (
                DMatrix::zeros(model.encoder().nrows(), model.encoder().ncols()),
                DMatrix::zeros(model.decoder().nrows(), model.decoder().ncols()),
                DMatrix::zeros(n, n),
                0.0,
            ),
            target_encoder: model.encoder().clone(),
            config,
            model,
            ssm,
            rng,
            step: 0,
        })
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// The EMA target as an autoencoder (sharing the current decoder).
    pub fn target_model(&self) -> LinearAutoencoder {
        LinearAutoencoder::new(self.model.patch(), self.target_encoder.clone(), self.model.decoder().clone())
            .expect("target shares the model shapes")
    }

    fn patch_batch(&self, images: &[GridImage]) -> Result<(DMatrix<f64>, usize)> {
        let mut cols = Vec::with_capacity(images.len());
        for img in images {
            cols.push(self.model.patches(img)?);
        }
        let block = cols[0].ncols();
        if cols.iter().any(|c| c.ncols() != block) {
            return Err(Error::param("all images in a batch must share one size"));
        }
        let mut x = DMatrix::zeros(cols[0].nrows(), block * cols.len());
        for (b, c) in cols.iter().enumerate() {
            x.columns_mut(b * block, block).copy_from(c);
        }
        Ok((x, block))
    }

    /// One training step on `batch`: with probability alpha the
    /// regularization branch on a freshly sampled blur pair, otherwise plain
    /// reconstruction. The EMA target is updated afterwards either way.
    pub fn grad_step(&mut self, batch: &[GridImage]) -> Result<StepMetrics> {
        if batch.is_empty() {
            return Err(Error::param("empty batch"));
        }
        let cfg = self.config.clone();
        let (x, block) = self.patch_batch(batch)?;
        let (recon_mse, ge_recon, gd_recon) = recon_objective(&self.model, &x);
        let take_reg = self.rng.random::<f64>() < cfg.alpha;

        let (branch, loss, grads) = if take_reg {
            let (tau1, tau2) = sample_pair(&cfg.schedule(), &mut self.rng)?;
            let blur = |tau| -> Result<Vec<GridImage>> { batch.iter().map(|img| cfg.blur.apply(img, tau)).collect() };
            let (x1, _) = self.patch_batch(&blur(tau1)?)?;
            let (x2, _) = self.patch_batch(&blur(tau2)?)?;
            let (mut loss, grads) = reg_objective(
                &self.model,
                &self.target_encoder,
                &self.ssm,
                &x1,
                &x2,
                block,
                &cfg.weights(),
                cfg.centering,
            )?;
            loss.tau1 = tau1;
            loss.tau2 = tau2;
            (Branch::Reg, loss, Some(grads))
        } else {
            let loss = LossBreakdown {
                total: recon_mse,
                pixel_term: recon_mse,
                ..LossBreakdown::default()
            };
            (Branch::Recon, loss, None)
        };

        let (ge, gd) = match &grads {
            Some(g) => (&g.encoder, &g.decoder),
            None => (&ge_recon, &gd_recon),
        };
        check_finite(ge, "encoder")?;
        check_finite(gd, "decoder")?;
        let lr = cfg.learning_rate;
        let mu = cfg.momentum;
        self.velocity.0 = &self.velocity.0 * mu + ge;
        self.velocity.1 = &self.velocity.1 * mu + gd;
        *self.model.encoder_mut() -= &self.velocity.0 * lr;
        *self.model.decoder_mut() -= &self.velocity.1 * lr;

        if let (Some(g), true) = (&grads, cfg.learn_a) {
            check_finite(&g.a, "transition matrix")?;
            if !g.delta.is_finite() {
                return Err(Error::Divergence { term: "delta".into() });
            }
            let ssm_lr = lr * cfg.ssm_lr_factor;
            self.velocity.2 = &self.velocity.2 * mu + &g.a;
            self.velocity.3 = self.velocity.3 * mu + g.delta;
            for &(r, c) in &self.ssm.support {
                self.ssm.a[(r, c)] -= ssm_lr * self.velocity.2[(r, c)];
            }
            self.ssm.delta = (self.ssm.delta - ssm_lr * self.velocity.3).max(1e-6);
        }

        let beta = cfg.ema_decay;
        self.target_encoder = &self.target_encoder * beta + self.model.encoder() * (1.0 - beta);
        let metrics = StepMetrics {
            step: self.step,
            branch,
            loss,
            recon_mse,
        };
        self.step += 1;
        Ok(metrics)
    }

    /// Draws `batch_size` images (with replacement) from `dataset`.
    pub fn sample_batch(&mut self, dataset: &[GridImage]) -> Vec<GridImage> {
        (0..self.config.batch_size)
            .map(|_| dataset[self.rng.random_range(0..dataset.len())].clone())
            .collect()
    }
}

/// Trained state plus the per-step metric log.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub log: Vec<StepMetrics>,
}

/// Runs `config.steps` steps on batches drawn from `dataset`.
pub fn train(config: &TrainConfig, dataset: &[GridImage]) -> Result<TrainOutcome> {
    train_from(TrainState::new(config.clone())?, dataset)
}

/// Continues training an existing state for `state.config.steps` steps.
pub fn train_from(mut state: TrainState, dataset: &[GridImage]) -> Result<TrainOutcome> {
    if dataset.is_empty() {
        return Err(Error::param("training needs a non-empty dataset"));
    }
    let mut log = Vec::with_capacity(state.config.steps);
    for _ in 0..state.config.steps {
        let batch = state.sample_batch(dataset);
        log.push(state.grad_step(&batch)?);
    }
    Ok(TrainOutcome { state, log })
}

/// `step,branch,total,latent_term,pixel_term,recon_mse` rows.
pub fn log_to_csv(log: &[StepMetrics]) -> String {
    let mut out = String::from("step,branch,total,latent_term,pixel_term,recon_mse\n");
    for m in log {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            m.step,
            m.branch.name(),
            format_g17(m.loss.total),
            format_g17(m.loss.latent_term),
            format_g17(m.loss.pixel_term),
            format_g17(m.recon_mse)
        );
    }
    out
}

/// Mean reconstruction MSE of the model over `images`.
pub fn reconstruction_mse(model: &LinearAutoencoder, images: &[GridImage]) -> Result<f64> {
    let mut total = 0.0;
    for img in images {
        let x = model.patches(img)?;
        total += recon_objective(model, &x).0;
    }
    Ok(total / images.len().max(1) as f64)
}
