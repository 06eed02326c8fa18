use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use ssreg::basis::{self, BasisSpec, CoefficientVector, Family, FourierConvention};
use ssreg::dynamics::{simulate_trajectory, Method};
use ssreg::grid::GridImage;
use ssreg::io;
use ssreg::scalespace::{sample_pair, BlurKind, BlurSchedule, Boundary};
use ssreg::toytrain::{self, InitMode, LinearAutoencoder, TrainConfig};
use ssreg::transition::{build_a_closed, build_a_numeric, normalize_a, Normalization};
use ssreg::verify;

/// Basis-coefficient blur dynamics and latent regularization toolkit.
#[derive(Parser, Debug)]
#[command(name = "ssreg", version, arg_required_else_help = true)]
struct Cli {
    /// Master seed for every random draw (default 0; `train` falls back to
    /// the config file's seed).
    #[arg(long, global = true, env = "SSREG_SEED")]
    seed: Option<u64>,
    /// Worker threads for `verify all`.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Emit the transition matrix A.
    BuildA {
        #[command(flatten)]
        basis: BasisArgs,
        /// Assemble by quadrature instead of the closed forms.
        #[arg(long)]
        numeric: bool,
        #[arg(long, default_value = "raw")]
        normalize: Normalization,
        /// Write `row,col,value` triplets of the nonzeros instead of the dense matrix.
        #[arg(long)]
        triplets: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Gram matrix, projection or reconstruction.
    Basis {
        #[arg(value_enum)]
        op: BasisOp,
        #[command(flatten)]
        basis: BasisArgs,
        /// Image (projection) or coefficient CSV (reconstruction).
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Gaussian blur of an image.
    Blur {
        #[arg(long)]
        tau: f64,
        #[arg(long, value_enum, default_value_t = BlurArg::Periodic)]
        boundary: BlurArg,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Coefficient trajectory of a projected image under blur dynamics.
    Simulate {
        #[command(flatten)]
        basis: BasisArgs,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        delta: f64,
        #[arg(long, default_value_t = 10)]
        steps: usize,
        #[arg(long, default_value = "zoh")]
        method: Method,
        #[arg(long, default_value = "raw")]
        normalize: Normalization,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an acceptance check by name, or `all`.
    Verify { name: String },
    /// Draw blur pairs `(tau1, tau2)`.
    SamplePairs {
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long, default_value_t = 10.0)]
        tau_max: f64,
        #[arg(long, default_value_t = 4.0)]
        delta_i: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the toy autoencoder.
    Train {
        /// JSON training config; missing fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
        /// Per-step metric log CSV (stdout if omitted).
        #[arg(long)]
        log: Option<PathBuf>,
        /// Trained model JSON.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Probe a model: trajectory fit, norm comparison or channel unmasking.
    Probe {
        #[arg(value_enum)]
        kind: ProbeKind,
        /// Trained model JSON; the projection-initialized model if omitted.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Second (uncentered) model for the norm probe.
        #[arg(long)]
        uncentered: Option<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
        /// Largest blur variance of the trajectory grid.
        #[arg(long, default_value_t = 10.0)]
        tau_max: f64,
        #[arg(long, default_value_t = 11)]
        tau_points: usize,
        /// Blur applied to probe images before unmasking.
        #[arg(long, default_value_t = 2.0)]
        blur_tau: f64,
        /// Comma-separated 1-based channel order for unmasking (default low to high).
        #[arg(long, value_delimiter = ',')]
        order: Option<Vec<usize>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct BasisArgs {
    #[arg(long)]
    family: Family,
    #[arg(long)]
    mx: usize,
    #[arg(long)]
    my: usize,
    #[arg(long)]
    w: usize,
    #[arg(long)]
    h: usize,
    #[arg(long, value_enum, default_value_t = FourierArg::Printed)]
    fourier: FourierArg,
    #[arg(long, default_value_t = 6)]
    quad_order: usize,
}

impl BasisArgs {
    fn spec(&self) -> anyhow::Result<BasisSpec> {
        let convention = match self.fourier {
            FourierArg::Printed => FourierConvention::Printed,
            FourierArg::Centered => FourierConvention::Centered,
        };
        Ok(BasisSpec::new(self.family, self.w, self.h, self.mx, self.my)?
            .with_quad_order(self.quad_order)?
            .with_fourier(convention))
    }
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Image files; a seeded synthetic corpus when none are given.
    #[arg(long = "image", num_args = 1..)]
    images: Vec<PathBuf>,
    #[arg(long, default_value_t = 64)]
    corpus_size: usize,
    #[arg(long, default_value_t = 16)]
    image_size: usize,
}

impl DataArgs {
    fn load(&self, seed: u64) -> anyhow::Result<Vec<GridImage>> {
        if self.images.is_empty() {
            return Ok(toytrain::synthetic_corpus(self.corpus_size, self.image_size, seed)?);
        }
        self.images
            .iter()
            .map(|p| io::read_image(p).with_context(|| format!("reading {}", p.display())))
            .collect()
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum FourierArg {
    Printed,
    Centered,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum BasisOp {
    Gram,
    Project,
    Reconstruct,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum BlurArg {
    Periodic,
    Reflect,
    Spectral,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum ProbeKind {
    TrajectoryFit,
    Norm,
    Unmask,
}

/// Trained parameters as written by `train --model`.
#[derive(Serialize, Deserialize)]
struct SavedModel {
    config: TrainConfig,
    encoder: Vec<Vec<f64>>,
    decoder: Vec<Vec<f64>>,
    target_encoder: Vec<Vec<f64>>,
    a: Vec<Vec<f64>>,
    delta: f64,
}

type Matrix = nalgebra::DMatrix<f64>;

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>]) -> anyhow::Result<Matrix> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        bail!("ragged matrix in model file");
    }
    Ok(Matrix::from_fn(rows.len(), cols, |r, c| rows[r][c]))
}

impl SavedModel {
    fn from_state(state: &toytrain::TrainState) -> Self {
        Self {
            config: state.config.clone(),
            encoder: rows(state.model.encoder()),
            decoder: rows(state.model.decoder()),
            target_encoder: rows(&state.target_encoder),
            a: rows(&state.ssm.a),
            delta: state.ssm.delta,
        }
    }

    fn load(path: &Path) -> anyhow::Result<LinearAutoencoder> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let saved: SavedModel = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        Ok(LinearAutoencoder::new(
            saved.config.patch,
            from_rows(&saved.encoder)?,
            from_rows(&saved.decoder)?,
        )?)
    }
}

fn emit(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json(value: &impl Serialize) -> anyhow::Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn complex_json(values: &[num_complex::Complex64]) -> Vec<[f64; 2]> {
    values.iter().map(|c| [c.re, c.im]).collect()
}

enum Outcome {
    Done,
    VerifyFailed,
}

fn run(cli: Cli) -> anyhow::Result<Outcome> {
    let json = cli.format == Format::Json;
    let seed = cli.seed.unwrap_or(0);
    match cli.command {
        Command::BuildA {
            basis,
            numeric,
            normalize,
            triplets,
            out,
        } => {
            let spec = basis.spec()?;
            let a = if numeric { build_a_numeric(&spec)? } else { build_a_closed(&spec)? };
            let a = normalize_a(&a, normalize);
            let text = match (json, triplets) {
                (true, true) => to_json(&a.triplets())?,
                (true, false) => to_json(&rows(a.dense()))?,
                (false, true) => io::triplets_to_csv(&a.triplets()),
                (false, false) => io::matrix_to_csv(a.dense()),
            };
            emit(out.as_deref(), &text)?;
        }
        Command::Basis { op, basis, input, out } => {
            let set = basis::gram_matrix(&basis.spec()?)?;
            let text = match op {
                BasisOp::Gram => {
                    if json {
                        let g = set.gram();
                        let m: Vec<Vec<[f64; 2]>> = (0..g.nrows())
                            .map(|r| complex_json(&g.row(r).iter().copied().collect::<Vec<_>>()))
                            .collect();
                        to_json(&m)?
                    } else {
                        io::complex_matrix_to_csv(set.gram())
                    }
                }
                BasisOp::Project => {
                    let path = input.context("project needs --in <image>")?;
                    let image = io::read_image(&path).with_context(|| format!("reading {}", path.display()))?;
                    let c = basis::project(&set, &image)?;
                    if json {
                        to_json(&complex_json(c.as_slice()))?
                    } else {
                        io::complex_rows_to_csv(&[c.0])
                    }
                }
                BasisOp::Reconstruct => {
                    let path = input.context("reconstruct needs --in <coefficients.csv>")?;
                    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                    let mut parsed = io::parse_complex_rows(&text)?;
                    if parsed.len() != 1 {
                        bail!("expected one row of coefficients, found {}", parsed.len());
                    }
                    let image = basis::reconstruct(&set, &CoefficientVector(parsed.remove(0)))?;
                    if json {
                        to_json(&image.values())?
                    } else {
                        io::image_to_csv(&image)
                    }
                }
            };
            emit(out.as_deref(), &text)?;
        }
        Command::Blur {
            tau,
            boundary,
            input,
            out,
        } => {
            let image = io::read_image(&input).with_context(|| format!("reading {}", input.display()))?;
            let kind = match boundary {
                BlurArg::Periodic => BlurKind::Sampled(Boundary::Periodic),
                BlurArg::Reflect => BlurKind::Sampled(Boundary::Reflect),
                BlurArg::Spectral => BlurKind::Spectral,
            };
            let blurred = kind.apply(&image, tau)?;
            io::write_image(&blurred, &out).with_context(|| format!("writing {}", out.display()))?;
        }
        Command::Simulate {
            basis,
            input,
            delta,
            steps,
            method,
            normalize,
            out,
        } => {
            let spec = basis.spec()?;
            let set = basis::gram_matrix(&spec)?;
            let image = io::read_image(&input).with_context(|| format!("reading {}", input.display()))?;
            let c0 = basis::project(&set, &image)?;
            let a = normalize_a(&build_a_closed(&spec)?, normalize);
            let traj = simulate_trajectory(a.dense(), &c0, delta, steps, method)?;
            let states: Vec<Vec<_>> = traj.into_iter().map(|c| c.0).collect();
            let text = if json {
                to_json(&states.iter().map(|s| complex_json(s)).collect::<Vec<_>>())?
            } else {
                io::complex_rows_to_csv(&states)
            };
            emit(out.as_deref(), &text)?;
        }
        Command::Verify { name } => {
            let reports = if name == "all" {
                verify::run_all(seed, cli.threads)?
            } else {
                vec![verify::run_check(&name, seed)?]
            };
            if json {
                print!("{}", to_json(&reports)?);
            } else {
                for r in &reports {
                    println!("{}", r.summary());
                }
            }
            if reports.iter().any(|r| !r.passed) {
                return Ok(Outcome::VerifyFailed);
            }
        }
        Command::SamplePairs {
            count,
            tau_max,
            delta_i,
            out,
        } => {
            let schedule = BlurSchedule {
                tau_max,
                delta_i,
                ..BlurSchedule::default()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pairs = (0..count)
                .map(|_| sample_pair(&schedule, &mut rng))
                .collect::<ssreg::Result<Vec<_>>>()?;
            let text = if json {
                to_json(&pairs)?
            } else {
                let mut s = String::from("tau1,tau2\n");
                for (a, b) in &pairs {
                    s.push_str(&format!("{},{}\n", io::format_g17(*a), io::format_g17(*b)));
                }
                s
            };
            emit(out.as_deref(), &text)?;
        }
        Command::Train {
            config,
            data,
            log,
            model,
        } => {
            let mut cfg: TrainConfig = match &config {
                Some(p) => {
                    let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                    serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
                }
                None => TrainConfig::default(),
            };
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            let dataset = data.load(cfg.seed)?;
            let outcome = toytrain::train(&cfg, &dataset)?;
            emit(log.as_deref(), &toytrain::log_to_csv(&outcome.log))?;
            if let Some(path) = model {
                emit(Some(&path), &to_json(&SavedModel::from_state(&outcome.state))?)?;
            }
        }
        Command::Probe {
            kind,
            model,
            uncentered,
            data,
            tau_max,
            tau_points,
            blur_tau,
            order,
            out,
        } => {
            let base = match &model {
                Some(p) => SavedModel::load(p)?,
                None => {
                    let cfg = TrainConfig::default();
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    toytrain::init_model(&cfg.basis_spec()?, &cfg.channels()?, InitMode::ProjectionInit, &mut rng)?
                }
            };
            let images = data.load(seed.wrapping_add(1))?;
            let text = match kind {
                ProbeKind::TrajectoryFit => {
                    if tau_points < 2 {
                        bail!("--tau-points must be at least 2");
                    }
                    let grid: Vec<f64> =
                        (0..tau_points).map(|k| tau_max * k as f64 / (tau_points - 1) as f64).collect();
                    let mut fits = Vec::new();
                    for img in &images {
                        fits.push(toytrain::trajectory_fit(&base, img, &grid, BlurKind::default())?);
                    }
                    let median = toytrain::median_r_squared(fits.iter().flatten());
                    to_json(&serde_json::json!({ "tau_grid": grid, "median_r_squared": median, "fits": fits }))?
                }
                ProbeKind::Norm => {
                    let path = uncentered.context("the norm probe needs --uncentered <model.json>")?;
                    let other = SavedModel::load(&path)?;
                    to_json(&toytrain::norm_probe(&base, &other, &images)?)?
                }
                ProbeKind::Unmask => {
                    let order = order.unwrap_or_else(|| (1..=base.latent_channels()).collect());
                    let mut curves = Vec::new();
                    for img in &images {
                        let blurred = BlurKind::default().apply(img, blur_tau)?;
                        curves.push(toytrain::unmask_curve(&base, &blurred, &order)?);
                    }
                    to_json(&serde_json::json!({ "order": order, "curves": curves }))?
                }
            };
            emit(out.as_deref(), &text)?;
        }
    }
    Ok(Outcome::Done)
}

fn is_usage_error(err: &anyhow::Error) -> bool {
    use ssreg::Error as E;
    match err.downcast_ref::<E>() {
        Some(E::Parameter(_) | E::Range { .. } | E::Shape { .. } | E::Format { .. } | E::Io(_)) => true,
        Some(_) => false,
        None => true,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::VerifyFailed) => ExitCode::from(1),
        Err(err) => {
            eprintln!("error: {err:#}");
            if is_usage_error(&err) {
                eprintln!("usage: ssreg [--seed N] [--threads N] [--format csv|json] <COMMAND> ...");
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
