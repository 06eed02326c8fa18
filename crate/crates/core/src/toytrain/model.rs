use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::basis::{self, gram_matrix, BasisSpec, RealCoordinates};
use crate::error::{Error, Result};
use crate::grid::GridImage;
use crate::regularizer::{Decoder, Encoder, LatentTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    #[default]
    Random,
    ProjectionInit,
}

/// Stride-`p` linear encoder `p^2 -> C` and decoder `C -> p^2`, shared
/// across non-overlapping patches, without biases.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearAutoencoder {
    patch: usize,
    encoder: DMatrix<f64>,
    decoder: DMatrix<f64>,
}

impl LinearAutoencoder {
    pub fn new(patch: usize, encoder: DMatrix<f64>, decoder: DMatrix<f64>) -> Result<Self> {
        let d = patch * patch;
        let c = encoder.nrows();
        if patch == 0 || c == 0 {
            return Err(Error::param("patch size and latent channels must be positive"));
        }
        if encoder.ncols() != d || decoder.nrows() != d || decoder.ncols() != c {
            return Err(Error::shape(
                format!("encoder {c}x{d}, decoder {d}x{c}"),
                format!(
                    "encoder {}x{}, decoder {}x{}",
                    encoder.nrows(),
                    encoder.ncols(),
                    decoder.nrows(),
                    decoder.ncols()
                ),
            ));
        }
        if encoder.iter().chain(decoder.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numerical("autoencoder parameters must be finite".into()));
        }
        Ok(Self { patch, encoder, decoder })
    }

    pub fn patch(&self) -> usize {
        self.patch
    }

    pub fn latent_channels(&self) -> usize {
        self.encoder.nrows()
    }

    pub fn encoder(&self) -> &DMatrix<f64> {
        &self.encoder
    }

    pub fn decoder(&self) -> &DMatrix<f64> {
        &self.decoder
    }

    pub(crate) fn encoder_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.encoder
    }

    pub(crate) fn decoder_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.decoder
    }

    /// Patch grid `(rows, cols)` of an image.
    pub fn patch_grid(&self, image: &GridImage) -> Result<(usize, usize)> {
        let p = self.patch;
        if image.channels() != 1 {
            return Err(Error::shape("single-channel image", image.shape_string()));
        }
        if !image.width().is_multiple_of(p) || !image.height().is_multiple_of(p) {
            return Err(Error::param(format!(
                "image {}x{} is not divisible into {p}x{p} patches",
                image.width(),
                image.height()
            )));
        }
        Ok((image.height() / p, image.width() / p))
    }

    /// Patches as columns (`p^2 x patches`), pixel `(r, s)` of a patch at row `r p + s`.
    pub fn patches(&self, image: &GridImage) -> Result<DMatrix<f64>> {
        let (rows, cols) = self.patch_grid(image)?;
        let p = self.patch;
        Ok(DMatrix::from_fn(p * p, rows * cols, |k, col| {
            let (r, s) = (k / p, k % p);
            let (pj, pi) = (col / cols, col % cols);
            image.get(0, pj * p + r, pi * p + s)
        }))
    }

    pub(crate) fn unpatch(&self, cols: &DMatrix<f64>, rows: usize, grid_cols: usize) -> Result<GridImage> {
        let p = self.patch;
        GridImage::from_fn(grid_cols * p, rows * p, |i, j| {
            let col = (j / p) * grid_cols + i / p;
            cols[((j % p) * p + i % p, col)]
        })
    }

    pub(crate) fn latent_from_matrix(z: &DMatrix<f64>, rows: usize, cols: usize) -> Result<LatentTensor> {
        let mut values = Vec::with_capacity(z.len());
        for c in 0..z.nrows() {
            values.extend(z.row(c).iter());
        }
        LatentTensor::new(z.nrows(), rows, cols, values)
    }

    pub(crate) fn matrix_from_latent(latent: &LatentTensor) -> DMatrix<f64> {
        DMatrix::from_row_slice(latent.channels(), latent.height() * latent.width(), latent.values())
    }
}

impl Encoder for LinearAutoencoder {
    fn encode(&self, image: &GridImage) -> Result<LatentTensor> {
        let (rows, cols) = self.patch_grid(image)?;
        Self::latent_from_matrix(&(&self.encoder * self.patches(image)?), rows, cols)
    }
}

impl Decoder for LinearAutoencoder {
    fn decode(&self, latent: &LatentTensor) -> Result<GridImage> {
        if latent.channels() != self.latent_channels() {
            return Err(Error::shape(format!("{} channels", self.latent_channels()), latent.channels()));
        }
        let x = &self.decoder * Self::matrix_from_latent(latent);
        self.unpatch(&x, latent.height(), latent.width())
    }
}

/// Builds the autoencoder for `spec` (a `p x p` basis). `channels` lists the
/// 1-based basis modes carried by the latent, in channel order.
///
/// `Random` draws every weight uniformly from `+-1/sqrt(fan_in)`.
/// `ProjectionInit` makes the decoder the cell-average reconstruction of the
/// chosen modes (in real coordinates) and the encoder its pixel-space
/// least-squares inverse, so decoding after encoding is the orthogonal
/// projection onto their span.
pub fn init_model(
    spec: &BasisSpec,
    channels: &[usize],
    mode: InitMode,
    rng: &mut impl Rng,
) -> Result<LinearAutoencoder> {
    if spec.width != spec.height {
        return Err(Error::param("the patch basis must be square"));
    }
    let p = spec.width;
    let d = p * p;
    let c = channels.len();
    if c == 0 {
        return Err(Error::param("the latent needs at least one channel"));
    }
    match mode {
        InitMode::Random => {
            let mut draw = |rows, cols, fan_in: usize| {
                let bound = 1.0 / (fan_in as f64).sqrt();
                DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound))
            };
            let encoder = draw(c, d, d);
            let decoder = draw(d, c, c);
            LinearAutoencoder::new(p, encoder, decoder)
        }
        InitMode::ProjectionInit => {
            let basis = gram_matrix(spec)?;
            let coords = RealCoordinates::new(&basis, channels)?;
            let mut decoder = DMatrix::zeros(d, c);
            for t in 0..c {
                let mut e = vec![0.0; c];
                e[t] = 1.0;
                let img = basis::reconstruct(&basis, &coords.from_real(&e)?)?;
                decoder.column_mut(t).copy_from_slice(img.values());
            }
            let normal = decoder.transpose() * &decoder;
            let encoder = normal
                .try_inverse()
                .ok_or_else(|| Error::Numerical("selected modes are linearly dependent on the patch grid".into()))?
                * decoder.transpose();
            LinearAutoencoder::new(p, encoder, decoder)
        }
    }
}
