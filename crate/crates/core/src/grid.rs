//! Pixel grids on the continuous domain `[0, W] x [0, H]`.
//!
//! Pixel `(i, j)` covers the cell `[i, i+1) x [j, j+1)`. Continuous functions
//! are sampled at cell centers `(i + 1/2, j + 1/2)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::spectral;

/// Multi-channel image stored channel-major, then row-major:
/// `values[(c * height + j) * width + i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridImage {
    width: usize,
    height: usize,
    channels: usize,
    values: Vec<f64>,
}

impl GridImage {
    pub fn new(width: usize, height: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::param(format!(
                "image dimensions must be positive, got {width}x{height}x{channels}"
            )));
        }
        let expected = width * height * channels;
        if values.len() != expected {
            return Err(Error::shape(
                format!("{expected} values"),
                format!("{} values", values.len()),
            ));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::param(format!("non-finite pixel value at index {pos}")));
        }
        Ok(Self {
            width,
            height,
            channels,
            values,
        })
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Result<Self> {
        Self::new(width, height, channels, vec![0.0; width * height * channels])
    }

    /// Single-channel image filled from `f(i, j)`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(width * height);
        for j in 0..height {
            for i in 0..width {
                values.push(f(i, j));
            }
        }
        Self::new(width, height, 1, values)
    }

    /// Stacks single-channel images into one multi-channel image.
    pub fn from_channels(channels: &[GridImage]) -> Result<Self> {
        let first = channels
            .first()
            .ok_or_else(|| Error::param("cannot stack zero channels"))?;
        let (w, h) = (first.width, first.height);
        let mut values = Vec::with_capacity(w * h * channels.len());
        for ch in channels {
            if ch.width != w || ch.height != h {
                return Err(Error::shape(
                    format!("{w}x{h}"),
                    format!("{}x{}", ch.width, ch.height),
                ));
            }
            values.extend_from_slice(&ch.values);
        }
        Self::new(w, h, values.len() / (w * h), values)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, c: usize, j: usize, i: usize) -> f64 {
        self.values[(c * self.height + j) * self.width + i]
    }

    pub fn channel_values(&self, c: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.values[c * n..(c + 1) * n]
    }

    /// Copies channel `c` out as a single-channel image.
    pub fn channel(&self, c: usize) -> Result<GridImage> {
        if c >= self.channels {
            return Err(Error::Range {
                index: c + 1,
                max: self.channels,
            });
        }
        Self::new(self.width, self.height, 1, self.channel_values(c).to_vec())
    }

    pub fn same_shape(&self, other: &GridImage) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn shape_string(&self) -> String {
        format!("{}x{}x{}", self.width, self.height, self.channels)
    }

    /// Elementwise map that keeps the shape.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<GridImage> {
        Self::new(
            self.width,
            self.height,
            self.channels,
            self.values.iter().map(|&v| f(v)).collect(),
        )
    }
}

/// Applies a single-channel transform to every channel independently.
pub fn per_channel_map<F>(image: &GridImage, f: F) -> Result<GridImage>
where
    F: Fn(&GridImage) -> Result<GridImage>,
{
    let mut out = Vec::with_capacity(image.channels());
    for c in 0..image.channels() {
        let mapped = f(&image.channel(c)?)?;
        if mapped.width() != image.width() || mapped.height() != image.height() || mapped.channels() != 1 {
            return Err(Error::shape(
                format!("{}x{}x1", image.width(), image.height()),
                mapped.shape_string(),
            ));
        }
        out.push(mapped);
    }
    GridImage::from_channels(&out)
}

/// Polynomial surface `sum a[p][q] x^p y^q`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyImage {
    degree_x: usize,
    degree_y: usize,
    // coeffs[p * (degree_y + 1) + q] multiplies x^p y^q
    coeffs: Vec<f64>,
}

impl PolyImage {
    pub fn new(degree_x: usize, degree_y: usize, coeffs: Vec<f64>) -> Result<Self> {
        let expected = (degree_x + 1) * (degree_y + 1);
        if coeffs.len() != expected {
            return Err(Error::shape(
                format!("{expected} coefficients"),
                format!("{}", coeffs.len()),
            ));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::param("non-finite polynomial coefficient"));
        }
        Ok(Self {
            degree_x,
            degree_y,
            coeffs,
        })
    }

    pub fn zeros(degree_x: usize, degree_y: usize) -> Self {
        Self {
            degree_x,
            degree_y,
            coeffs: vec![0.0; (degree_x + 1) * (degree_y + 1)],
        }
    }

    /// Polynomial with a single monomial `value * x^p y^q`.
    pub fn monomial(p: usize, q: usize, value: f64) -> Self {
        let mut poly = Self::zeros(p, q);
        poly.set(p, q, value);
        poly
    }

    pub fn degree_x(&self) -> usize {
        self.degree_x
    }

    pub fn degree_y(&self) -> usize {
        self.degree_y
    }

    pub fn coeff(&self, p: usize, q: usize) -> f64 {
        self.coeffs[p * (self.degree_y + 1) + q]
    }

    pub fn set(&mut self, p: usize, q: usize, value: f64) {
        self.coeffs[p * (self.degree_y + 1) + q] = value;
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        // Horner in x over Horner-in-y rows
        let mut acc = 0.0;
        for p in (0..=self.degree_x).rev() {
            let mut row = 0.0;
            for q in (0..=self.degree_y).rev() {
                row = row * y + self.coeff(p, q);
            }
            acc = acc * x + row;
        }
        acc
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Synthetic {
    Constant { value: f64 },
    /// `cos(2 pi (w (i+1/2)/W + h (j+1/2)/H))`
    Cosine { w: i64, h: i64 },
    Polynomial(PolyImage),
    GaussianBump {
        center_x: f64,
        center_y: f64,
        variance: f64,
        amplitude: f64,
    },
    /// Seeded white noise low-passed to signed frequencies `|k| <= bandlimit`
    /// on each axis, then scaled to unit standard deviation.
    RandomSmooth { bandlimit: usize },
}

/// Deterministic single-channel test image.
pub fn make_synthetic(kind: &Synthetic, width: usize, height: usize, seed: u64) -> Result<GridImage> {
    if width == 0 || height == 0 {
        return Err(Error::param("synthetic image dimensions must be positive"));
    }
    let (wf, hf) = (width as f64, height as f64);
    match kind {
        Synthetic::Constant { value } => {
            if !value.is_finite() {
                return Err(Error::param("constant value must be finite"));
            }
            GridImage::from_fn(width, height, |_, _| *value)
        }
        Synthetic::Cosine { w, h } => GridImage::from_fn(width, height, |i, j| {
            let phase = *w as f64 * (i as f64 + 0.5) / wf + *h as f64 * (j as f64 + 0.5) / hf;
            (2.0 * std::f64::consts::PI * phase).cos()
        }),
        Synthetic::Polynomial(poly) => {
            GridImage::from_fn(width, height, |i, j| poly.eval(i as f64 + 0.5, j as f64 + 0.5))
        }
        Synthetic::GaussianBump {
            center_x,
            center_y,
            variance,
            amplitude,
        } => {
            if !(*variance > 0.0) || !center_x.is_finite() || !center_y.is_finite() || !amplitude.is_finite() {
                return Err(Error::param("gaussian bump needs positive variance and finite center"));
            }
            GridImage::from_fn(width, height, |i, j| {
                let dx = i as f64 + 0.5 - center_x;
                let dy = j as f64 + 0.5 - center_y;
                amplitude * (-(dx * dx + dy * dy) / (2.0 * variance)).exp()
            })
        }
        Synthetic::RandomSmooth { bandlimit } => random_smooth(width, height, *bandlimit, seed),
    }
}

fn random_smooth(width: usize, height: usize, bandlimit: usize, seed: u64) -> Result<GridImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<f64> = (0..width * height)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let limit = bandlimit as i64;
    let filtered = spectral::filter_real(&noise, width, height, |kx, ky| {
        // strict inequality at the Nyquist bin keeps the output real-symmetric
        let inside = |k: i64, n: usize| k.abs() <= limit && 2 * k.unsigned_abs() as usize != n;
        if (inside(kx, width) || kx == 0) && (inside(ky, height) || ky == 0) {
            1.0
        } else {
            0.0
        }
    });
    let mean = filtered.iter().sum::<f64>() / filtered.len() as f64;
    let var = filtered.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / filtered.len() as f64;
    let scale = if var > 0.0 { var.sqrt().recip() } else { 1.0 };
    GridImage::new(width, height, 1, filtered.into_iter().map(|v| v * scale).collect())
}
