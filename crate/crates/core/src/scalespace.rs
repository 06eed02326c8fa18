//! Gaussian scale space: kernels, blurs, the exact polynomial blur and the
//! training pair sampler.
//!
//! `tau` is always a variance: the kernel is `G_tau(x) = e^{-x^2 / 2 tau} / sqrt(2 pi tau)`.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{per_channel_map, GridImage, PolyImage};
use crate::spectral;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    #[default]
    Periodic,
    Reflect,
}

impl std::str::FromStr for Boundary {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "periodic" => Ok(Boundary::Periodic),
            "reflect" => Ok(Boundary::Reflect),
            other => Err(Error::param(format!("unknown boundary {other:?}"))),
        }
    }
}

/// How a blur is realized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "boundary")]
pub enum BlurKind {
    /// Separable convolution with the sampled, truncated kernel.
    Sampled(Boundary),
    /// Exact periodic heat flow: the DFT multiplier `e^{-2 pi^2 tau k^2 / W^2}`.
    Spectral,
}

impl Default for BlurKind {
    fn default() -> Self {
        BlurKind::Sampled(Boundary::Periodic)
    }
}

impl BlurKind {
    pub fn apply(self, image: &GridImage, tau: f64) -> Result<GridImage> {
        match self {
            BlurKind::Sampled(b) => blur(image, tau, b),
            BlurKind::Spectral => blur_spectral(image, tau),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlurSchedule {
    pub tau_max: f64,
    pub delta_i: f64,
    #[serde(default)]
    pub boundary: Boundary,
}

impl Default for BlurSchedule {
    fn default() -> Self {
        Self {
            tau_max: 10.0,
            delta_i: 4.0,
            boundary: Boundary::Periodic,
        }
    }
}

impl BlurSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_max > 0.0) || !self.tau_max.is_finite() {
            return Err(Error::param("tau_max must be positive"));
        }
        if !(self.delta_i > 0.0) || self.delta_i > self.tau_max {
            return Err(Error::param(format!(
                "pair gap {} must lie in (0, tau_max = {}]",
                self.delta_i, self.tau_max
            )));
        }
        Ok(())
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(Error::param(format!("blur variance must be non-negative, got {tau}")));
    }
    Ok(())
}

/// Sampled 1D kernel of variance `tau` on offsets `-r..=r`, renormalized to
/// unit sum. The default radius is `ceil(6 sigma)`.
pub fn gaussian_kernel(tau: f64, radius: Option<usize>) -> Result<Vec<f64>> {
    check_tau(tau)?;
    if tau == 0.0 {
        return Ok(vec![1.0]);
    }
    let r = radius.unwrap_or_else(|| (6.0 * tau.sqrt()).ceil() as usize) as i64;
    let taps: Vec<f64> = (-r..=r).map(|k| (-(k * k) as f64 / (2.0 * tau)).exp()).collect();
    let sum: f64 = taps.iter().sum();
    Ok(taps.into_iter().map(|t| t / sum).collect())
}

fn source_index(k: i64, n: usize, boundary: Boundary) -> usize {
    let n = n as i64;
    match boundary {
        Boundary::Periodic => k.rem_euclid(n) as usize,
        Boundary::Reflect => {
            // half-sample symmetric extension, period 2n
            let m = k.rem_euclid(2 * n);
            (if m < n { m } else { 2 * n - 1 - m }) as usize
        }
    }
}

fn convolve_1d(line: &[f64], kernel: &[f64], boundary: Boundary, out: &mut [f64]) {
    let n = line.len();
    let r = (kernel.len() / 2) as i64;
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (t, &k) in kernel.iter().enumerate() {
            acc += k * line[source_index(i as i64 + t as i64 - r, n, boundary)];
        }
        *o = acc;
    }
}

fn blur_channel(image: &GridImage, kernel: &[f64], boundary: Boundary) -> Result<GridImage> {
    let (w, h) = (image.width(), image.height());
    let src = image.values();
    let mut rows = vec![0.0; w * h];
    for j in 0..h {
        convolve_1d(&src[j * w..(j + 1) * w], kernel, boundary, &mut rows[j * w..(j + 1) * w]);
    }
    let mut column = vec![0.0; h];
    let mut blurred = vec![0.0; h];
    let mut out = vec![0.0; w * h];
    for i in 0..w {
        for j in 0..h {
            column[j] = rows[j * w + i];
        }
        convolve_1d(&column, kernel, boundary, &mut blurred);
        for j in 0..h {
            out[j * w + i] = blurred[j];
        }
    }
    GridImage::new(w, h, 1, out)
}

/// `G_tau * I` by separable convolution with the sampled kernel.
pub fn blur(image: &GridImage, tau: f64, boundary: Boundary) -> Result<GridImage> {
    let kernel = gaussian_kernel(tau, None)?;
    if kernel.len() == 1 {
        return Ok(image.clone());
    }
    per_channel_map(image, |c| blur_channel(c, &kernel, boundary))
}

/// Exact periodic Gaussian blur on the signed DFT frequencies.
pub fn blur_spectral(image: &GridImage, tau: f64) -> Result<GridImage> {
    check_tau(tau)?;
    if tau == 0.0 {
        return Ok(image.clone());
    }
    let (w, h) = (image.width() as f64, image.height() as f64);
    per_channel_map(image, |c| {
        let values = spectral::filter_real(c.values(), c.width(), c.height(), |kx, ky| {
            let (fx, fy) = (kx as f64 / w, ky as f64 / h);
            (-2.0 * PI * PI * tau * (fx * fx + fy * fy)).exp()
        });
        GridImage::new(c.width(), c.height(), 1, values)
    })
}

/// Images at `tau = 0, tau_max / steps, ..., tau_max`, each blurred from the input.
pub fn blur_sequence(image: &GridImage, tau_max: f64, steps: usize, kind: BlurKind) -> Result<Vec<GridImage>> {
    if steps == 0 {
        return Err(Error::param("blur sequence needs at least one step"));
    }
    check_tau(tau_max)?;
    (0..=steps)
        .map(|t| {
            if t == 0 {
                Ok(image.clone())
            } else {
                kind.apply(image, tau_max * t as f64 / steps as f64)
            }
        })
        .collect()
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn double_factorial_odd(j: usize) -> f64 {
    // (j - 1)!! for even j
    (1..j).step_by(2).map(|v| v as f64).product()
}

/// Per-axis blur of `x^a`: `sum_{j even} C(a, j) (j-1)!! tau^{j/2} x^{a-j}`.
fn blur_axis_matrix(degree: usize, tau: f64) -> Vec<Vec<f64>> {
    // m[a][b]: coefficient of x^b in the blur of x^a
    let mut m = vec![vec![0.0; degree + 1]; degree + 1];
    for (a, row) in m.iter_mut().enumerate() {
        for j in (0..=a).step_by(2) {
            row[a - j] = binomial(a, j) * double_factorial_odd(j) * tau.powi(j as i32 / 2);
        }
    }
    m
}

/// Full-plane Gaussian blur of a polynomial, computed on its coefficients.
pub fn polynomial_blur_exact(poly: &PolyImage, tau: f64) -> Result<PolyImage> {
    check_tau(tau)?;
    let (dx, dy) = (poly.degree_x(), poly.degree_y());
    let mx = blur_axis_matrix(dx, tau);
    let my = blur_axis_matrix(dy, tau);
    let mut out = PolyImage::zeros(dx, dy);
    for p in 0..=dx {
        for q in 0..=dy {
            let c = poly.coeff(p, q);
            if c == 0.0 {
                continue;
            }
            for (b, &fx) in mx[p].iter().enumerate().take(p + 1) {
                if fx == 0.0 {
                    continue;
                }
                for (d, &fy) in my[q].iter().enumerate().take(q + 1) {
                    if fy != 0.0 {
                        out.set(b, d, out.coeff(b, d) + c * fx * fy);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Inverse CDF of the linearly decaying pair density: `tau1 = T (1 - sqrt(1 - u))`.
pub fn pair_from_uniform(schedule: &BlurSchedule, u: f64) -> Result<(f64, f64)> {
    schedule.validate()?;
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::param(format!("uniform draw {u} outside [0, 1]")));
    }
    let t = schedule.tau_max - schedule.delta_i;
    let tau1 = t * (1.0 - (1.0 - u).sqrt());
    Ok((tau1, tau1 + schedule.delta_i))
}

/// Draws a blur pair `(tau1, tau1 + delta_i)`.
pub fn sample_pair(schedule: &BlurSchedule, rng: &mut impl Rng) -> Result<(f64, f64)> {
    pair_from_uniform(schedule, rng.random::<f64>())
}
