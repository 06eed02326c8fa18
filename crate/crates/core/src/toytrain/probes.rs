use serde::Serialize;

use crate::basis::validate_permutation;
use crate::error::{Error, Result};
use crate::grid::{make_synthetic, GridImage, Synthetic};
use crate::regularizer::{distance, Decoder, Distance, Encoder, LatentTensor};
use crate::scalespace::BlurKind;

/// Exponential fit of one channel's spatial mean along the blur axis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelFit {
    pub channel: usize,
    /// Slope of `ln |mean|` against `tau`.
    pub decay_rate: f64,
    pub r_squared: f64,
    /// The channel mean vanished somewhere on the grid, so no fit was made.
    pub skipped: bool,
}

/// Least-squares line `y = a + b t`, returning `(b, R^2)`.
fn fit_line(t: &[f64], y: &[f64]) -> (f64, f64) {
    let n = t.len() as f64;
    let tm = t.iter().sum::<f64>() / n;
    let ym = y.iter().sum::<f64>() / n;
    let stt: f64 = t.iter().map(|v| (v - tm).powi(2)).sum();
    let sty: f64 = t.iter().zip(y).map(|(a, b)| (a - tm) * (b - ym)).sum();
    let slope = if stt > 0.0 { sty / stt } else { 0.0 };
    let ss_res: f64 = t.iter().zip(y).map(|(a, b)| (b - ym - slope * (a - tm)).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|b| (b - ym).powi(2)).sum();
    let scale = y.iter().map(|v| v.abs()).fold(1.0, f64::max);
    let r2 = if ss_tot <= 1e-24 * scale * scale * n {
        1.0
    } else {
        1.0 - ss_res / ss_tot
    };
    (slope, r2)
}

/// Encodes `image` blurred at every `tau` of the grid, averages each channel
/// spatially and fits `ln |mean|` linearly in `tau`.
pub fn trajectory_fit(
    encoder: &dyn Encoder,
    image: &GridImage,
    tau_grid: &[f64],
    blur: BlurKind,
) -> Result<Vec<ChannelFit>> {
    if tau_grid.len() < 2 || tau_grid[0] != 0.0 || tau_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::param("tau grid must ascend from 0 with at least two points"));
    }
    let means: Vec<Vec<f64>> = tau_grid
        .iter()
        .map(|&tau| Ok(encoder.encode(&blur.apply(image, tau)?)?.channel_means()))
        .collect::<Result<_>>()?;
    let channels = means[0].len();
    let peak = means.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max);
    Ok((0..channels)
        .map(|c| {
            let series: Vec<f64> = means.iter().map(|m| m[c]).collect();
            if peak == 0.0 || series.iter().any(|v| v.abs() <= 1e-10 * peak) {
                return ChannelFit {
                    channel: c,
                    decay_rate: 0.0,
                    r_squared: 0.0,
                    skipped: true,
                };
            }
            let logs: Vec<f64> = series.iter().map(|v| v.abs().ln()).collect();
            let (decay_rate, r_squared) = fit_line(tau_grid, &logs);
            ChannelFit {
                channel: c,
                decay_rate,
                r_squared,
                skipped: false,
            }
        })
        .collect())
}

/// Median of the non-skipped `R^2` values, `None` if all were skipped.
pub fn median_r_squared<'a>(fits: impl IntoIterator<Item = &'a ChannelFit>) -> Option<f64> {
    let mut r: Vec<f64> = fits.into_iter().filter(|f| !f.skipped).map(|f| f.r_squared).collect();
    if r.is_empty() {
        return None;
    }
    r.sort_by(f64::total_cmp);
    let m = r.len() / 2;
    Some(if r.len() % 2 == 1 { r[m] } else { 0.5 * (r[m - 1] + r[m]) })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormReport {
    pub centered_mean_norm: f64,
    pub uncentered_mean_norm: f64,
    /// Uncentered over centered; 1 when both norms vanish.
    pub ratio: f64,
}

fn mean_norm(encoder: &dyn Encoder, images: &[GridImage]) -> Result<f64> {
    let mut total = 0.0;
    for img in images {
        total += encoder.encode(img)?.norm();
    }
    Ok(total / images.len().max(1) as f64)
}

/// Mean latent L2 norms of two models trained with and without centering.
pub fn norm_probe(centered: &dyn Encoder, uncentered: &dyn Encoder, images: &[GridImage]) -> Result<NormReport> {
    let c = mean_norm(centered, images)?;
    let u = mean_norm(uncentered, images)?;
    let ratio = if c == 0.0 && u == 0.0 {
        1.0
    } else if c == 0.0 {
        f64::INFINITY
    } else {
        u / c
    };
    Ok(NormReport {
        centered_mean_norm: c,
        uncentered_mean_norm: u,
        ratio,
    })
}

/// Pixel MSE against `image` after keeping only the first `k` channels of
/// `order` (1-based), for `k = 0..=C`.
pub fn unmask_curve<M: Encoder + Decoder>(model: &M, image: &GridImage, order: &[usize]) -> Result<Vec<f64>> {
    let z = model.encode(image)?;
    validate_permutation(order, z.channels())?;
    let s = z.height() * z.width();
    let mut kept = vec![0.0; z.values().len()];
    let mut out = Vec::with_capacity(order.len() + 1);
    for k in 0..=order.len() {
        if k > 0 {
            let c = order[k - 1] - 1;
            kept[c * s..(c + 1) * s].copy_from_slice(z.channel(c));
        }
        let masked = LatentTensor::new(z.channels(), z.height(), z.width(), kept.clone())?;
        let decoded = model.decode(&masked)?;
        out.push(distance(Distance::Mse, decoded.values(), image.values())?);
    }
    Ok(out)
}

/// Seeded corpus of smooth random images with bandlimits cycling through 2..=5.
pub fn synthetic_corpus(count: usize, size: usize, seed: u64) -> Result<Vec<GridImage>> {
    (0..count)
        .map(|k| {
            let bandlimit = 2 + k % 4;
            make_synthetic(
                &Synthetic::RandomSmooth { bandlimit },
                size,
                size,
                seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k as u64),
            )
        })
        .collect()
}
