//! Mean-centering, distances and the state-space regularization loss.

use serde::{Deserialize, Serialize};

use crate::dynamics::{apply_update_tensor, DiscreteUpdate};
use crate::error::{Error, Result};
use crate::grid::GridImage;
use crate::scalespace::BlurKind;

/// A `C x H x W` latent, channel-major then row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTensor {
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl LatentTensor {
    pub fn new(channels: usize, height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::param("latent dimensions must be positive"));
        }
        if values.len() != channels * height * width {
            return Err(Error::shape(
                format!("{} values for {channels}x{height}x{width}", channels * height * width),
                values.len(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("latent has non-finite values".into()));
        }
        Ok(Self {
            channels,
            height,
            width,
            values,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Result<Self> {
        Self::new(channels, height, width, vec![0.0; channels * height * width])
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let s = self.height * self.width;
        &self.values[c * s..(c + 1) * s]
    }

    pub fn get(&self, c: usize, h: usize, w: usize) -> f64 {
        self.values[(c * self.height + h) * self.width + w]
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Spatial mean of every channel.
    pub fn channel_means(&self) -> Vec<f64> {
        (0..self.channels)
            .map(|c| self.channel(c).iter().sum::<f64>() / (self.height * self.width) as f64)
            .collect()
    }

    pub fn same_shape(&self, other: &LatentTensor) -> bool {
        (self.channels, self.height, self.width) == (other.channels, other.height, other.width)
    }

    pub fn shape_string(&self) -> String {
        format!("{}x{}x{}", self.channels, self.height, self.width)
    }
}

/// Subtracts the spatial mean of every channel.
pub fn mean_center(latent: &LatentTensor) -> LatentTensor {
    let means = latent.channel_means();
    let s = latent.height * latent.width;
    let values = latent
        .values
        .iter()
        .enumerate()
        .map(|(i, v)| v - means[i / s])
        .collect();
    LatentTensor { values, ..latent.clone() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distance {
    #[default]
    Mse,
    Mae,
}

impl std::str::FromStr for Distance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mse" => Ok(Distance::Mse),
            "mae" => Ok(Distance::Mae),
            other => Err(Error::param(format!("unknown distance {other:?}"))),
        }
    }
}

/// Mean squared or mean absolute difference over all elements.
pub fn distance(kind: Distance, a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("{} elements", a.len()), b.len()));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = match kind {
        Distance::Mse => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum(),
        Distance::Mae => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
    };
    Ok(sum / a.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_z: f64,
    pub lambda_i: f64,
    pub alpha: f64,
    pub d_z: Distance,
    pub d_i: Distance,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_z: 0.25,
            lambda_i: 1.0,
            alpha: 0.25,
            d_z: Distance::Mse,
            d_i: Distance::Mae,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v >= 0.0 && v.is_finite();
        if !ok(self.lambda_z) || !ok(self.lambda_i) {
            return Err(Error::param("loss weights must be non-negative"));
        }
        if self.lambda_z == 0.0 && self.lambda_i == 0.0 {
            return Err(Error::param("at least one loss weight must be positive"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::param("alpha must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub latent_term: f64,
    pub pixel_term: f64,
    pub tau1: f64,
    pub tau2: f64,
}

/// `lambda_z d_z(z2, zhat2) + lambda_I d_I(target, decoded)`.
pub fn reg_loss(
    z2: &LatentTensor,
    zhat2: &LatentTensor,
    target: &GridImage,
    decoded: &GridImage,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    if !z2.same_shape(zhat2) {
        return Err(Error::shape(z2.shape_string(), zhat2.shape_string()));
    }
    if !target.same_shape(decoded) {
        return Err(Error::shape(target.shape_string(), decoded.shape_string()));
    }
    let latent = distance(weights.d_z, z2.values(), zhat2.values())?;
    let pixel = distance(weights.d_i, target.values(), decoded.values())?;
    Ok(LossBreakdown {
        total: weights.lambda_z * latent + weights.lambda_i * pixel,
        latent_term: latent,
        pixel_term: pixel,
        tau1: 0.0,
        tau2: 0.0,
    })
}

pub trait Encoder {
    fn encode(&self, image: &GridImage) -> Result<LatentTensor>;
}

pub trait Decoder {
    fn decode(&self, latent: &LatentTensor) -> Result<GridImage>;
}

/// Everything [`forward_reg`] computed on the way to the loss.
#[derive(Debug, Clone)]
pub struct RegForward {
    pub loss: LossBreakdown,
    pub z1: LatentTensor,
    pub z2: LatentTensor,
    pub zhat2: LatentTensor,
    pub target: GridImage,
    pub decoded: GridImage,
}

/// One regularization evaluation: encode `I_tau1`, advance the latent by
/// `Abar`, and compare with the target encoding of `I_tau2` and with
/// `I_tau2` itself after decoding. With `centering`, both latents are
/// mean-centered and the decoder receives the centered prediction.
#[allow(clippy::too_many_arguments)]
pub fn forward_reg(
    encoder: &dyn Encoder,
    target_encoder: &dyn Encoder,
    decoder: &dyn Decoder,
    update: &DiscreteUpdate,
    image: &GridImage,
    tau1: f64,
    tau2: f64,
    weights: &LossWeights,
    centering: bool,
    blur: BlurKind,
) -> Result<RegForward> {
    if !(tau1 >= 0.0) || tau2 < tau1 {
        return Err(Error::param(format!("invalid blur pair ({tau1}, {tau2})")));
    }
    let source = blur.apply(image, tau1)?;
    let target = blur.apply(image, tau2)?;
    let center = |z: LatentTensor| if centering { mean_center(&z) } else { z };
    let z1 = center(encoder.encode(&source)?);
    let z2 = center(target_encoder.encode(&target)?);
    let zhat2 = apply_update_tensor(update, &z1)?;
    let decoded = decoder.decode(&zhat2)?;
    let mut loss = reg_loss(&z2, &zhat2, &target, &decoded, weights)?;
    loss.tau1 = tau1;
    loss.tau2 = tau2;
    Ok(RegForward {
        loss,
        z1,
        z2,
        zhat2,
        target,
        decoded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_center_examples() {
        let c = LatentTensor::new(1, 2, 2, vec![5.0; 4]).unwrap();
        assert!(mean_center(&c).values().iter().all(|&v| v == 0.0));
        let t = LatentTensor::new(1, 1, 2, vec![1.0, 3.0]).unwrap();
        let m = mean_center(&t);
        assert_eq!(m.values(), &[-1.0, 1.0]);
        assert_eq!(mean_center(&m), m);
    }

    #[test]
    fn distance_examples() {
        assert_eq!(distance(Distance::Mse, &[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(distance(Distance::Mse, &[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(distance(Distance::Mae, &[0.0, 2.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert!(distance(Distance::Mae, &[0.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn reg_loss_weighting() {
        // latent MSE 4.0 and pixel MAE 0.5
        let z2 = LatentTensor::new(1, 1, 1, vec![0.0]).unwrap();
        let zh = LatentTensor::new(1, 1, 1, vec![2.0]).unwrap();
        let t = GridImage::new(1, 1, 1, vec![0.0]).unwrap();
        let d = GridImage::new(1, 1, 1, vec![0.5]).unwrap();
        let l = reg_loss(&z2, &zh, &t, &d, &LossWeights::default()).unwrap();
        assert_eq!((l.latent_term, l.pixel_term, l.total), (4.0, 0.5, 1.5));
        let w = LossWeights { lambda_i: 0.0, ..LossWeights::default() };
        assert_eq!(reg_loss(&z2, &zh, &t, &d, &w).unwrap().total, 1.0);
        assert_eq!(reg_loss(&z2, &z2, &t, &t, &w).unwrap().total, 0.0);
    }

    #[test]
    fn loss_json_fields() {
        let l = LossBreakdown { total: 1.0, latent_term: 2.0, pixel_term: 3.0, tau1: 0.5, tau2: 4.5 };
        let v: serde_json::Value = serde_json::to_value(l).unwrap();
        for key in ["total", "latent_term", "pixel_term", "tau1", "tau2"] {
            assert!(v.get(key).is_some());
        }
    }
}
