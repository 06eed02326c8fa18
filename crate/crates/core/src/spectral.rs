// 2D DFT helpers over row-major real grids.

use num_complex::Complex64;
use rustfft::FftPlanner;

/// Signed representative of DFT bin `k` on `n` samples; the Nyquist bin maps to `+n/2`.
pub(crate) fn signed_frequency(k: usize, n: usize) -> i64 {
    if 2 * k <= n {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

fn transform(data: &mut [Complex64], width: usize, height: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let (row_fft, col_fft) = if inverse {
        (planner.plan_fft_inverse(width), planner.plan_fft_inverse(height))
    } else {
        (planner.plan_fft_forward(width), planner.plan_fft_forward(height))
    };
    for row in data.chunks_mut(width) {
        row_fft.process(row);
    }
    let mut column = vec![Complex64::new(0.0, 0.0); height];
    for i in 0..width {
        for j in 0..height {
            column[j] = data[j * width + i];
        }
        col_fft.process(&mut column);
        for j in 0..height {
            data[j * width + i] = column[j];
        }
    }
}

/// Unnormalized forward DFT: `X[ky][kx] = sum x[j][i] e^{-2 pi i (kx i / W + ky j / H)}`.
pub(crate) fn dft2(values: &[f64], width: usize, height: usize) -> Vec<Complex64> {
    let mut data: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    transform(&mut data, width, height, false);
    data
}

/// Inverse of [`dft2`], keeping the real part.
pub(crate) fn idft2_real(spectrum: &[Complex64], width: usize, height: usize) -> Vec<f64> {
    let mut data = spectrum.to_vec();
    transform(&mut data, width, height, true);
    let scale = 1.0 / (width * height) as f64;
    data.iter().map(|c| c.re * scale).collect()
}

/// Multiplies the spectrum by `gain(kx, ky)` (signed frequencies) and transforms back.
pub(crate) fn filter_real(
    values: &[f64],
    width: usize,
    height: usize,
    gain: impl Fn(i64, i64) -> f64,
) -> Vec<f64> {
    let mut spectrum = dft2(values, width, height);
    for ky in 0..height {
        let sy = signed_frequency(ky, height);
        for kx in 0..width {
            let sx = signed_frequency(kx, width);
            spectrum[ky * width + kx] *= gain(sx, sy);
        }
    }
    idft2_real(&spectrum, width, height)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_signed_bins() {
        let x: Vec<f64> = (0..12).map(|v| (v as f64 * 0.7).sin()).collect();
        let back = idft2_real(&dft2(&x, 4, 3), 4, 3);
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(signed_frequency(0, 4), 0);
        assert_eq!(signed_frequency(2, 4), 2);
        assert_eq!(signed_frequency(3, 4), -1);
        assert_eq!(signed_frequency(2, 5), 2);
        assert_eq!(signed_frequency(3, 5), -2);
    }
}
