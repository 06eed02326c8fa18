//! The state-transition matrix `A` of the blur dynamics `dc/dtau = A c`.
//!
//! `A[k][n] = 1/2 <lap phi_n, phi_k>_omega / <phi_k, phi_k>_omega`, assembled
//! from 1D inner products of each axis factor with the second derivative of
//! another.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::{index_to_freq, BasisSpec, Family};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InnerMode {
    Plain,
    SecondDerivative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    #[default]
    Raw,
    MaxAbsOne,
}

impl std::str::FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(Normalization::Raw),
            "max-abs-one" | "max_abs_one" => Ok(Normalization::MaxAbsOne),
            other => Err(Error::param(format!("unknown normalization {other:?}"))),
        }
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|v| v as f64).product()
}

/// Closed-form `<phi_j, phi_k>_omega` or `<phi_j, phi_k''>_omega` in the
/// canonical 1D variable.
pub fn inner_1d(family: Family, j: usize, k: usize, mode: InnerMode) -> Result<f64> {
    let same_parity = j % 2 == k % 2;
    let (jf, kf) = (j as f64, k as f64);
    let value = match (family, mode) {
        (Family::Fourier, _) => {
            return Err(Error::param("inner_1d covers the polynomial families only"));
        }
        (Family::Chebyshev, InnerMode::Plain) => match (j == k, k) {
            (false, _) => 0.0,
            (true, 0) => PI,
            (true, _) => PI / 2.0,
        },
        (Family::Legendre, InnerMode::Plain) => {
            if j == k {
                2.0 / (2.0 * kf + 1.0)
            } else {
                0.0
            }
        }
        (Family::Hermite, InnerMode::Plain) => {
            if j == k {
                PI.sqrt() * 2f64.powi(k as i32) * factorial(k)
            } else {
                0.0
            }
        }
        (Family::Chebyshev, InnerMode::SecondDerivative) => {
            if k >= 2 && j <= k - 2 && same_parity {
                PI / 2.0 * kf * (kf * kf - jf * jf)
            } else {
                0.0
            }
        }
        (Family::Legendre, InnerMode::SecondDerivative) => {
            if k >= 2 && j <= k - 2 && same_parity {
                kf * (kf + 1.0) - jf * (jf + 1.0)
            } else {
                0.0
            }
        }
        (Family::Hermite, InnerMode::SecondDerivative) => {
            if k >= 2 && j == k - 2 {
                4.0 * kf * (kf - 1.0) * PI.sqrt() * 2f64.powi(k as i32 - 2) * factorial(k - 2)
            } else {
                0.0
            }
        }
    };
    Ok(value)
}

/// Whether the family's closed form allows a nonzero `A[k][n]`.
pub fn support_allows(family: Family, modes_x: usize, k: usize, n: usize) -> bool {
    let (wk, hk) = (k % modes_x, k / modes_x);
    let (wn, hn) = (n % modes_x, n / modes_x);
    let coupled = |a: usize, b: usize| match family {
        Family::Hermite => a + 2 == b,
        _ => a + 2 <= b && a % 2 == b % 2,
    };
    match family {
        Family::Fourier => k == n,
        _ => (hk == hn && coupled(wk, wn)) || (wk == wn && coupled(hk, hn)),
    }
}

/// Dense `A` with its family and normalization tag.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    family: Family,
    modes_x: usize,
    modes_y: usize,
    normalization: Normalization,
    matrix: DMatrix<f64>,
}

impl TransitionMatrix {
    /// Wraps an arbitrary matrix; the support checks of [`sparsity_report`]
    /// still refer to `family`.
    pub fn from_dense(family: Family, modes_x: usize, modes_y: usize, matrix: DMatrix<f64>) -> Result<Self> {
        let n = modes_x * modes_y;
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(Error::shape(format!("{n}x{n}"), format!("{}x{}", matrix.nrows(), matrix.ncols())));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("transition matrix has non-finite entries".into()));
        }
        Ok(Self {
            family,
            modes_x,
            modes_y,
            normalization: Normalization::Raw,
            // adding +0 turns the -0 of a zero decay rate into +0
            matrix: matrix.map(|v| v + 0.0),
        })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn modes(&self) -> (usize, usize) {
        (self.modes_x, self.modes_y)
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn dense(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn max_abs(&self) -> f64 {
        self.matrix.amax()
    }

    /// Nonzero entries as 1-based `(row, col, value)`.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let n = self.dim();
        let mut out = Vec::new();
        for r in 0..n {
            for c in 0..n {
                let v = self.matrix[(r, c)];
                if v != 0.0 {
                    out.push((r + 1, c + 1, v));
                }
            }
        }
        out
    }

    /// Sub-matrix on the given 1-based modes, in that order.
    pub fn restrict(&self, modes: &[usize]) -> Result<DMatrix<f64>> {
        let n = self.dim();
        if let Some(&bad) = modes.iter().find(|&&m| m == 0 || m > n) {
            return Err(Error::Range { index: bad, max: n });
        }
        Ok(DMatrix::from_fn(modes.len(), modes.len(), |r, c| {
            self.matrix[(modes[r] - 1, modes[c] - 1)]
        }))
    }
}

impl AsRef<DMatrix<f64>> for TransitionMatrix {
    fn as_ref(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

fn fourier_diagonal(spec: &BasisSpec) -> DMatrix<f64> {
    let n = spec.len();
    let (w, h) = (spec.width as f64, spec.height as f64);
    let mut a = DMatrix::zeros(n, n);
    for k in 0..n {
        let (fw, fh) = spec.mode_frequency(k + 1).expect("index in range");
        a[(k, k)] = -2.0 * PI * PI * (fw * fw / (w * w) + fh * fh / (h * h));
    }
    a
}

/// Builds `A` from the closed-form 1D inner products.
pub fn build_a_closed(spec: &BasisSpec) -> Result<TransitionMatrix> {
    spec.validate()?;
    let matrix = if spec.family == Family::Fourier {
        fourier_diagonal(spec)
    } else {
        let f = spec.family;
        let (w, h) = (spec.width as f64, spec.height as f64);
        let alpha = if f == Family::Hermite { spec.hermite_alpha } else { 1.0 };
        let jacobian = alpha * alpha * w * h / 4.0;
        let n = spec.len();
        let plain = |a, b| inner_1d(f, a, b, InnerMode::Plain);
        let second = |a, b| inner_1d(f, a, b, InnerMode::SecondDerivative);
        let mut a = DMatrix::zeros(n, n);
        for k in 0..n {
            let (wk, hk) = index_to_freq(k + 1, spec.modes_x, spec.modes_y)?;
            let norm = jacobian * plain(wk, wk)? * plain(hk, hk)?;
            for col in 0..n {
                let (wn, hn) = index_to_freq(col + 1, spec.modes_x, spec.modes_y)?;
                let lap = (h / w) * second(wk, wn)? * plain(hk, hn)? + (w / h) * plain(wk, wn)? * second(hk, hn)?;
                a[(k, col)] = 0.5 * lap / norm;
            }
        }
        a
    };
    TransitionMatrix::from_dense(spec.family, spec.modes_x, spec.modes_y, matrix)
}

/// Builds `A` by quadrature in pixel coordinates, independently of the
/// closed forms: Fourier uses exact exponential integrals, the polynomial
/// families a global weight-matched Gauss rule with derivative recurrences.
pub fn build_a_numeric(spec: &BasisSpec) -> Result<TransitionMatrix> {
    spec.validate()?;
    let (ax, ay) = spec.axes();
    // plain[a][b] = <phi_b, phi_a>, second[a][b] = <phi_b'', phi_a> along one axis
    let tables = |axis: &crate::basis::Axis| -> (DMatrix<f64>, DMatrix<f64>) {
        let m = axis.modes;
        if axis.family == Family::Fourier {
            let l = axis.extent();
            let plain = DMatrix::from_fn(m, m, |a, b| {
                axis.fourier_integral(axis.frequency(b) - axis.frequency(a), 0.0, l).re
            });
            let second = DMatrix::from_fn(m, m, |a, b| {
                let k = 2.0 * PI * axis.frequency(b) / l;
                -k * k * plain[(a, b)]
            });
            return (plain, second);
        }
        let points = spec.quad_order.max(m + 2);
        let rule = axis.global_weighted_rule(points).expect("polynomial family");
        let mut plain = DMatrix::zeros(m, m);
        let mut second = DMatrix::zeros(m, m);
        for (&x, &wq) in rule.nodes.iter().zip(&rule.weights) {
            for a in 0..m {
                let pa = axis.value(a, x).re * wq;
                for b in 0..m {
                    plain[(a, b)] += pa * axis.value(b, x).re;
                    second[(a, b)] += pa * axis.second(b, x).re;
                }
            }
        }
        (plain, second)
    };
    let (px, sx) = tables(&ax);
    let (py, sy) = tables(&ay);
    let n = spec.len();
    let mx = spec.modes_x;
    let matrix = DMatrix::from_fn(n, n, |k, col| {
        let (wk, hk) = (k % mx, k / mx);
        let (wn, hn) = (col % mx, col / mx);
        let lap = sx[(wk, wn)] * py[(hk, hn)] + px[(wk, wn)] * sy[(hk, hn)];
        0.5 * lap / (px[(wk, wk)] * py[(hk, hk)])
    });
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("quadrature produced non-finite entries".into()));
    }
    TransitionMatrix::from_dense(spec.family, spec.modes_x, spec.modes_y, matrix)
}

/// Rescales `A` so that its largest entry magnitude is one.
pub fn normalize_a(a: &TransitionMatrix, mode: Normalization) -> TransitionMatrix {
    let mut out = a.clone();
    if mode == Normalization::MaxAbsOne {
        let max = a.max_abs();
        if max > 0.0 {
            out.matrix = a.matrix.map(|v| v / max);
        }
        out.normalization = Normalization::MaxAbsOne;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SparsityReport {
    pub nonzeros: usize,
    pub fill_ratio: f64,
    /// Every nonzero sits where the family's closed form allows one.
    pub support_ok: bool,
    /// Fourier only: diagonal entries are non-positive.
    pub nonpositive_diagonal: bool,
    /// Fourier only: the constant mode has a zero entry.
    pub dc_zero: bool,
}

impl SparsityReport {
    pub fn all_pass(&self) -> bool {
        self.support_ok && self.nonpositive_diagonal && self.dc_zero
    }
}

/// Counts nonzeros (relative threshold `1e-12 max|A|`) and checks the
/// structural invariants of the family.
pub fn sparsity_report(a: &TransitionMatrix) -> SparsityReport {
    let n = a.dim();
    let tol = 1e-12 * a.max_abs();
    let mut nonzeros = 0;
    let mut support_ok = true;
    for r in 0..n {
        for c in 0..n {
            if a.matrix[(r, c)].abs() > tol {
                nonzeros += 1;
                support_ok &= support_allows(a.family, a.modes_x, r, c);
            }
        }
    }
    let fourier = a.family == Family::Fourier;
    SparsityReport {
        nonzeros,
        fill_ratio: nonzeros as f64 / (n * n) as f64,
        support_ok,
        nonpositive_diagonal: !fourier || (0..n).all(|k| a.matrix[(k, k)] <= 0.0),
        dc_zero: !fourier || a.matrix[(0, 0)] == 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::FourierConvention;

    fn spec(family: Family, w: usize, m: usize) -> BasisSpec {
        BasisSpec::new(family, w, w, m, m).unwrap()
    }

    #[test]
    fn inner_1d_examples() {
        let d = InnerMode::SecondDerivative;
        assert!((inner_1d(Family::Chebyshev, 1, 3, d).unwrap() - 12.0 * PI).abs() < 1e-12);
        assert_eq!(inner_1d(Family::Legendre, 0, 2, d).unwrap(), 6.0);
        assert!((inner_1d(Family::Hermite, 1, 3, d).unwrap() - 48.0 * PI.sqrt()).abs() < 1e-12);
        for f in [Family::Chebyshev, Family::Legendre, Family::Hermite] {
            assert_eq!(inner_1d(f, 0, 3, d).unwrap(), 0.0);
        }
        assert_eq!(inner_1d(Family::Chebyshev, 0, 0, InnerMode::Plain).unwrap(), PI);
        assert!(inner_1d(Family::Fourier, 0, 0, InnerMode::Plain).is_err());
    }

    #[test]
    fn fourier_closed_examples() {
        let a = build_a_closed(&spec(Family::Fourier, 8, 4)).unwrap();
        assert_eq!(a.dense()[(0, 0)], 0.0);
        assert!((a.dense()[(1, 1)] + PI * PI / 32.0).abs() < 1e-15);
        let r = sparsity_report(&a);
        assert_eq!(r.nonzeros, 15);
        assert!(r.all_pass());
    }

    #[test]
    fn legendre_entry() {
        // modes (2,0) -> (0,0) on an 8x8 domain
        let a = build_a_closed(&spec(Family::Legendre, 8, 4)).unwrap();
        assert!((a.dense()[(0, 2)] - 3.0 / 32.0).abs() < 1e-15);
    }

    #[test]
    fn polynomial_a_is_strictly_upper_triangular() {
        for f in [Family::Chebyshev, Family::Legendre, Family::Hermite] {
            let a = build_a_closed(&spec(f, 8, 4)).unwrap();
            for r in 0..16 {
                for c in 0..=r {
                    assert_eq!(a.dense()[(r, c)], 0.0, "{f:?} ({r},{c})");
                }
            }
            assert!(sparsity_report(&a).support_ok);
        }
    }

    #[test]
    fn closed_matches_numeric() {
        for f in [Family::Fourier, Family::Chebyshev, Family::Legendre, Family::Hermite] {
            let s = spec(f, 8, 4);
            let a = build_a_closed(&s).unwrap();
            let b = build_a_numeric(&s).unwrap();
            let tol = if f == Family::Fourier { 1e-10 } else { 1e-8 };
            assert!((a.dense() - b.dense()).amax() <= tol * a.max_abs(), "{f:?}");
        }
    }

    #[test]
    fn normalization() {
        let a = TransitionMatrix::from_dense(
            Family::Fourier,
            2,
            1,
            DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-2.0, -4.0])),
        )
        .unwrap();
        let n = normalize_a(&a, Normalization::MaxAbsOne);
        assert_eq!(n.dense()[(0, 0)], -0.5);
        assert_eq!(n.dense()[(1, 1)], -1.0);
        assert_eq!(normalize_a(&n, Normalization::MaxAbsOne), n);
        let zero = TransitionMatrix::from_dense(Family::Legendre, 2, 1, DMatrix::zeros(2, 2)).unwrap();
        assert_eq!(normalize_a(&zero, Normalization::MaxAbsOne).max_abs(), 0.0);

        let big = build_a_closed(&spec(Family::Fourier, 8, 8)).unwrap();
        let big = normalize_a(&big, Normalization::MaxAbsOne);
        assert_eq!(big.dense()[(63, 63)], -1.0);
    }

    #[test]
    fn hermite_support_and_dense_negative_control() {
        let a = build_a_closed(&spec(Family::Hermite, 8, 4)).unwrap();
        for (r, c, _) in a.triplets() {
            let (wr, hr) = ((r - 1) % 4, (r - 1) / 4);
            let (wc, hc) = ((c - 1) % 4, (c - 1) / 4);
            assert!((hr == hc && wr + 2 == wc) || (wr == wc && hr + 2 == hc));
        }
        let dense = DMatrix::from_fn(16, 16, |r, c| 1.0 + (r * 16 + c) as f64);
        let d = TransitionMatrix::from_dense(Family::Legendre, 4, 4, dense).unwrap();
        assert!(!sparsity_report(&d).support_ok);
    }

    #[test]
    fn centered_fourier_diagonal() {
        let s = spec(Family::Fourier, 4, 4).with_fourier(FourierConvention::Centered);
        let a = build_a_closed(&s).unwrap();
        // index 3 has frequency -1, same rate as index 1
        assert_eq!(a.dense()[(1, 1)], a.dense()[(3, 3)]);
    }
}
