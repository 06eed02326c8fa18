//! Separable 2D orthogonal bases on the pixel domain `[0, W] x [0, H]`.
//!
//! Mode `n` (1-based) corresponds to the frequency pair
//! `(w, h) = ((n - 1) mod M_x, (n - 1) div M_x)` and the basis function
//! `phi_n(x, y) = phi_w(x) * phi_h(y)`. Coordinates are unnormalized: the
//! polynomial families use the classical `T_n`, `P_n`, `H_n` scalings, and
//! projections divide by the Gram matrix instead of assuming unit norms.
//!
//! Every 2D quantity here is a Kronecker product of two 1D quantities, so
//! Gram matrices and projections are computed one axis at a time.

mod family;

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridImage;

pub use family::{eval_factor, eval_factor_derivs, Family, FourierConvention, GramQuadrature};
pub(crate) use family::Axis;

/// Gram solves beyond this (equilibrated) condition number are refused.
const MAX_CONDITION: f64 = 1e13;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub family: Family,
    pub width: usize,
    pub height: usize,
    pub modes_x: usize,
    pub modes_y: usize,
    /// Gauss-Legendre points per cell and axis.
    pub quad_order: usize,
    pub hermite_alpha: f64,
    #[serde(default)]
    pub fourier: FourierConvention,
    #[serde(default)]
    pub gram_quadrature: GramQuadrature,
}

impl BasisSpec {
    pub fn new(family: Family, width: usize, height: usize, modes_x: usize, modes_y: usize) -> Result<Self> {
        let spec = Self {
            family,
            width,
            height,
            modes_x,
            modes_y,
            quad_order: 6,
            hermite_alpha: 0.5,
            fourier: FourierConvention::Printed,
            gram_quadrature: GramQuadrature::PerCell,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_quad_order(mut self, q: usize) -> Result<Self> {
        self.quad_order = q;
        self.validate()?;
        Ok(self)
    }

    pub fn with_fourier(mut self, convention: FourierConvention) -> Self {
        self.fourier = convention;
        self
    }

    pub fn with_gram_quadrature(mut self, quadrature: GramQuadrature) -> Self {
        self.gram_quadrature = quadrature;
        self
    }

    pub fn with_hermite_alpha(mut self, alpha: f64) -> Result<Self> {
        self.hermite_alpha = alpha;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::param("basis domain must be non-empty"));
        }
        if !(1..=self.width).contains(&self.modes_x) || !(1..=self.height).contains(&self.modes_y) {
            return Err(Error::param(format!(
                "mode counts {}x{} must lie in 1..=W x 1..=H ({}x{})",
                self.modes_x, self.modes_y, self.width, self.height
            )));
        }
        if self.quad_order == 0 {
            return Err(Error::param("quadrature order must be at least 1"));
        }
        if !(self.hermite_alpha > 0.0) || !self.hermite_alpha.is_finite() {
            return Err(Error::param("hermite alpha must be positive"));
        }
        Ok(())
    }

    /// Total number of modes `N = M_x * M_y`.
    pub fn len(&self) -> usize {
        self.modes_x * self.modes_y
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn axes(&self) -> (Axis, Axis) {
        let axis = |cells, modes| Axis {
            family: self.family,
            cells,
            modes,
            alpha: if self.family == Family::Hermite { self.hermite_alpha } else { 1.0 },
            convention: self.fourier,
        };
        (axis(self.width, self.modes_x), axis(self.height, self.modes_y))
    }

    /// Constant factor of the 2D weight. The printed Hermite weight
    /// `e^{-(u^2+v^2)} / sqrt(pi)` carries a single `1/sqrt(pi)`.
    pub(crate) fn weight_scale(&self) -> f64 {
        if self.family == Family::Hermite {
            1.0 / PI.sqrt()
        } else {
            1.0
        }
    }

    /// Frequencies of mode `n` (1-based) after the Fourier convention is applied.
    pub fn mode_frequency(&self, n: usize) -> Result<(f64, f64)> {
        let (w, h) = index_to_freq(n, self.modes_x, self.modes_y)?;
        let (ax, ay) = self.axes();
        Ok((ax.frequency(w), ay.frequency(h)))
    }
}

/// `n -> ((n-1) mod M_x, (n-1) div M_x)` for `1 <= n <= M_x * M_y`.
pub fn index_to_freq(n: usize, modes_x: usize, modes_y: usize) -> Result<(usize, usize)> {
    let max = modes_x * modes_y;
    if n == 0 || n > max {
        return Err(Error::Range { index: n, max });
    }
    Ok(((n - 1) % modes_x, (n - 1) / modes_x))
}

/// Inverse of [`index_to_freq`].
pub fn freq_to_index(w: usize, h: usize, modes_x: usize, modes_y: usize) -> Result<usize> {
    if w >= modes_x || h >= modes_y {
        return Err(Error::Range {
            index: h * modes_x + w + 1,
            max: modes_x * modes_y,
        });
    }
    Ok(h * modes_x + w + 1)
}

/// Evaluates `phi_n(x, y)`.
pub fn eval_basis(spec: &BasisSpec, n: usize, x: f64, y: f64) -> Result<Complex64> {
    let (w, h) = index_to_freq(n, spec.modes_x, spec.modes_y)?;
    let (ax, ay) = spec.axes();
    check_point(spec, &ax, &ay, x, y)?;
    Ok(ax.value(w, x) * ay.value(h, y))
}

/// Evaluates the 2D weight `omega(x, y)`.
pub fn eval_weight(spec: &BasisSpec, x: f64, y: f64) -> Result<f64> {
    let (ax, ay) = spec.axes();
    check_point(spec, &ax, &ay, x, y)?;
    Ok(spec.weight_scale() * ax.weight(x) * ay.weight(y))
}

fn check_point(spec: &BasisSpec, ax: &Axis, ay: &Axis, x: f64, y: f64) -> Result<()> {
    if !x.is_finite() || !y.is_finite() {
        return Err(Error::param("evaluation point must be finite"));
    }
    if matches!(spec.family, Family::Chebyshev | Family::Legendre) {
        let (u, v) = (ax.canonical(x).0, ay.canonical(y).0);
        if u.abs() > 1.0 || v.abs() > 1.0 {
            return Err(Error::param(format!("point ({x}, {y}) lies outside the basis domain")));
        }
    }
    if ax.weight_is_singular(x) || ay.weight_is_singular(y) {
        return Err(Error::WeightSingularity {
            u: ax.canonical(x).0,
            v: ay.canonical(y).0,
        });
    }
    Ok(())
}

/// Truncated basis coefficients `c_1 .. c_N` in index order.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientVector(pub Vec<Complex64>);

impl CoefficientVector {
    pub fn zeros(n: usize) -> Self {
        Self(vec![Complex64::new(0.0, 0.0); n])
    }

    pub fn from_real(values: &[f64]) -> Self {
        Self(values.iter().map(|&v| Complex64::new(v, 0.0)).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.0
    }

    pub fn real_parts(&self) -> Vec<f64> {
        self.0.iter().map(|c| c.re).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// `max_n |self_n - other_n|`.
    pub fn max_abs_diff(&self, other: &CoefficientVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

/// A basis with its precomputed quadrature tables and Gram data.
#[derive(Debug, Clone)]
pub struct BasisSet {
    spec: BasisSpec,
    gram: DMatrix<Complex64>,
    norms: Vec<f64>,
    axes: (Axis, Axis),
    // per-axis Gram over the bounded pixel domain, used by projection
    domain_gram: (DMatrix<Complex64>, DMatrix<Complex64>),
    domain_gram_inv: Option<(DMatrix<Complex64>, DMatrix<Complex64>)>,
    condition: f64,
    // cells x modes: weighted cell integrals and plain cell integrals
    weighted_cells: (DMatrix<Complex64>, DMatrix<Complex64>),
    plain_cells: (DMatrix<Complex64>, DMatrix<Complex64>),
}

impl BasisSet {
    pub fn spec(&self) -> &BasisSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.spec.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spec.is_empty()
    }

    /// `G[k][n] = <phi_n, phi_k>_omega`.
    pub fn gram(&self) -> &DMatrix<Complex64> {
        &self.gram
    }

    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    pub fn is_complex(&self) -> bool {
        self.spec.family.is_complex()
    }

    /// Condition number of the diagonally equilibrated domain Gram matrix.
    pub fn condition(&self) -> f64 {
        self.condition
    }

    /// Gram matrix over the bounded pixel domain (differs from [`Self::gram`]
    /// only for Hermite, whose reported Gram integrates the whole line, and
    /// for global-rule Chebyshev/Legendre).
    pub fn domain_gram(&self) -> DMatrix<Complex64> {
        kron_modes(&self.domain_gram.0, &self.domain_gram.1, self.spec.weight_scale())
    }

    fn gram_inverse(&self) -> Result<&(DMatrix<Complex64>, DMatrix<Complex64>)> {
        self.domain_gram_inv.as_ref().ok_or(Error::Conditioning {
            condition: self.condition,
        })
    }

    fn coeff_matrix(&self, coeffs: &CoefficientVector) -> Result<DMatrix<Complex64>> {
        if coeffs.len() != self.len() {
            return Err(Error::shape(format!("{} coefficients", self.len()), coeffs.len()));
        }
        Ok(DMatrix::from_fn(self.spec.modes_x, self.spec.modes_y, |a, b| {
            coeffs.0[b * self.spec.modes_x + a]
        }))
    }

    fn flatten(&self, m: &DMatrix<Complex64>) -> CoefficientVector {
        let mut out = Vec::with_capacity(self.len());
        for b in 0..self.spec.modes_y {
            for a in 0..self.spec.modes_x {
                out.push(m[(a, b)]);
            }
        }
        CoefficientVector(out)
    }

    fn solve_moments(&self, moments: DMatrix<Complex64>) -> Result<CoefficientVector> {
        let (gx_inv, gy_inv) = self.gram_inverse()?;
        let c = gx_inv * moments * gy_inv.transpose() / Complex64::new(self.spec.weight_scale(), 0.0);
        if c.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::Conditioning {
                condition: self.condition,
            });
        }
        Ok(self.flatten(&c))
    }

    /// Squared weighted norm `c^H G c` over the pixel domain.
    pub fn weighted_norm_sq(&self, coeffs: &CoefficientVector) -> Result<f64> {
        let c = self.coeff_matrix(coeffs)?;
        let gc = &self.domain_gram.0 * &c * self.domain_gram.1.transpose();
        let q: Complex64 = c.iter().zip(gc.iter()).map(|(a, b)| a.conj() * b).sum();
        Ok(q.re * self.spec.weight_scale())
    }
}

fn kron_modes(gx: &DMatrix<Complex64>, gy: &DMatrix<Complex64>, scale: f64) -> DMatrix<Complex64> {
    let (mx, my) = (gx.nrows(), gy.nrows());
    let n = mx * my;
    DMatrix::from_fn(n, n, |k, m| {
        let (wk, hk) = (k % mx, k / mx);
        let (wm, hm) = (m % mx, m / mx);
        gx[(wk, wm)] * gy[(hk, hm)] * scale
    })
}

/// `G[a][b] = sum_q weight_q conj(phi_a(x_q)) phi_b(x_q)` for a rule with
/// weights that already include the basis weight.
fn gram_1d_from_rule(axis: &Axis, nodes: &[f64], weights: &[f64]) -> DMatrix<Complex64> {
    let vals = DMatrix::from_fn(nodes.len(), axis.modes, |q, a| axis.value(a, nodes[q]));
    let weighted = DMatrix::from_fn(nodes.len(), axis.modes, |q, a| vals[(q, a)] * weights[q]);
    vals.adjoint() * weighted
}

fn fourier_gram_1d(axis: &Axis) -> DMatrix<Complex64> {
    let l = axis.extent();
    DMatrix::from_fn(axis.modes, axis.modes, |a, b| {
        axis.fourier_integral(axis.frequency(b) - axis.frequency(a), 0.0, l)
    })
}

fn weighted_cell_rule(axis: &Axis, order: usize) -> (Vec<f64>, Vec<f64>) {
    let rule = axis.cell_rule(order);
    let weights = rule
        .nodes
        .iter()
        .zip(&rule.weights)
        .map(|(&x, &w)| w * axis.weight(x))
        .collect();
    (rule.nodes, weights)
}

/// Gram matrix reported for an axis (see [`BasisSet::gram`]).
fn reported_gram_1d(axis: &Axis, spec: &BasisSpec) -> DMatrix<Complex64> {
    let points = spec.quad_order.max(axis.modes + 2);
    match (axis.family, spec.gram_quadrature) {
        (Family::Fourier, _) => fourier_gram_1d(axis),
        (Family::Hermite, _) | (_, GramQuadrature::Global) => {
            let rule = axis.global_weighted_rule(points).expect("polynomial family");
            gram_1d_from_rule(axis, &rule.nodes, &rule.weights)
        }
        (_, GramQuadrature::PerCell) => {
            let (nodes, weights) = weighted_cell_rule(axis, spec.quad_order);
            gram_1d_from_rule(axis, &nodes, &weights)
        }
    }
}

fn domain_gram_1d(axis: &Axis, spec: &BasisSpec) -> DMatrix<Complex64> {
    match axis.family {
        Family::Fourier => fourier_gram_1d(axis),
        _ => {
            let (nodes, weights) = weighted_cell_rule(axis, spec.quad_order);
            gram_1d_from_rule(axis, &nodes, &weights)
        }
    }
}

/// Cell integrals `int_cell phi_a(x) [omega(x)] dx`, cells x modes.
fn cell_integrals(axis: &Axis, order: usize, weighted: bool) -> DMatrix<Complex64> {
    if axis.family == Family::Fourier {
        return DMatrix::from_fn(axis.cells, axis.modes, |i, a| {
            axis.fourier_integral(axis.frequency(a), i as f64, i as f64 + 1.0)
        });
    }
    let rule = axis.cell_rule(order);
    let mut out = DMatrix::zeros(axis.cells, axis.modes);
    for (q, (&x, &w)) in rule.nodes.iter().zip(&rule.weights).enumerate() {
        let cell = q / order;
        let wq = if weighted { w * axis.weight(x) } else { w };
        for a in 0..axis.modes {
            out[(cell, a)] += axis.value(a, x) * wq;
        }
    }
    out
}

/// Inverse of a Hermitian positive definite matrix through diagonal
/// equilibration, with the condition number of the equilibrated matrix.
fn equilibrated_inverse(g: &DMatrix<Complex64>) -> (Option<DMatrix<Complex64>>, f64) {
    let n = g.nrows();
    let d: Vec<f64> = (0..n).map(|i| g[(i, i)].re).collect();
    if d.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return (None, f64::INFINITY);
    }
    let s: Vec<f64> = d.iter().map(|v| v.sqrt().recip()).collect();
    let scaled = DMatrix::from_fn(n, n, |i, j| g[(i, j)] * (s[i] * s[j]));
    let sv = scaled.clone().singular_values();
    let (max, min) = sv
        .iter()
        .fold((0.0f64, f64::INFINITY), |(hi, lo), &v| (hi.max(v), lo.min(v)));
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !condition.is_finite() || condition > MAX_CONDITION {
        return (None, condition);
    }
    let inv = match scaled.try_inverse() {
        Some(inv) => inv,
        None => return (None, f64::INFINITY),
    };
    (Some(DMatrix::from_fn(n, n, |i, j| inv[(i, j)] * (s[i] * s[j]))), condition)
}

/// Builds the basis tables and the Gram matrix `G[k][n] = <phi_n, phi_k>_omega`.
///
/// Fourier inner products are exact (closed-form cell integrals). Chebyshev
/// and Legendre use Gauss-Legendre of order Q inside every cell, or a global
/// weight-matched rule when [`GramQuadrature::Global`] is selected. Hermite
/// reports the full-line Gram from Gauss-Hermite nodes, while its projections
/// stay on the bounded pixel domain.
pub fn gram_matrix(spec: &BasisSpec) -> Result<BasisSet> {
    spec.validate()?;
    let (ax, ay) = spec.axes();
    let scale = spec.weight_scale();

    let gram = kron_modes(&reported_gram_1d(&ax, spec), &reported_gram_1d(&ay, spec), scale);
    if gram.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::Numerical("gram matrix has non-finite entries".into()));
    }
    let norms = (0..gram.nrows()).map(|i| gram[(i, i)].re).collect();

    let dgx = domain_gram_1d(&ax, spec);
    let dgy = domain_gram_1d(&ay, spec);
    let (ix, cx) = equilibrated_inverse(&dgx);
    let (iy, cy) = equilibrated_inverse(&dgy);
    let domain_gram_inv = ix.zip(iy);
    let condition = cx * cy;

    let weighted_cells = (
        cell_integrals(&ax, spec.quad_order, true),
        cell_integrals(&ay, spec.quad_order, true),
    );
    let plain_cells = (
        cell_integrals(&ax, spec.quad_order, false),
        cell_integrals(&ay, spec.quad_order, false),
    );
    Ok(BasisSet {
        spec: spec.clone(),
        gram,
        norms,
        axes: (ax, ay),
        domain_gram: (dgx, dgy),
        domain_gram_inv,
        condition,
        weighted_cells,
        plain_cells,
    })
}

fn require_channel(basis: &BasisSet, image: &GridImage) -> Result<()> {
    let spec = basis.spec();
    if image.channels() != 1 || image.width() != spec.width || image.height() != spec.height {
        return Err(Error::shape(
            format!("{}x{}x1", spec.width, spec.height),
            image.shape_string(),
        ));
    }
    Ok(())
}

/// Projects a single-channel image, taken as a piecewise-constant surface,
/// onto the basis: `c = G^{-1} m` with `m_k = <I, phi_k>_omega`.
pub fn project(basis: &BasisSet, image: &GridImage) -> Result<CoefficientVector> {
    require_channel(basis, image)?;
    let spec = basis.spec();
    // y[(i, j)] = I(j, i): x along rows
    let y = DMatrix::from_fn(spec.width, spec.height, |i, j| Complex64::new(image.get(0, j, i), 0.0));
    let (cx, cy) = &basis.weighted_cells;
    let moments = cx.adjoint() * y * cy.map(|v| v.conj()) * Complex64::new(spec.weight_scale(), 0.0);
    basis.solve_moments(moments)
}

/// Projects a continuous function sampled on the per-cell Gauss-Legendre nodes.
pub fn project_fn(basis: &BasisSet, f: impl Fn(f64, f64) -> f64) -> Result<CoefficientVector> {
    let spec = basis.spec();
    let (ax, ay) = &basis.axes;
    let (rx, ry) = (ax.cell_rule(spec.quad_order), ay.cell_rule(spec.quad_order));
    let bx = DMatrix::from_fn(rx.len(), ax.modes, |q, a| {
        ax.value(a, rx.nodes[q]).conj() * (rx.weights[q] * ax.weight(rx.nodes[q]))
    });
    let by = DMatrix::from_fn(ry.len(), ay.modes, |r, b| {
        ay.value(b, ry.nodes[r]).conj() * (ry.weights[r] * ay.weight(ry.nodes[r]))
    });
    let samples = DMatrix::from_fn(rx.len(), ry.len(), |q, r| {
        Complex64::new(f(rx.nodes[q], ry.nodes[r]), 0.0)
    });
    let moments = bx.transpose() * samples * by * Complex64::new(spec.weight_scale(), 0.0);
    basis.solve_moments(moments)
}

/// Cell averages of `sum_n c_n phi_n` (real part for Fourier).
pub fn reconstruct(basis: &BasisSet, coeffs: &CoefficientVector) -> Result<GridImage> {
    let c = basis.coeff_matrix(coeffs)?;
    let (ax, ay) = &basis.plain_cells;
    let values = ax * c * ay.transpose();
    let spec = basis.spec();
    GridImage::from_fn(spec.width, spec.height, |i, j| values[(i, j)].re)
}

/// Pointwise value of `sum_n c_n phi_n` at `(x, y)` (real part).
pub fn evaluate(basis: &BasisSet, coeffs: &CoefficientVector, x: f64, y: f64) -> Result<f64> {
    let c = basis.coeff_matrix(coeffs)?;
    let (ax, ay) = &basis.axes;
    let mut acc = Complex64::new(0.0, 0.0);
    for b in 0..ay.modes {
        let vy = ay.value(b, y);
        for a in 0..ax.modes {
            acc += c[(a, b)] * ax.value(a, x) * vy;
        }
    }
    Ok(acc.re)
}

/// Channel groups in low-to-high frequency order (1-based indices).
///
/// Groups are the anti-diagonals `|w| + |h| = const` of the effective
/// frequencies; within a group, larger `|w|` comes first, then positive
/// before negative frequencies.
pub fn frequency_order(spec: &BasisSpec) -> Vec<Vec<usize>> {
    let (ax, ay) = spec.axes();
    let mut keyed: Vec<(i64, i64, i64, i64, usize)> = (1..=spec.len())
        .map(|n| {
            let w = (n - 1) % spec.modes_x;
            let h = (n - 1) / spec.modes_x;
            let (fw, fh) = (ax.frequency(w) as i64, ay.frequency(h) as i64);
            (fw.abs() + fh.abs(), -fw.abs(), -fw, -fh, n)
        })
        .collect();
    keyed.sort();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut last = None;
    for (key, .., n) in keyed {
        if last != Some(key) {
            groups.push(Vec::new());
            last = Some(key);
        }
        groups.last_mut().expect("group").push(n);
    }
    groups
}

/// Flattened [`frequency_order`].
pub fn frequency_permutation(spec: &BasisSpec) -> Vec<usize> {
    frequency_order(spec).into_iter().flatten().collect()
}

pub(crate) fn validate_permutation(order: &[usize], n: usize) -> Result<()> {
    if order.len() != n {
        return Err(Error::param(format!("order has {} entries, expected {n}", order.len())));
    }
    let mut seen = vec![false; n];
    for &k in order {
        if k == 0 || k > n || std::mem::replace(&mut seen[k - 1], true) {
            return Err(Error::param(format!("order is not a permutation of 1..={n}")));
        }
    }
    Ok(())
}

/// Keeps only the first `k` modes of `order`.
pub fn prefix_coefficients(
    coeffs: &CoefficientVector,
    k: usize,
    order: &[usize],
) -> Result<CoefficientVector> {
    validate_permutation(order, coeffs.len())?;
    if k > coeffs.len() {
        return Err(Error::param(format!("prefix length {k} exceeds {}", coeffs.len())));
    }
    let mut out = CoefficientVector::zeros(coeffs.len());
    for &n in &order[..k] {
        out.0[n - 1] = coeffs.0[n - 1];
    }
    Ok(out)
}

/// Reconstruction from the first `k` modes of `order`.
pub fn prefix_reconstruct(
    basis: &BasisSet,
    coeffs: &CoefficientVector,
    k: usize,
    order: &[usize],
) -> Result<GridImage> {
    reconstruct(basis, &prefix_coefficients(coeffs, k, order)?)
}

/// Weighted L2 distance between the full and the `k`-prefix expansions.
pub fn prefix_error(basis: &BasisSet, coeffs: &CoefficientVector, k: usize, order: &[usize]) -> Result<f64> {
    let kept = prefix_coefficients(coeffs, k, order)?;
    let dropped = CoefficientVector(coeffs.0.iter().zip(&kept.0).map(|(a, b)| a - b).collect());
    Ok(basis.weighted_norm_sq(&dropped)?.max(0.0).sqrt())
}

/// Largest violation of `c_(w,h) = conj(c_(-w mod M_x, -h mod M_y))`.
pub fn conjugate_symmetry_error(spec: &BasisSpec, coeffs: &CoefficientVector) -> f64 {
    let (mx, my) = (spec.modes_x, spec.modes_y);
    let mut worst = 0.0f64;
    for n in 0..spec.len() {
        let (w, h) = (n % mx, n / mx);
        let p = ((my - h) % my) * mx + (mx - w) % mx;
        worst = worst.max((coeffs.0[n] - coeffs.0[p].conj()).norm());
    }
    worst
}

/// Real-valued coordinates for a set of modes of a real image.
///
/// Polynomial coefficients of real images are real and map one to one.
/// For centered Fourier bases each conjugate pair `(n, n')` becomes
/// `sqrt(2) Re c_n` and `sqrt(2) Im c_n`, where the partner's coefficient
/// follows from `c_n` (up to a fixed phase when the pair aliases at the
/// Nyquist row or column); a self-conjugate mode is rotated by
/// its fixed phase so that it becomes real. The selected set must be closed
/// under conjugation.
#[derive(Debug, Clone)]
pub struct RealCoordinates {
    selected: Vec<usize>,
    kind: Vec<RealSlot>,
    n_modes: usize,
}

#[derive(Debug, Clone, Copy)]
enum RealSlot {
    Plain,
    Phase(Complex64),
    ReOf(usize),
    /// Partner position and the phase `rho` with `v_m = rho conj(v_partner)`
    /// on the pixel grid; `rho` differs from 1 only for aliased Nyquist rows.
    ImOf(usize, Complex64),
}

impl RealCoordinates {
    /// `selected` holds 1-based mode indices; the coordinate order follows it.
    pub fn new(basis: &BasisSet, selected: &[usize]) -> Result<Self> {
        let spec = basis.spec();
        let n = spec.len();
        let mut position = vec![None; n];
        for (t, &m) in selected.iter().enumerate() {
            if m == 0 || m > n || position[m - 1].is_some() {
                return Err(Error::param("selected modes must be distinct indices in 1..=N"));
            }
            position[m - 1] = Some(t);
        }
        if spec.family != Family::Fourier {
            return Ok(Self {
                selected: selected.to_vec(),
                kind: vec![RealSlot::Plain; selected.len()],
                n_modes: n,
            });
        }
        if spec.fourier != FourierConvention::Centered {
            return Err(Error::param(
                "real coordinates need the centered Fourier convention",
            ));
        }
        let (mx, my) = (spec.modes_x, spec.modes_y);
        let (ax, ay) = &basis.axes;
        let mut kind = Vec::with_capacity(selected.len());
        for &m in selected {
            let (w, h) = ((m - 1) % mx, (m - 1) / mx);
            let partner = ((my - h) % my) * mx + (mx - w) % mx + 1;
            if partner == m {
                let fw = ax.frequency(w);
                let fh = ay.frequency(h);
                let nyquist_ok = |f: f64, cells: usize| (2.0 * f).rem_euclid(cells as f64) == 0.0;
                if !nyquist_ok(fw, spec.width) || !nyquist_ok(fh, spec.height) {
                    return Err(Error::param(format!(
                        "mode {m} is its own index partner but not a real pixel-grid mode"
                    )));
                }
                let phase = (basis.weighted_cells.0[(0, w)] * basis.weighted_cells.1[(0, h)]).conj();
                kind.push(RealSlot::Phase(phase / phase.norm()));
            } else {
                let Some(pt) = position[partner - 1] else {
                    return Err(Error::param(format!(
                        "mode {m} selected without its conjugate partner {partner}"
                    )));
                };
                if m < partner {
                    kind.push(RealSlot::ReOf(pt));
                } else {
                    let (pw, ph) = ((partner - 1) % mx, (partner - 1) / mx);
                    let cell = |w: usize, h: usize| basis.weighted_cells.0[(0, w)] * basis.weighted_cells.1[(0, h)];
                    let rho = cell(w, h) / cell(pw, ph).conj();
                    kind.push(RealSlot::ImOf(pt, rho / rho.norm()));
                }
            }
        }
        Ok(Self {
            selected: selected.to_vec(),
            kind,
            n_modes: n,
        })
    }

    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    pub fn to_real(&self, coeffs: &CoefficientVector) -> Result<Vec<f64>> {
        if coeffs.len() != self.n_modes {
            return Err(Error::shape(format!("{} coefficients", self.n_modes), coeffs.len()));
        }
        let s2 = std::f64::consts::SQRT_2;
        Ok(self
            .selected
            .iter()
            .zip(&self.kind)
            .map(|(&m, kind)| {
                let c = coeffs.0[m - 1];
                match *kind {
                    RealSlot::Plain => c.re,
                    RealSlot::Phase(p) => (c * p.conj()).re,
                    RealSlot::ReOf(_) => s2 * c.re,
                    RealSlot::ImOf(pt, _) => s2 * coeffs.0[self.selected[pt] - 1].im,
                }
            })
            .collect())
    }

    pub fn from_real(&self, real: &[f64]) -> Result<CoefficientVector> {
        if real.len() != self.len() {
            return Err(Error::shape(format!("{} real coordinates", self.len()), real.len()));
        }
        let mut out = CoefficientVector::zeros(self.n_modes);
        let s2 = std::f64::consts::SQRT_2;
        for (t, (&m, kind)) in self.selected.iter().zip(&self.kind).enumerate() {
            out.0[m - 1] = match *kind {
                RealSlot::Plain => Complex64::new(real[t], 0.0),
                RealSlot::Phase(p) => p * real[t],
                RealSlot::ReOf(pt) => Complex64::new(real[t], real[pt]) / s2,
                RealSlot::ImOf(pt, rho) => rho.conj() * Complex64::new(real[pt], -real[t]) / s2,
            };
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_synthetic, Synthetic};

    fn fourier(w: usize, m: usize) -> BasisSet {
        gram_matrix(&BasisSpec::new(Family::Fourier, w, w, m, m).unwrap()).unwrap()
    }

    #[test]
    fn index_mapping() {
        assert_eq!(index_to_freq(1, 4, 4).unwrap(), (0, 0));
        assert_eq!(index_to_freq(6, 4, 4).unwrap(), (1, 1));
        for n in 1..=16 {
            let (w, h) = index_to_freq(n, 4, 4).unwrap();
            assert_eq!(freq_to_index(w, h, 4, 4).unwrap(), n);
        }
        assert!(matches!(index_to_freq(0, 4, 4), Err(Error::Range { .. })));
        assert!(matches!(index_to_freq(17, 4, 4), Err(Error::Range { .. })));
        assert!(freq_to_index(4, 0, 4, 4).is_err());
    }

    #[test]
    fn eval_examples() {
        let spec = BasisSpec::new(Family::Fourier, 8, 8, 4, 4).unwrap();
        let v = eval_basis(&spec, 1, 3.3, 1.7).unwrap();
        assert!((v - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        let cheb = BasisSpec::new(Family::Chebyshev, 8, 8, 4, 4).unwrap();
        assert!(matches!(
            eval_weight(&cheb, 0.0, 4.0),
            Err(Error::WeightSingularity { .. })
        ));
        assert!(eval_weight(&cheb, 4.0, 4.0).unwrap() == 1.0);
        let herm = BasisSpec::new(Family::Hermite, 8, 8, 4, 4).unwrap();
        // u = 4x/W - 2
        let w = eval_weight(&herm, 6.0, 4.0).unwrap();
        assert!((w - (-1.0f64).exp() / PI.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn fourier_gram_is_scaled_identity() {
        for q in [2, 3, 6] {
            let spec = BasisSpec::new(Family::Fourier, 8, 8, 4, 4)
                .unwrap()
                .with_quad_order(q)
                .unwrap();
            let b = gram_matrix(&spec).unwrap();
            let expected = DMatrix::<Complex64>::identity(16, 16) * Complex64::new(64.0, 0.0);
            assert!((b.gram() - expected).camax() < 1e-10);
        }
    }

    #[test]
    fn polynomial_gram_diagonals() {
        // Legendre on [0, W]: (W/2)(H/2) * 2/(2w+1) * 2/(2h+1)
        let b = gram_matrix(&BasisSpec::new(Family::Legendre, 8, 8, 4, 4).unwrap()).unwrap();
        let n = freq_to_index(2, 2, 4, 4).unwrap() - 1;
        assert!((b.norms()[n] - 16.0 * 0.4 * 0.4).abs() < 1e-12);
        // Chebyshev with the global Gauss-Chebyshev rule: (W/2)(H/2) pi^2 for (0,0)
        let spec = BasisSpec::new(Family::Chebyshev, 8, 8, 4, 4)
            .unwrap()
            .with_gram_quadrature(GramQuadrature::Global);
        let b = gram_matrix(&spec).unwrap();
        assert!((b.norms()[0] - 16.0 * PI * PI).abs() < 1e-10);
        assert!((b.norms()[1] - 16.0 * PI * PI / 2.0).abs() < 1e-10);
        // Hermite full line: (alpha W/2)(alpha H/2) * sqrt(pi) 2^w w! * sqrt(pi) 2^h h! / sqrt(pi)
        let b = gram_matrix(&BasisSpec::new(Family::Hermite, 8, 8, 4, 4).unwrap()).unwrap();
        let n = freq_to_index(3, 1, 4, 4).unwrap() - 1;
        let expected = 4.0 * PI.sqrt() * 48.0 * 2.0;
        assert!((b.norms()[n] - expected).abs() < 1e-9 * expected);
    }

    #[test]
    fn project_constant_and_zero() {
        let b = fourier(8, 4);
        let img = make_synthetic(&Synthetic::Constant { value: 2.5 }, 8, 8, 0).unwrap();
        let c = project(&b, &img).unwrap();
        assert!((c.0[0] - Complex64::new(2.5, 0.0)).norm() < 1e-12);
        assert!(c.0[1..].iter().all(|v| v.norm() < 1e-10));
        let zero = GridImage::zeros(8, 8, 1).unwrap();
        assert!(project(&b, &zero).unwrap().max_abs() == 0.0);
    }

    #[test]
    fn cosine_energy_in_conjugate_pair() {
        let b = fourier(4, 4);
        let img = make_synthetic(&Synthetic::Cosine { w: 1, h: 0 }, 4, 4, 0).unwrap();
        let c = project(&b, &img).unwrap();
        let one = freq_to_index(1, 0, 4, 4).unwrap() - 1;
        let partner = freq_to_index(3, 0, 4, 4).unwrap() - 1;
        for (n, v) in c.0.iter().enumerate() {
            if n != one && n != partner {
                assert!(v.norm() < 1e-12, "mode {n} has {v}");
            }
        }
        assert!(c.0[one].norm() > 0.1 && c.0[partner].norm() > 0.1);
    }

    #[test]
    fn reconstruct_span_member() {
        // a continuous cosine lies in the centered span; its cell averages are analytic
        let spec = BasisSpec::new(Family::Fourier, 8, 8, 8, 8)
            .unwrap()
            .with_fourier(FourierConvention::Centered);
        let b = gram_matrix(&spec).unwrap();
        let k = 2.0 * PI / 8.0;
        let c = project_fn(&b, |x, y| (k * (2.0 * x + y)).cos()).unwrap();
        let back = reconstruct(&b, &c).unwrap();
        for j in 0..8 {
            for i in 0..8 {
                let (x0, y0) = (i as f64, j as f64);
                // average of cos(2k x + k y) over the unit cell
                let s = ((k * (2.0 * (x0 + 1.0) + y0 + 1.0)).cos() - (k * (2.0 * x0 + y0 + 1.0)).cos()
                    - (k * (2.0 * (x0 + 1.0) + y0)).cos()
                    + (k * (2.0 * x0 + y0)).cos())
                    / (-2.0 * k * k);
                assert!((back.get(0, j, i) - s).abs() < 1e-9, "{} vs {s}", back.get(0, j, i));
            }
        }
        let b = fourier(8, 8);
        let zero = reconstruct(&b, &CoefficientVector::zeros(64)).unwrap();
        assert!(zero.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn legendre_single_mode_is_constant() {
        let b = gram_matrix(&BasisSpec::new(Family::Legendre, 4, 4, 3, 3).unwrap()).unwrap();
        let mut c = CoefficientVector::zeros(9);
        c.0[0] = Complex64::new(1.0, 0.0);
        let img = reconstruct(&b, &c).unwrap();
        assert!(img.values().iter().all(|&v| (v - 1.0).abs() < 1e-14));
    }

    #[test]
    fn frequency_order_groups() {
        let spec = BasisSpec::new(Family::Fourier, 8, 8, 4, 4).unwrap();
        let groups = frequency_order(&spec);
        assert_eq!(
            groups,
            vec![
                vec![1],
                vec![2, 5],
                vec![3, 6, 9],
                vec![4, 7, 10, 13],
                vec![8, 11, 14],
                vec![12, 15],
                vec![16]
            ]
        );
        let single = BasisSpec::new(Family::Legendre, 1, 1, 1, 1).unwrap();
        assert_eq!(frequency_order(&single), vec![vec![1]]);
    }

    #[test]
    fn centered_order_groups_conjugates() {
        let spec = BasisSpec::new(Family::Fourier, 4, 4, 4, 4)
            .unwrap()
            .with_fourier(FourierConvention::Centered);
        let sizes: Vec<usize> = frequency_order(&spec).iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![1, 4, 6, 4, 1]);
    }

    #[test]
    fn prefix_reconstruct_edges() {
        let b = fourier(8, 4);
        let img = make_synthetic(&Synthetic::RandomSmooth { bandlimit: 2 }, 8, 8, 3).unwrap();
        let c = project(&b, &img).unwrap();
        let order = frequency_permutation(b.spec());
        assert_eq!(prefix_reconstruct(&b, &c, 16, &order).unwrap(), reconstruct(&b, &c).unwrap());
        assert!(prefix_reconstruct(&b, &c, 0, &order)
            .unwrap()
            .values()
            .iter()
            .all(|&v| v == 0.0));
        assert!(prefix_reconstruct(&b, &c, 3, &[1, 1, 2]).is_err());
    }

    #[test]
    fn real_coordinates_roundtrip() {
        let spec = BasisSpec::new(Family::Fourier, 4, 4, 4, 4)
            .unwrap()
            .with_fourier(FourierConvention::Centered);
        let b = gram_matrix(&spec).unwrap();
        let all = frequency_permutation(&spec);
        let rc = RealCoordinates::new(&b, &all).unwrap();
        let img = make_synthetic(&Synthetic::RandomSmooth { bandlimit: 2 }, 4, 4, 5).unwrap();
        let c = project(&b, &img).unwrap();
        let r = rc.to_real(&c).unwrap();
        let back = rc.from_real(&r).unwrap();
        assert!(back.max_abs_diff(&c) < 1e-12, "{}", back.max_abs_diff(&c));
        // a pair without its partner is rejected
        assert!(RealCoordinates::new(&b, &[1, 2]).is_err());
        // the printed convention has no real coordinates
        let printed = gram_matrix(&BasisSpec::new(Family::Fourier, 4, 4, 4, 4).unwrap()).unwrap();
        assert!(RealCoordinates::new(&printed, &[1]).is_err());
    }
}
