//! Discretized blur and deblur updates of basis coefficients.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::basis::CoefficientVector;
use crate::error::{Error, Result};
use crate::regularizer::LatentTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Euler,
    #[default]
    Zoh,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euler" => Ok(Method::Euler),
            "zoh" => Ok(Method::Zoh),
            other => Err(Error::param(format!("unknown discretization {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[default]
    Blur,
    Deblur,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepConfig {
    pub delta: f64,
    pub method: Method,
    pub steps: usize,
}

impl StepConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) || !self.delta.is_finite() {
            return Err(Error::param("step size must be positive"));
        }
        if self.steps == 0 {
            return Err(Error::param("steps must be at least 1"));
        }
        Ok(())
    }
}

/// `Abar` together with the parameters it was derived from.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteUpdate {
    pub matrix: DMatrix<f64>,
    pub delta: f64,
    pub method: Method,
    pub direction: Direction,
}

impl DiscreteUpdate {
    pub fn identity(n: usize) -> Self {
        Self {
            matrix: DMatrix::identity(n, n),
            delta: 0.0,
            method: Method::Zoh,
            direction: Direction::Blur,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

fn is_diagonal(m: &DMatrix<f64>) -> bool {
    m.iter()
        .enumerate()
        .all(|(i, &v)| v == 0.0 || i % m.nrows() == i / m.nrows())
}

// Pade coefficients b_0..b_13 (Higham 2005)
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA: [(usize, f64); 4] = [
    (3, 1.495585217958292e-2),
    (5, 2.539398330063230e-1),
    (7, 9.504178996162932e-1),
    (9, 2.097847961257068e0),
];
const THETA13: f64 = 5.371920351148152e0;

fn pade_coefficients(m: usize) -> &'static [f64] {
    match m {
        3 => &[120.0, 60.0, 12.0, 1.0],
        5 => &[30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0],
        7 => &[17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0],
        9 => &[
            17643225600.0,
            8821612800.0,
            2075673600.0,
            302702400.0,
            30270240.0,
            2162160.0,
            110880.0,
            3960.0,
            90.0,
            1.0,
        ],
        _ => &PADE13,
    }
}

fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

fn pade_solve(u: DMatrix<f64>, v: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = &v + &u;
    let q = &v - &u;
    q.lu().solve(&p).ok_or_else(|| Error::Numerical("singular Pade denominator".into()))
}

/// `e^M` by an eigen shortcut for diagonal `M`, otherwise scaling and
/// squaring with a Pade approximant of degree 3, 5, 7, 9 or 13.
pub fn matrix_exp(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::shape("square matrix", format!("{}x{}", m.nrows(), m.ncols())));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::param("matrix exponential of a non-finite matrix"));
    }
    let n = m.nrows();
    let result = if is_diagonal(m) {
        DMatrix::from_diagonal(&m.diagonal().map(f64::exp))
    } else {
        let ident = DMatrix::<f64>::identity(n, n);
        let norm = one_norm(m);
        let a2 = m * m;
        let mut out = None;
        for &(deg, theta) in &THETA {
            if norm <= theta {
                let b = pade_coefficients(deg);
                let mut power = ident.clone();
                let mut u = &ident * b[1];
                let mut v = &ident * b[0];
                for k in 1..=deg / 2 {
                    power = &power * &a2;
                    u += &power * b[2 * k + 1];
                    v += &power * b[2 * k];
                }
                out = Some(pade_solve(m * u, v)?);
                break;
            }
        }
        match out {
            Some(r) => r,
            None => {
                let s = ((norm / THETA13).log2().ceil().max(0.0)) as i32;
                let a = m / 2f64.powi(s);
                let b = &PADE13;
                let a2 = &a * &a;
                let a4 = &a2 * &a2;
                let a6 = &a4 * &a2;
                let u_inner = &a6 * b[13] + &a4 * b[11] + &a2 * b[9];
                let u = &a * (&a6 * u_inner + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &ident * b[1]);
                let v_inner = &a6 * b[12] + &a4 * b[10] + &a2 * b[8];
                let v = &a6 * v_inner + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &ident * b[0];
                let mut r = pade_solve(u, v)?;
                for _ in 0..s {
                    r = &r * &r;
                }
                r
            }
        }
    };
    if result.iter().any(|v| !v.is_finite()) {
        return Err(Error::Overflow);
    }
    Ok(result)
}

/// `Abar` for one step of size `delta`; deblurring uses `-delta`.
pub fn discretize(a: &DMatrix<f64>, delta: f64, method: Method, direction: Direction) -> Result<DiscreteUpdate> {
    if !a.is_square() {
        return Err(Error::shape("square matrix", format!("{}x{}", a.nrows(), a.ncols())));
    }
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::param("step size must be positive"));
    }
    let signed = match direction {
        Direction::Blur => delta,
        Direction::Deblur => -delta,
    };
    let n = a.nrows();
    let matrix = match method {
        Method::Euler => DMatrix::identity(n, n) + a * signed,
        Method::Zoh => matrix_exp(&(a * signed))?,
    };
    Ok(DiscreteUpdate {
        matrix,
        delta,
        method,
        direction,
    })
}

/// `Abar c` for a (complex) coefficient vector.
pub fn apply_update(update: &DiscreteUpdate, state: &CoefficientVector) -> Result<CoefficientVector> {
    let n = update.dim();
    if state.len() != n {
        return Err(Error::shape(format!("{n} coefficients"), state.len()));
    }
    let m = &update.matrix;
    Ok(CoefficientVector(
        (0..n)
            .map(|r| (0..n).map(|c| state.0[c] * m[(r, c)]).sum::<Complex64>())
            .collect(),
    ))
}

/// `Abar c` for a real vector.
pub fn apply_update_real(update: &DiscreteUpdate, state: &[f64]) -> Result<Vec<f64>> {
    let n = update.dim();
    if state.len() != n {
        return Err(Error::shape(format!("{n} coefficients"), state.len()));
    }
    Ok((&update.matrix * DVector::from_column_slice(state)).as_slice().to_vec())
}

/// Mode-1 product: `Abar` mixes channels at every spatial site.
pub fn apply_update_tensor(update: &DiscreteUpdate, latent: &LatentTensor) -> Result<LatentTensor> {
    let n = update.dim();
    if latent.channels() != n {
        return Err(Error::shape(format!("{n} channels"), latent.channels()));
    }
    let sites = latent.height() * latent.width();
    let z = DMatrix::from_row_slice(n, sites, latent.values());
    let out = &update.matrix * z;
    let mut values = Vec::with_capacity(n * sites);
    for r in 0..n {
        values.extend(out.row(r).iter());
    }
    LatentTensor::new(n, latent.height(), latent.width(), values)
}

/// States `c_0, Abar c_0, ..., Abar^steps c_0`. Diagonal ZOH uses
/// `e^{lambda t delta}` directly.
pub fn simulate_trajectory(
    a: &DMatrix<f64>,
    c0: &CoefficientVector,
    delta: f64,
    steps: usize,
    method: Method,
) -> Result<Vec<CoefficientVector>> {
    if c0.len() != a.nrows() {
        return Err(Error::shape(format!("{} coefficients", a.nrows()), c0.len()));
    }
    let mut out = vec![c0.clone()];
    if steps == 0 {
        return Ok(out);
    }
    if method == Method::Zoh && is_diagonal(a) {
        if !(delta > 0.0) {
            return Err(Error::param("step size must be positive"));
        }
        for t in 1..=steps {
            let tf = t as f64;
            out.push(CoefficientVector(
                c0.0.iter()
                    .enumerate()
                    .map(|(k, &c)| c * (a[(k, k)] * tf * delta).exp())
                    .collect(),
            ));
        }
        return Ok(out);
    }
    let update = discretize(a, delta, method, Direction::Blur)?;
    for _ in 0..steps {
        let next = apply_update(&update, out.last().expect("non-empty"))?;
        out.push(next);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AmplificationReport {
    /// Largest singular value of the ZOH deblur update.
    pub max_singular_value: f64,
    /// `e^{|lambda_k| delta}` per eigenvalue of `A`.
    pub per_mode: Vec<f64>,
    pub max_mode: f64,
}

/// Noise amplification of one ZOH deblur step.
pub fn deblur_amplification(a: &DMatrix<f64>, delta: f64) -> Result<AmplificationReport> {
    let update = discretize(a, delta, Method::Zoh, Direction::Deblur)?;
    let max_singular_value = update.matrix.clone().singular_values().max();
    let per_mode: Vec<f64> = if is_diagonal(a) {
        a.diagonal().iter().map(|l| (l.abs() * delta).exp()).collect()
    } else {
        a.complex_eigenvalues().iter().map(|l| (l.re.abs() * delta).exp()).collect()
    };
    let max_mode = per_mode.iter().copied().fold(1.0, f64::max);
    Ok(AmplificationReport {
        max_singular_value,
        per_mode,
        max_mode,
    })
}

/// Largest singular value of the blur-direction update.
pub fn contraction(a: &DMatrix<f64>, delta: f64, method: Method) -> Result<f64> {
    let update = discretize(a, delta, method, Direction::Blur)?;
    Ok(update.matrix.singular_values().max())
}
