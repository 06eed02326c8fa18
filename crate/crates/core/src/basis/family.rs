use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{self, Rule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Fourier,
    Chebyshev,
    Legendre,
    Hermite,
}

impl Family {
    pub fn is_complex(self) -> bool {
        matches!(self, Family::Fourier)
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Fourier => "fourier",
            Family::Chebyshev => "chebyshev",
            Family::Legendre => "legendre",
            Family::Hermite => "hermite",
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fourier" => Ok(Family::Fourier),
            "chebyshev" => Ok(Family::Chebyshev),
            "legendre" => Ok(Family::Legendre),
            "hermite" => Ok(Family::Hermite),
            other => Err(Error::param(format!("unknown basis family {other:?}"))),
        }
    }
}

/// How Fourier mode indices `0..M` map to frequencies.
///
/// `Printed` uses the index itself. `Centered` maps index `w` to the signed
/// frequency `w` for `2w <= M` and `w - M` otherwise, which is what a real
/// pixel grid can represent without aliasing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FourierConvention {
    #[default]
    Printed,
    Centered,
}

/// Quadrature used for the reported Gram matrix of the polynomial families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GramQuadrature {
    /// Gauss-Legendre of order Q inside every pixel cell.
    #[default]
    PerCell,
    /// One global rule matched to the weight (Gauss-Chebyshev, Gauss-Legendre).
    Global,
}

/// Value, first and second derivative of a 1D polynomial factor at `u`.
///
/// Chebyshev `T_n`, Legendre `P_n` and physicists' Hermite `H_n` are all
/// generated by their three-term recurrences, differentiated term by term.
pub fn eval_factor_derivs(family: Family, degree: usize, u: f64) -> Result<[f64; 3]> {
    // p_{k+1} = (a_k u) p_k - b_k p_{k-1}
    let coeffs = |k: usize| -> (f64, f64) {
        let kf = k as f64;
        match family {
            Family::Chebyshev => (2.0, 1.0),
            Family::Legendre => ((2.0 * kf + 1.0) / (kf + 1.0), kf / (kf + 1.0)),
            Family::Hermite => (2.0, 2.0 * kf),
            Family::Fourier => unreachable!(),
        }
    };
    if family == Family::Fourier {
        return Err(Error::param("fourier modes have no polynomial factor"));
    }
    let mut cur = [1.0, 0.0, 0.0];
    if degree == 0 {
        return Ok(cur);
    }
    // degree 1 differs from the general recurrence only for Chebyshev (T_1 = u)
    let first_scale = if family == Family::Hermite { 2.0 } else { 1.0 };
    let mut next = [first_scale * u, first_scale, 0.0];
    for k in 1..degree {
        let prev = cur;
        cur = next;
        let (a, b) = coeffs(k);
        next = [
            a * u * cur[0] - b * prev[0],
            a * (cur[0] + u * cur[1]) - b * prev[1],
            a * (2.0 * cur[1] + u * cur[2]) - b * prev[2],
        ];
    }
    Ok(next)
}

/// Value of a 1D polynomial factor in its canonical variable.
pub fn eval_factor(family: Family, degree: usize, u: f64) -> Result<f64> {
    eval_factor_derivs(family, degree, u).map(|d| d[0])
}

/// One axis of a separable 2D basis: family, pixel extent and mode count.
#[derive(Debug, Clone)]
pub(crate) struct Axis {
    pub family: Family,
    pub cells: usize,
    pub modes: usize,
    pub alpha: f64,
    pub convention: FourierConvention,
}

impl Axis {
    pub fn extent(&self) -> f64 {
        self.cells as f64
    }

    pub fn frequency(&self, w: usize) -> f64 {
        match self.convention {
            FourierConvention::Printed => w as f64,
            FourierConvention::Centered => {
                if 2 * w <= self.modes {
                    w as f64
                } else {
                    w as f64 - self.modes as f64
                }
            }
        }
    }

    /// Reparameterization `u(x)` and `du/dx`.
    pub fn canonical(&self, x: f64) -> (f64, f64) {
        let l = self.extent();
        match self.family {
            Family::Hermite => ((2.0 * x - l) / (self.alpha * l), 2.0 / (self.alpha * l)),
            _ => (2.0 * x / l - 1.0, 2.0 / l),
        }
    }

    pub fn to_x(&self, u: f64) -> f64 {
        let l = self.extent();
        match self.family {
            Family::Hermite => (u * self.alpha * l + l) / 2.0,
            _ => (u + 1.0) * l / 2.0,
        }
    }

    pub fn value(&self, w: usize, x: f64) -> Complex64 {
        match self.family {
            Family::Fourier => {
                Complex64::from_polar(1.0, 2.0 * PI * self.frequency(w) * x / self.extent())
            }
            f => {
                let (u, _) = self.canonical(x);
                Complex64::new(eval_factor(f, w, u).expect("polynomial family"), 0.0)
            }
        }
    }

    /// Second x-derivative of mode `w`.
    pub fn second(&self, w: usize, x: f64) -> Complex64 {
        match self.family {
            Family::Fourier => {
                let k = 2.0 * PI * self.frequency(w) / self.extent();
                -k * k * self.value(w, x)
            }
            f => {
                let (u, du) = self.canonical(x);
                let d = eval_factor_derivs(f, w, u).expect("polynomial family");
                Complex64::new(du * du * d[2], 0.0)
            }
        }
    }

    /// One-dimensional weight at `x` (the 2D constant for Hermite is applied separately).
    pub fn weight(&self, x: f64) -> f64 {
        let (u, _) = self.canonical(x);
        match self.family {
            Family::Fourier | Family::Legendre => 1.0,
            Family::Chebyshev => 1.0 / (1.0 - u * u).sqrt(),
            Family::Hermite => (-u * u).exp(),
        }
    }

    pub fn weight_is_singular(&self, x: f64) -> bool {
        self.family == Family::Chebyshev && self.canonical(x).0.abs() >= 1.0
    }

    /// `int_a^b e^{2 pi i nu x / L} dx` in closed form.
    pub fn fourier_integral(&self, nu: f64, a: f64, b: f64) -> Complex64 {
        if nu == 0.0 {
            return Complex64::new(b - a, 0.0);
        }
        let k = 2.0 * PI * nu / self.extent();
        let ea = Complex64::from_polar(1.0, k * a);
        let eb = Complex64::from_polar(1.0, k * b);
        (eb - ea) / Complex64::new(0.0, k)
    }

    /// Per-cell Gauss-Legendre nodes in x with their plain (unweighted) weights.
    pub fn cell_rule(&self, order: usize) -> Rule {
        let base = quadrature::gauss_legendre(order);
        let mut nodes = Vec::with_capacity(order * self.cells);
        let mut weights = Vec::with_capacity(order * self.cells);
        for i in 0..self.cells {
            for (&xi, &wi) in base.nodes.iter().zip(&base.weights) {
                nodes.push(i as f64 + 0.5 * (xi + 1.0));
                weights.push(0.5 * wi);
            }
        }
        Rule { nodes, weights }
    }

    /// A rule in x whose weights already include the basis weight and the
    /// Jacobian, integrating over the family's natural domain.
    ///
    /// Fourier is handled analytically elsewhere and returns `None`.
    pub fn global_weighted_rule(&self, points: usize) -> Option<Rule> {
        let (base, jac) = match self.family {
            Family::Fourier => return None,
            Family::Chebyshev => (quadrature::gauss_chebyshev(points), self.extent() / 2.0),
            Family::Legendre => (quadrature::gauss_legendre(points), self.extent() / 2.0),
            Family::Hermite => (
                quadrature::gauss_hermite(points),
                self.alpha * self.extent() / 2.0,
            ),
        };
        Some(Rule {
            nodes: base.nodes.iter().map(|&u| self.to_x(u)).collect(),
            weights: base.weights.iter().map(|&w| w * jac).collect(),
        })
    }
}
