//! Truncated Cauchy systems `1/(x_i - y_j)` with `y_j = x_j + lambda`, their
//! closed-form inverse, and the dense oracle used to check it.

use std::ops::Mul;

use num_complex::Complex;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::{lu_inverse, Matrix};
use crate::precision::{cabs, lift, real, Real};
use crate::spectrum::{dist_alpha, Kind, SpectrumModel};

/// Product kept as a unit-modulus sign and a sum of log magnitudes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogSignedProduct<R: Real> {
    log_magnitude: R,
    sign: Complex<R>,
}

impl<R: Real> Default for LogSignedProduct<R> {
    fn default() -> Self {
        Self::one()
    }
}

impl<R: Real> LogSignedProduct<R> {
    /// The empty product.
    pub fn one() -> Self {
        Self {
            log_magnitude: R::zero(),
            sign: real(R::one()),
        }
    }

    /// Multiplies in one factor; `None` if the factor is zero.
    pub fn times(self, z: Complex<R>) -> Option<Self> {
        let m = cabs(z);
        if m == R::zero() {
            return None;
        }
        let sign = if z.im == R::zero() {
            if z.re < R::zero() {
                -self.sign
            } else {
                self.sign
            }
        } else {
            self.sign * (z / m)
        };
        Some(Self {
            log_magnitude: self.log_magnitude + m.ln(),
            sign,
        })
    }

    pub fn log_magnitude(&self) -> R {
        self.log_magnitude
    }

    pub fn sign(&self) -> Complex<R> {
        self.sign
    }

    pub fn value(&self) -> Complex<R> {
        self.sign * self.log_magnitude.exp()
    }
}

impl<R: Real> Mul for LogSignedProduct<R> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        Self {
            log_magnitude: self.log_magnitude + rhs.log_magnitude,
            sign: self.sign * rhs.sign,
        }
    }
}

/// Nodes `x_i` and `y_j = x_j + lambda` of a truncated Cauchy matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CauchySystem<R: Real> {
    x: Vec<Complex<R>>,
    y: Vec<Complex<R>>,
    lambda: R,
    floor: f64,
}

impl<R: Real> CauchySystem<R> {
    /// Validates simplicity and non-resonance: `|x_i - y_j| >= floor > 0`.
    pub fn new(x: Vec<Complex<R>>, lambda: R, floor: f64) -> Result<Self> {
        if !(lambda > R::zero()) {
            return Err(Error::InvalidArgument("damping must be positive".into()));
        }
        if !(floor > 0.0) {
            return Err(Error::InvalidArgument(format!("resonance floor must be positive, got {floor}")));
        }
        let y: Vec<Complex<R>> = x.iter().map(|&xi| xi + real(lambda)).collect();
        for i in 0..x.len() {
            for m in (i + 1)..x.len() {
                if x[i] == x[m] {
                    return Err(Error::InvalidArgument(format!("nodes {} and {} coincide", i + 1, m + 1)));
                }
            }
        }
        let sys = Self { x, y, lambda, floor };
        sys.guard()?;
        Ok(sys)
    }

    /// First `n` eigenvalues of `model`, guarded by the exact resonance
    /// distance of `lambda`.
    pub fn from_model(model: &SpectrumModel, lambda: f64, n: usize) -> Result<Self> {
        let cert = dist_alpha(model, lambda)?;
        if cert.dist == 0.0 {
            let (i, j) = cert.witness.unwrap_or((0, 0));
            return Err(Error::Resonance {
                i,
                j,
                gap: 0.0,
                floor: 0.0,
            });
        }
        let x = model.eigenvalues(n)?.into_iter().map(lift).collect();
        // Entries are evaluated in R; allow for rounding of lambda_i - lambda_j.
        let floor = match model.kind() {
            Kind::SelfAdjoint => cert.dist * (1.0 - 1e-9),
            Kind::SkewAdjoint => cert.dist * (1.0 - 1e-12),
        };
        Self::new(x, R::from_f64(lambda), floor)
    }

    fn guard(&self) -> Result<()> {
        for (i, xi) in self.x.iter().enumerate() {
            for (j, yj) in self.y.iter().enumerate() {
                let gap = cabs(*xi - *yj).to_f64();
                if !(gap >= self.floor) {
                    return Err(Error::Resonance {
                        i: i + 1,
                        j: j + 1,
                        gap,
                        floor: self.floor,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn x(&self) -> &[Complex<R>] {
        &self.x
    }

    pub fn y(&self) -> &[Complex<R>] {
        &self.y
    }

    pub fn lambda(&self) -> R {
        self.lambda
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }
}

/// Entries `1/(x_i - y_j)`.
pub fn build_cauchy<R: Real>(sys: &CauchySystem<R>) -> Result<Matrix<Complex<R>>> {
    sys.guard()?;
    let one = real(R::one());
    Ok(Matrix::from_fn(sys.len(), sys.len(), |i, j| one / (sys.x[i] - sys.y[j])))
}

/// `prod_{m != i} (1 + lambda/(x_i - x_m))` for every `i`.
pub fn growth_products<R: Real>(sys: &CauchySystem<R>) -> Result<Vec<LogSignedProduct<R>>> {
    node_products(sys, R::one())
}

/// `prod_{m != j} (1 - lambda/(x_j - x_m))` for every `j`.
pub fn decay_products<R: Real>(sys: &CauchySystem<R>) -> Result<Vec<LogSignedProduct<R>>> {
    node_products(sys, -R::one())
}

fn node_products<R: Real>(sys: &CauchySystem<R>, sign: R) -> Result<Vec<LogSignedProduct<R>>> {
    let one = real(R::one());
    let shift = real(sign * sys.lambda);
    (0..sys.len())
        .into_par_iter()
        .map(|i| {
            let mut p = LogSignedProduct::one();
            for m in 0..sys.len() {
                if m == i {
                    continue;
                }
                p = p
                    .times(one + shift / (sys.x[i] - sys.x[m]))
                    .ok_or(Error::ZeroFactor { row: i + 1, index: m + 1 })?;
            }
            Ok(p)
        })
        .collect()
}

/// Closed-form inverse of [`build_cauchy`]:
/// `lambda^2/(x_j - x_i - lambda) * P_i * Q_j` with `P` from
/// [`growth_products`] and `Q` from [`decay_products`].
pub fn explicit_inverse<R: Real>(sys: &CauchySystem<R>) -> Result<Matrix<Complex<R>>> {
    sys.guard()?;
    let p = growth_products(sys)?;
    let q = decay_products(sys)?;
    Ok(inverse_from_products(sys, &p, &q))
}

pub(crate) fn inverse_from_products<R: Real>(
    sys: &CauchySystem<R>,
    p: &[LogSignedProduct<R>],
    q: &[LogSignedProduct<R>],
) -> Matrix<Complex<R>> {
    let lam = real(sys.lambda);
    let lam2 = lam * lam;
    Matrix::from_fn(sys.len(), sys.len(), |i, j| {
        lam2 / (sys.x[j] - sys.x[i] - lam) * (p[i] * q[j]).value()
    })
}

/// Dense inverse by partial-pivoting elimination.
pub fn oracle_inverse<R: Real>(m: &Matrix<Complex<R>>) -> Result<Matrix<Complex<R>>> {
    lu_inverse(m)
}

/// Closed-form inverse measured against the dense oracle.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct OracleCheck {
    #[serde(rename = "N")]
    pub n: usize,
    pub lambda: f64,
    /// `max |explicit_inverse * C - I|`.
    pub identity_defect: f64,
    /// `max |explicit - lu| / |lu|` over the entries.
    pub lu_relative: f64,
}

/// Builds the system at `(lambda, n)` in working precision and compares the
/// closed-form inverse with elimination.
pub fn verify_against_oracle(model: &SpectrumModel, lambda: f64, n: usize) -> Result<OracleCheck> {
    let sys = CauchySystem::<crate::precision::Dd>::from_model(model, lambda, n)?;
    let c = build_cauchy(&sys)?;
    let inv = explicit_inverse(&sys)?;
    let lu = oracle_inverse(&c)?;
    let identity_defect = inv.matmul(&c)?.identity_defect();
    let lu_relative = inv
        .as_slice()
        .iter()
        .zip(lu.as_slice())
        .map(|(a, b)| (cabs(*a - *b) / cabs(*b)).to_f64())
        .fold(0.0, f64::max);
    Ok(OracleCheck {
        n,
        lambda,
        identity_defect,
        lu_relative,
    })
}

/// Smallest truncation for which [`tail_log_bound`] is available:
/// `(10 lambda / c)^(1/(alpha-1))`.
pub fn tail_threshold(model: &SpectrumModel, lambda: f64) -> f64 {
    (10.0 * lambda / model.gap_c()).powf(1.0 / (model.alpha() - 1.0))
}

/// Bound on `|sum_{m>N} log(1 +- lambda/(lambda_i - lambda_m))|`.
///
/// Above the threshold every factor is within `1/10` of one, so each log is
/// at most twice its argument, and the gap estimate bounds the argument by
/// `lambda / (c m^(alpha-1) (m - i))`. The series is summed up to `64 N`; the
/// rest is bounded by the integral of `m^(-alpha)` with `m - i >= 63 m / 64`.
pub fn tail_log_bound(model: &SpectrumModel, i: usize, lambda: f64, n: usize) -> Result<f64> {
    if i == 0 || i > n {
        return Err(Error::InvalidArgument(format!("index {i} outside 1..={n}")));
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("damping must be non-negative, got {lambda}")));
    }
    let threshold = tail_threshold(model, lambda);
    if !(n as f64 > threshold) {
        return Err(Error::TailThreshold { threshold, n });
    }
    let (c, alpha) = (model.gap_c(), model.alpha());
    let top = 64 * n;
    let mut sum = 0.0;
    for m in (n + 1)..=top {
        sum += 1.0 / ((m - i) as f64 * (m as f64).powf(alpha - 1.0));
    }
    let rest = (64.0 / 63.0) * (top as f64).powf(1.0 - alpha) / (alpha - 1.0);
    Ok(2.0 * lambda / c * (sum + rest))
}

/// Tail bounds for every row `i <= N`, or `None` below the threshold.
pub fn tail_bounds(model: &SpectrumModel, lambda: f64, n: usize) -> Option<Vec<f64>> {
    (1..=n).map(|i| tail_log_bound(model, i, lambda, n).ok()).collect()
}
