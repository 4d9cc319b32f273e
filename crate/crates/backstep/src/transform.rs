//! Backstepping transformation `T`, its inverse and the feedback gains.
//!
//! Matrices act on coefficient vectors: entry `(p, n)` of [`BacksteppingSynthesis::t_matrix`]
//! is the `p`-th coordinate of `T phi_n`, that is `k_n b_p / (lambda_p - lambda_n - lambda)`.
//! In that convention `T = diag(b) C diag(k)` where `C` is the Cauchy matrix
//! `1/(lambda_p - lambda_n - lambda)`, and `T^{-1} = diag(1/k) C^{-1} diag(1/b)`.

use std::sync::OnceLock;

use num_complex::{Complex, Complex64};
use rayon::prelude::*;
use serde::Serialize;

use crate::cauchy::{
    build_cauchy, decay_products, growth_products, inverse_from_products, tail_bounds, CauchySystem,
    LogSignedProduct,
};
use crate::error::{Error, Result};
use crate::matrix::{spectral_norm, Matrix};
use crate::precision::{cabs, lift, lower, real, CompensatedSum, Dd, Real, Wide};
use crate::spectrum::{dist_alpha, DistCertificate, Kind, SpectrumModel};

/// Guards applied by [`assemble_with`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SynthesisOptions {
    /// Damping values closer than this to a resonance are refused.
    pub min_dist: f64,
    /// Exponent constant of the gain floor `0.5 lambda exp(-c lambda^(1/alpha)) dist`.
    pub gain_floor_exponent: f64,
    /// Largest accepted TB=B defect.
    pub tb_tolerance: f64,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self {
            min_dist: 1e-10,
            gain_floor_exponent: 3.0,
            tb_tolerance: 1e-9,
        }
    }
}

/// Gains with error bars.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GainEstimate {
    /// `k_n b_n`.
    pub kb: Vec<Complex64>,
    /// `k_n`.
    pub k: Vec<Complex64>,
    /// Bound on the floating-point error of each `k_n b_n`.
    pub rounding_bar: Vec<f64>,
    /// Distance bound to the untruncated gain, when the truncation is past
    /// the tail threshold.
    pub tail_bar: Option<Vec<f64>>,
}

impl GainEstimate {
    /// Largest `|kb_n - other.kb_n|` in excess of the combined bars; `<= 0`
    /// means the two estimates agree.
    pub fn excess_over_bars(&self, other: &GainEstimate) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for n in 0..self.kb.len() {
            let mut bar = self.rounding_bar[n] + other.rounding_bar[n];
            if let (Some(a), Some(b)) = (&self.tail_bar, &other.tail_bar) {
                bar += a[n] + b[n];
            }
            worst = worst.max((self.kb[n] - other.kb[n]).norm() - bar);
        }
        worst
    }
}

fn wide_eigen(model: &SpectrumModel, n: usize) -> Result<Vec<Wide>> {
    Ok(model.eigenvalues(n)?.into_iter().map(lift).collect())
}

fn rounding_scale(n: usize, log_mag: f64) -> f64 {
    <Dd as Real>::UNIT_ROUNDOFF * (16.0 * n as f64 + 16.0) * (1.0 + log_mag.abs())
}

fn checked_dist(model: &SpectrumModel, lambda: f64, min_dist: f64) -> Result<DistCertificate> {
    let cert = dist_alpha(model, lambda)?;
    if cert.dist < min_dist {
        let (i, j) = cert.witness.unwrap_or((0, 0));
        return Err(Error::Resonance {
            i,
            j,
            gap: cert.dist,
            floor: min_dist,
        });
    }
    Ok(cert)
}

fn finish_gains(
    model: &SpectrumModel,
    lambda: f64,
    n: usize,
    kb: Vec<Wide>,
    rounding_bar: Vec<f64>,
) -> Result<GainEstimate> {
    let b = model.controls(n)?;
    let kb64: Vec<Complex64> = kb.iter().map(|z| lower(*z)).collect();
    let k = kb64.iter().zip(&b).map(|(z, bn)| z / bn).collect();
    let tail_bar = tail_bounds(model, lambda, n).map(|bounds| {
        bounds
            .iter()
            .zip(&kb64)
            .map(|(bd, z)| z.norm() * bd.exp_m1())
            .collect()
    });
    Ok(GainEstimate {
        kb: kb64,
        k,
        rounding_bar,
        tail_bar,
    })
}

/// Gains from the row sums of the closed-form Cauchy inverse.
pub fn feedback_gains_rowsum(model: &SpectrumModel, lambda: f64, n: usize) -> Result<GainEstimate> {
    checked_dist(model, lambda, SynthesisOptions::default().min_dist)?;
    let sys = CauchySystem::<Dd>::from_model(model, lambda, n)?;
    let p = growth_products(&sys)?;
    let q = decay_products(&sys)?;
    let inv = inverse_from_products(&sys, &p, &q);
    let (kb, bars) = rowsum_gains(&inv, &p, &q);
    finish_gains(model, lambda, n, kb, bars)
}

fn rowsum_gains(
    inv: &Matrix<Wide>,
    p: &[LogSignedProduct<Dd>],
    q: &[LogSignedProduct<Dd>],
) -> (Vec<Wide>, Vec<f64>) {
    let n = inv.rows();
    let max_q = q.iter().map(|x| x.log_magnitude().to_f64().abs()).fold(0.0, f64::max);
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut acc = CompensatedSum::<Dd>::new();
            let mut abs = 0.0;
            for z in inv.row(i) {
                acc.add(*z);
                abs += cabs(*z).to_f64();
            }
            let log_mag = p[i].log_magnitude().to_f64().abs() + max_q;
            (acc.total(), rounding_scale(n, log_mag) * abs)
        })
        .unzip()
}

/// `F_n` for every `n <= N`, i.e. the growth products of the Cauchy system.
fn product_gains(sys: &CauchySystem<Dd>, p: &[LogSignedProduct<Dd>]) -> (Vec<Wide>, Vec<f64>) {
    let lam = real(sys.lambda());
    p.iter()
        .map(|f| {
            let kb = -lam * f.value();
            let bar = rounding_scale(sys.len(), f.log_magnitude().to_f64()) * cabs(kb).to_f64();
            (kb, bar)
        })
        .unzip()
}

/// Gains `k_n = -lambda F_n / b_n`.
pub fn feedback_gains_product(model: &SpectrumModel, lambda: f64, n: usize) -> Result<GainEstimate> {
    checked_dist(model, lambda, SynthesisOptions::default().min_dist)?;
    let sys = CauchySystem::<Dd>::from_model(model, lambda, n)?;
    let p = growth_products(&sys)?;
    let (kb, bars) = product_gains(&sys, &p);
    finish_gains(model, lambda, n, kb, bars)
}

/// Assembled transformation at one damping value and truncation.
#[derive(Debug)]
pub struct BacksteppingSynthesis {
    model: SpectrumModel,
    lambda: f64,
    n: usize,
    cert: DistCertificate,
    eigen: Vec<Wide>,
    b: Vec<Wide>,
    kb: Vec<Wide>,
    k: Vec<Wide>,
    gain_bars: Vec<f64>,
    growth: Vec<LogSignedProduct<Dd>>,
    decay: Vec<LogSignedProduct<Dd>>,
    t: Matrix<Wide>,
    tinv: Matrix<Wide>,
    check_t: Matrix<Wide>,
    check_tinv: Matrix<Wide>,
    tb_residuals: Vec<f64>,
    norms: OnceLock<(f64, f64)>,
}

/// [`assemble_with`] under default guards.
pub fn assemble(model: &SpectrumModel, lambda: f64, n: usize) -> Result<BacksteppingSynthesis> {
    assemble_with(model, lambda, n, &SynthesisOptions::default())
}

/// Builds `T`, `T^{-1}`, the Cauchy factors and the gains, then checks the
/// gain floor, `TB = B` and (for self-adjoint models) that all outputs are real.
pub fn assemble_with(
    model: &SpectrumModel,
    lambda: f64,
    n: usize,
    opts: &SynthesisOptions,
) -> Result<BacksteppingSynthesis> {
    if n == 0 {
        return Err(Error::InvalidArgument("truncation must be at least 1".into()));
    }
    let cert = checked_dist(model, lambda, opts.min_dist)?;
    let sys = CauchySystem::<Dd>::from_model(model, lambda, n)?;
    let growth = growth_products(&sys)?;
    let decay = decay_products(&sys)?;
    let check_t = build_cauchy(&sys)?;
    let check_tinv = inverse_from_products(&sys, &growth, &decay);
    let (kb, gain_bars) = product_gains(&sys, &growth);
    let b: Vec<Wide> = model
        .controls(n)?
        .into_iter()
        .map(|x| real(Dd::from_f64(x)))
        .collect();
    let k: Vec<Wide> = kb.iter().zip(&b).map(|(z, bn)| *z / *bn).collect();

    let floor = 0.5 * lambda * (-opts.gain_floor_exponent * lambda.powf(1.0 / model.alpha())).exp() * cert.dist;
    for (idx, z) in kb.iter().enumerate() {
        let value = cabs(*z).to_f64();
        if !(value >= floor) {
            return Err(Error::GainFloor {
                mode: idx + 1,
                value,
                floor,
            });
        }
    }

    let t = Matrix::from_fn(n, n, |p, m| b[p] * check_t[(p, m)] * k[m]);
    let tinv = Matrix::from_fn(n, n, |m, p| check_tinv[(m, p)] / (k[m] * b[p]));

    let tb_residuals: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut acc = CompensatedSum::<Dd>::new();
            for m in 0..n {
                acc.add(kb[m] * check_t[(j, m)]);
            }
            cabs(acc.total() - real(Dd::from_f64(1.0))).to_f64()
        })
        .collect();
    if let Some((j, r)) = tb_residuals
        .iter()
        .enumerate()
        .find(|(_, r)| !(**r <= opts.tb_tolerance))
    {
        return Err(Error::SelfCheck(format!("TB=B defect {r:e} at mode {}", j + 1)));
    }

    if model.kind() == Kind::SelfAdjoint {
        let imag = k
            .iter()
            .chain(t.as_slice())
            .chain(tinv.as_slice())
            .map(|z| z.im.to_f64().abs() / (1.0 + cabs(*z).to_f64()))
            .fold(0.0, f64::max);
        if imag > 1e-13 {
            return Err(Error::SelfCheck(format!("imaginary part {imag:e} in a self-adjoint synthesis")));
        }
    }

    Ok(BacksteppingSynthesis {
        model: model.clone(),
        lambda,
        n,
        cert,
        eigen: sys.x().to_vec(),
        b,
        kb,
        k,
        gain_bars,
        growth,
        decay,
        t,
        tinv,
        check_t,
        check_tinv,
        tb_residuals,
        norms: OnceLock::new(),
    })
}

/// `|sum_n k_n b_n / (lambda_j - lambda_n - lambda) - 1|` for `j` in `1..=N`.
pub fn tb_residual(synthesis: &BacksteppingSynthesis, j: usize) -> Result<f64> {
    if j == 0 || j > synthesis.n {
        return Err(Error::InvalidArgument(format!("mode {j} outside 1..={}", synthesis.n)));
    }
    Ok(synthesis.tb_residuals[j - 1])
}

impl BacksteppingSynthesis {
    pub fn model(&self) -> &SpectrumModel {
        &self.model
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Truncation size.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn cert(&self) -> &DistCertificate {
        &self.cert
    }

    pub fn gains(&self) -> Vec<Complex64> {
        self.k.iter().map(|z| lower(*z)).collect()
    }

    /// `k_n b_n`.
    pub fn gains_times_b(&self) -> Vec<Complex64> {
        self.kb.iter().map(|z| lower(*z)).collect()
    }

    /// Product-route estimate, with the tail bars of the truncation.
    pub fn gain_estimate(&self) -> GainEstimate {
        finish_gains(&self.model, self.lambda, self.n, self.kb.clone(), self.gain_bars.clone())
            .expect("controls validated at assembly")
    }

    /// Row-sum route recomputed from the stored Cauchy inverse.
    pub fn gain_estimate_rowsum(&self) -> GainEstimate {
        let (kb, bars) = rowsum_gains(&self.check_tinv, &self.growth, &self.decay);
        finish_gains(&self.model, self.lambda, self.n, kb, bars).expect("controls validated at assembly")
    }

    /// `F_n` as a log-domain product.
    pub fn growth_products(&self) -> &[LogSignedProduct<Dd>] {
        &self.growth
    }

    pub fn tb_residuals(&self) -> &[f64] {
        &self.tb_residuals
    }

    pub fn tb_residual_max(&self) -> f64 {
        self.tb_residuals.iter().copied().fold(0.0, f64::max)
    }

    /// `T_{n,p}` for 1-based `n, p`.
    pub fn entry(&self, n: usize, p: usize) -> Complex64 {
        lower(self.t[(p - 1, n - 1)])
    }

    pub fn t_matrix(&self) -> Matrix<Complex64> {
        self.t.lower()
    }

    pub fn tinv_matrix(&self) -> Matrix<Complex64> {
        self.tinv.lower()
    }

    /// Cauchy factor `1/(lambda_i - lambda_j - lambda)`.
    pub fn check_t(&self) -> Matrix<Complex64> {
        self.check_t.lower()
    }

    pub fn check_tinv(&self) -> Matrix<Complex64> {
        self.check_tinv.lower()
    }

    pub fn t_wide(&self) -> &Matrix<Wide> {
        &self.t
    }

    pub fn tinv_wide(&self) -> &Matrix<Wide> {
        &self.tinv
    }

    pub fn eigen_wide(&self) -> &[Wide] {
        &self.eigen
    }

    pub fn gains_wide(&self) -> &[Wide] {
        &self.k
    }

    pub fn controls_wide(&self) -> &[Wide] {
        &self.b
    }

    /// Largest singular values of `T` and `T^{-1}`.
    pub fn norms(&self) -> (f64, f64) {
        *self
            .norms
            .get_or_init(|| (spectral_norm(&self.t.lower()), spectral_norm(&self.tinv.lower())))
    }

    /// `||T|| ||T^{-1}||`.
    pub fn condition(&self) -> f64 {
        let (a, b) = self.norms();
        a * b
    }

    /// Norms of `T` and `T^{-1}` on the weighted space with weights `|lambda_n|^s`.
    pub fn weighted_norms(&self, s: f64) -> (f64, f64) {
        if s == 0.0 {
            return self.norms();
        }
        let w: Vec<Dd> = self
            .eigen
            .iter()
            .map(|z| (cabs(*z).ln() * Dd::from_f64(s)).exp())
            .collect();
        let t = Matrix::from_fn(self.n, self.n, |p, m| self.t[(p, m)] * (w[p] / w[m]));
        let ti = Matrix::from_fn(self.n, self.n, |p, m| self.tinv[(p, m)] * (w[p] / w[m]));
        (spectral_norm(&t.lower()), spectral_norm(&ti.lower()))
    }

    /// `max |T T^{-1} - I|`, by a dense product.
    pub fn inverse_residual(&self) -> f64 {
        self.t
            .matmul(&self.tinv)
            .expect("square factors")
            .identity_defect()
    }

    /// Largest defect of the factorizations `T = diag(b) C diag(k)` and
    /// `T^{-1} = diag(1/k) C^{-1} diag(1/b)` against the entrywise formula.
    pub fn factorization_defect(&self) -> f64 {
        let lam = real(Dd::from_f64(self.lambda));
        let mut worst: f64 = 0.0;
        for p in 0..self.n {
            for m in 0..self.n {
                let formula = self.k[m] * self.b[p] / (self.eigen[p] - self.eigen[m] - lam);
                let scale = cabs(formula).to_f64().max(f64::MIN_POSITIVE);
                worst = worst.max(cabs(self.t[(p, m)] - formula).to_f64() / scale);
                let rebuilt = self.tinv[(m, p)] * self.k[m] * self.b[p];
                let s2 = cabs(self.check_tinv[(m, p)]).to_f64().max(f64::MIN_POSITIVE);
                worst = worst.max(cabs(rebuilt - self.check_tinv[(m, p)]).to_f64() / s2);
            }
        }
        worst
    }

    pub fn to_export(&self) -> SynthesisExport {
        let (t, tinv) = self.norms();
        SynthesisExport {
            lambda: self.lambda,
            n: self.n,
            dist: self.cert.dist,
            k: self.gains().iter().map(|z| [z.re, z.im]).collect(),
            tb_residual_max: self.tb_residual_max(),
            norms: NormPair { t, tinv },
        }
    }
}

/// JSON shape of a synthesis.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SynthesisExport {
    pub lambda: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub dist: f64,
    pub k: Vec<[f64; 2]>,
    pub tb_residual_max: f64,
    pub norms: NormPair,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NormPair {
    #[serde(rename = "T")]
    pub t: f64,
    #[serde(rename = "Tinv")]
    pub tinv: f64,
}

/// Closed-loop eigenvector `(A - (lambda_n - lambda))^{-1} B`, truncated.
#[derive(Clone, Debug, PartialEq)]
pub struct ChiFunction {
    pub n: usize,
    pub coeffs: Vec<Complex64>,
    wide: Vec<Wide>,
}

impl ChiFunction {
    pub fn wide(&self) -> &[Wide] {
        &self.wide
    }

    /// Bound on `sum_{p>N} |chi_n[p]|^2`.
    ///
    /// Past `p` with `c p^(alpha-1) (p - n) >= 2 lambda` every denominator is at
    /// least half its gap, so the tail is at most
    /// `4 b_hi^2 / c^2 sum_p 1/(p^(alpha-1) (p - n))^2`.
    pub fn tail_bound(&self, model: &SpectrumModel, lambda: f64) -> Option<f64> {
        let (c, alpha) = (model.gap_c(), model.alpha());
        let big_n = self.coeffs.len();
        let start = big_n + 1;
        let w = |p: usize| c * (p as f64).powf(alpha - 1.0) * (p - self.n) as f64;
        if self.n >= start || w(start) < 2.0 * lambda {
            return None;
        }
        let (_, b_hi) = model.b_bounds();
        let top = 64 * start;
        let mut sum = 0.0;
        for p in start..=top {
            sum += 1.0 / (w(p) * w(p));
        }
        // p - n >= 63 p / 64 beyond top.
        let rest = (64.0 / 63.0f64).powi(2) / (c * c) * (top as f64).powf(1.0 - 2.0 * alpha) / (2.0 * alpha - 1.0);
        Some(4.0 * b_hi * b_hi * (sum + rest))
    }
}

/// `chi_n[p] = b_p / (lambda_p - lambda_n + lambda)` for `p <= N`.
pub fn chi(model: &SpectrumModel, lambda: f64, n: usize, big_n: usize) -> Result<ChiFunction> {
    if n == 0 || n > big_n {
        return Err(Error::InvalidArgument(format!("mode {n} outside 1..={big_n}")));
    }
    let lam = real(Dd::from_f64(lambda));
    let eigen = wide_eigen(model, big_n)?;
    let b = model.controls(big_n)?;
    let mut wide = Vec::with_capacity(big_n);
    for p in 0..big_n {
        let d = eigen[p] - eigen[n - 1] + lam;
        if cabs(d) == Dd::from_f64(0.0) {
            return Err(Error::Resonance {
                i: n,
                j: p + 1,
                gap: 0.0,
                floor: 0.0,
            });
        }
        wide.push(real(Dd::from_f64(b[p])) / d);
    }
    Ok(ChiFunction {
        n,
        coeffs: wide.iter().map(|z| lower(*z)).collect(),
        wide,
    })
}

/// Diagnostics of one closed-loop eigenvector.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EigenCheck {
    /// `sum_p k_p chi_n[p]`, expected `-1`.
    pub k_on_chi: Complex64,
    /// Relative size of `T chi_n` off the `n`-th coordinate.
    pub collinearity_defect: f64,
    /// `||(A + B k^T) chi_n - (lambda_n - lambda) chi_n|| / ||chi_n||`.
    pub eigen_defect: f64,
}

fn norm2(v: &[Wide]) -> Dd {
    let mut acc = Dd::from_f64(0.0);
    for z in v {
        acc += z.norm_sqr();
    }
    acc.sqrt()
}

pub fn verify_closed_loop_eigen(synthesis: &BacksteppingSynthesis, n: usize) -> Result<EigenCheck> {
    let big_n = synthesis.n;
    if n == 0 || n > big_n {
        return Err(Error::InvalidArgument(format!("mode {n} outside 1..={big_n}")));
    }
    let ch = chi(&synthesis.model, synthesis.lambda, n, big_n)?;
    let x = ch.wide();
    let mut kx = CompensatedSum::<Dd>::new();
    for (k, c) in synthesis.k.iter().zip(x) {
        kx.add(*k * *c);
    }
    let kx = kx.total();

    let tx = synthesis.t.matvec(x)?;
    let mut off = tx.clone();
    off[n - 1] = Complex::new(Dd::from_f64(0.0), Dd::from_f64(0.0));
    let collinearity_defect = (norm2(&off) / norm2(&tx)).to_f64();

    let lam = real(Dd::from_f64(synthesis.lambda));
    let shift = synthesis.eigen[n - 1] - lam;
    let defect: Vec<Wide> = (0..big_n)
        .map(|p| synthesis.eigen[p] * x[p] + synthesis.b[p] * kx - shift * x[p])
        .collect();
    let eigen_defect = (norm2(&defect) / norm2(x)).to_f64();

    Ok(EigenCheck {
        k_on_chi: lower(kx),
        collinearity_defect,
        eigen_defect,
    })
}

/// Defect of `T (A + B k^T) = (A - lambda) T` on the truncation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OperatorResidual {
    pub absolute: f64,
    /// `absolute / (max|T| (max|lambda_n| + lambda) + max|b| max|k|)`.
    pub relative: f64,
}

/// Evaluates `T A + (T b) k^T - A T + lambda T` entrywise.
pub fn operator_identity_residual(synthesis: &BacksteppingSynthesis) -> OperatorResidual {
    let n = synthesis.n;
    let t = &synthesis.t;
    let tb = t.matvec(&synthesis.b).expect("square factor");
    let lam = real(Dd::from_f64(synthesis.lambda));
    let absolute = (0..n)
        .into_par_iter()
        .map(|p| {
            let mut worst: f64 = 0.0;
            for m in 0..n {
                let r = t[(p, m)] * synthesis.eigen[m] + tb[p] * synthesis.k[m] - synthesis.eigen[p] * t[(p, m)]
                    + lam * t[(p, m)];
                worst = worst.max(cabs(r).to_f64());
            }
            worst
        })
        .reduce(|| 0.0, f64::max);
    let max_eig = synthesis.eigen.iter().map(|z| cabs(*z).to_f64()).fold(0.0, f64::max);
    let max_k = synthesis.k.iter().map(|z| cabs(*z).to_f64()).fold(0.0, f64::max);
    let (_, b_hi) = synthesis.model.b_bounds();
    let scale = t.max_abs() * (max_eig + synthesis.lambda) + b_hi * max_k;
    OperatorResidual {
        absolute,
        relative: absolute / scale,
    }
}
