//! Growth products `F_n`, the telescoping sums `J_n`, bound checks and the
//! cost sweep along certified damping values.

use std::io::Write;

use num_complex::{Complex, Complex64};
use rayon::prelude::*;
use serde::Serialize;

use crate::cauchy::{growth_products, tail_bounds, tail_log_bound, CauchySystem, LogSignedProduct};
use crate::error::{Error, Result};
use crate::format::fmt_f64;
use crate::precision::{cabs, lift, lower, real, CompensatedSum, Dd, Real};
use crate::spectrum::{dist_alpha, mu_candidates, select_mu, Kind, SpectrumModel};
use crate::transform::assemble;

/// Ordinary least squares `y = slope x + intercept`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub points: usize,
}

/// `None` for fewer than two points or a constant abscissa.
pub fn ols(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    let n = x.len();
    if n < 2 || n != y.len() {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - slope * a - intercept).powi(2))
        .sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Some(LinearFit {
        slope,
        intercept,
        r2,
        points: n,
    })
}

fn check_mode(n: usize, big_n: usize) -> Result<()> {
    if n == 0 || n > big_n {
        return Err(Error::InvalidArgument(format!("mode {n} outside 1..={big_n}")));
    }
    Ok(())
}

/// `F_n` truncated at `N`, with the log-domain tail bar when available.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FValue<R: Real> {
    pub product: LogSignedProduct<R>,
    /// `|log F_n - log F_n^N| <= tail_log_bar`.
    pub tail_log_bar: Option<f64>,
}

impl<R: Real> FValue<R> {
    pub fn log_abs(&self) -> f64 {
        self.product.log_magnitude().to_f64()
    }

    pub fn value(&self) -> Complex64 {
        lower(self.product.value())
    }
}

/// `prod_{m <= N, m != n} (1 + lambda/(lambda_n - lambda_m))` in working precision.
pub fn eval_f(model: &SpectrumModel, n: usize, lambda: f64, big_n: usize) -> Result<FValue<Dd>> {
    eval_f_in::<Dd>(model, n, lambda, big_n)
}

pub fn eval_f_in<R: Real>(model: &SpectrumModel, n: usize, lambda: f64, big_n: usize) -> Result<FValue<R>> {
    check_mode(n, big_n)?;
    let eig: Vec<Complex<R>> = model.eigenvalues(big_n)?.into_iter().map(lift).collect();
    let lam = real(R::from_f64(lambda));
    let one = real(R::from_f64(1.0));
    let mut product = LogSignedProduct::one();
    for m in 0..big_n {
        if m + 1 == n {
            continue;
        }
        let factor = one + lam / (eig[n - 1] - eig[m]);
        product = product.times(factor).ok_or(Error::ZeroFactor { row: n, index: m + 1 })?;
    }
    let tail_log_bar = if lambda > 0.0 {
        tail_log_bound(model, n, lambda, big_n).ok()
    } else {
        Some(0.0)
    };
    Ok(FValue { product, tail_log_bar })
}

/// Truncated `J_n^N` and the sum of its term moduli.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct JValue {
    pub value: Complex64,
    /// `sum_j |term_j|`, the conditioning of the cancellation.
    pub abs_sum: f64,
}

/// `J_n^N` in working precision.
pub fn eval_j(model: &SpectrumModel, n: usize, lambda: f64, big_n: usize) -> Result<JValue> {
    eval_j_in::<Dd>(model, n, lambda, big_n)
}

/// `sum_j (-lambda/(z_j - z_n - lambda)) Q_j` with `Q_j = prod_{m != j} (1 - lambda/(z_j - z_m))`,
/// the `j = n` term reading `Q_n`.
///
/// Terms are added by increasing `|j - n|` with compensated summation.
pub fn eval_j_in<R: Real>(model: &SpectrumModel, n: usize, lambda: f64, big_n: usize) -> Result<JValue> {
    check_mode(n, big_n)?;
    let (eig, q) = decay_terms::<R>(model, lambda, big_n)?;
    j_from_terms(&eig, &q, lambda, n)
}

/// `J_n^N` for every `n <= N`, sharing the products `Q_j`.
pub fn eval_j_all(model: &SpectrumModel, lambda: f64, big_n: usize) -> Result<Vec<JValue>> {
    let (eig, q) = decay_terms::<Dd>(model, lambda, big_n)?;
    (1..=big_n).map(|n| j_from_terms(&eig, &q, lambda, n)).collect()
}

type Terms<R> = (Vec<Complex<R>>, Vec<Complex<R>>);

fn decay_terms<R: Real>(model: &SpectrumModel, lambda: f64, big_n: usize) -> Result<Terms<R>> {
    let eig: Vec<Complex<R>> = model.eigenvalues(big_n)?.into_iter().map(lift).collect();
    let lam = real(R::from_f64(lambda));
    let one = real(R::from_f64(1.0));
    let zero = R::from_f64(0.0);
    let q = (0..big_n)
        .into_par_iter()
        .map(|j| {
            let mut product = LogSignedProduct::<R>::one();
            for m in 0..big_n {
                if m == j {
                    continue;
                }
                let d = eig[j] - eig[m];
                if cabs(d) == zero {
                    return Err(Error::InvalidModel(format!(
                        "repeated eigenvalue at modes {} and {}",
                        j + 1,
                        m + 1
                    )));
                }
                match product.times(one - lam / d) {
                    Some(p) => product = p,
                    None => return Ok(real(zero)),
                }
            }
            Ok(product.value())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((eig, q))
}

fn j_from_terms<R: Real>(eig: &[Complex<R>], q: &[Complex<R>], lambda: f64, n: usize) -> Result<JValue> {
    let lam = real(R::from_f64(lambda));
    let zero = R::from_f64(0.0);
    let mut order: Vec<usize> = (0..eig.len()).collect();
    order.sort_by_key(|j| (j.abs_diff(n - 1), *j));
    let mut acc = CompensatedSum::<R>::new();
    let mut abs_sum = 0.0;
    for j in order {
        let t = if j + 1 == n {
            q[j]
        } else {
            let d = eig[j] - eig[n - 1] - lam;
            if cabs(d) == zero {
                return Err(Error::Resonance {
                    i: j + 1,
                    j: n,
                    gap: 0.0,
                    floor: 0.0,
                });
            }
            -lam / d * q[j]
        };
        acc.add(t);
        abs_sum += cabs(t).to_f64();
    }
    Ok(JValue {
        value: lower(acc.total()),
        abs_sum,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ProductPoint {
    pub lambda: f64,
    /// `sup_i log|F_i|`.
    pub sup_log: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProductsReport {
    pub points: Vec<ProductPoint>,
    /// Fit of `sup_log` against `lambda^(1/alpha)`.
    pub fit: Option<LinearFit>,
    pub passed: bool,
}

/// Growth of `sup_i |F_i|` along a damping grid. Passes when the fit in
/// `lambda^(1/alpha)` has positive slope and `R^2 >= 0.95`.
pub fn bound_check_products(model: &SpectrumModel, lambdas: &[f64], big_n: usize) -> Result<ProductsReport> {
    let points = lambdas
        .par_iter()
        .map(|&lambda| {
            let sys = CauchySystem::<Dd>::from_model(model, lambda, big_n)?;
            let sup_log = growth_products(&sys)?
                .iter()
                .map(|p| p.log_magnitude().to_f64())
                .fold(f64::NEG_INFINITY, f64::max);
            Ok(ProductPoint { lambda, sup_log })
        })
        .collect::<Result<Vec<_>>>()?;
    let inv_alpha = 1.0 / model.alpha();
    let x: Vec<f64> = points.iter().map(|p| p.lambda.powf(inv_alpha)).collect();
    let y: Vec<f64> = points.iter().map(|p| p.sup_log).collect();
    let fit = ols(&x, &y);
    let passed = fit.is_some_and(|f| f.slope > 0.0 && f.r2 >= 0.95);
    Ok(ProductsReport { points, fit, passed })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SumRow {
    #[serde(rename = "N")]
    pub n: usize,
    /// `max_i sum_j lambda^2 / |lambda_j - lambda_i - lambda|`.
    pub row_max: f64,
    /// The same with `i` and `j` exchanged.
    pub col_max: f64,
    /// `max(row_max, col_max) / (lambda^2 + lambda^2/dist)`.
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SumsReport {
    pub lambda: f64,
    pub dist: f64,
    pub rows: Vec<SumRow>,
    /// Largest over smallest ratio across truncations.
    pub spread: f64,
    pub passed: bool,
}

/// Row and column sums of `lambda^2/|lambda_j - lambda_i - lambda|` against
/// `lambda^2 + lambda^2/dist`. Passes when the ratio stays finite and varies by
/// less than a factor two across the truncations.
pub fn bound_check_sums(model: &SpectrumModel, lambda: f64, truncations: &[usize]) -> Result<SumsReport> {
    if truncations.is_empty() {
        return Err(Error::InvalidArgument("no truncations given".into()));
    }
    let cert = dist_alpha(model, lambda)?;
    if cert.dist <= 0.0 {
        let (i, j) = cert.witness.unwrap_or((0, 0));
        return Err(Error::Resonance { i, j, gap: 0.0, floor: 0.0 });
    }
    let scale = lambda * lambda * (1.0 + 1.0 / cert.dist);
    let l2 = lambda * lambda;
    let rows = truncations
        .iter()
        .map(|&big_n| {
            let eig = model.eigenvalues(big_n)?;
            let mut col = vec![0.0; big_n];
            let mut row_max: f64 = 0.0;
            for i in 0..big_n {
                let mut row = 0.0;
                for j in 0..big_n {
                    let v = l2 / (eig[j] - eig[i] - lambda).norm();
                    row += v;
                    col[j] += v;
                }
                row_max = row_max.max(row);
            }
            let col_max = col.iter().copied().fold(0.0, f64::max);
            Ok(SumRow {
                n: big_n,
                row_max,
                col_max,
                ratio: row_max.max(col_max) / scale,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let hi = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    let lo = rows.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);
    let spread = hi / lo;
    Ok(SumsReport {
        lambda,
        dist: cert.dist,
        rows,
        spread,
        passed: hi.is_finite() && spread < 2.0,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LowerPoint {
    pub mu: f64,
    pub n: usize,
    /// `log|F_n| - log dist`.
    pub excess: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LowerBoundReport {
    pub points: Vec<LowerPoint>,
    pub fit: Option<LinearFit>,
    /// Fitted exponent constant.
    pub c_hat: f64,
    /// Log of the envelope constant: every point satisfies
    /// `excess >= -c_hat mu^(1/alpha) - log_c_big`.
    pub log_c_big: f64,
    pub passed: bool,
}

/// Default probe depth `min(2 ceil(lambda^(1/alpha)) + 10, N)`.
pub fn default_probe(alpha: f64, lambda: f64, big_n: usize) -> usize {
    ((2.0 * lambda.powf(1.0 / alpha).ceil()) as usize + 10).min(big_n)
}

/// Lower envelope of `log|F_n| - log dist` over `n <= n_probe` along `mus`.
///
/// Self-adjoint: the per-`mu` minima are fitted against `mu^(1/alpha)` and
/// the intercept is lowered until every point lies above the line. Skew:
/// passes iff `|F_n| >= 1` everywhere.
pub fn lower_bound_check_f(
    model: &SpectrumModel,
    mus: &[f64],
    big_n: usize,
    n_probe: Option<usize>,
) -> Result<LowerBoundReport> {
    let inv_alpha = 1.0 / model.alpha();
    let per_mu = mus
        .par_iter()
        .map(|&mu| {
            let probe = n_probe
                .unwrap_or_else(|| default_probe(model.alpha(), mu, big_n))
                .min(big_n);
            let log_dist = if mu > 0.0 { dist_alpha(model, mu)?.dist.ln() } else { 0.0 };
            (1..=probe)
                .map(|n| {
                    let f = eval_f(model, n, mu, big_n)?;
                    let excess = if mu > 0.0 { f.log_abs() - log_dist } else { f.log_abs() };
                    Ok(LowerPoint { mu, n, excess })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let points: Vec<LowerPoint> = per_mu.iter().flatten().copied().collect();

    if model.kind() == Kind::SkewAdjoint {
        let mut passed = true;
        for &mu in mus {
            for n in 1..=n_probe.unwrap_or(big_n).min(big_n) {
                passed &= eval_f(model, n, mu, big_n)?.log_abs() >= -1e-12;
            }
        }
        return Ok(LowerBoundReport {
            points,
            fit: None,
            c_hat: 0.0,
            log_c_big: 0.0,
            passed,
        });
    }

    let x: Vec<f64> = mus.iter().map(|m| m.powf(inv_alpha)).collect();
    let y: Vec<f64> = per_mu
        .iter()
        .map(|pts| pts.iter().map(|p| p.excess).fold(f64::INFINITY, f64::min))
        .collect();
    let fit = ols(&x, &y);
    let c_hat = fit.map_or(0.0, |f| (-f.slope).max(0.0));
    let log_c_big = x
        .iter()
        .zip(&y)
        .map(|(xi, yi)| -c_hat * xi - yi)
        .fold(f64::NEG_INFINITY, f64::max);
    let passed = !points.is_empty() && points.iter().all(|p| p.excess.is_finite()) && log_c_big.is_finite();
    Ok(LowerBoundReport {
        points,
        fit,
        c_hat,
        log_c_big,
        passed,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WeightedNorm {
    pub s: f64,
    pub norm_t: f64,
    pub norm_tinv: f64,
}

/// One successful point of the cost sweep.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostReport {
    #[serde(rename = "N")]
    pub n: usize,
    pub lambda: f64,
    pub dist: f64,
    /// Grid size behind the certificate (self-adjoint only).
    pub m_n: Option<usize>,
    pub norm_t: f64,
    pub norm_tinv: f64,
    /// Norms on `D(A^s)` for the sampled `s > 0`.
    pub weighted: Vec<WeightedNorm>,
    pub k_sup: f64,
    pub k_inf: f64,
    /// `inf_n |k_n b_n|`.
    pub kb_inf: f64,
    pub f_sup: f64,
    pub f_inf: f64,
    /// Slope of the sweep-wide fit, copied onto every point.
    pub fitted_exponent: Option<f64>,
    /// Row-sum versus product gains, in excess of their bars (`<= 0` agrees).
    pub gain_excess: f64,
    pub tb_residual_max: f64,
}

impl CostReport {
    /// `log(||T|| + ||T^{-1}||)`.
    pub fn log_cost(&self) -> f64 {
        (self.norm_t + self.norm_tinv).ln()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    #[serde(rename = "N")]
    pub n: usize,
    pub lambda: Option<f64>,
    pub report: Option<CostReport>,
    /// Why the point was skipped.
    pub failure: Option<String>,
    /// The failure came from a mathematical guard.
    pub guard: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepReport {
    pub points: Vec<SweepPoint>,
    /// `log(||T|| + ||T^{-1}||)` against `lambda^(1/alpha)`.
    pub fit: Option<LinearFit>,
}

impl SweepReport {
    pub fn reports(&self) -> impl Iterator<Item = &CostReport> {
        self.points.iter().filter_map(|p| p.report.as_ref())
    }
}

const WEIGHTS: [f64; 2] = [0.25, 0.45];

/// Damping value of sweep index `N`: the certified grid point for
/// self-adjoint models, `N` itself for skew-adjoint ones.
pub fn sweep_lambda(model: &SpectrumModel, n: usize) -> Result<(f64, Option<usize>)> {
    match model.kind() {
        Kind::SelfAdjoint => {
            let (mu, _) = select_mu(model, n)?;
            Ok((mu, Some(mu_candidates(model, n)?.m)))
        }
        Kind::SkewAdjoint => Ok((n as f64, None)),
    }
}

fn cost_point(model: &SpectrumModel, n: usize, lambda: f64, m_n: Option<usize>, trunc: usize) -> Result<CostReport> {
    let synth = assemble(model, lambda, trunc)?;
    let (norm_t, norm_tinv) = synth.norms();
    let band = 1.0 - 1.0 / (2.0 * model.alpha());
    let weighted = WEIGHTS
        .iter()
        .filter(|s| **s < band)
        .map(|&s| {
            let (a, b) = synth.weighted_norms(s);
            WeightedNorm {
                s,
                norm_t: a,
                norm_tinv: b,
            }
        })
        .collect();
    let k = synth.gains();
    let kb = synth.gains_times_b();
    let k_abs = k.iter().map(|z| z.norm());
    let (k_sup, k_inf) = k_abs.fold((0.0f64, f64::INFINITY), |(s, i), v| (s.max(v), i.min(v)));
    let kb_inf = kb.iter().map(|z| z.norm()).fold(f64::INFINITY, f64::min);
    let f = synth
        .growth_products()
        .iter()
        .map(|p| p.log_magnitude().to_f64().exp());
    let (f_sup, f_inf) = f.fold((0.0f64, f64::INFINITY), |(s, i), v| (s.max(v), i.min(v)));
    let gain_excess = synth
        .gain_estimate_rowsum()
        .excess_over_bars(&synth.gain_estimate());
    Ok(CostReport {
        n,
        lambda,
        dist: synth.cert().dist,
        m_n,
        norm_t,
        norm_tinv,
        weighted,
        k_sup,
        k_inf,
        kb_inf,
        f_sup,
        f_inf,
        fitted_exponent: None,
        gain_excess,
        tb_residual_max: synth.tb_residual_max(),
    })
}

/// Full synthesis at the damping value of every index in `indices`.
/// Failing points are recorded and skipped.
pub fn cost_sweep(model: &SpectrumModel, indices: &[usize], trunc: usize) -> Result<SweepReport> {
    if indices.is_empty() {
        return Err(Error::InvalidArgument("empty sweep range".into()));
    }
    if trunc > model.eigen_capacity() {
        return Err(Error::BeyondTable {
            index: trunc,
            available: model.eigen_capacity(),
        });
    }
    let mut points: Vec<SweepPoint> = indices
        .par_iter()
        .map(|&n| {
            let outcome = sweep_lambda(model, n)
                .and_then(|(lambda, m)| Ok((lambda, cost_point(model, n, lambda, m, trunc)?)));
            match outcome {
                Ok((lambda, report)) => SweepPoint {
                    n,
                    lambda: Some(lambda),
                    report: Some(report),
                    failure: None,
                    guard: false,
                },
                Err(e) => SweepPoint {
                    n,
                    lambda: sweep_lambda(model, n).ok().map(|(l, _)| l),
                    report: None,
                    guard: e.is_math_guard(),
                    failure: Some(e.to_string()),
                },
            }
        })
        .collect();
    let inv_alpha = 1.0 / model.alpha();
    let (x, y): (Vec<f64>, Vec<f64>) = points
        .iter()
        .filter_map(|p| p.report.as_ref())
        .map(|r| (r.lambda.powf(inv_alpha), r.log_cost()))
        .unzip();
    let fit = ols(&x, &y);
    for p in &mut points {
        if let Some(r) = &mut p.report {
            r.fitted_exponent = fit.map(|f| f.slope);
        }
    }
    Ok(SweepReport { points, fit })
}

/// Tail bars are available for this sweep point.
pub fn sweep_has_tail_bars(model: &SpectrumModel, lambda: f64, trunc: usize) -> bool {
    tail_bounds(model, lambda, trunc).is_some()
}

/// CSV with columns `N,lambda,dist,norm_T,norm_Tinv,k_sup,k_inf,F_inf,fit_exponent,status`
/// and a `#` footer holding the fit.
pub fn write_sweep_csv<W: Write>(report: &SweepReport, mut out: W) -> std::io::Result<()> {
    writeln!(out, "N,lambda,dist,norm_T,norm_Tinv,k_sup,k_inf,F_inf,fit_exponent,status")?;
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    for p in &report.points {
        match &p.report {
            Some(r) => writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},ok",
                r.n,
                fmt_f64(r.lambda),
                fmt_f64(r.dist),
                fmt_f64(r.norm_t),
                fmt_f64(r.norm_tinv),
                fmt_f64(r.k_sup),
                fmt_f64(r.k_inf),
                fmt_f64(r.f_inf),
                opt(r.fitted_exponent),
            )?,
            None => {
                let why = p.failure.as_deref().unwrap_or("").replace([',', '\n'], ";");
                let tag = if p.guard { "guard" } else { "error" };
                writeln!(out, "{},{},,,,,,,,{tag}: {why}", p.n, opt(p.lambda))?
            }
        }
    }
    match report.fit {
        Some(f) => writeln!(
            out,
            "# fit log(norm_T+norm_Tinv) = slope*lambda^(1/alpha) + intercept: slope={} intercept={} r2={} points={}",
            fmt_f64(f.slope),
            fmt_f64(f.intercept),
            fmt_f64(f.r2),
            f.points
        ),
        None => writeln!(out, "# fit: not enough points"),
    }
}
