//! Eigenvalue and control models, gap constants, resonance distance and the
//! certified choice of damping values.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Adjointness of the generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    SelfAdjoint,
    SkewAdjoint,
}

/// How eigenvalues are produced.
#[derive(Clone, Debug, PartialEq)]
pub enum EigenLaw {
    /// `-a n^alpha` (self-adjoint) or `-i a n^alpha` (skew-adjoint), any `n`.
    Power { scale: f64 },
    /// Explicit values for `n = 1..=len`.
    Tabulated(Vec<Complex64>),
}

/// Control coefficients `b_n`.
#[derive(Clone, Debug, PartialEq)]
pub enum ControlLaw {
    Constant(f64),
    Tabulated(Vec<f64>),
}

impl Default for ControlLaw {
    fn default() -> Self {
        ControlLaw::Constant(1.0)
    }
}

/// Default cap on the index range scanned by [`dist_alpha`].
pub const DEFAULT_ENUMERATION_LIMIT: usize = 2_000_000;

#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumModel {
    kind: Kind,
    alpha: f64,
    law: EigenLaw,
    control: ControlLaw,
    n_max: usize,
    gap_c: f64,
    gap_upper: f64,
    b_lo: f64,
    b_hi: f64,
    enumeration_limit: usize,
}

fn power(n: usize, alpha: f64) -> f64 {
    let x = n as f64;
    if alpha.fract() == 0.0 && alpha.abs() <= 64.0 {
        x.powi(alpha as i32)
    } else {
        x.powf(alpha)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha.is_finite() && alpha > 1.0 {
        Ok(())
    } else {
        Err(Error::GrowthOrder(alpha))
    }
}

fn control_bounds(control: &ControlLaw, n_max: usize) -> Result<(f64, f64)> {
    let values: &[f64] = match control {
        ControlLaw::Constant(b) => std::slice::from_ref(b),
        ControlLaw::Tabulated(v) => {
            if v.len() < n_max {
                return Err(Error::InvalidModel(format!(
                    "control table has {} entries, model needs {n_max}",
                    v.len()
                )));
            }
            v
        }
    };
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(0.0, f64::max);
    if !(lo > 0.0) || !hi.is_finite() {
        return Err(Error::InvalidModel(
            "control coefficients must be finite and bounded away from 0".into(),
        ));
    }
    Ok((lo, hi))
}

/// Power-law model with `n_max` materialized modes.
///
/// Gap constants are the exact ones of the power law: `c = a` and
/// `C = a (2^alpha - 1)`.
pub fn make_spectrum(
    kind: Kind,
    alpha: f64,
    scale: f64,
    n_max: usize,
    control: ControlLaw,
) -> Result<SpectrumModel> {
    check_alpha(alpha)?;
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::InvalidModel(format!("scale must be positive, got {scale}")));
    }
    if n_max < 2 {
        return Err(Error::InvalidModel(format!("n_max must be at least 2, got {n_max}")));
    }
    let (b_lo, b_hi) = control_bounds(&control, n_max)?;
    Ok(SpectrumModel {
        kind,
        alpha,
        law: EigenLaw::Power { scale },
        control,
        n_max,
        gap_c: scale,
        gap_upper: scale * (2f64.powf(alpha) - 1.0),
        b_lo,
        b_hi,
        enumeration_limit: DEFAULT_ENUMERATION_LIMIT,
    })
}

impl SpectrumModel {
    /// `lambda_n = -n^2`, `b_n = 1`.
    pub fn heat(n_max: usize) -> Self {
        make_spectrum(Kind::SelfAdjoint, 2.0, 1.0, n_max, ControlLaw::default())
            .expect("valid default model")
    }

    /// `lambda_n = -i n^2`, `b_n = 1`.
    pub fn skew(n_max: usize) -> Self {
        make_spectrum(Kind::SkewAdjoint, 2.0, 1.0, n_max, ControlLaw::default())
            .expect("valid default model")
    }

    /// Model from explicit eigenvalues. Ordering and simplicity are
    /// enforced; gap constants are the empirical ones of the table.
    pub fn from_table(
        kind: Kind,
        alpha: f64,
        eigenvalues: Vec<Complex64>,
        control: ControlLaw,
    ) -> Result<Self> {
        check_alpha(alpha)?;
        let n_max = eigenvalues.len();
        if n_max < 2 {
            return Err(Error::InvalidModel("need at least two eigenvalues".into()));
        }
        let mut prev = 0.0;
        for (idx, z) in eigenvalues.iter().enumerate() {
            let (on_axis, mag) = match kind {
                Kind::SelfAdjoint => (z.im == 0.0, -z.re),
                Kind::SkewAdjoint => (z.re == 0.0, -z.im),
            };
            if !on_axis || !mag.is_finite() || !(mag > prev) {
                return Err(Error::InvalidModel(format!(
                    "eigenvalue {} = {z} breaks the {kind:?} ordering (magnitudes must increase strictly from 0)",
                    idx + 1
                )));
            }
            prev = mag;
        }
        let report = gap_report(alpha, &eigenvalues);
        if !report.passed() {
            return Err(Error::InvalidModel("gap conditions fail on the table".into()));
        }
        let (b_lo, b_hi) = control_bounds(&control, n_max)?;
        Ok(Self {
            kind,
            alpha,
            law: EigenLaw::Tabulated(eigenvalues),
            control,
            n_max,
            gap_c: report.pair_lower.min(report.step_lower),
            gap_upper: report.step_upper,
            b_lo,
            b_hi,
            enumeration_limit: DEFAULT_ENUMERATION_LIMIT,
        })
    }

    pub fn with_enumeration_limit(mut self, limit: usize) -> Self {
        self.enumeration_limit = limit;
        self
    }

    pub fn kind(&self) -> Kind {
        self.kind
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn law(&self) -> &EigenLaw {
        &self.law
    }

    pub fn control(&self) -> &ControlLaw {
        &self.control
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    /// Lower gap constant `c`.
    pub fn gap_c(&self) -> f64 {
        self.gap_c
    }

    /// Upper gap constant `C` of consecutive differences.
    pub fn gap_upper(&self) -> f64 {
        self.gap_upper
    }

    pub fn b_bounds(&self) -> (f64, f64) {
        (self.b_lo, self.b_hi)
    }

    pub fn enumeration_limit(&self) -> usize {
        self.enumeration_limit
    }

    /// Largest index with a known eigenvalue.
    pub fn eigen_capacity(&self) -> usize {
        match &self.law {
            EigenLaw::Power { .. } => usize::MAX,
            EigenLaw::Tabulated(v) => v.len(),
        }
    }

    /// `lambda_n` for `n >= 1`.
    pub fn eigenvalue(&self, n: usize) -> Result<Complex64> {
        if n == 0 {
            return Err(Error::InvalidArgument("mode indices start at 1".into()));
        }
        match &self.law {
            EigenLaw::Power { scale } => {
                let m = scale * power(n, self.alpha);
                Ok(match self.kind {
                    Kind::SelfAdjoint => Complex64::new(-m, 0.0),
                    Kind::SkewAdjoint => Complex64::new(0.0, -m),
                })
            }
            EigenLaw::Tabulated(v) => v.get(n - 1).copied().ok_or(Error::BeyondTable {
                index: n,
                available: v.len(),
            }),
        }
    }

    /// `lambda_1, ..., lambda_count`.
    pub fn eigenvalues(&self, count: usize) -> Result<Vec<Complex64>> {
        (1..=count).map(|n| self.eigenvalue(n)).collect()
    }

    /// `|lambda_n|`.
    pub fn magnitude(&self, n: usize) -> Result<f64> {
        self.eigenvalue(n).map(|z| z.norm())
    }

    /// `b_n` for `n >= 1`.
    pub fn b(&self, n: usize) -> Result<f64> {
        if n == 0 {
            return Err(Error::InvalidArgument("mode indices start at 1".into()));
        }
        match &self.control {
            ControlLaw::Constant(b) => Ok(*b),
            ControlLaw::Tabulated(v) => v.get(n - 1).copied().ok_or(Error::BeyondTable {
                index: n,
                available: v.len(),
            }),
        }
    }

    pub fn controls(&self, count: usize) -> Result<Vec<f64>> {
        (1..=count).map(|n| self.b(n)).collect()
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile {
            kind: self.kind,
            alpha: self.alpha,
            scale: match self.law {
                EigenLaw::Power { scale } => Some(scale),
                EigenLaw::Tabulated(_) => None,
            },
            n_max: self.n_max,
            b: self.controls(self.n_max).expect("validated at construction"),
            eigenvalues: self
                .eigenvalues(self.n_max)
                .expect("validated at construction")
                .into_iter()
                .map(|z| [z.re, z.im])
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("plain data serializes")
    }

    /// Parses a model document. Eigenvalues that coincide with the power law
    /// of the given scale restore that law; anything else becomes a table.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        check_alpha(file.alpha)?;
        if file.eigenvalues.len() != file.n_max || file.b.len() != file.n_max {
            return Err(Error::InvalidModel(format!(
                "n_max = {} but {} eigenvalues and {} control coefficients",
                file.n_max,
                file.eigenvalues.len(),
                file.b.len()
            )));
        }
        let eigen: Vec<Complex64> = file
            .eigenvalues
            .iter()
            .map(|p| Complex64::new(p[0], p[1]))
            .collect();
        let control = match file.b.first() {
            Some(&b0) if file.b.iter().all(|&b| b == b0) => ControlLaw::Constant(b0),
            _ => ControlLaw::Tabulated(file.b.clone()),
        };
        if let Some(scale) = file.scale {
            let candidate = make_spectrum(file.kind, file.alpha, scale, file.n_max, control.clone())?;
            if candidate.eigenvalues(file.n_max)? == eigen {
                return Ok(candidate);
            }
        }
        Self::from_table(file.kind, file.alpha, eigen, control)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    kind: Kind,
    alpha: f64,
    scale: Option<f64>,
    n_max: usize,
    b: Vec<f64>,
    eigenvalues: Vec<[f64; 2]>,
}

/// Empirical gap constants over all pairs of a finite eigenvalue list.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GapReport {
    pub n_check: usize,
    /// `min |lambda_{n+1} - lambda_n| / n^(alpha-1)`.
    pub step_lower: f64,
    /// `max |lambda_{n+1} - lambda_n| / n^(alpha-1)`.
    pub step_upper: f64,
    pub step_worst: usize,
    /// `min |lambda_k - lambda_n| / (k^(alpha-1) |k - n|)`.
    pub pair_lower: f64,
    pub pair_worst: (usize, usize),
    /// `min |lambda_n - lambda_k| / |n - k|^alpha`.
    pub power_lower: f64,
    pub power_worst: (usize, usize),
    pub step_pass: bool,
    pub pair_pass: bool,
    pub power_pass: bool,
}

impl GapReport {
    pub fn passed(&self) -> bool {
        self.step_pass && self.pair_pass && self.power_pass
    }
}

/// Scans every pair of `eigenvalues` (indexed from 1).
pub fn gap_report(alpha: f64, eigenvalues: &[Complex64]) -> GapReport {
    let n = eigenvalues.len();
    let mut step_lower = f64::INFINITY;
    let mut step_upper: f64 = 0.0;
    let mut step_worst = 1;
    for i in 1..n {
        let r = (eigenvalues[i] - eigenvalues[i - 1]).norm() / (i as f64).powf(alpha - 1.0);
        if r < step_lower {
            step_lower = r;
            step_worst = i;
        }
        step_upper = step_upper.max(r);
    }
    let mut pair_lower = f64::INFINITY;
    let mut pair_worst = (1, 1);
    let mut power_lower = f64::INFINITY;
    let mut power_worst = (1, 1);
    for k in 1..=n {
        let kw = (k as f64).powf(alpha - 1.0);
        for m in 1..=n {
            if m == k {
                continue;
            }
            let d = (eigenvalues[k - 1] - eigenvalues[m - 1]).norm();
            let gap = k.abs_diff(m) as f64;
            let r = d / (kw * gap);
            if r < pair_lower {
                pair_lower = r;
                pair_worst = (k, m);
            }
            let p = d / gap.powf(alpha);
            if p < power_lower {
                power_lower = p;
                power_worst = (k, m);
            }
        }
    }
    let ok = |x: f64| x > 0.0 && x.is_finite();
    GapReport {
        n_check: n,
        step_lower,
        step_upper,
        step_worst,
        pair_lower,
        pair_worst,
        power_lower,
        power_worst,
        step_pass: ok(step_lower) && ok(step_upper),
        pair_pass: ok(pair_lower),
        power_pass: ok(power_lower),
    }
}

/// Gap constants of the first `n_check` modes of `model`.
pub fn verify_gaps(model: &SpectrumModel, n_check: usize) -> Result<GapReport> {
    if n_check > model.n_max || n_check < 2 {
        return Err(Error::InvalidArgument(format!(
            "n_check must lie in 2..={}, got {n_check}",
            model.n_max
        )));
    }
    Ok(gap_report(model.alpha, &model.eigenvalues(n_check)?))
}

/// Value of the resonance distance at one damping value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DistCertificate {
    pub lambda: f64,
    pub dist: f64,
    /// Pair `(i, j)` with `|lambda_j - lambda_i + lambda| = dist`.
    pub witness: Option<(usize, usize)>,
    /// Certified lower bound, when the damping came from a candidate grid.
    pub floor: Option<f64>,
}

/// `floor(x^(1/(alpha-1)))`, corrected for rounding of the fractional power.
fn floor_root(x: f64, alpha: f64) -> usize {
    let e = alpha - 1.0;
    let mut m = x.powf(1.0 / e).floor().max(0.0) as usize;
    while ((m + 1) as f64).powf(e) <= x {
        m += 1;
    }
    while m > 0 && (m as f64).powf(e) > x {
        m -= 1;
    }
    m
}

/// Exact `inf_{i,j} |lambda_j - lambda_i + lambda|`.
///
/// Skew-adjoint spectra give `lambda` outright. For self-adjoint spectra the
/// pair `(i, i)` caps the value at `lambda`, and a pair `i < j` can only go
/// below the cap when `c j^(alpha-1) <= |lambda_j - lambda_i| < 2 lambda`,
/// which bounds both indices; inside that range the best `j` for each `i`
/// is located by bisection.
pub fn dist_alpha(model: &SpectrumModel, lambda: f64) -> Result<DistCertificate> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("damping must be positive, got {lambda}")));
    }
    if model.kind == Kind::SkewAdjoint {
        return Ok(DistCertificate {
            lambda,
            dist: lambda,
            witness: Some((1, 1)),
            floor: None,
        });
    }
    let c = model.gap_c;
    let from_cap = floor_root(2.0 * lambda / c, model.alpha) + 1;
    let from_window = floor_root((lambda + 2.0 * c) / c, model.alpha) + 2;
    let top = from_cap.max(from_window) + 1;
    if top > model.enumeration_limit {
        return Err(Error::EnumerationOverflow {
            needed: top,
            limit: model.enumeration_limit,
        });
    }
    if top > model.eigen_capacity() {
        return Err(Error::EnumerationOverflow {
            needed: top,
            limit: model.eigen_capacity(),
        });
    }
    let lam: Vec<f64> = (1..=top)
        .map(|n| model.eigenvalue(n).map(|z| z.re))
        .collect::<Result<_>>()?;
    let mut best = lambda;
    let mut witness = (1, 1);
    for i in 0..top {
        // g(j) = lambda_j - lambda_i + lambda decreases in j; find the first j > i with g(j) <= 0.
        let g = |j: usize| lam[j] - lam[i] + lambda;
        let (mut lo, mut hi) = (i + 1, top);
        while lo < hi {
            let mid = (lo + hi) / 2;
            if g(mid) <= 0.0 {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        for j in [lo.saturating_sub(1), lo] {
            if j > i && j < top {
                let v = g(j).abs();
                if v < best {
                    best = v;
                    witness = (i + 1, j + 1);
                }
            }
        }
    }
    Ok(DistCertificate {
        lambda,
        dist: best,
        witness: Some(witness),
        floor: None,
    })
}

/// Candidate damping values in `[N, N + c]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MuGrid {
    pub n: usize,
    pub grid: Vec<f64>,
    /// Number of grid points, `floor(((N + c)/c)^(1/(alpha-1))) + 2`.
    pub m: usize,
    /// `c / (2 m)`.
    pub floor: f64,
}

pub fn mu_candidates(model: &SpectrumModel, n: usize) -> Result<MuGrid> {
    if model.kind != Kind::SelfAdjoint {
        return Err(Error::InvalidArgument("candidate grid is defined for self-adjoint models".into()));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("N must be at least 1".into()));
    }
    let c = model.gap_c;
    let m = floor_root((n as f64 + c) / c, model.alpha) + 2;
    let grid = (0..m)
        .map(|i| n as f64 + c * (1 + 2 * i) as f64 / (2 * m) as f64)
        .collect();
    Ok(MuGrid {
        n,
        grid,
        m,
        floor: c / (2 * m) as f64,
    })
}

/// Grid point with the largest resonance distance (first one on ties).
///
/// Skew-adjoint models have no resonances and return `N + 1/2`.
pub fn select_mu(model: &SpectrumModel, n: usize) -> Result<(f64, DistCertificate)> {
    if n == 0 {
        return Err(Error::InvalidArgument("N must be at least 1".into()));
    }
    if model.kind == Kind::SkewAdjoint {
        let mu = n as f64 + 0.5;
        return Ok((mu, dist_alpha(model, mu)?));
    }
    let grid = mu_candidates(model, n)?;
    let mut best: Option<DistCertificate> = None;
    for &mu in &grid.grid {
        let cert = dist_alpha(model, mu)?;
        if best.as_ref().is_none_or(|b| cert.dist > b.dist) {
            best = Some(cert);
        }
    }
    let mut cert = best.expect("grid is never empty");
    if cert.dist < grid.floor {
        return Err(Error::CertificateFailure {
            n,
            floor: grid.floor,
            best: cert.dist,
        });
    }
    cert.floor = Some(grid.floor);
    Ok((cert.lambda, cert))
}
