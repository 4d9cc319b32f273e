//! Closed-loop propagation in spectral coordinates and the piecewise-constant
//! feedback schedule that steers the state to zero.
//!
//! Time stepping is exact: `y(t) = T^{-1} diag(exp((lambda_n - lambda) t)) T y(0)`.

use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::format::{fmt_complex, fmt_f64};
use crate::precision::{cexp, lift, lower, real, CompensatedSum, Dd, Real, Wide};
use crate::quantitative::{ols, LinearFit};
use crate::spectrum::{select_mu, SpectrumModel};
use crate::transform::{assemble, BacksteppingSynthesis};

/// Coordinates `<y, phi_n>` of a truncated state.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    coeffs: Vec<Wide>,
    /// Exponent `s` for the `D(A^s)` norm.
    pub s_weight: Option<f64>,
}

fn zero() -> Wide {
    real(Dd::from_f64(0.0))
}

impl StateVector {
    pub fn new(coeffs: &[Complex64]) -> Self {
        Self::from_wide(coeffs.iter().map(|z| lift(*z)).collect())
    }

    pub fn from_wide(coeffs: Vec<Wide>) -> Self {
        Self { coeffs, s_weight: None }
    }

    pub fn from_real(coeffs: &[f64]) -> Self {
        Self::from_wide(coeffs.iter().map(|x| real(Dd::from_f64(*x))).collect())
    }

    pub fn zeros(n: usize) -> Self {
        Self::from_wide(vec![zero(); n])
    }

    /// `phi_n` (1-based) in dimension `dim`.
    pub fn basis(n: usize, dim: usize) -> Self {
        let mut v = Self::zeros(dim);
        v.coeffs[n - 1] = real(Dd::from_f64(1.0));
        v
    }

    pub fn with_weight(mut self, s: f64) -> Self {
        self.s_weight = Some(s);
        self
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn coeffs(&self) -> Vec<Complex64> {
        self.coeffs.iter().map(|z| lower(*z)).collect()
    }

    pub fn wide(&self) -> &[Wide] {
        &self.coeffs
    }

    pub fn norm_h(&self) -> f64 {
        let mut acc = Dd::from_f64(0.0);
        for z in &self.coeffs {
            acc += z.norm_sqr();
        }
        acc.sqrt().to_f64()
    }

    /// `sqrt(sum |lambda_n|^(2s) |y_n|^2)` with the vector's own weight (`s = 0` if unset).
    pub fn norm_s(&self, model: &SpectrumModel) -> Result<f64> {
        let s = self.s_weight.unwrap_or(0.0);
        let mut acc = 0.0;
        for (i, z) in self.coeffs.iter().enumerate() {
            acc += model.magnitude(i + 1)?.powf(2.0 * s) * lower(*z).norm_sqr();
        }
        Ok(acc.sqrt())
    }

    /// Zero-padded or cut to `n` coordinates.
    pub fn resized(&self, n: usize) -> Self {
        let mut coeffs = self.coeffs.clone();
        coeffs.resize(n, zero());
        Self {
            coeffs,
            s_weight: self.s_weight,
        }
    }

    pub fn scaled(&self, a: Wide) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|z| *z * a).collect(),
            s_weight: self.s_weight,
        }
    }

    /// `||self - other||` over the common length.
    pub fn distance(&self, other: &StateVector) -> f64 {
        let mut acc = Dd::from_f64(0.0);
        for (a, b) in self.coeffs.iter().zip(&other.coeffs) {
            acc += (*a - *b).norm_sqr();
        }
        acc.sqrt().to_f64()
    }
}

fn check_dim(synthesis: &BacksteppingSynthesis, y: &StateVector) -> Result<()> {
    if y.len() != synthesis.n() {
        return Err(Error::DimensionMismatch {
            expected: synthesis.n(),
            got: y.len(),
        });
    }
    Ok(())
}

/// Closed-loop state at time `t >= 0`.
pub fn propagate(synthesis: &BacksteppingSynthesis, y0: &StateVector, t: f64) -> Result<StateVector> {
    check_dim(synthesis, y0)?;
    if !(t >= 0.0) {
        return Err(Error::InvalidArgument(format!("time {t} must be nonnegative")));
    }
    if t == 0.0 {
        return Ok(y0.clone());
    }
    let mut z = synthesis.t_wide().matvec(y0.wide())?;
    let lam = real(Dd::from_f64(synthesis.lambda()));
    let tw = real(Dd::from_f64(t));
    for (zp, ev) in z.iter_mut().zip(synthesis.eigen_wide()) {
        *zp *= cexp((*ev - lam) * tw);
    }
    let y = synthesis.tinv_wide().matvec(&z)?;
    Ok(StateVector {
        coeffs: y,
        s_weight: y0.s_weight,
    })
}

fn feedback(synthesis: &BacksteppingSynthesis, y: &StateVector) -> Wide {
    let mut acc = CompensatedSum::<Dd>::new();
    for (k, c) in synthesis.gains_wide().iter().zip(y.wide()) {
        acc.add(*k * *c);
    }
    acc.total()
}

/// `u(t) = sum_n k_n <y(t), phi_n>`.
pub fn control_signal(synthesis: &BacksteppingSynthesis, y0: &StateVector, t: f64) -> Result<Complex64> {
    let y = propagate(synthesis, y0, t)?;
    Ok(lower(feedback(synthesis, &y)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DecayMeasure {
    /// `max_t exp(lambda t) ||y(t)|| / ||y0||`.
    pub c_hat: f64,
    /// Slope of `log ||y(t)||` against `t`.
    pub rate_hat: f64,
}

/// Fits the decay of one trajectory over `t_grid`. A zero state gives
/// `c_hat = 0` and `rate_hat = -inf`.
pub fn measure_decay(synthesis: &BacksteppingSynthesis, y0: &StateVector, t_grid: &[f64]) -> Result<DecayMeasure> {
    check_dim(synthesis, y0)?;
    if t_grid.is_empty() || t_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("time grid must be nonempty and increasing".into()));
    }
    let n0 = y0.norm_h();
    if n0 == 0.0 {
        return Ok(DecayMeasure {
            c_hat: 0.0,
            rate_hat: f64::NEG_INFINITY,
        });
    }
    let norms = t_grid
        .par_iter()
        .map(|&t| Ok(propagate(synthesis, y0, t)?.norm_h()))
        .collect::<Result<Vec<f64>>>()?;
    let lam = synthesis.lambda();
    let c_hat = t_grid
        .iter()
        .zip(&norms)
        .map(|(t, n)| (lam * t + (n / n0).ln()).exp())
        .fold(0.0, f64::max);
    let (x, y): (Vec<f64>, Vec<f64>) = t_grid
        .iter()
        .zip(&norms)
        .filter(|(_, n)| **n > 0.0)
        .map(|(t, n)| (*t, n.ln()))
        .unzip();
    let rate_hat = ols(&x, &y).map_or(f64::NEG_INFINITY, |f| f.slope);
    Ok(DecayMeasure { c_hat, rate_hat })
}

/// One constant-feedback interval.
#[derive(Debug)]
pub struct Stage {
    pub index: usize,
    pub lambda: f64,
    pub delta: f64,
    pub t_start: f64,
    pub t_end: f64,
    pub trunc: usize,
    pub synthesis: BacksteppingSynthesis,
}

#[derive(Debug)]
pub struct NullControlSchedule {
    pub horizon: f64,
    pub gamma: f64,
    pub sigma: f64,
    /// Partial sum of `lambda(N)^(-1/sigma)` plus the integral tail bound.
    pub l_sigma: f64,
    pub stages: Vec<Stage>,
}

impl NullControlSchedule {
    /// `horizon - t_end` of the last stage, the room left for the unscheduled tail.
    pub fn gap(&self) -> f64 {
        self.horizon - self.stages.last().map_or(0.0, |s| s.t_end)
    }

    pub fn manifest(&self) -> ScheduleManifest {
        ScheduleManifest {
            gamma: self.gamma,
            sigma: self.sigma,
            horizon: self.horizon,
            l_sigma: self.l_sigma,
            stages: self
                .stages
                .iter()
                .map(|s| StageManifest {
                    n: s.index,
                    lambda: s.lambda,
                    delta: s.delta,
                    t_start: s.t_start,
                    trunc: s.trunc,
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScheduleManifest {
    pub gamma: f64,
    pub sigma: f64,
    pub horizon: f64,
    #[serde(rename = "L_sigma")]
    pub l_sigma: f64,
    pub stages: Vec<StageManifest>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageManifest {
    #[serde(rename = "N")]
    pub n: usize,
    pub lambda: f64,
    pub delta: f64,
    pub t_start: f64,
    pub trunc: usize,
}

/// Damping value of stage `N`: the certified grid point above `ceil(N^gamma)`.
pub fn stage_lambda(model: &SpectrumModel, n: usize, gamma: f64) -> Result<f64> {
    let base = (n as f64).powf(gamma).ceil() as usize;
    Ok(select_mu(model, base)?.0)
}

/// Stage `N` runs for `delta_N = (T / L_sigma) lambda(N)^(-1/sigma)` under the
/// synthesis at `lambda(N)`, on `max(previous, trunc, 4 ceil(lambda(N)^(1/alpha)))` modes.
pub fn build_schedule(
    model: &SpectrumModel,
    horizon: f64,
    gamma: f64,
    sigma: f64,
    stages: usize,
    trunc: usize,
) -> Result<NullControlSchedule> {
    let alpha = model.alpha();
    let critical = alpha / (alpha - 1.0);
    if !(sigma > critical && gamma > sigma) {
        return Err(Error::InvalidArgument(format!(
            "need gamma > sigma > alpha/(alpha-1) = {critical}, got gamma={gamma} sigma={sigma}"
        )));
    }
    if stages == 0 {
        return Err(Error::InvalidArgument("at least one stage is required".into()));
    }
    if !(horizon > 0.0) || trunc == 0 {
        return Err(Error::InvalidArgument("horizon and truncation must be positive".into()));
    }
    let lambdas = (1..=stages)
        .map(|n| stage_lambda(model, n, gamma).map_err(|e| stage_error(n, e)))
        .collect::<Result<Vec<f64>>>()?;
    let ratio = gamma / sigma;
    let partial: f64 = lambdas.iter().map(|l| l.powf(-1.0 / sigma)).sum();
    let l_sigma = partial + (stages as f64).powf(1.0 - ratio) / (ratio - 1.0);

    let mut truncs = Vec::with_capacity(stages);
    let mut prev = trunc;
    for l in &lambdas {
        prev = prev.max(4 * l.powf(1.0 / alpha).ceil() as usize);
        truncs.push(prev);
    }
    let syntheses = lambdas
        .par_iter()
        .zip(&truncs)
        .enumerate()
        .map(|(i, (l, tr))| assemble(model, *l, *tr).map_err(|e| stage_error(i + 1, e)))
        .collect::<Result<Vec<_>>>()?;

    let mut t = 0.0;
    let stages = syntheses
        .into_iter()
        .enumerate()
        .map(|(i, synthesis)| {
            let lambda = lambdas[i];
            let delta = horizon / l_sigma * lambda.powf(-1.0 / sigma);
            let stage = Stage {
                index: i + 1,
                lambda,
                delta,
                t_start: t,
                t_end: t + delta,
                trunc: truncs[i],
                synthesis,
            };
            t += delta;
            stage
        })
        .collect();
    Ok(NullControlSchedule {
        horizon,
        gamma,
        sigma,
        l_sigma,
        stages,
    })
}

fn stage_error(stage: usize, e: Error) -> Error {
    Error::Stage {
        stage,
        source: Box::new(e),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NullControlOptions {
    /// Target for `||y(t_end)|| / ||y0||`.
    pub epsilon: f64,
    /// Samples per stage for the trajectory and `max |u|`.
    pub samples: usize,
}

impl Default for NullControlOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-6,
            samples: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageReport {
    #[serde(rename = "N")]
    pub n: usize,
    pub lambda: f64,
    pub delta: f64,
    pub norm_start: f64,
    pub norm_end: f64,
    pub norm_s_end: f64,
    /// `norm_end / norm_start`.
    pub growth: f64,
    /// `||T|| ||T^{-1}|| exp(-lambda delta)`, which bounds `growth`.
    pub bound: f64,
    pub max_u: f64,
    /// `c_hat lambda^(1/alpha) - lambda delta` with `c_hat` fitted over the stages.
    pub exponent: f64,
    pub log_condition: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub norm_h: f64,
    pub norm_s: f64,
    pub u: Complex64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NullControlReport {
    pub stages: Vec<StageReport>,
    pub trajectory: Vec<TrajectoryRow>,
    /// Fit of `log cond(T)` against `lambda^(1/alpha)` over the stages.
    pub condition_fit: Option<LinearFit>,
    pub final_ratio: f64,
    pub epsilon: f64,
    pub reached: bool,
}

impl NullControlReport {
    /// Stage exponents strictly decrease from stage `skip + 1` on.
    pub fn exponents_decreasing_after(&self, skip: usize) -> bool {
        self.stages
            .iter()
            .skip(skip)
            .collect::<Vec<_>>()
            .windows(2)
            .all(|w| w[1].exponent < w[0].exponent)
    }

    /// `max |u|` strictly decreases over the last `count` stages.
    pub fn control_decreasing_last(&self, count: usize) -> bool {
        let start = self.stages.len().saturating_sub(count);
        self.stages[start..].windows(2).all(|w| w[1].max_u < w[0].max_u)
    }
}

/// Runs the schedule from `y0`, padding the state whenever a stage uses more modes.
///
/// Fails with [`Error::Divergence`] if a stage grows the norm beyond its bound.
pub fn run_null_control(
    schedule: &NullControlSchedule,
    y0: &StateVector,
    opts: &NullControlOptions,
) -> Result<NullControlReport> {
    let first = schedule
        .stages
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty schedule".into()))?;
    if y0.len() > first.trunc {
        return Err(Error::DimensionMismatch {
            expected: first.trunc,
            got: y0.len(),
        });
    }
    let model = first.synthesis.model();
    let alpha = model.alpha();
    let n0 = y0.norm_h();
    let samples = opts.samples.max(2);

    let log_cond: Vec<f64> = schedule
        .stages
        .par_iter()
        .map(|s| s.synthesis.condition().ln())
        .collect();
    let x: Vec<f64> = schedule.stages.iter().map(|s| s.lambda.powf(1.0 / alpha)).collect();
    let condition_fit = ols(&x, &log_cond);
    let c_hat = condition_fit.map_or(0.0, |f| f.slope);

    let mut y = y0.clone();
    let mut stages = Vec::new();
    let mut trajectory = Vec::new();
    for (i, stage) in schedule.stages.iter().enumerate() {
        y = y.resized(stage.trunc);
        let norm_start = y.norm_h();
        let rows = (0..samples)
            .into_par_iter()
            .map(|j| {
                let dt = stage.delta * j as f64 / (samples - 1) as f64;
                let yt = propagate(&stage.synthesis, &y, dt)?;
                Ok(TrajectoryRow {
                    t: stage.t_start + dt,
                    norm_h: yt.norm_h(),
                    norm_s: yt.norm_s(model)?,
                    u: lower(feedback(&stage.synthesis, &yt)),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let max_u = rows.iter().map(|r| r.u.norm()).fold(0.0, f64::max);
        let next = propagate(&stage.synthesis, &y, stage.delta)?;
        let norm_end = next.norm_h();
        let growth = if norm_start > 0.0 { norm_end / norm_start } else { 0.0 };
        let bound = (log_cond[i] - stage.lambda * stage.delta).exp();
        if growth > bound * (1.0 + 1e-9) {
            return Err(Error::Divergence {
                stage: stage.index,
                growth,
                bound,
            });
        }
        stages.push(StageReport {
            n: stage.index,
            lambda: stage.lambda,
            delta: stage.delta,
            norm_start,
            norm_end,
            norm_s_end: next.norm_s(model)?,
            growth,
            bound,
            max_u,
            exponent: c_hat * x[i] - stage.lambda * stage.delta,
            log_condition: log_cond[i],
        });
        trajectory.extend(rows);
        y = next;
    }
    let final_ratio = if n0 > 0.0 { y.norm_h() / n0 } else { 0.0 };
    Ok(NullControlReport {
        stages,
        trajectory,
        condition_fit,
        final_ratio,
        epsilon: opts.epsilon,
        reached: final_ratio <= opts.epsilon,
    })
}

/// `t,norm_H,norm_s,u` rows and a `#` footer with the final ratio.
pub fn write_trajectory_csv<W: Write>(report: &NullControlReport, mut out: W) -> std::io::Result<()> {
    writeln!(out, "t,norm_H,norm_s,u")?;
    for r in &report.trajectory {
        let u = if r.u.im == 0.0 { fmt_f64(r.u.re) } else { fmt_complex(r.u) };
        writeln!(out, "{},{},{},{}", fmt_f64(r.t), fmt_f64(r.norm_h), fmt_f64(r.norm_s), u)?;
    }
    writeln!(
        out,
        "# final_ratio={} epsilon={} reached={}",
        fmt_f64(report.final_ratio),
        fmt_f64(report.epsilon),
        report.reached
    )?;
    if let Some(f) = report.condition_fit {
        writeln!(
            out,
            "# fit log cond(T) = slope*lambda^(1/alpha) + intercept: slope={} intercept={} r2={}",
            fmt_f64(f.slope),
            fmt_f64(f.intercept),
            fmt_f64(f.r2)
        )?;
    }
    Ok(())
}

/// Evenly spaced grid of `count` points on `[0, end]`.
pub fn linear_grid(end: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..count).map(|i| end * i as f64 / (count - 1) as f64).collect(),
    }
}

/// `||T^{-1} diag(exp((lambda_n - lambda) t)) T||`, the exact propagator norm.
pub fn propagator_norm(synthesis: &BacksteppingSynthesis, t: f64) -> f64 {
    let n = synthesis.n();
    let lam = real(Dd::from_f64(synthesis.lambda()));
    let tw = real(Dd::from_f64(t));
    let e: Vec<Wide> = synthesis
        .eigen_wide()
        .iter()
        .map(|ev| cexp((*ev - lam) * tw))
        .collect();
    let scaled = crate::matrix::Matrix::from_fn(n, n, |p, m| e[p] * synthesis.t_wide()[(p, m)]);
    let prod = synthesis.tinv_wide().matmul(&scaled).expect("square factors");
    crate::matrix::spectral_norm(&prod.lower())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transform::chi;
    use proptest::prelude::*;

    fn heat() -> SpectrumModel {
        SpectrumModel::heat(400)
    }

    #[test]
    fn identity_at_time_zero() {
        let s = assemble(&heat(), 0.5, 8).unwrap();
        let y = StateVector::basis(1, 8);
        assert_eq!(propagate(&s, &y, 0.0).unwrap(), y);
        assert!(matches!(
            propagate(&s, &StateVector::basis(1, 4), 1.0),
            Err(Error::DimensionMismatch { expected: 8, got: 4 })
        ));
    }

    #[test]
    fn slowest_mode_rate() {
        let s = assemble(&heat(), 0.5, 8).unwrap();
        let y = StateVector::basis(1, 8);
        let scaled: Vec<f64> = [10.0, 20.0, 30.0]
            .iter()
            .map(|t| propagate(&s, &y, *t).unwrap().norm_h() * (1.5 * t).exp())
            .collect();
        assert!((scaled[1] - scaled[0]).abs() < 1e-12 * scaled[0]);
        assert!((scaled[2] - scaled[1]).abs() < 1e-12 * scaled[0]);
        let d = measure_decay(&s, &y, &linear_grid(10.0, 41)).unwrap();
        assert!(d.rate_hat <= -0.5);
        assert!((d.rate_hat + 1.5).abs() < 0.05);
    }

    #[test]
    fn eigen_trajectory() {
        let s = assemble(&heat(), 2.5, 16).unwrap();
        for n in [1, 2, 5] {
            let c = StateVector::from_wide(chi(&heat(), 2.5, n, 16).unwrap().wide().to_vec());
            for t in [0.1, 0.7] {
                let y = propagate(&s, &c, t).unwrap();
                let rate = Dd::from_f64((-((n * n) as f64) - 2.5) * t).exp();
                let expect = c.scaled(real(rate));
                assert!(y.distance(&expect) <= 1e-9 * expect.norm_h());
                let u = control_signal(&s, &c, t).unwrap();
                assert!((u + rate.to_f64()).norm() <= 1e-9 * rate.to_f64());
            }
        }
    }

    #[test]
    fn control_examples() {
        let s = assemble(&heat(), 0.5, 2).unwrap();
        let u = control_signal(&s, &StateVector::basis(1, 2), 0.0).unwrap();
        assert!((u.re + 7.0 / 12.0).abs() < 1e-15);
        assert_eq!(control_signal(&s, &StateVector::zeros(2), 1.0).unwrap().norm(), 0.0);
        let d = measure_decay(&s, &StateVector::zeros(2), &[0.0, 1.0]).unwrap();
        assert_eq!(d.c_hat, 0.0);
    }

    #[test]
    fn decay_constant_below_condition() {
        let model = heat();
        let (mu, _) = select_mu(&model, 5).unwrap();
        let s = assemble(&model, mu, 24).unwrap();
        let coeffs: Vec<f64> = (0..24).map(|i| ((i * 7 + 3) % 11) as f64 - 5.0).collect();
        let d = measure_decay(&s, &StateVector::from_real(&coeffs), &linear_grid(3.0, 31)).unwrap();
        assert!(d.c_hat <= s.condition());
        assert!(d.rate_hat <= -mu);
    }

    #[test]
    fn propagator_norm_bound() {
        let s = assemble(&heat(), 3.5, 20).unwrap();
        for t in [0.0, 0.05, 0.3] {
            assert!(propagator_norm(&s, t) <= s.condition() * (-3.5f64 * t).exp() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn schedule_formulas() {
        let sched = build_schedule(&heat(), 1.0, 3.0, 2.5, 5, 16).unwrap();
        assert_eq!(sched.stages.len(), 5);
        let last = sched.stages.last().unwrap();
        assert!(last.t_end < 1.0);
        let tail = 5f64.powf(1.0 - 1.2) / 0.2;
        assert!((last.t_end + tail / sched.l_sigma - 1.0).abs() < 1e-12);
        for (i, st) in sched.stages.iter().enumerate() {
            let base = ((i + 1) as f64).powi(3);
            assert!(st.lambda >= base && st.lambda <= base + 1.0);
            let expect = 1.0 / sched.l_sigma * st.lambda.powf(-0.4);
            assert!((st.delta - expect).abs() < 1e-15);
            assert!(st.trunc >= 4 * st.lambda.sqrt().ceil() as usize);
        }
        assert!(sched.stages.windows(2).all(|w| w[1].t_start > w[0].t_start));
        assert!(matches!(
            build_schedule(&heat(), 1.0, 3.0, 2.0, 5, 16),
            Err(Error::InvalidArgument(_))
        ));
        let json = serde_json::to_value(sched.manifest()).unwrap();
        assert_eq!(json["stages"].as_array().unwrap().len(), 5);
    }

    #[test]
    fn zero_state_stays_zero() {
        let sched = build_schedule(&heat(), 1.0, 3.0, 2.5, 3, 8).unwrap();
        let r = run_null_control(&sched, &StateVector::zeros(8), &NullControlOptions::default()).unwrap();
        assert!(r.stages.iter().all(|s| s.norm_end == 0.0));
        assert_eq!(r.final_ratio, 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn semigroup(t1 in 0.0f64..0.5, t2 in 0.0f64..0.5, seed in 0u64..1000) {
            let s = assemble(&heat(), 4.071_428_571_428_571, 12).unwrap();
            let coeffs: Vec<f64> = (0..12).map(|i| (((seed + 1) * (i as u64 + 3)) % 13) as f64 - 6.0).collect();
            let y = StateVector::from_real(&coeffs);
            let once = propagate(&s, &y, t1 + t2).unwrap();
            let twice = propagate(&s, &propagate(&s, &y, t1).unwrap(), t2).unwrap();
            prop_assert!(once.distance(&twice) <= 1e-10 * once.norm_h().max(1e-300));
        }
    }
}
