//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
//!
//! Run with `cargo test -p backstep-cli --test acceptance`.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use backstep::cauchy::verify_against_oracle;
use backstep::quantitative::{cost_sweep, eval_j_all, ols, SweepReport};
use backstep::simulate::{build_schedule, linear_grid, measure_decay, run_null_control, NullControlOptions, StateVector};
use backstep::spectrum::{dist_alpha, make_spectrum, select_mu, ControlLaw, Kind, SpectrumModel};
use backstep::transform::{assemble, operator_identity_residual, verify_closed_loop_eigen};
use backstep_cli::cli::random_unit;
use rayon::prelude::*;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let mut o = f();
    let took = start.elapsed();
    o.detail = format!("{} [{:.1}s]", o.detail, took.as_secs_f64());
    if let Some(limit) = limit {
        if took > limit {
            o.passed = false;
            o.detail += &format!(" exceeds {}s", limit.as_secs());
        }
    }
    o
}

fn power(kind: Kind, alpha: f64, n_max: usize) -> SpectrumModel {
    make_spectrum(kind, alpha, 1.0, n_max, ControlLaw::default()).unwrap()
}

/// Shared heat and skew sweeps, N = 1..25 at 300 modes.
struct Sweeps {
    heat: SweepReport,
    skew: SweepReport,
}

fn cauchy_oracle() -> Outcome {
    let mut worst_identity: f64 = 0.0;
    let mut worst_lu: f64 = 0.0;
    let mut count = 0;
    for alpha in [1.5, 2.0, 3.0] {
        let model = power(Kind::SelfAdjoint, alpha, 200);
        let lambdas: Vec<f64> = (1..=20).map(|n| select_mu(&model, n).unwrap().0).collect();
        let checks: Vec<_> = lambdas
            .par_iter()
            .flat_map_iter(|&l| [2, 4, 8, 16, 32, 64].map(|n| verify_against_oracle(&model, l, n)))
            .collect();
        for c in checks {
            match c {
                Ok(c) => {
                    worst_identity = worst_identity.max(c.identity_defect);
                    worst_lu = worst_lu.max(c.lu_relative);
                    count += 1;
                }
                Err(e) => return outcome(false, format!("alpha={alpha}: {e}")),
            }
        }
    }
    outcome(
        worst_identity <= 1e-8 && worst_lu <= 1e-7,
        format!("{count} systems, max |inv*C - I| = {worst_identity:.2e} (<= 1e-8), max LU relative = {worst_lu:.2e} (<= 1e-7)"),
    )
}

fn j_identity() -> Outcome {
    let grid: Vec<f64> = (0..100).map(|k| 0.3 + 0.297 * k as f64).collect();
    let mut worst: f64 = 0.0;
    let mut count = 0usize;
    for kind in [Kind::SelfAdjoint, Kind::SkewAdjoint] {
        let model = power(kind, 2.0, 64);
        for &l in &grid {
            if dist_alpha(&model, l).unwrap().dist < 1e-6 {
                return outcome(false, format!("grid point {l} is resonant"));
            }
        }
        let results: Vec<_> = grid
            .par_iter()
            .flat_map_iter(|&l| (1..=50).map(move |big_n| (l, big_n)))
            .map(|(l, big_n)| eval_j_all(&model, l, big_n))
            .collect();
        for r in results {
            match r {
                Ok(js) => {
                    for j in js {
                        worst = worst.max((j.value - 1.0).norm());
                        count += 1;
                    }
                }
                Err(e) => return outcome(false, e.to_string()),
            }
        }
    }
    outcome(worst <= 1e-9, format!("{count} values of J_n^N, max |J - 1| = {worst:.2e} (<= 1e-9)"))
}

fn gain_cross_route(s: &Sweeps) -> Outcome {
    let mut worst = f64::NEG_INFINITY;
    let mut count = 0;
    for r in s.heat.reports().chain(s.skew.reports()) {
        worst = worst.max(r.gain_excess);
        count += 1;
    }
    let failed = s.heat.points.len() + s.skew.points.len() - count;
    outcome(
        failed == 0 && worst <= 0.0,
        format!("{count} sweep points, {failed} failed, largest excess over combined bars = {worst:.2e} (<= 0)"),
    )
}

fn tb_identity(s: &Sweeps, extra: f64) -> Outcome {
    let sweep = s
        .heat
        .reports()
        .chain(s.skew.reports())
        .map(|r| r.tb_residual_max)
        .fold(0.0, f64::max);
    let worst = sweep.max(extra);
    outcome(worst <= 1e-9, format!("max TB=B defect over all syntheses = {worst:.2e} (<= 1e-9)"))
}

fn eigenstructure() -> (Outcome, f64) {
    let mut cases = Vec::new();
    let heat = power(Kind::SelfAdjoint, 2.0, 400);
    let skew = power(Kind::SkewAdjoint, 2.0, 400);
    for big_n in [1, 2, 4, 8, 16, 32, 64] {
        for k in [1, 3, 6] {
            cases.push((&heat, select_mu(&heat, k).unwrap().0, big_n));
            cases.push((&skew, k as f64 + 0.5, big_n));
        }
    }
    let results: Vec<_> = cases
        .par_iter()
        .map(|(m, l, big_n)| {
            let s = assemble(m, *l, *big_n)?;
            let mut w = (0.0f64, 0.0f64, 0.0f64);
            for n in 1..=*big_n {
                let e = verify_closed_loop_eigen(&s, n)?;
                w.0 = w.0.max((e.k_on_chi + 1.0).norm());
                w.1 = w.1.max(e.collinearity_defect);
                w.2 = w.2.max(e.eigen_defect);
            }
            Ok::<_, backstep::Error>((w, s.tb_residual_max()))
        })
        .collect();
    let mut w = (0.0f64, 0.0f64, 0.0f64);
    let mut tb: f64 = 0.0;
    for r in results {
        match r {
            Ok((x, t)) => {
                w = (w.0.max(x.0), w.1.max(x.1), w.2.max(x.2));
                tb = tb.max(t);
            }
            Err(e) => return (outcome(false, e.to_string()), tb),
        }
    }
    (
        outcome(
            w.0 <= 1e-9 && w.1 <= 1e-8 && w.2 <= 1e-8,
            format!(
                "{} syntheses, N <= 64: max |<K,chi_n> + 1| = {:.2e}, collinearity = {:.2e}, eigen defect = {:.2e}",
                cases.len(),
                w.0,
                w.1,
                w.2
            ),
        ),
        tb,
    )
}

fn operator_identity() -> (Outcome, f64) {
    let heat = power(Kind::SelfAdjoint, 2.0, 400);
    let skew = power(Kind::SkewAdjoint, 2.0, 400);
    let mut cases = Vec::new();
    for big_n in [2, 32, 128, 256] {
        cases.push((&heat, 0.5, big_n));
        cases.push((&heat, select_mu(&heat, 5).unwrap().0, big_n));
        cases.push((&heat, select_mu(&heat, 10).unwrap().0, big_n));
        cases.push((&skew, 7.5, big_n));
    }
    let results: Vec<_> = cases
        .par_iter()
        .map(|(m, l, big_n)| {
            let s = assemble(m, *l, *big_n)?;
            Ok::<_, backstep::Error>((operator_identity_residual(&s).relative, s.tb_residual_max()))
        })
        .collect();
    let mut worst: f64 = 0.0;
    let mut tb: f64 = 0.0;
    for r in results {
        match r {
            Ok((x, t)) => {
                worst = worst.max(x);
                tb = tb.max(t);
            }
            Err(e) => return (outcome(false, e.to_string()), tb),
        }
    }
    (
        outcome(worst <= 1e-8, format!("{} syntheses, N <= 256: max relative residual = {worst:.2e} (<= 1e-8)", cases.len())),
        tb,
    )
}

fn cost_law(s: &Sweeps) -> Outcome {
    let Some(fit) = s.heat.fit else {
        return outcome(false, "no fit");
    };
    let reports: Vec<_> = s.heat.reports().collect();
    if reports.len() != 25 {
        return outcome(false, format!("only {} of 25 points succeeded", reports.len()));
    }
    let ratio: Vec<f64> = reports.iter().map(|r| r.log_cost() / r.lambda).collect();
    let idx: Vec<f64> = reports.iter().map(|r| r.n as f64).collect();
    let trend = ols(&idx, &ratio).map_or(f64::NAN, |f| f.slope);
    let third = ratio.len() / 3;
    let early_min = ratio[..third].iter().copied().fold(f64::INFINITY, f64::min);
    let late_max = ratio[ratio.len() - third..].iter().copied().fold(0.0, f64::max);
    outcome(
        fit.r2 >= 0.9 && trend < 0.0 && late_max < early_min,
        format!(
            "slope {:.3}, R^2 = {:.4} (>= 0.9); log-cost/lambda from {:.3} to {:.3}, trend {:.2e} (< 0), last-third max {:.3} < first-third min {:.3}",
            fit.slope,
            fit.r2,
            ratio[0],
            ratio[ratio.len() - 1],
            trend,
            late_max,
            early_min
        ),
    )
}

fn gain_floor(s: &Sweeps) -> Outcome {
    let reports: Vec<_> = s.heat.reports().collect();
    let x: Vec<f64> = reports.iter().map(|r| r.lambda.sqrt()).collect();
    let y: Vec<f64> = reports.iter().map(|r| -r.kb_inf.ln()).collect();
    // Constants from the first half of the sweep, checked on all of it.
    let half = reports.len() / 2;
    let c_hat = ols(&x[..half], &y[..half]).map_or(0.0, |f| f.slope.max(0.0));
    let log_c = (0..half).map(|i| y[i] - c_hat * x[i]).fold(f64::NEG_INFINITY, f64::max);
    let heat_ok = (0..reports.len()).all(|i| y[i] <= c_hat * x[i] + log_c);
    let margin = (0..reports.len())
        .map(|i| c_hat * x[i] + log_c - y[i])
        .fold(f64::INFINITY, f64::min);
    let skew: Vec<_> = s.skew.reports().collect();
    let skew_ok = skew.len() == s.skew.points.len() && skew.iter().all(|r| r.kb_inf >= r.lambda);
    let skew_worst = skew.iter().map(|r| r.kb_inf / r.lambda).fold(f64::INFINITY, f64::min);
    outcome(
        heat_ok && skew_ok,
        format!(
            "heat: c_hat = {c_hat:.3}, log C_hat = {log_c:.3} from N <= {half}, smallest margin over N <= {} = {margin:.3} (>= 0); skew: min |k b|/lambda = {skew_worst:.4} (>= 1)",
            reports.len()
        ),
    )
}

fn dist_certification() -> Outcome {
    let model = power(Kind::SelfAdjoint, 2.0, 400);
    let mut worst_margin = f64::INFINITY;
    for n in 1..=100usize {
        let (mu, cert) = match select_mu(&model, n) {
            Ok(v) => v,
            Err(e) => return outcome(false, format!("N={n}: {e}")),
        };
        // Exact enumeration: |j^2 - i^2 - mu| for i <= j, differences beyond
        // 2 mu cannot come closer than mu.
        let mut brute = mu;
        let top = (mu + 2.0) as usize + 2;
        for i in 1..=top {
            for j in i..=top {
                brute = brute.min(((j * j - i * i) as f64 - mu).abs());
            }
        }
        let floor = 1.0 / (2.0 * (n + 3) as f64);
        if (brute - cert.dist).abs() > 1e-12 || brute < floor {
            return outcome(false, format!("N={n}: mu={mu}, dist {} vs brute {brute}, floor {floor}", cert.dist));
        }
        worst_margin = worst_margin.min(brute / floor);
    }
    outcome(true, format!("N = 1..100 certified, min Dist/(c/(2 M_N)) = {worst_margin:.3} (>= 1)"))
}

fn stability() -> (Outcome, f64) {
    let heat = power(Kind::SelfAdjoint, 2.0, 400);
    let mut lambdas = vec![0.5];
    lambdas.extend((1..=5).map(|n| select_mu(&heat, n).unwrap().0));
    let big_n = 32;
    let mut worst_rate = f64::NEG_INFINITY;
    let mut worst_c = 0.0f64;
    let mut tb: f64 = 0.0;
    for &l in &lambdas {
        let s = match assemble(&heat, l, big_n) {
            Ok(s) => s,
            Err(e) => return (outcome(false, e.to_string()), tb),
        };
        tb = tb.max(s.tb_residual_max());
        let grid = linear_grid(20.0 / (1.0 + l), 41);
        let cond = s.condition();
        let results: Vec<_> = (0..20u64)
            .into_par_iter()
            .map(|seed| measure_decay(&s, &StateVector::from_real(&random_unit(big_n, seed)), &grid))
            .collect();
        for r in results {
            let d = r.unwrap();
            worst_rate = worst_rate.max(d.rate_hat + l);
            worst_c = worst_c.max(d.c_hat / cond);
        }
    }
    (
        outcome(
            worst_rate <= 1e-6 && worst_c <= 1.0,
            format!(
                "{} syntheses x 20 random states: max rate_hat + lambda = {worst_rate:.3} (<= 1e-6), max C_hat/cond(T) = {worst_c:.3} (<= 1)",
                lambdas.len()
            ),
        ),
        tb,
    )
}

fn null_control() -> (Outcome, f64) {
    let heat = power(Kind::SelfAdjoint, 2.0, 400);
    let schedule = match build_schedule(&heat, 1.0, 3.0, 2.5, 6, 32) {
        Ok(s) => s,
        Err(e) => return (outcome(false, e.to_string()), 0.0),
    };
    let tb = schedule
        .stages
        .iter()
        .map(|s| s.synthesis.tb_residual_max())
        .fold(0.0, f64::max);
    let dim = schedule.stages[0].trunc;
    let mut states = vec![{
        let mut v = vec![0.0; dim];
        v[0] = 1.0;
        v[1] = 1.0;
        v
    }];
    states.extend((0..10u64).map(|seed| random_unit(dim, 100 + seed)));
    let opts = NullControlOptions::default();
    let mut worst_ratio: f64 = 0.0;
    let mut exponents_ok = true;
    let mut control_ok = true;
    let mut first = None;
    for v in &states {
        let r = match run_null_control(&schedule, &StateVector::from_real(v), &opts) {
            Ok(r) => r,
            Err(e) => return (outcome(false, e.to_string()), tb),
        };
        worst_ratio = worst_ratio.max(r.final_ratio);
        exponents_ok &= r.exponents_decreasing_after(2);
        control_ok &= r.control_decreasing_last(3);
        first.get_or_insert(r);
    }
    let r = first.unwrap();
    let exps: Vec<String> = r.stages.iter().map(|s| format!("{:.1}", s.exponent)).collect();
    let us: Vec<String> = r.stages.iter().map(|s| format!("{:.1e}", s.max_u)).collect();
    (
        outcome(
            worst_ratio <= 1e-6 && exponents_ok && control_ok,
            format!(
                "max final ratio over 11 states = {worst_ratio:.2e} (<= 1e-6); stage exponents [{}] decreasing after stage 2: {exponents_ok}; max|u| [{}] decreasing over last 3: {control_ok}",
                exps.join(", "),
                us.join(", ")
            ),
        ),
        tb,
    )
}

fn run_cli(dir: &Path, args: &[&str]) -> (i32, Vec<u8>) {
    // Relative output path so stdout does not depend on the directory.
    let out = Command::new(env!("CARGO_BIN_EXE_backstep"))
        .current_dir(dir)
        .args(["--out", "."])
        .args(args)
        .output()
        .expect("binary runs");
    (out.status.code().unwrap_or(-1), out.stdout)
}

fn determinism() -> Outcome {
    let runs: [&[&str]; 6] = [
        &["spectrum-check", "--n-max", "100"],
        &["cauchy-verify", "--lambda", "1.375,8.5", "--n-grid", "2,8,32"],
        &["synth", "--lambda", "8.5", "--n", "32", "--matrices"],
        &["cost-sweep", "--n-from", "1", "--n-to", "6", "--trunc", "60"],
        &["simulate", "--lambda", "2.1", "--n", "16", "--random", "--seed", "7"],
        &["null-control", "--stages", "3", "--random", "--seed", "5"],
    ];
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut files = 0;
    for args in runs {
        let ra = run_cli(a.path(), args);
        let rb = run_cli(b.path(), args);
        if ra != rb {
            return outcome(false, format!("`{}` differs between runs", args.join(" ")));
        }
    }
    let mut names: Vec<_> = fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    for name in &names {
        let fa = fs::read(a.path().join(name)).unwrap();
        let fb = fs::read(b.path().join(name));
        if fb.ok().as_ref() != Some(&fa) {
            return outcome(false, format!("{} differs between runs", name.to_string_lossy()));
        }
        files += 1;
    }
    outcome(files >= 9, format!("6 subcommands run twice, stdout and {files} output files byte-identical"))
}

fn main() {
    println!("acceptance suite");
    let sweep_start = Instant::now();
    let heat_model = power(Kind::SelfAdjoint, 2.0, 400);
    let skew_model = power(Kind::SkewAdjoint, 2.0, 400);
    let indices: Vec<usize> = (1..=25).collect();
    let sweeps = Sweeps {
        heat: cost_sweep(&heat_model, &indices, 300).expect("heat sweep"),
        skew: cost_sweep(&skew_model, &indices, 300).expect("skew sweep"),
    };
    let sweep_time = sweep_start.elapsed();

    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    results.push((1, "Cauchy inverse oracle equivalence", timed(Some(Duration::from_secs(60)), cauchy_oracle)));
    results.push((2, "J_n = 1", timed(None, j_identity)));
    results.push((3, "gain cross-route agreement", gain_cross_route(&sweeps)));
    let (eig, tb_eig) = eigenstructure();
    let (op, tb_op) = operator_identity();
    let (stab, tb_stab) = stability();
    let null_start = Instant::now();
    let (null, tb_null) = null_control();
    let null_time = null_start.elapsed();
    results.push((4, "TB = B", tb_identity(&sweeps, tb_eig.max(tb_op).max(tb_stab).max(tb_null))));
    results.push((5, "closed-loop eigenstructure", eig));
    results.push((6, "operator identity", op));
    let mut law = cost_law(&sweeps);
    law.detail += &format!(" [sweeps {:.1}s]", sweep_time.as_secs_f64());
    if sweep_time > Duration::from_secs(600) {
        law.passed = false;
    }
    results.push((7, "cost law", law));
    results.push((8, "gain floor", gain_floor(&sweeps)));
    results.push((9, "Dist certification", timed(Some(Duration::from_secs(60)), dist_certification)));
    results.push((10, "closed-loop stability", stab));
    let mut null = null;
    null.detail += &format!(" [{:.1}s]", null_time.as_secs_f64());
    if null_time > Duration::from_secs(300) {
        null.passed = false;
    }
    results.push((11, "null control", null));
    results.push((12, "CLI determinism", timed(None, determinism)));

    results.sort_by_key(|r| r.0);
    let mut failed = 0;
    for (id, name, o) in &results {
        let tag = if o.passed { "PASS" } else { "FAIL" };
        println!("[{tag}] criterion {id:>2} {name}: {}", o.detail);
        failed += usize::from(!o.passed);
    }
    println!("{} passed, {} failed", results.len() - failed, failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
