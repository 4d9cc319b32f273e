//! Argument parsing, config merging and the subcommands.
//!
//! Every option can come from the JSON file given by `--config` (keys in
//! snake_case, e.g. `n_max`, `lambda`); a flag on the command line wins.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use backstep::cauchy::verify_against_oracle;
use backstep::format::fmt_f64;
use backstep::matrix::write_csv;
use backstep::quantitative::{cost_sweep, write_sweep_csv};
use backstep::simulate::{
    build_schedule, linear_grid, measure_decay, propagate, run_null_control, write_trajectory_csv,
    NullControlOptions, StateVector,
};
use backstep::spectrum::{make_spectrum, verify_gaps, ControlLaw, Kind, SpectrumModel};
use backstep::transform::{assemble_with, SynthesisOptions};
use backstep::Complex64;
use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde_json::{Map, Value};

#[derive(Debug, Parser)]
#[command(name = "backstep", version, about = "Backstepping synthesis for diagonal spectral models")]
pub struct Cli {
    /// JSON file with default values for any option.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Directory for output files.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the gap conditions of a spectrum.
    SpectrumCheck {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        n_check: Option<usize>,
    },
    /// Compare the closed-form Cauchy inverse with elimination.
    CauchyVerify {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_delimiter = ',')]
        lambda: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        n_grid: Option<Vec<usize>>,
        #[arg(long)]
        tolerance: Option<f64>,
    },
    /// Assemble T, its inverse and the gains at one damping value.
    Synth {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        synth: SynthArgs,
        /// Also write T.csv and Tinv.csv.
        #[arg(long)]
        matrices: bool,
    },
    /// Norms and gains along the certified damping values.
    CostSweep {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        n_from: Option<usize>,
        #[arg(long)]
        n_to: Option<usize>,
        #[arg(long)]
        trunc: Option<usize>,
    },
    /// Closed-loop trajectory and decay fit.
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        synth: SynthArgs,
        #[command(flatten)]
        state: StateArgs,
        #[arg(long)]
        t_end: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Piecewise-constant feedback schedule towards zero.
    NullControl {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        state: StateArgs,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        stages: Option<usize>,
        #[arg(long)]
        trunc: Option<usize>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        samples: Option<usize>,
    },
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Model file written by `SpectrumModel::to_json`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// heat | skew (also self-adjoint | skew-adjoint).
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub scale: Option<f64>,
    #[arg(long)]
    pub n_max: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Truncation size.
    #[arg(long = "n")]
    pub n: Option<usize>,
    #[arg(long)]
    pub min_dist: Option<f64>,
    #[arg(long)]
    pub gain_floor_exponent: Option<f64>,
}

#[derive(Debug, Args)]
pub struct StateArgs {
    /// JSON array of coefficients (numbers or [re, im] pairs).
    #[arg(long)]
    pub y0: Option<PathBuf>,
    /// Start from a seeded random unit vector.
    #[arg(long)]
    pub random: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Exponent s of the reported D(A^s) norm.
    #[arg(long)]
    pub s_weight: Option<f64>,
}

/// A check that ran and did not pass; exits with code 3.
#[derive(Debug)]
pub struct GuardFailure(pub String);

impl std::fmt::Display for GuardFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for GuardFailure {}

/// 3 for mathematical guards, 2 for everything else.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.downcast_ref::<GuardFailure>().is_some() {
            return 3;
        }
        if let Some(e) = cause.downcast_ref::<backstep::Error>() {
            return if e.is_math_guard() { 3 } else { 2 };
        }
    }
    2
}

struct Config {
    map: Map<String, Value>,
}

impl Config {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self { map: Map::new() });
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        match serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))? {
            Value::Object(map) => Ok(Self { map }),
            _ => bail!("config {} must hold a JSON object", path.display()),
        }
    }

    fn get<T: DeserializeOwned>(&self, key: &str, flag: Option<T>) -> Result<Option<T>> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.map.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => serde_json::from_value(v.clone())
                .map(Some)
                .with_context(|| format!("config key `{key}`")),
        }
    }

    fn or<T: DeserializeOwned>(&self, key: &str, flag: Option<T>, default: T) -> Result<T> {
        Ok(self.get(key, flag)?.unwrap_or(default))
    }

    fn require<T: DeserializeOwned>(&self, key: &str, flag: Option<T>) -> Result<T> {
        self.get(key, flag)?
            .ok_or_else(|| anyhow!("missing `--{}` (or `{key}` in the config)", key.replace('_', "-")))
    }
}

fn positive(name: &str, x: f64) -> Result<f64> {
    if !(x.is_finite() && x > 0.0) {
        bail!("{name} must be positive, got {x}");
    }
    Ok(x)
}

fn parse_kind(s: &str) -> Result<Kind> {
    match s {
        "heat" | "self-adjoint" | "self_adjoint" => Ok(Kind::SelfAdjoint),
        "skew" | "skew-adjoint" | "skew_adjoint" => Ok(Kind::SkewAdjoint),
        other => bail!("unknown kind `{other}` (expected heat or skew)"),
    }
}

fn load_model(cfg: &Config, args: &ModelArgs, need: usize) -> Result<SpectrumModel> {
    if let Some(path) = &args.model {
        return read_model_file(path);
    }
    match cfg.map.get("model") {
        Some(Value::String(path)) => return read_model_file(Path::new(path)),
        Some(v @ Value::Object(_)) => return Ok(SpectrumModel::from_json(&v.to_string())?),
        _ => {}
    }
    let kind = parse_kind(&cfg.or("kind", args.kind.clone(), "heat".to_string())?)?;
    let alpha = cfg.or("alpha", args.alpha, 2.0)?;
    let scale = cfg.or("scale", args.scale, 1.0)?;
    let n_max = cfg.or("n_max", args.n_max, need.max(2))?;
    Ok(make_spectrum(kind, alpha, scale, n_max, ControlLaw::default())?)
}

fn read_model_file(path: &Path) -> Result<SpectrumModel> {
    let text = fs::read_to_string(path).with_context(|| format!("reading model {}", path.display()))?;
    SpectrumModel::from_json(&text).with_context(|| format!("parsing model {}", path.display()))
}

fn out_dir(cfg: &Config, flag: Option<PathBuf>) -> Result<PathBuf> {
    let dir = cfg.or("out", flag, PathBuf::from("."))?;
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn json_pretty<T: serde::Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn read_state(path: &Path) -> Result<Vec<Complex64>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let values: Vec<Value> = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    values
        .iter()
        .map(|v| match v {
            Value::Number(x) => x.as_f64().map(|re| Complex64::new(re, 0.0)),
            Value::Array(p) if p.len() == 2 => Some(Complex64::new(p[0].as_f64()?, p[1].as_f64()?)),
            _ => None,
        })
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| anyhow!("{}: entries must be numbers or [re, im] pairs", path.display()))
}

/// Uniform entries in `[-1, 1]`, normalized.
pub fn random_unit(dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / norm).collect()
}

fn initial_state(cfg: &Config, args: &StateArgs, dim: usize, fallback: Vec<f64>) -> Result<StateVector> {
    let y0 = cfg.get("y0", args.y0.clone())?;
    let random = args.random || cfg.or("random", None, false)?;
    let mut state = if let Some(path) = y0 {
        let coeffs = read_state(&path)?;
        if coeffs.len() != dim {
            return Err(backstep::Error::DimensionMismatch {
                expected: dim,
                got: coeffs.len(),
            })
            .with_context(|| format!("initial state {}", path.display()));
        }
        StateVector::new(&coeffs)
    } else if random {
        StateVector::from_real(&random_unit(dim, cfg.or("seed", args.seed, 0)?))
    } else {
        StateVector::from_real(&fallback)
    };
    if let Some(s) = cfg.get("s_weight", args.s_weight)? {
        state = state.with_weight(s);
    }
    Ok(state)
}

fn synth_options(cfg: &Config, args: &SynthArgs) -> Result<SynthesisOptions> {
    let d = SynthesisOptions::default();
    Ok(SynthesisOptions {
        min_dist: positive("min_dist", cfg.or("min_dist", args.min_dist, d.min_dist)?)?,
        gain_floor_exponent: cfg.or("gain_floor_exponent", args.gain_floor_exponent, d.gain_floor_exponent)?,
        tb_tolerance: d.tb_tolerance,
    })
}

/// Runs one parsed command line; output text goes to `stdout`.
pub fn run(cli: Cli, stdout: &mut dyn std::io::Write) -> Result<()> {
    let cfg = Config::load(cli.config.as_deref())?;
    let dir = out_dir(&cfg, cli.out)?;
    match cli.command {
        Command::SpectrumCheck { model, n_check } => {
            let m = load_model(&cfg, &model, 200)?;
            let n_check = cfg.or("n_check", n_check, m.n_max())?;
            let report = verify_gaps(&m, n_check)?;
            let path = dir.join("gap_report.json");
            write_file(&path, json_pretty(&report)?.as_bytes())?;
            writeln!(
                stdout,
                "gap check over {} modes: step {} pair {} power {} -> {}",
                report.n_check,
                report.step_pass,
                report.pair_pass,
                report.power_pass,
                path.display()
            )?;
            if !report.passed() {
                return Err(GuardFailure("gap conditions fail".into()).into());
            }
        }
        Command::CauchyVerify {
            model,
            lambda,
            n_grid,
            tolerance,
        } => {
            let lambdas: Vec<f64> = cfg.require("lambda", lambda)?;
            let grid: Vec<usize> = cfg.or("n_grid", n_grid, vec![2, 4, 8, 16, 32, 64])?;
            let tol = positive("tolerance", cfg.or("tolerance", tolerance, 1e-8)?)?;
            if lambdas.is_empty() || grid.is_empty() {
                bail!("lambda list and N grid must be nonempty");
            }
            let m = load_model(&cfg, &model, grid.iter().copied().max().unwrap_or(2))?;
            let mut csv = String::from("N,lambda,identity_defect,lu_relative\n");
            let mut worst: f64 = 0.0;
            for &l in &lambdas {
                for &n in &grid {
                    let c = verify_against_oracle(&m, l, n)?;
                    worst = worst.max(c.identity_defect);
                    csv += &format!(
                        "{},{},{},{}\n",
                        n,
                        fmt_f64(l),
                        fmt_f64(c.identity_defect),
                        fmt_f64(c.lu_relative)
                    );
                }
            }
            csv += &format!("# max identity_defect={} tolerance={}\n", fmt_f64(worst), fmt_f64(tol));
            let path = dir.join("cauchy_verify.csv");
            write_file(&path, csv.as_bytes())?;
            writeln!(stdout, "max identity defect {} -> {}", fmt_f64(worst), path.display())?;
            if worst > tol {
                return Err(GuardFailure(format!("identity defect {worst:e} above {tol:e}")).into());
            }
        }
        Command::Synth { model, synth, matrices } => {
            let lambda = positive("lambda", cfg.require("lambda", synth.lambda)?)?;
            let n: usize = cfg.require("n", synth.n)?;
            let m = load_model(&cfg, &model, n)?;
            let s = assemble_with(&m, lambda, n, &synth_options(&cfg, &synth)?)?;
            let text = json_pretty(&s.to_export())?;
            write_file(&dir.join("synthesis.json"), text.as_bytes())?;
            if matrices || cfg.or("matrices", None, false)? {
                let mut buf = Vec::new();
                write_csv(&s.t_matrix(), &mut buf)?;
                write_file(&dir.join("T.csv"), &buf)?;
                buf.clear();
                write_csv(&s.tinv_matrix(), &mut buf)?;
                write_file(&dir.join("Tinv.csv"), &buf)?;
            }
            stdout.write_all(text.as_bytes())?;
        }
        Command::CostSweep {
            model,
            n_from,
            n_to,
            trunc,
        } => {
            let from = cfg.or("n_from", n_from, 1)?;
            let to = cfg.or("n_to", n_to, 25)?;
            let trunc = cfg.or("trunc", trunc, 300)?;
            let indices: Vec<usize> = (from..=to).collect();
            let m = load_model(&cfg, &model, trunc.max(2))?;
            let report = cost_sweep(&m, &indices, trunc)?;
            let mut buf = Vec::new();
            write_sweep_csv(&report, &mut buf)?;
            let path = dir.join("cost_sweep.csv");
            write_file(&path, &buf)?;
            let failed = report.points.iter().filter(|p| p.report.is_none()).count();
            writeln!(
                stdout,
                "{} points ({} flagged) -> {}",
                report.points.len(),
                failed,
                path.display()
            )?;
        }
        Command::Simulate {
            model,
            synth,
            state,
            t_end,
            steps,
        } => {
            let lambda = positive("lambda", cfg.require("lambda", synth.lambda)?)?;
            let n: usize = cfg.require("n", synth.n)?;
            let m = load_model(&cfg, &model, n)?;
            let s = assemble_with(&m, lambda, n, &synth_options(&cfg, &synth)?)?;
            let mut first = vec![0.0; n];
            first[0] = 1.0;
            let y0 = initial_state(&cfg, &state, n, first)?;
            let t_end = positive("t_end", cfg.or("t_end", t_end, 5.0)?)?;
            let grid = linear_grid(t_end, cfg.or("steps", steps, 101)?.max(2));
            let mut csv = String::from("t,norm_H,norm_s,u\n");
            for &t in &grid {
                let y = propagate(&s, &y0, t)?;
                let u = backstep::simulate::control_signal(&s, &y0, t)?;
                let u = if u.im == 0.0 {
                    fmt_f64(u.re)
                } else {
                    backstep::format::fmt_complex(u)
                };
                csv += &format!("{},{},{},{}\n", fmt_f64(t), fmt_f64(y.norm_h()), fmt_f64(y.norm_s(&m)?), u);
            }
            let decay = measure_decay(&s, &y0, &grid)?;
            csv += &format!(
                "# c_hat={} rate_hat={} condition={}\n",
                fmt_f64(decay.c_hat),
                fmt_f64(decay.rate_hat),
                fmt_f64(s.condition())
            );
            write_file(&dir.join("trajectory.csv"), csv.as_bytes())?;
            let summary = serde_json::json!({
                "lambda": lambda,
                "N": n,
                "c_hat": decay.c_hat,
                "rate_hat": decay.rate_hat,
                "condition": s.condition(),
            });
            let text = json_pretty(&summary)?;
            write_file(&dir.join("decay.json"), text.as_bytes())?;
            stdout.write_all(text.as_bytes())?;
        }
        Command::NullControl {
            model,
            state,
            horizon,
            gamma,
            sigma,
            stages,
            trunc,
            epsilon,
            samples,
        } => {
            let horizon = cfg.or("horizon", horizon, 1.0)?;
            let gamma = cfg.or("gamma", gamma, 3.0)?;
            let sigma = cfg.or("sigma", sigma, 2.5)?;
            let stages = cfg.or("stages", stages, 6)?;
            let trunc = cfg.or("trunc", trunc, 32)?;
            let defaults = NullControlOptions::default();
            let opts = NullControlOptions {
                epsilon: positive("epsilon", cfg.or("epsilon", epsilon, defaults.epsilon)?)?,
                samples: cfg.or("samples", samples, defaults.samples)?,
            };
            let need = (trunc as f64).max(4.0 * ((stages as f64).powf(gamma) + 2.0).sqrt().ceil()) as usize;
            let m = load_model(&cfg, &model, need.max(400))?;
            let schedule = build_schedule(&m, horizon, gamma, sigma, stages, trunc)?;
            let dim = schedule.stages[0].trunc;
            let mut fallback = vec![0.0; dim];
            fallback[0] = 1.0;
            if dim > 1 {
                fallback[1] = 1.0;
            }
            let y0 = initial_state(&cfg, &state, dim, fallback)?;
            let report = run_null_control(&schedule, &y0, &opts)?;
            let mut buf = Vec::new();
            write_trajectory_csv(&report, &mut buf)?;
            write_file(&dir.join("null_control.csv"), &buf)?;
            write_file(&dir.join("schedule.json"), json_pretty(&schedule.manifest())?.as_bytes())?;
            for st in &report.stages {
                writeln!(
                    stdout,
                    "stage {} lambda={} delta={} growth={} max|u|={}",
                    st.n,
                    fmt_f64(st.lambda),
                    fmt_f64(st.delta),
                    fmt_f64(st.growth),
                    fmt_f64(st.max_u)
                )?;
            }
            writeln!(stdout, "final ratio {}", fmt_f64(report.final_ratio))?;
            if !report.reached {
                return Err(GuardFailure(format!(
                    "final ratio {:e} above target {:e}",
                    report.final_ratio, report.epsilon
                ))
                .into());
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kinds() {
        assert_eq!(parse_kind("heat").unwrap(), Kind::SelfAdjoint);
        assert_eq!(parse_kind("skew-adjoint").unwrap(), Kind::SkewAdjoint);
        assert!(parse_kind("wave").is_err());
    }

    #[test]
    fn flags_override_config() {
        let mut map = Map::new();
        map.insert("lambda".into(), Value::from(2.0));
        let cfg = Config { map };
        assert_eq!(cfg.or("lambda", Some(3.0), 1.0).unwrap(), 3.0);
        assert_eq!(cfg.or("lambda", None, 1.0).unwrap(), 2.0);
        assert_eq!(cfg.or("n", None, 7usize).unwrap(), 7);
    }

    #[test]
    fn random_states_are_seeded() {
        assert_eq!(random_unit(5, 3), random_unit(5, 3));
        assert_ne!(random_unit(5, 3), random_unit(5, 4));
        let v = random_unit(9, 1);
        assert!((v.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn exit_codes() {
        let guard: anyhow::Error = backstep::Error::Resonance {
            i: 1,
            j: 2,
            gap: 0.0,
            floor: 0.0,
        }
        .into();
        assert_eq!(exit_code(&guard), 3);
        let usage: anyhow::Error = backstep::Error::GrowthOrder(1.0).into();
        assert_eq!(exit_code(&usage.context("loading model")), 2);
        assert_eq!(exit_code(&GuardFailure("x".into()).into()), 3);
    }
}
