//! File formats and the four commands behind the `guided-bridge` binary.
//!
//! # Config file
//!
//! Flat `key = value` lines; `#` starts a comment. Vectors are whitespace or
//! comma separated, matrices separate rows with `;`.
//!
//! | key | used by | meaning |
//! |-----|---------|---------|
//! | `model` | all | registry name (`bm`, `ou`, `2d-bm`, `oscillator`, `double-well`) |
//! | `dim` | all | state dimension for models that take one |
//! | `theta` | simulate, infer | true parameter; default start for inference |
//! | `theta_init` | infer, smooth | starting parameter |
//! | `auxiliary` | infer, smooth | `auto` or `linearization` |
//! | `observations` | infer, smooth | observation CSV (sidecar JSON next to it) |
//! | `t_end`, `n_intervals` | simulate | observation times `0, t_end/n, ..., t_end` |
//! | `obs_matrix`, `obs_noise` | simulate | `L` for every time and `Sigma = obs_noise I` |
//! | `fine_steps` | simulate | Euler steps per interval for the latent path |
//! | `x0` | simulate | initial state |
//! | `x0_mean`, `x0_cov` | infer, smooth | Gaussian prior of the initial state |
//! | `sweeps`, `rho`, `steps_per_segment`, `seed` | infer, smooth | chain settings |
//! | `theta_scale` | infer, smooth | random-walk scales |
//! | `theta_lower`, `theta_upper` | infer, smooth | box of the uniform parameter prior |
//! | `update_theta` | infer, smooth | `never`, `even`, `odd` or `both` |
//! | `burn_in`, `thin` | infer, smooth | post-processing of the trace |
//! | `snapshot_every` | infer | write the full path every this many sweeps |
//! | `noise_param` | infer, smooth | `true` to sample `eps` in `Sigma_i = eps I` |
//! | `eps_init`, `eps_step`, `eps_prior_shape`, `eps_prior_scale` | infer, smooth | its start, step and inverse-gamma prior |
//! | `out` | all | output directory |
//!
//! The output directory can also be set with the `GUIDED_BRIDGE_OUT`
//! environment variable, which overrides the config file but not `--out`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{mean, quantile};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::mcmc::{path_csv, AuxiliaryChoice, ChainConfig, NoiseConfig, Sampler, ThetaUpdate, Trace};
use crate::model::{
    sample_observations, simulate_euler_rng, uniform_grid, DiffusionModel, ModelRegistry, Observation,
    ObservationScheme, StartPrior,
};
use crate::oracle::InverseGamma;
use crate::validate::{run_validation, ValidateOptions, ValidationReport};

pub const OUT_ENV: &str = "GUIDED_BRIDGE_OUT";

/// Parsed `key = value` configuration with command-line overrides applied.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    entries: BTreeMap<String, String>,
    path: PathBuf,
}

/// Command-line flags that override config keys.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub sweeps: Option<usize>,
    pub rho: Option<f64>,
    pub steps_per_segment: Option<usize>,
}

fn parse_err(path: &Path, what: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        what: what.into(),
    }
}

pub fn parse_vector(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| format!("'{t}' is not a number")))
        .collect()
}

pub fn parse_matrix(s: &str) -> std::result::Result<Matrix, String> {
    let rows: Vec<Vec<f64>> = s.split(';').map(parse_vector).collect::<std::result::Result<_, _>>()?;
    let ncols = rows.first().map_or(0, |r| r.len());
    if ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(format!("'{s}' is not a rectangular matrix"));
    }
    Ok(Matrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

impl RunConfig {
    pub fn parse(text: &str, path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let mut entries = BTreeMap::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| parse_err(&path, format!("line {}: expected key = value", no + 1)))?;
            entries.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(RunConfig { entries, path })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.seed {
            self.set("seed", v);
        }
        if let Some(v) = o.sweeps {
            self.set("sweeps", v);
        }
        if let Some(v) = o.rho {
            self.set("rho", v);
        }
        if let Some(v) = o.steps_per_segment {
            self.set("steps_per_segment", v);
        }
        if let Some(v) = &o.out {
            self.set("out", v.display());
        } else if let Ok(v) = std::env::var(OUT_ENV) {
            self.set("out", v);
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::config(format!("missing key '{key}' in {}", self.path.display())))
    }

    fn typed<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| parse_err(&self.path, format!("{key}: cannot parse '{v}'"))),
        }
    }

    fn vector(&self, key: &str) -> Result<Option<Vec<f64>>> {
        self.get(key)
            .map(|v| parse_vector(v).map_err(|e| parse_err(&self.path, format!("{key}: {e}"))))
            .transpose()
    }

    fn matrix(&self, key: &str) -> Result<Option<Matrix>> {
        self.get(key)
            .map(|v| parse_matrix(v).map_err(|e| parse_err(&self.path, format!("{key}: {e}"))))
            .transpose()
    }

    pub fn out_dir(&self) -> PathBuf {
        let raw = PathBuf::from(self.get("out").unwrap_or("out"));
        if raw.is_relative() {
            self.path.parent().map_or(raw.clone(), |p| p.join(&raw))
        } else {
            raw
        }
    }

    fn resolve(&self, file: &str) -> PathBuf {
        let p = PathBuf::from(file);
        if p.is_relative() {
            self.path.parent().map_or(p.clone(), |d| d.join(&p))
        } else {
            p
        }
    }

    pub fn model(&self) -> Result<DiffusionModel> {
        let dim = self.get("dim").map(|_| self.typed("dim", 1usize)).transpose()?;
        ModelRegistry::with_builtins().build(self.require("model")?, dim)
    }

    pub fn seed(&self) -> Result<u64> {
        self.typed("seed", 0u64)
    }
}

/// Per-time observation design stored next to the CSV.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct Sidecar {
    dim: usize,
    observations: Vec<SidecarEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct SidecarEntry {
    time: f64,
    l: Vec<Vec<f64>>,
    sigma: Vec<Vec<f64>>,
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn from_rows(r: &[Vec<f64>], cols: usize) -> Matrix {
    Matrix::from_fn(r.len(), cols, |i, j| r[i][j])
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

/// Write `time,v1..vm` rows and the JSON sidecar with `L_i`, `Sigma_i`.
/// Rows with fewer observed components leave trailing cells empty.
pub fn write_observations(csv: &Path, scheme: &ObservationScheme) -> Result<()> {
    let m = scheme.observations.iter().map(|o| o.dim()).max().unwrap_or(0);
    let mut s = String::from("time");
    for j in 1..=m {
        write!(s, ",v{j}").unwrap();
    }
    s.push('\n');
    for (t, o) in scheme.times.iter().zip(&scheme.observations) {
        write!(s, "{t}").unwrap();
        for j in 0..m {
            s.push(',');
            if j < o.dim() {
                write!(s, "{}", o.v[j]).unwrap();
            }
        }
        s.push('\n');
    }
    std::fs::write(csv, s).map_err(|e| Error::io(csv, e))?;
    let dim = scheme.observations.first().map_or(0, |o| o.l.ncols());
    let side = Sidecar {
        dim,
        observations: scheme
            .times
            .iter()
            .zip(&scheme.observations)
            .map(|(t, o)| SidecarEntry {
                time: *t,
                l: rows(&o.l),
                sigma: rows(&o.sigma),
            })
            .collect(),
    };
    let sp = sidecar_path(csv);
    std::fs::write(&sp, serde_json::to_string_pretty(&side).expect("sidecar serializes"))
        .map_err(|e| Error::io(&sp, e))
}

pub fn read_observations(csv: &Path) -> Result<ObservationScheme> {
    let text = std::fs::read_to_string(csv).map_err(|e| Error::io(csv, e))?;
    let sp = sidecar_path(csv);
    let side_text = std::fs::read_to_string(&sp).map_err(|e| Error::io(&sp, e))?;
    let side: Sidecar = serde_json::from_str(&side_text).map_err(|e| parse_err(&sp, e.to_string()))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| parse_err(csv, "empty file"))?;
    if !header.starts_with("time") {
        return Err(parse_err(csv, "header must start with 'time'"));
    }
    let mut times = Vec::new();
    let mut observations = Vec::new();
    for (i, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        let t: f64 = cells[0]
            .parse()
            .map_err(|_| parse_err(csv, format!("row {}: bad time '{}'", i + 1, cells[0])))?;
        let entry = side
            .observations
            .get(i)
            .ok_or_else(|| parse_err(&sp, format!("no design for row {}", i + 1)))?;
        if entry.time != t {
            return Err(parse_err(&sp, format!("row {} has time {t} but the sidecar says {}", i + 1, entry.time)));
        }
        let l = from_rows(&entry.l, side.dim);
        let m = l.nrows();
        let v = cells[1..]
            .iter()
            .take(m)
            .map(|c| c.parse::<f64>().map_err(|_| parse_err(csv, format!("row {}: bad value '{c}'", i + 1))))
            .collect::<Result<Vec<f64>>>()?;
        if v.len() != m {
            return Err(parse_err(csv, format!("row {} has {} values, expected {m}", i + 1, v.len())));
        }
        times.push(t);
        observations.push(Observation::new(l, from_rows(&entry.sigma, m), Vector::from_vec(v))?);
    }
    ObservationScheme::new(times, observations, side.dim)
}

/// Files written by [`cmd_simulate`].
#[derive(Debug, Clone)]
pub struct SimulateOutput {
    pub observations: PathBuf,
    pub truth: PathBuf,
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Simulate the latent path on a fine grid and observe it at equally spaced times.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<SimulateOutput> {
    let model = cfg.model()?;
    let d = model.dim_state();
    let theta = cfg.vector("theta")?.unwrap_or_default();
    model.check_theta(&theta)?;
    let t_end: f64 = cfg.typed("t_end", 1.0)?;
    let n: usize = cfg.typed("n_intervals", 10)?;
    let fine: usize = cfg.typed("fine_steps", 100)?;
    if n == 0 || fine == 0 || !(t_end > 0.0) {
        return Err(Error::config("need n_intervals >= 1, fine_steps >= 1 and t_end > 0"));
    }
    let x0 = match cfg.vector("x0")? {
        Some(v) if v.len() == d => Vector::from_vec(v),
        Some(_) => return Err(Error::config("x0 has the wrong dimension")),
        None => Vector::zeros(d),
    };
    let l = cfg.matrix("obs_matrix")?.unwrap_or_else(|| Matrix::identity(d, d));
    let noise: f64 = cfg.typed("obs_noise", 0.0)?;
    let times = uniform_grid(0.0, t_end, n);
    let mut grid = vec![0.0];
    for w in times.windows(2) {
        grid.extend(uniform_grid(w[0], w[1], fine).into_iter().skip(1));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed()?);
    let truth = simulate_euler_rng(&model, &theta, &x0, &grid, &mut rng)?;
    let m = l.nrows();
    let design = Observation::new(l, Matrix::identity(m, m) * noise, Vector::zeros(m))?;
    let scheme = ObservationScheme::new(times.clone(), vec![design; times.len()], d)?;
    let values = sample_observations(&truth, &scheme, &mut rng)?;
    let scheme = scheme.with_values(values)?;
    let dir = cfg.out_dir();
    ensure_dir(&dir)?;
    let obs_path = dir.join("observations.csv");
    write_observations(&obs_path, &scheme)?;
    let truth_path = dir.join("truth.csv");
    std::fs::write(&truth_path, path_csv(&truth)).map_err(|e| Error::io(&truth_path, e))?;
    Ok(SimulateOutput {
        observations: obs_path,
        truth: truth_path,
    })
}

/// Sampler assembled from a config.
pub fn build_sampler(cfg: &RunConfig, default_update: ThetaUpdate) -> Result<Sampler> {
    let model = cfg.model()?;
    let d = model.dim_state();
    let scheme = read_observations(&cfg.resolve(cfg.require("observations")?))?;
    let theta_init = match cfg.vector("theta_init")? {
        Some(v) => v,
        None => cfg.vector("theta")?.unwrap_or_default(),
    };
    let p = theta_init.len();
    let mut config = ChainConfig::new(theta_init);
    config.rho = cfg.typed("rho", 0.5)?;
    config.steps_per_segment = cfg.typed("steps_per_segment", 50)?;
    config.n_sweeps = cfg.typed("sweeps", 1000)?;
    config.seed = cfg.seed()?;
    config.snapshot_every = cfg.typed("snapshot_every", 0)?;
    if let Some(s) = cfg.vector("theta_scale")? {
        config.theta_proposal = s;
    }
    let lower = cfg.vector("theta_lower")?.unwrap_or_else(|| vec![f64::NEG_INFINITY; p]);
    let upper = cfg.vector("theta_upper")?.unwrap_or_else(|| vec![f64::INFINITY; p]);
    if lower.len() != p || upper.len() != p {
        return Err(Error::config("theta_lower/theta_upper need one bound per parameter"));
    }
    config = config.with_prior(move |th| {
        let inside = th.iter().zip(lower.iter().zip(&upper)).all(|(t, (lo, hi))| t > lo && t < hi);
        if inside {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    });
    config.update_theta_in = match cfg.get("update_theta") {
        None => default_update,
        Some("never") => ThetaUpdate::Never,
        Some("even") => ThetaUpdate::Even,
        Some("odd") => ThetaUpdate::Odd,
        Some("both") => ThetaUpdate::Both,
        Some(other) => return Err(Error::config(format!("update_theta: unknown value '{other}'"))),
    };
    if p == 0 {
        config.update_theta_in = ThetaUpdate::Never;
    }
    if cfg.typed("noise_param", false)? {
        let ig = InverseGamma {
            alpha: cfg.typed("eps_prior_shape", 2.0)?,
            beta: cfg.typed("eps_prior_scale", 0.1)?,
        };
        config.noise = Some(NoiseConfig {
            init: cfg.typed("eps_init", 0.1)?,
            step: cfg.typed("eps_step", 0.02)?,
            log_prior: Arc::new(move |e| ig.log_density(e)),
        });
    }
    let auxiliary = match cfg.get("auxiliary").unwrap_or("auto") {
        "auto" => AuxiliaryChoice::Auto,
        "linearization" => AuxiliaryChoice::Linearization,
        other => return Err(Error::config(format!("auxiliary: unknown value '{other}'"))),
    };
    let prior = StartPrior::new(
        cfg.vector("x0_mean")?.map_or_else(|| Vector::zeros(d), Vector::from_vec),
        cfg.matrix("x0_cov")?.unwrap_or_else(|| Matrix::identity(d, d)),
    )?;
    Sampler::new(model, auxiliary, scheme, prior, config)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Interval {
    pub mean: Vec<f64>,
    pub q025: Vec<f64>,
    pub q975: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Summary {
    pub sweeps: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub draws: usize,
    pub theta: Option<Interval>,
    pub eps: Option<Interval>,
    pub acc_even: f64,
    pub acc_odd: f64,
    pub acc_theta: Option<f64>,
    pub kernel_failures: usize,
}

fn interval(draws: &[Vec<f64>]) -> Option<Interval> {
    let p = draws.first()?.len();
    if p == 0 {
        return None;
    }
    let col = |j: usize| draws.iter().map(|d| d[j]).collect::<Vec<_>>();
    Some(Interval {
        mean: (0..p).map(|j| mean(&col(j))).collect(),
        q025: (0..p).map(|j| quantile(&col(j), 0.025)).collect(),
        q975: (0..p).map(|j| quantile(&col(j), 0.975)).collect(),
    })
}

pub fn summarize(trace: &Trace, burn_in: usize, thin: usize) -> Summary {
    let thin = thin.max(1);
    let kept: Vec<_> = trace
        .records
        .iter()
        .filter(|r| trace.records.len() == 1 || (r.sweep > burn_in && (r.sweep - burn_in) % thin == 0))
        .collect();
    let theta: Vec<Vec<f64>> = kept.iter().map(|r| r.theta.clone()).collect();
    let eps: Vec<Vec<f64>> = kept.iter().map(|r| r.eps.clone()).collect();
    let (acc_even, acc_odd, acc_theta) = trace.mean_acceptance();
    Summary {
        sweeps: trace.records.len() - 1,
        burn_in,
        thin,
        draws: kept.len(),
        theta: interval(&theta),
        eps: interval(&eps),
        acc_even,
        acc_odd,
        acc_theta,
        kernel_failures: trace.kernel_failures,
    }
}

/// Files written by [`cmd_infer`].
#[derive(Debug, Clone)]
pub struct InferOutput {
    pub trace: PathBuf,
    pub summary: PathBuf,
    pub summary_value: Summary,
}

/// Run the chain and write `trace.jsonl`, `summary.json` and path snapshots.
pub fn cmd_infer(cfg: &RunConfig) -> Result<InferOutput> {
    let sampler = build_sampler(cfg, ThetaUpdate::Even)?;
    let trace = sampler.run()?;
    let dir = cfg.out_dir();
    ensure_dir(&dir)?;
    let trace_path = dir.join("trace.jsonl");
    trace.write_jsonl(&trace_path)?;
    if !trace.snapshots.is_empty() {
        let snap_dir = dir.join("paths");
        ensure_dir(&snap_dir)?;
        for s in &trace.snapshots {
            let p = snap_dir.join(format!("sweep_{:06}.csv", s.sweep));
            std::fs::write(&p, path_csv(&s.path)).map_err(|e| Error::io(&p, e))?;
        }
    }
    let summary = summarize(&trace, cfg.typed("burn_in", 0)?, cfg.typed("thin", 1)?);
    let summary_path = dir.join("summary.json");
    std::fs::write(&summary_path, serde_json::to_string_pretty(&summary).expect("summary serializes"))
        .map_err(|e| Error::io(&summary_path, e))?;
    Ok(InferOutput {
        trace: trace_path,
        summary: summary_path,
        summary_value: summary,
    })
}

/// Pointwise posterior summaries of the latent path.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedPath {
    pub grid: Vec<f64>,
    /// `[node][component]`.
    pub mean: Vec<Vec<f64>>,
    pub lower: Vec<Vec<f64>>,
    pub upper: Vec<Vec<f64>>,
    pub draws: usize,
}

impl SmoothedPath {
    pub fn to_csv(&self) -> String {
        let d = self.mean.first().map_or(0, |m| m.len());
        let mut s = String::from("time");
        for j in 1..=d {
            write!(s, ",mean_x{j},lower_x{j},upper_x{j}").unwrap();
        }
        s.push('\n');
        for k in 0..self.grid.len() {
            write!(s, "{}", self.grid[k]).unwrap();
            for j in 0..d {
                write!(s, ",{},{},{}", self.mean[k][j], self.lower[k][j], self.upper[k][j]).unwrap();
            }
            s.push('\n');
        }
        s
    }
}

/// Run the sampler and collect pointwise mean and central 95% bands of the
/// path from sweeps after `burn_in`, every `thin`-th.
pub fn smooth(sampler: &Sampler, burn_in: usize, thin: usize) -> Result<SmoothedPath> {
    let thin = thin.max(1);
    let mut samples: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut grid = Vec::new();
    sampler.run_with(|state, rec| {
        if rec.sweep > burn_in && (rec.sweep - burn_in) % thin == 0 {
            let path = state.full_path();
            if samples.is_empty() {
                grid = path.grid.clone();
                samples = vec![vec![Vec::new(); path.values[0].len()]; path.len()];
            }
            for (k, x) in path.values.iter().enumerate() {
                for (j, v) in x.iter().enumerate() {
                    samples[k][j].push(*v);
                }
            }
        }
    })?;
    if samples.is_empty() {
        return Err(Error::config("no sweeps left after burn-in"));
    }
    let draws = samples[0][0].len();
    let summarize_node = |f: &dyn Fn(&[f64]) -> f64| samples.iter().map(|node| node.iter().map(|c| f(c)).collect()).collect();
    Ok(SmoothedPath {
        grid,
        mean: summarize_node(&|c| mean(c)),
        lower: summarize_node(&|c| quantile(c, 0.025)),
        upper: summarize_node(&|c| quantile(c, 0.975)),
        draws,
    })
}

/// Run the chain and write `smooth.csv` with pointwise means and 95% bands.
pub fn cmd_smooth(cfg: &RunConfig) -> Result<(PathBuf, SmoothedPath)> {
    let sampler = build_sampler(cfg, ThetaUpdate::Never)?;
    let burn_in = cfg.typed("burn_in", sampler.config().n_sweeps / 5)?;
    let smoothed = smooth(&sampler, burn_in, cfg.typed("thin", 1)?)?;
    let dir = cfg.out_dir();
    ensure_dir(&dir)?;
    let p = dir.join("smooth.csv");
    std::fs::write(&p, smoothed.to_csv()).map_err(|e| Error::io(&p, e))?;
    Ok((p, smoothed))
}

pub fn cmd_validate(opts: &ValidateOptions) -> Result<ValidationReport> {
    run_validation(opts)
}
