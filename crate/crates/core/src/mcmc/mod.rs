//! Data-augmentation sampler in innovation coordinates.
//!
//! The latent path over `[t_0, t_n]` is stored as one segment per observation
//! interval. A sweep alternates two passes over blocks of consecutive intervals:
//!
//! - even pass: interior blocks `(t_{2i-2}, t_{2i-1}, t_{2i})`, plus an end
//!   block on the last interval when `n` is odd;
//! - odd pass: the start block `[t_0, t_1]` (which also redraws `X_0`), interior
//!   blocks `(t_{2i-1}, t_{2i}, t_{2i+1})`, plus an end block when `n` is even.
//!
//! Within a pass the blocks share no free states, so they are updated in
//! parallel. Each block update refreshes the block's innovations by
//! Crank–Nicolson and accepts with the ratio of path weights. The parameter is
//! updated with the innovations of one pass held fixed, which removes the
//! dependence between parameters in the dispersion and the quadratic variation
//! of the path.

mod trace;

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use trace::{path_csv, Snapshot, SweepRecord, Trace};

use crate::bridge::{acceptance_factors, forward_guided_from, inverse_innovation, log_psi, InnovationSegment};
use crate::error::{Error, Result};
use crate::kernel::{start_posterior, GuidedKernel, SegmentSpec};
use crate::linalg::{cholesky, log_normal_chol, psd_sqrt, standard_normal, Matrix, Vector};
use crate::model::{uniform_grid, DiffusionModel, LinearAuxiliary, Observation, ObservationScheme, PathSegment, StartPrior};

pub type LogDensity = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type ScalarLogDensity = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// How the linear auxiliary process of each block is chosen.
#[derive(Debug, Clone)]
pub enum AuxiliaryChoice {
    /// Zero drift and constant dispersion `sigma(theta, T, x_T)` at the block's
    /// right anchor (left anchor on end blocks).
    Auto,
    /// The model's own linearization.
    Linearization,
    Fixed(LinearAuxiliary),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parity {
    Even,
    Odd,
}

/// Passes after which the parameter is updated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThetaUpdate {
    Never,
    Even,
    Odd,
    Both,
}

impl ThetaUpdate {
    fn includes(self, p: Parity) -> bool {
        matches!(
            (self, p),
            (ThetaUpdate::Both, _) | (ThetaUpdate::Even, Parity::Even) | (ThetaUpdate::Odd, Parity::Odd)
        )
    }
}

/// Observation noise `Sigma_i = eps I` with `eps` unknown.
#[derive(Clone)]
pub struct NoiseConfig {
    pub init: f64,
    /// Random-walk step for `eps`.
    pub step: f64,
    pub log_prior: ScalarLogDensity,
}

impl fmt::Debug for NoiseConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NoiseConfig")
            .field("init", &self.init)
            .field("step", &self.step)
            .finish_non_exhaustive()
    }
}

#[derive(Clone)]
pub struct ChainConfig {
    /// Crank–Nicolson memory in `[0, 1)`.
    pub rho: f64,
    /// Euler steps per observation interval.
    pub steps_per_segment: usize,
    pub theta_init: Vec<f64>,
    /// Random-walk scale per parameter component; zero keeps a component fixed.
    pub theta_proposal: Vec<f64>,
    /// Log prior density of the parameter (`-inf` outside its support).
    pub prior: LogDensity,
    pub n_sweeps: usize,
    pub seed: u64,
    pub update_theta_in: ThetaUpdate,
    pub noise: Option<NoiseConfig>,
    /// Record the full path every this many sweeps (0: never).
    pub snapshot_every: usize,
    /// Attempts per interval when initial proposals fail.
    pub init_retries: usize,
}

impl fmt::Debug for ChainConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ChainConfig")
            .field("rho", &self.rho)
            .field("steps_per_segment", &self.steps_per_segment)
            .field("theta_init", &self.theta_init)
            .field("theta_proposal", &self.theta_proposal)
            .field("n_sweeps", &self.n_sweeps)
            .field("seed", &self.seed)
            .field("update_theta_in", &self.update_theta_in)
            .field("noise", &self.noise)
            .field("snapshot_every", &self.snapshot_every)
            .finish_non_exhaustive()
    }
}

impl ChainConfig {
    /// Defaults: `rho = 0.5`, 50 steps per interval, 1000 sweeps, flat prior,
    /// parameter updated after the even pass with step 0.1.
    pub fn new(theta_init: Vec<f64>) -> Self {
        let p = theta_init.len();
        ChainConfig {
            rho: 0.5,
            steps_per_segment: 50,
            theta_init,
            theta_proposal: vec![0.1; p],
            prior: Arc::new(|_| 0.0),
            n_sweeps: 1000,
            seed: 0,
            update_theta_in: ThetaUpdate::Even,
            noise: None,
            snapshot_every: 0,
            init_retries: 100,
        }
    }

    pub fn with_prior(mut self, prior: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        self.prior = Arc::new(prior);
        self
    }

    pub fn validate(&self, model: &DiffusionModel) -> Result<()> {
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::config(format!("rho must lie in [0, 1), got {}", self.rho)));
        }
        if self.steps_per_segment < 2 {
            return Err(Error::config("steps_per_segment must be at least 2"));
        }
        model.check_theta(&self.theta_init)?;
        if self.theta_proposal.len() != self.theta_init.len() {
            return Err(Error::config("theta_proposal needs one scale per parameter"));
        }
        if self.theta_proposal.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::config("proposal scales must be finite and non-negative"));
        }
        if !(self.prior)(&self.theta_init).is_finite() {
            return Err(Error::config("the prior vanishes at theta_init"));
        }
        if let Some(nc) = &self.noise {
            if !(nc.init > 0.0 && nc.step >= 0.0) {
                return Err(Error::config("noise parameter needs init > 0 and step >= 0"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub theta: Vec<f64>,
    /// One segment per observation interval; neighbours share their boundary node.
    pub segments: Vec<PathSegment>,
    pub eps: Option<f64>,
    pub sweep_index: usize,
}

impl ChainState {
    pub fn full_path(&self) -> PathSegment {
        let parts: Vec<&PathSegment> = self.segments.iter().collect();
        PathSegment::join(&parts)
    }

    /// State at observation time `t_i`.
    pub fn state_at_obs(&self, i: usize) -> &Vector {
        if i == 0 {
            self.segments[0].first()
        } else {
            self.segments[i - 1].last()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    /// Interval `[t_0, t_1]` together with `X_0`.
    Start,
    /// Intervals `[t_a, t_{a+1}]` and `[t_{a+1}, t_{a+2}]` with the noisy observation at `t_{a+1}`.
    Interior { left: usize },
    /// Last interval, conditioned on the final observation.
    End,
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Block::Start => write!(f, "start block"),
            Block::Interior { left } => write!(f, "block ({left}, {}, {})", left + 1, left + 2),
            Block::End => write!(f, "end block"),
        }
    }
}

// stream tags of the per-step random number generators
const TAG_INIT: u64 = 0;
const TAG_EVEN: u64 = 1;
const TAG_THETA_EVEN: u64 = 2;
const TAG_ODD: u64 = 3;
const TAG_THETA_ODD: u64 = 4;
const TAG_NOISE: u64 = 5;

/// Sampler over a fixed model, data set and configuration.
#[derive(Debug, Clone)]
pub struct Sampler {
    model: DiffusionModel,
    auxiliary: AuxiliaryChoice,
    scheme: ObservationScheme,
    prior_x0: StartPrior,
    config: ChainConfig,
    grids: Vec<Vec<f64>>,
}

impl Sampler {
    pub fn new(
        model: DiffusionModel,
        auxiliary: AuxiliaryChoice,
        scheme: ObservationScheme,
        prior_x0: StartPrior,
        config: ChainConfig,
    ) -> Result<Self> {
        config.validate(&model)?;
        let d = model.dim_state();
        if scheme.intervals() < 2 {
            return Err(Error::config("the sampler needs at least three observation times"));
        }
        if model.dim_noise() != d {
            return Err(Error::config("innovation updates need a square dispersion (d' = d)"));
        }
        for o in &scheme.observations {
            o.validate(Some(d))?;
        }
        if prior_x0.mean.len() != d || prior_x0.cov.shape() != (d, d) {
            return Err(Error::config("start prior has the wrong dimension"));
        }
        if let AuxiliaryChoice::Fixed(aux) = &auxiliary {
            if aux.dim() != d {
                return Err(Error::config("auxiliary process has the wrong dimension"));
            }
        }
        let grids = scheme
            .times
            .windows(2)
            .map(|w| uniform_grid(w[0], w[1], config.steps_per_segment))
            .collect();
        Ok(Sampler {
            model,
            auxiliary,
            scheme,
            prior_x0,
            config,
            grids,
        })
    }

    pub fn config(&self) -> &ChainConfig {
        &self.config
    }

    pub fn model(&self) -> &DiffusionModel {
        &self.model
    }

    pub fn scheme(&self) -> &ObservationScheme {
        &self.scheme
    }

    pub fn n_intervals(&self) -> usize {
        self.grids.len()
    }

    pub fn grid(&self, interval: usize) -> &[f64] {
        &self.grids[interval]
    }

    fn rng(&self, sweep: usize, tag: u64, index: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(((sweep as u64) << 24) ^ (tag << 20) ^ index as u64);
        rng
    }

    pub fn blocks(&self, parity: Parity) -> Vec<Block> {
        let n = self.n_intervals();
        let mut out = Vec::new();
        match parity {
            Parity::Even => {
                out.extend((1..=n / 2).map(|i| Block::Interior { left: 2 * i - 2 }));
                if n % 2 == 1 {
                    out.push(Block::End);
                }
            }
            Parity::Odd => {
                out.push(Block::Start);
                out.extend((1..).map(|i| 2 * i - 1).take_while(|a| a + 2 <= n).map(|left| Block::Interior { left }));
                if n % 2 == 0 {
                    out.push(Block::End);
                }
            }
        }
        out
    }

    fn intervals_of(&self, block: Block) -> std::ops::Range<usize> {
        match block {
            Block::Start => 0..1,
            Block::Interior { left } => left..left + 2,
            Block::End => self.n_intervals() - 1..self.n_intervals(),
        }
    }

    /// Observation `i` with the current noise parameter applied.
    pub fn observation(&self, i: usize, eps: Option<f64>) -> Observation {
        let o = &self.scheme.observations[i];
        match eps {
            Some(e) => o.with_noise(Matrix::identity(o.dim(), o.dim()) * e),
            None => o.clone(),
        }
    }

    pub fn auxiliary_for(&self, theta: &[f64], spec: &SegmentSpec) -> Result<LinearAuxiliary> {
        match &self.auxiliary {
            AuxiliaryChoice::Fixed(a) => Ok(a.clone()),
            AuxiliaryChoice::Linearization => self
                .model
                .linearization(theta)
                .unwrap_or_else(|| Err(Error::config(format!("model '{}' has no linearization", self.model.name())))),
            AuxiliaryChoice::Auto => {
                let x = match &spec.right {
                    Some(x) => x,
                    None => spec.left_state().expect("end segments start from a state"),
                };
                let sigma = self.model.dispersion(theta, spec.t_right, x);
                let d = self.model.dim_state();
                LinearAuxiliary::constant(Vector::zeros(d), Matrix::zeros(d, d), sigma)
                    .map_err(|_| Error::kernel(spec.t_right, "dispersion at the anchor is degenerate"))
            }
        }
    }

    pub fn block_spec(&self, block: Block, segments: &[PathSegment], eps: Option<f64>) -> Result<SegmentSpec> {
        let times = &self.scheme.times;
        let n = self.n_intervals();
        match block {
            Block::Start => SegmentSpec::start(
                times[0],
                self.prior_x0.clone(),
                self.observation(0, eps),
                times[1],
                segments[0].last().clone(),
            ),
            Block::Interior { left } => SegmentSpec::interior(
                times[left],
                segments[left].first().clone(),
                times[left + 1],
                self.observation(left + 1, eps),
                times[left + 2],
                segments[left + 1].last().clone(),
            ),
            Block::End => SegmentSpec::end(
                times[n - 1],
                segments[n - 1].first().clone(),
                times[n],
                self.observation(n, eps),
            ),
        }
    }

    fn block_grid(&self, block: Block) -> Vec<f64> {
        let mut g = Vec::new();
        for (j, i) in self.intervals_of(block).enumerate() {
            g.extend_from_slice(&self.grids[i][usize::from(j > 0)..]);
        }
        g
    }

    pub fn block_kernel(&self, theta: &[f64], block: Block, segments: &[PathSegment], eps: Option<f64>) -> Result<GuidedKernel> {
        let spec = self.block_spec(block, segments, eps)?;
        let aux = self.auxiliary_for(theta, &spec)?;
        GuidedKernel::build(spec, aux, self.block_grid(block))
    }

    pub fn block_path(&self, block: Block, segments: &[PathSegment]) -> PathSegment {
        let parts: Vec<&PathSegment> = segments[self.intervals_of(block)].iter().collect();
        PathSegment::join(&parts)
    }

    fn split_block_path(&self, block: Block, path: PathSegment) -> Vec<PathSegment> {
        match block {
            Block::Interior { left } => path.split_at_nodes(&[self.grids[left].len() - 1]),
            _ => vec![path],
        }
    }

    /// Log of the block's share of the target in innovation coordinates:
    /// `log p~(t_left, x_left) + log q/q~ + log Psi`.
    pub fn block_log_weight(&self, theta: &[f64], kernel: &GuidedKernel, path: &PathSegment) -> Result<f64> {
        let f = acceptance_factors(kernel, path, None)?;
        let psi = log_psi(&self.model, theta, kernel, path)?;
        Ok(f.log_ptilde + f.log_obs_ratio() + psi)
    }

    pub fn init_chain(&self) -> Result<ChainState> {
        let theta = self.config.theta_init.clone();
        let eps = self.config.noise.as_ref().map(|n| n.init);
        let mut rng = self.rng(0, TAG_INIT, 0);
        let o0 = self.observation(0, eps);
        let post = start_posterior(&self.prior_x0, &o0.l, &o0.sigma, &o0.v)?;
        let mut x = post.sample(&mut rng);
        let mut segments = Vec::with_capacity(self.n_intervals());
        let times = &self.scheme.times;
        for i in 0..self.n_intervals() {
            let spec = SegmentSpec::end(times[i], x.clone(), times[i + 1], self.observation(i + 1, eps))?;
            let aux = self.auxiliary_for(&theta, &spec)?;
            let kernel = GuidedKernel::build(spec, aux, self.grids[i].clone())
                .map_err(|e| e.in_chain(0, format!("initial interval {i}")))?;
            let mut attempt = 0;
            let path = loop {
                let z = InnovationSegment::fresh(&self.grids[i], self.model.dim_noise(), &mut rng);
                match forward_guided_from(&self.model, &theta, &kernel, &x, &z) {
                    Ok(p) => break p,
                    Err(e) if e.rejects_proposal() && attempt + 1 < self.config.init_retries => attempt += 1,
                    Err(e) => return Err(e.in_chain(0, format!("initial interval {i}"))),
                }
            };
            x = path.last().clone();
            segments.push(path);
        }
        Ok(ChainState {
            theta,
            segments,
            eps,
            sweep_index: 0,
        })
    }

    /// One Metropolis–Hastings update of a block. Returns the new block path if accepted.
    pub fn update_block<R: Rng + ?Sized>(
        &self,
        state: &ChainState,
        block: Block,
        rng: &mut R,
    ) -> Result<Option<PathSegment>> {
        let theta = &state.theta;
        let kernel = self.block_kernel(theta, block, &state.segments, state.eps)?;
        let path = self.block_path(block, &state.segments);
        let current = self.block_log_weight(theta, &kernel, &path)?;
        let z = inverse_innovation(&self.model, theta, &kernel, &path)?;
        let rho = self.config.rho;
        let z_new = z.pcn(rho, rng);
        let x0_new = match block {
            Block::Start => {
                let o = &kernel.spec().obs;
                let post = start_posterior(&self.prior_x0, &o.l, &o.sigma, &o.v)?;
                let xi = standard_normal(rng, post.dim());
                &post.mean + (path.first() - &post.mean) * rho.sqrt() + psd_sqrt(&post.cov) * xi * (1.0 - rho).sqrt()
            }
            _ => path.first().clone(),
        };
        let proposal = forward_guided_from(&self.model, theta, &kernel, &x0_new, &z_new)
            .and_then(|p| Ok((self.block_log_weight(theta, &kernel, &p)?, p)));
        let u: f64 = rng.random();
        match proposal {
            Ok((w, p)) => Ok((u.ln() < w - current).then_some(p)),
            Err(e) if e.rejects_proposal() => Ok(None),
            Err(e) => Err(e),
        }
    }

    /// Update every block of one pass; returns the fraction accepted.
    pub fn update_blocks(&self, state: &mut ChainState, parity: Parity) -> Result<f64> {
        let tag = match parity {
            Parity::Even => TAG_EVEN,
            Parity::Odd => TAG_ODD,
        };
        let blocks = self.blocks(parity);
        let sweep = state.sweep_index;
        let snapshot: &ChainState = state;
        let results: Vec<Result<Option<PathSegment>>> = blocks
            .par_iter()
            .enumerate()
            .map(|(j, &b)| {
                let mut rng = self.rng(sweep, tag, j);
                self.update_block(snapshot, b, &mut rng).map_err(|e| e.in_chain(sweep, b.to_string()))
            })
            .collect();
        let mut accepted = 0;
        for (b, r) in blocks.iter().zip(results) {
            if let Some(p) = r? {
                accepted += 1;
                for (i, seg) in self.intervals_of(*b).zip(self.split_block_path(*b, p)) {
                    state.segments[i] = seg;
                }
            }
        }
        Ok(accepted as f64 / blocks.len() as f64)
    }

    pub fn update_even_blocks(&self, state: &mut ChainState) -> Result<f64> {
        self.update_blocks(state, Parity::Even)
    }

    pub fn update_odd_blocks(&self, state: &mut ChainState) -> Result<f64> {
        self.update_blocks(state, Parity::Odd)
    }

    /// Paths of one pass reconstituted under `theta_new` from their innovations
    /// under `theta`, and the change in the summed block log-weights.
    pub fn reconstitute(
        &self,
        state: &ChainState,
        parity: Parity,
        theta_new: &[f64],
    ) -> Result<std::result::Result<(Vec<PathSegment>, f64), Error>> {
        let blocks = self.blocks(parity);
        let sweep = state.sweep_index;
        let per_block: Vec<Result<std::result::Result<(PathSegment, f64), Error>>> = blocks
            .par_iter()
            .map(|&b| {
                let ctx = |e: Error| e.in_chain(sweep, b.to_string());
                let kernel = self.block_kernel(&state.theta, b, &state.segments, state.eps).map_err(ctx)?;
                let path = self.block_path(b, &state.segments);
                let current = self.block_log_weight(&state.theta, &kernel, &path).map_err(ctx)?;
                let z = inverse_innovation(&self.model, &state.theta, &kernel, &path).map_err(ctx)?;
                let proposed = self
                    .block_kernel(theta_new, b, &state.segments, state.eps)
                    .and_then(|k| {
                        let p = forward_guided_from(&self.model, theta_new, &k, path.first(), &z)?;
                        let w = self.block_log_weight(theta_new, &k, &p)?;
                        Ok((p, w - current))
                    });
                Ok(proposed)
            })
            .collect();
        let mut segments = state.segments.clone();
        let mut delta = 0.0;
        for (b, r) in blocks.iter().zip(per_block) {
            match r? {
                Ok((p, dw)) => {
                    delta += dw;
                    for (i, seg) in self.intervals_of(*b).zip(self.split_block_path(*b, p)) {
                        segments[i] = seg;
                    }
                }
                Err(e) => return Ok(Err(e)),
            }
        }
        Ok(Ok((segments, delta)))
    }

    /// Random-walk update of the parameter with the innovations of one pass held fixed.
    /// Returns `(accepted, kernel_failure)`.
    pub fn update_theta<R: Rng + ?Sized>(
        &self,
        state: &mut ChainState,
        parity: Parity,
        rng: &mut R,
    ) -> Result<(bool, bool)> {
        let theta_new: Vec<f64> = state
            .theta
            .iter()
            .zip(&self.config.theta_proposal)
            .map(|(t, s)| t + s * rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let u: f64 = rng.random();
        let prior_new = (self.config.prior)(&theta_new);
        if !prior_new.is_finite() {
            return Ok((false, false));
        }
        let (segments, delta) = match self.reconstitute(state, parity, &theta_new)? {
            Ok(x) => x,
            Err(e) if e.rejects_proposal() || matches!(e, Error::Config(_)) => {
                return Ok((false, matches!(e, Error::KernelBuild { .. } | Error::Config(_))))
            }
            Err(e) => return Err(e.in_chain(state.sweep_index, "parameter update")),
        };
        let log_a = prior_new - (self.config.prior)(&state.theta) + delta;
        if u.ln() < log_a {
            state.theta = theta_new;
            state.segments = segments;
            Ok((true, false))
        } else {
            Ok((false, false))
        }
    }

    /// `sum_i log q_eps(V_i - L_i X_{t_i})`.
    pub fn noise_log_likelihood(&self, state: &ChainState, eps: f64) -> f64 {
        (0..self.scheme.len())
            .map(|i| {
                let o = self.observation(i, Some(eps));
                let chol = cholesky(&o.sigma).expect("eps > 0");
                log_normal_chol(&o.v, &(&o.l * state.state_at_obs(i)), &chol)
            })
            .sum()
    }

    /// Random-walk update of the noise parameter given the full path.
    pub fn update_noise_param<R: Rng + ?Sized>(&self, state: &mut ChainState, rng: &mut R) -> Result<bool> {
        let (Some(nc), Some(eps)) = (&self.config.noise, state.eps) else {
            return Ok(false);
        };
        let proposal = eps + nc.step * rng.sample::<f64, _>(rand_distr::StandardNormal);
        let u: f64 = rng.random();
        if proposal <= 0.0 {
            return Ok(false);
        }
        let prior_new = (nc.log_prior)(proposal);
        if !prior_new.is_finite() {
            return Ok(false);
        }
        let log_a = prior_new - (nc.log_prior)(eps) + self.noise_log_likelihood(state, proposal)
            - self.noise_log_likelihood(state, eps);
        if u.ln() < log_a {
            state.eps = Some(proposal);
            Ok(true)
        } else {
            Ok(false)
        }
    }

    /// Sum of `log Psi` over the odd-pass blocks of the current state.
    pub fn log_psi_total(&self, state: &ChainState) -> Result<f64> {
        let blocks = self.blocks(Parity::Odd);
        let parts: Vec<Result<f64>> = blocks
            .par_iter()
            .map(|&b| {
                let k = self.block_kernel(&state.theta, b, &state.segments, state.eps)?;
                log_psi(&self.model, &state.theta, &k, &self.block_path(b, &state.segments))
            })
            .collect();
        parts.into_iter().sum::<Result<f64>>().map_err(|e| e.in_chain(state.sweep_index, "path weight"))
    }

    fn record(&self, state: &ChainState, acc: (f64, f64, Option<f64>, Option<f64>)) -> Result<SweepRecord> {
        Ok(SweepRecord {
            sweep: state.sweep_index,
            theta: state.theta.clone(),
            eps: state.eps.into_iter().collect(),
            acc_even: acc.0,
            acc_odd: acc.1,
            acc_theta: acc.2,
            acc_eps: acc.3,
            logpsi_total: self.log_psi_total(state)?,
        })
    }

    /// One full cycle: even pass, parameter, odd pass, parameter, noise.
    /// Returns the record and the number of parameter proposals lost to kernel failures.
    pub fn sweep(&self, state: &mut ChainState) -> Result<(SweepRecord, usize)> {
        state.sweep_index += 1;
        let s = state.sweep_index;
        let mut theta_acc = Vec::new();
        let mut failures = 0;
        let acc_even = self.update_blocks(state, Parity::Even)?;
        if self.config.update_theta_in.includes(Parity::Even) {
            let (a, f) = self.update_theta(state, Parity::Even, &mut self.rng(s, TAG_THETA_EVEN, 0))?;
            theta_acc.push(a);
            failures += usize::from(f);
        }
        let acc_odd = self.update_blocks(state, Parity::Odd)?;
        if self.config.update_theta_in.includes(Parity::Odd) {
            let (a, f) = self.update_theta(state, Parity::Odd, &mut self.rng(s, TAG_THETA_ODD, 0))?;
            theta_acc.push(a);
            failures += usize::from(f);
        }
        let acc_eps = match self.config.noise {
            Some(_) => Some(f64::from(u8::from(self.update_noise_param(state, &mut self.rng(s, TAG_NOISE, 0))?))),
            None => None,
        };
        let acc_theta = (!theta_acc.is_empty())
            .then(|| theta_acc.iter().filter(|a| **a).count() as f64 / theta_acc.len() as f64);
        Ok((self.record(state, (acc_even, acc_odd, acc_theta, acc_eps))?, failures))
    }

    pub fn run(&self) -> Result<Trace> {
        self.run_with(|_, _| {})
    }

    /// Run the chain, calling `observe` after initialisation and after every sweep.
    pub fn run_with(&self, mut observe: impl FnMut(&ChainState, &SweepRecord)) -> Result<Trace> {
        let mut state = self.init_chain()?;
        let first = self.record(&state, (1.0, 1.0, None, None))?;
        observe(&state, &first);
        let mut records = vec![first];
        let mut snapshots = Vec::new();
        let every = self.config.snapshot_every;
        if every > 0 {
            snapshots.push(Snapshot {
                sweep: 0,
                path: state.full_path(),
            });
        }
        let mut kernel_failures = 0;
        for _ in 0..self.config.n_sweeps {
            let (rec, f) = self.sweep(&mut state)?;
            kernel_failures += f;
            observe(&state, &rec);
            records.push(rec);
            if every > 0 && state.sweep_index % every == 0 {
                snapshots.push(Snapshot {
                    sweep: state.sweep_index,
                    path: state.full_path(),
                });
            }
        }
        Ok(Trace {
            records,
            snapshots,
            final_state: state,
            kernel_failures,
        })
    }
}

/// Build a [`Sampler`] and run it.
pub fn run_chain(
    model: DiffusionModel,
    auxiliary: AuxiliaryChoice,
    scheme: ObservationScheme,
    prior_x0: StartPrior,
    config: ChainConfig,
) -> Result<Trace> {
    Sampler::new(model, auxiliary, scheme, prior_x0, config)?.run()
}

