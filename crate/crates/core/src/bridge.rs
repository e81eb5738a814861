//! Guided proposals on one segment: forward simulation from innovations, the
//! inverse map back to innovations, the path weight `log Psi` and the Gaussian
//! factors that enter Metropolis–Hastings ratios.

use rand::Rng;

use crate::error::{Error, Result};
use crate::kernel::{GuidedKernel, SegmentKind};
use crate::linalg::{all_finite, cholesky, log_normal_chol, min_norm_solution, standard_normal, Matrix, Vector};
use crate::model::{DiffusionModel, PathSegment};

/// Driving increments `dZ_k` of a guided path, one per grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct InnovationSegment {
    pub grid: Vec<f64>,
    pub increments: Vec<Vector>,
}

impl InnovationSegment {
    pub fn new(grid: Vec<f64>, increments: Vec<Vector>) -> Result<Self> {
        if increments.len() + 1 != grid.len() {
            return Err(Error::config(format!(
                "{} increments for a grid of {} nodes",
                increments.len(),
                grid.len()
            )));
        }
        Ok(InnovationSegment { grid, increments })
    }

    /// Independent `N(0, ds I)` increments.
    pub fn fresh<R: Rng + ?Sized>(grid: &[f64], dim: usize, rng: &mut R) -> Self {
        InnovationSegment {
            grid: grid.to_vec(),
            increments: crate::model::wiener_increments(rng, grid, dim),
        }
    }

    /// Crank–Nicolson refresh `sqrt(rho) Z + sqrt(1 - rho) W` with `W` a fresh Wiener path.
    pub fn pcn<R: Rng + ?Sized>(&self, rho: f64, rng: &mut R) -> Self {
        let (a, b) = (rho.sqrt(), (1.0 - rho).sqrt());
        let increments = self
            .grid
            .windows(2)
            .zip(&self.increments)
            .map(|(w, z)| {
                let fresh = standard_normal(rng, z.len()) * (w[1] - w[0]).sqrt();
                z * a + fresh * b
            })
            .collect();
        InnovationSegment {
            grid: self.grid.clone(),
            increments,
        }
    }
}

#[derive(Debug, Clone)]
pub struct WeightedPath {
    pub path: PathSegment,
    pub log_psi: f64,
    /// `log q(v - L x_S) - log q~(v - L x_S)`.
    pub log_obs_ratio: f64,
}

/// Log-densities entering MH ratios for one segment under one parameter value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcceptanceFactors {
    /// `log p~(t_left, x_left; conditioning data)`.
    pub log_ptilde: f64,
    pub log_q: f64,
    pub log_qtilde: f64,
}

impl AcceptanceFactors {
    pub fn log_obs_ratio(&self) -> f64 {
        self.log_q - self.log_qtilde
    }
}

fn guided_drift(
    model: &DiffusionModel,
    theta: &[f64],
    kernel: &GuidedKernel,
    k: usize,
    x: &Vector,
) -> (Vector, Matrix) {
    let t = kernel.grid()[k];
    let sig = model.dispersion(theta, t, x);
    let a = &sig * sig.transpose();
    let drift = model.drift(theta, t, x) + a * kernel.node_guide(k).pull(x);
    (drift, sig)
}

fn snap(x: &mut Vector, l: &Matrix, v: &Vector) -> Result<()> {
    let resid = v - l * &*x;
    *x += min_norm_solution(l, &resid)?;
    Ok(())
}

fn check_grid_match(kernel: &GuidedKernel, grid: &[f64]) -> Result<()> {
    if kernel.grid() != grid {
        return Err(Error::config("innovations and kernel live on different grids"));
    }
    Ok(())
}

/// Euler scheme for `dX = (b + a r~) dt + sigma dZ` started from the left anchor.
///
/// On interior and start segments the final node is set to the right anchor.
/// Nodes carrying an exact observation are projected onto `{x : L x = v}`.
pub fn forward_guided(
    model: &DiffusionModel,
    theta: &[f64],
    kernel: &GuidedKernel,
    z: &InnovationSegment,
) -> Result<PathSegment> {
    let x0 = kernel
        .spec()
        .left_state()
        .ok_or_else(|| Error::config("start segments need an explicit initial state"))?
        .clone();
    forward_guided_from(model, theta, kernel, &x0, z)
}

/// [`forward_guided`] with an explicit initial state (needed on start segments).
pub fn forward_guided_from(
    model: &DiffusionModel,
    theta: &[f64],
    kernel: &GuidedKernel,
    x0: &Vector,
    z: &InnovationSegment,
) -> Result<PathSegment> {
    check_grid_match(kernel, &z.grid)?;
    let grid = kernel.grid();
    let n = grid.len();
    let anchored = kernel.kind() != SegmentKind::End;
    let snap_at = kernel.noiseless_snap();
    let mut values = Vec::with_capacity(n);
    values.push(x0.clone());
    for k in 0..n - 1 {
        let x = &values[k];
        let mut next = if anchored && k == n - 2 {
            kernel.spec().right.clone().expect("anchored segment")
        } else {
            let (drift, sig) = guided_drift(model, theta, kernel, k, x);
            x + drift * (grid[k + 1] - grid[k]) + sig * &z.increments[k]
        };
        if !all_finite(&next) {
            return Err(Error::ProposalFailure { time: grid[k + 1] });
        }
        if let Some((idx, obs)) = snap_at {
            if idx == k + 1 {
                snap(&mut next, &obs.l, &obs.v)?;
            }
        }
        values.push(next);
    }
    Ok(PathSegment {
        grid: grid.to_vec(),
        values,
    })
}

/// Innovations that reproduce `path` under [`forward_guided_from`].
pub fn inverse_innovation(
    model: &DiffusionModel,
    theta: &[f64],
    kernel: &GuidedKernel,
    path: &PathSegment,
) -> Result<InnovationSegment> {
    check_grid_match(kernel, &path.grid)?;
    if model.dim_state() != model.dim_noise() {
        return Err(Error::domain("inverting the innovation map needs a square dispersion"));
    }
    let grid = kernel.grid();
    let increments = (0..grid.len() - 1)
        .map(|k| {
            let x = &path.values[k];
            let (drift, sig) = guided_drift(model, theta, kernel, k, x);
            let resid = &path.values[k + 1] - x - drift * (grid[k + 1] - grid[k]);
            sig.lu().solve(&resid).filter(all_finite).ok_or_else(|| {
                Error::domain(format!("dispersion is singular at node {k} (t = {})", grid[k]))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(InnovationSegment {
        grid: grid.to_vec(),
        increments,
    })
}

/// `G(t, x) = (b - b~)' r~ - tr((a - a~)(H~ - r~ r~'))/2` on grid node `k`.
pub fn weight_integrand(
    model: &DiffusionModel,
    theta: &[f64],
    kernel: &GuidedKernel,
    k: usize,
    x: &Vector,
) -> f64 {
    let t = kernel.grid()[k];
    let aux = kernel.aux();
    let guide = kernel.node_guide(k);
    let r = guide.pull(x);
    let db = model.drift(theta, t, x) - aux.drift(t, x);
    let da = model.diffusion_matrix(theta, t, x) - aux.diffusion_matrix(t);
    let inner = &guide.curvature - &r * r.transpose();
    db.dot(&r) - 0.5 * da.component_mul(&inner).sum()
}

/// Left-point Riemann sum of `G` over the segment; the final node is never evaluated.
pub fn log_psi(model: &DiffusionModel, theta: &[f64], kernel: &GuidedKernel, path: &PathSegment) -> Result<f64> {
    check_grid_match(kernel, &path.grid)?;
    let grid = kernel.grid();
    let mut total = 0.0;
    for k in 0..grid.len() - 1 {
        let g = weight_integrand(model, theta, kernel, k, &path.values[k]);
        if !g.is_finite() {
            return Err(Error::numeric(grid[k], "non-finite path weight"));
        }
        total += g * (grid[k + 1] - grid[k]);
    }
    Ok(total)
}

/// `log N(v; L x, Sigma)`; zero when `Sigma` is singular.
fn log_obs_density(l: &Matrix, sigma: &Matrix, v: &Vector, x: &Vector) -> f64 {
    match cholesky(sigma) {
        Some(c) => log_normal_chol(v, &(l * x), &c),
        None => 0.0,
    }
}

/// Gaussian factors of one segment under the parameter the kernel was built with.
/// The observation noise of the target and of the auxiliary law coincide, so
/// `log_q == log_qtilde` unless `true_sigma` overrides the target's.
pub fn acceptance_factors(kernel: &GuidedKernel, path: &PathSegment, true_sigma: Option<&Matrix>) -> Result<AcceptanceFactors> {
    check_grid_match(kernel, &path.grid)?;
    let spec = kernel.spec();
    let obs = &spec.obs;
    let x_obs = &path.values[kernel.obs_index()];
    let log_ptilde = kernel.log_density(spec.t_left, path.first())?;
    let log_qtilde = log_obs_density(&obs.l, &obs.sigma, &obs.v, x_obs);
    let log_q = match true_sigma {
        Some(s) => log_obs_density(&obs.l, s, &obs.v, x_obs),
        None => log_qtilde,
    };
    Ok(AcceptanceFactors {
        log_ptilde,
        log_q,
        log_qtilde,
    })
}

/// Path together with its weight and observation-density ratio.
pub fn weigh(model: &DiffusionModel, theta: &[f64], kernel: &GuidedKernel, path: PathSegment) -> Result<WeightedPath> {
    let log_psi = log_psi(model, theta, kernel, &path)?;
    let log_obs_ratio = acceptance_factors(kernel, &path, None)?.log_obs_ratio();
    Ok(WeightedPath {
        path,
        log_psi,
        log_obs_ratio,
    })
}
