//! Diffusion models, auxiliary linear processes, observation schemes and
//! forward (unconditioned) simulation.

mod auxiliary;
mod observation;
mod registry;

use std::fmt;
use std::sync::Arc;

use rand::Rng;

pub use auxiliary::{LinearAuxiliary, TimeMatrix, TimeVector, DEFAULT_MAX_STEP};
pub use observation::{sample_observations, Observation, ObservationScheme};
pub use registry::{
    brownian_with_drift, damped_oscillator, double_well, ornstein_uhlenbeck, planar_brownian, ModelFactory, ModelRegistry,
};

use crate::error::{Error, Result};
use crate::linalg::{all_finite, standard_normal, Gaussian, Matrix, Vector};

pub type DriftFn = dyn Fn(&[f64], f64, &Vector) -> Vector + Send + Sync;
pub type DispersionFn = dyn Fn(&[f64], f64, &Vector) -> Matrix + Send + Sync;
pub type LinearizationFn = dyn Fn(&[f64]) -> Result<LinearAuxiliary> + Send + Sync;

/// A parametric diffusion `dX = b(theta; t, X) dt + sigma(theta; t, X) dW`.
#[derive(Clone)]
pub struct DiffusionModel {
    name: String,
    dim_state: usize,
    dim_noise: usize,
    parameter_dim: usize,
    drift: Arc<DriftFn>,
    dispersion: Arc<DispersionFn>,
    linearization: Option<Arc<LinearizationFn>>,
}

impl fmt::Debug for DiffusionModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiffusionModel")
            .field("name", &self.name)
            .field("dim_state", &self.dim_state)
            .field("dim_noise", &self.dim_noise)
            .field("parameter_dim", &self.parameter_dim)
            .finish_non_exhaustive()
    }
}

impl DiffusionModel {
    pub fn new(
        name: impl Into<String>,
        dim_state: usize,
        dim_noise: usize,
        parameter_dim: usize,
        drift: impl Fn(&[f64], f64, &Vector) -> Vector + Send + Sync + 'static,
        dispersion: impl Fn(&[f64], f64, &Vector) -> Matrix + Send + Sync + 'static,
    ) -> Self {
        DiffusionModel {
            name: name.into(),
            dim_state,
            dim_noise,
            parameter_dim,
            drift: Arc::new(drift),
            dispersion: Arc::new(dispersion),
            linearization: None,
        }
    }

    /// Attach a parameter-dependent linear process that can serve as the
    /// auxiliary process for this model (exactly, when the model is linear).
    pub fn with_linearization(
        mut self,
        f: impl Fn(&[f64]) -> Result<LinearAuxiliary> + Send + Sync + 'static,
    ) -> Self {
        self.linearization = Some(Arc::new(f));
        self
    }

    /// The model whose law is that of the given linear process. Has no parameters.
    pub fn linear(aux: LinearAuxiliary) -> Self {
        let d = aux.dim();
        let dn = aux.noise_dim();
        let a1 = aux.clone();
        let a2 = aux.clone();
        let a3 = aux;
        DiffusionModel::new(
            "linear",
            d,
            dn,
            0,
            move |_, t, x| a1.drift(t, x),
            move |_, t, _| a2.sigma(t),
        )
        .with_linearization(move |_| Ok(a3.clone()))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim_state(&self) -> usize {
        self.dim_state
    }

    pub fn dim_noise(&self) -> usize {
        self.dim_noise
    }

    pub fn parameter_dim(&self) -> usize {
        self.parameter_dim
    }

    pub fn drift(&self, theta: &[f64], t: f64, x: &Vector) -> Vector {
        (self.drift)(theta, t, x)
    }

    pub fn dispersion(&self, theta: &[f64], t: f64, x: &Vector) -> Matrix {
        (self.dispersion)(theta, t, x)
    }

    /// `a = sigma sigma'`.
    pub fn diffusion_matrix(&self, theta: &[f64], t: f64, x: &Vector) -> Matrix {
        let s = self.dispersion(theta, t, x);
        &s * s.transpose()
    }

    pub fn linearization(&self, theta: &[f64]) -> Option<Result<LinearAuxiliary>> {
        self.linearization.as_ref().map(|f| f(theta))
    }

    pub fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.parameter_dim {
            return Err(Error::config(format!(
                "model '{}' expects {} parameters, got {}",
                self.name,
                self.parameter_dim,
                theta.len()
            )));
        }
        Ok(())
    }
}

/// Discretised realisation of a process on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSegment {
    pub grid: Vec<f64>,
    pub values: Vec<Vector>,
}

impl PathSegment {
    pub fn new(grid: Vec<f64>, values: Vec<Vector>) -> Result<Self> {
        if grid.len() != values.len() || grid.is_empty() {
            return Err(Error::config(format!(
                "path has {} grid times but {} states",
                grid.len(),
                values.len()
            )));
        }
        check_grid(&grid)?;
        if let Some(k) = values.iter().position(|x| !all_finite(x)) {
            return Err(Error::numeric(grid[k], "non-finite state"));
        }
        Ok(PathSegment { grid, values })
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn first(&self) -> &Vector {
        &self.values[0]
    }

    pub fn last(&self) -> &Vector {
        self.values.last().expect("non-empty path")
    }

    /// Concatenate paths that share their boundary node.
    pub fn join(parts: &[&PathSegment]) -> PathSegment {
        let mut grid = Vec::new();
        let mut values = Vec::new();
        for (i, p) in parts.iter().enumerate() {
            let skip = usize::from(i > 0);
            grid.extend_from_slice(&p.grid[skip..]);
            values.extend(p.values[skip..].iter().cloned());
        }
        PathSegment { grid, values }
    }

    /// Split at the given node indices (each index is shared by both sides).
    pub fn split_at_nodes(&self, cuts: &[usize]) -> Vec<PathSegment> {
        let mut out = Vec::with_capacity(cuts.len() + 1);
        let mut start = 0;
        for &c in cuts.iter().chain(std::iter::once(&(self.len() - 1))) {
            out.push(PathSegment {
                grid: self.grid[start..=c].to_vec(),
                values: self.values[start..=c].to_vec(),
            });
            start = c;
        }
        out
    }
}

/// Gaussian prior `N(mean, cov)` on the initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct StartPrior {
    pub mean: Vector,
    pub cov: Matrix,
}

impl StartPrior {
    pub fn new(mean: Vector, cov: Matrix) -> Result<Self> {
        Gaussian::new(mean.clone(), cov.clone())?;
        Ok(StartPrior { mean, cov })
    }

    pub fn as_gaussian(&self) -> Gaussian {
        Gaussian {
            mean: self.mean.clone(),
            cov: self.cov.clone(),
        }
    }
}

pub(crate) fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.iter().any(|t| !t.is_finite()) {
        return Err(Error::config("time grid contains non-finite values"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::config("time grid must be strictly increasing"));
    }
    Ok(())
}

/// `m` equal cells on `[a, b]`; the last node is exactly `b`.
pub fn uniform_grid(a: f64, b: f64, m: usize) -> Vec<f64> {
    let mut g: Vec<f64> = (0..=m)
        .map(|k| a + (b - a) * k as f64 / m as f64)
        .collect();
    g[m] = b;
    g
}

/// Euler–Maruyama with the supplied Wiener increments (one `d'`-vector per cell).
pub fn simulate_euler(
    model: &DiffusionModel,
    theta: &[f64],
    x0: &Vector,
    grid: &[f64],
    noise: &[Vector],
) -> Result<PathSegment> {
    check_grid(grid)?;
    if noise.len() + 1 != grid.len() {
        return Err(Error::config(format!(
            "{} noise increments for a grid of {} cells",
            noise.len(),
            grid.len().saturating_sub(1)
        )));
    }
    if x0.len() != model.dim_state() {
        return Err(Error::config("initial state has the wrong dimension"));
    }
    let mut values = Vec::with_capacity(grid.len());
    values.push(x0.clone());
    for (k, dw) in noise.iter().enumerate() {
        let s = grid[k];
        let ds = grid[k + 1] - s;
        let x = &values[k];
        let b = model.drift(theta, s, x);
        let sig = model.dispersion(theta, s, x);
        if !all_finite(&b) || !sig.iter().all(|v| v.is_finite()) {
            return Err(Error::numeric(s, "non-finite drift or dispersion"));
        }
        let next = x + b * ds + sig * dw;
        values.push(next);
    }
    Ok(PathSegment {
        grid: grid.to_vec(),
        values,
    })
}

/// Independent `N(0, ds I)` increments for every cell of `grid`.
pub fn wiener_increments<R: Rng + ?Sized>(rng: &mut R, grid: &[f64], dim: usize) -> Vec<Vector> {
    grid.windows(2)
        .map(|w| standard_normal(rng, dim) * (w[1] - w[0]).sqrt())
        .collect()
}

/// Euler–Maruyama driven by fresh increments drawn from `rng`.
pub fn simulate_euler_rng<R: Rng + ?Sized>(
    model: &DiffusionModel,
    theta: &[f64],
    x0: &Vector,
    grid: &[f64],
    rng: &mut R,
) -> Result<PathSegment> {
    let noise = wiener_increments(rng, grid, model.dim_noise());
    simulate_euler(model, theta, x0, grid, &noise)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn constant_drift(b: Vector, d: usize) -> DiffusionModel {
        DiffusionModel::new(
            "const",
            d,
            d,
            0,
            move |_, _, _| b.clone(),
            move |_, _, _| Matrix::zeros(d, d),
        )
    }

    #[test]
    fn zero_dynamics_give_constant_path() {
        let m = constant_drift(dvector![0.0, 0.0], 2);
        let grid = uniform_grid(0.0, 3.0, 7);
        let noise = vec![dvector![0.3, -1.0]; 7];
        let p = simulate_euler(&m, &[], &dvector![1.0, 2.0], &grid, &noise).unwrap();
        assert!(p.values.iter().all(|v| *v == dvector![1.0, 2.0]));
    }

    #[test]
    fn deterministic_linear_ode() {
        let m = constant_drift(dvector![1.0, 0.0], 2);
        let grid = vec![0.0, 0.5, 1.0];
        let noise = vec![dvector![0.0, 0.0]; 2];
        let p = simulate_euler(&m, &[], &dvector![0.0, 0.0], &grid, &noise).unwrap();
        assert_eq!(p.values[1], dvector![0.5, 0.0]);
        assert_eq!(p.values[2], dvector![1.0, 0.0]);
    }

    #[test]
    fn non_finite_drift_names_time() {
        let m = DiffusionModel::new(
            "blow",
            1,
            1,
            0,
            |_, t, _| dvector![if t > 0.4 { f64::NAN } else { 0.0 }],
            |_, _, _| Matrix::zeros(1, 1),
        );
        let grid = uniform_grid(0.0, 1.0, 10);
        let noise = vec![dvector![0.0]; 10];
        match simulate_euler(&m, &[], &dvector![0.0], &grid, &noise) {
            Err(Error::Numeric { time, .. }) => assert!((time - 0.5).abs() < 1e-12),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn join_and_split_are_inverse() {
        let a = PathSegment::new(vec![0.0, 1.0], vec![dvector![0.0], dvector![1.0]]).unwrap();
        let b = PathSegment::new(vec![1.0, 2.0, 3.0], vec![dvector![1.0], dvector![2.0], dvector![3.0]])
            .unwrap();
        let j = PathSegment::join(&[&a, &b]);
        assert_eq!(j.grid, vec![0.0, 1.0, 2.0, 3.0]);
        let parts = j.split_at_nodes(&[1]);
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }

    #[test]
    fn rejects_non_increasing_grid() {
        assert!(PathSegment::new(vec![0.0, 0.0], vec![dvector![0.0], dvector![0.0]]).is_err());
    }
}
