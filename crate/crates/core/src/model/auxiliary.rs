//! Linear auxiliary processes `dX = (beta(t) + B(t) X) dt + sigma(t) dW`.
//!
//! Their Gaussian transition densities are what the guiding term is built
//! from. Three coefficient regimes are distinguished because the kernel uses
//! a different integrator for each: constant with `B = 0` (closed forms),
//! constant with `B != 0` (matrix exponentials) and time-varying (RK4).

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{is_spd, is_zero, Matrix, Vector};

pub type TimeVector = dyn Fn(f64) -> Vector + Send + Sync;
pub type TimeMatrix = dyn Fn(f64) -> Matrix + Send + Sync;

/// Default RK4 sub-step for time-varying coefficients.
pub const DEFAULT_MAX_STEP: f64 = 1e-3;

#[derive(Clone)]
pub enum LinearAuxiliary {
    Constant {
        beta: Vector,
        bmat: Matrix,
        sigma: Matrix,
    },
    TimeVarying {
        dim: usize,
        noise_dim: usize,
        beta: Arc<TimeVector>,
        bmat: Arc<TimeMatrix>,
        sigma: Arc<TimeMatrix>,
        max_step: f64,
    },
}

impl fmt::Debug for LinearAuxiliary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LinearAuxiliary::Constant { beta, bmat, sigma } => f
                .debug_struct("Constant")
                .field("beta", beta)
                .field("bmat", bmat)
                .field("sigma", sigma)
                .finish(),
            LinearAuxiliary::TimeVarying {
                dim,
                noise_dim,
                max_step,
                ..
            } => f
                .debug_struct("TimeVarying")
                .field("dim", dim)
                .field("noise_dim", noise_dim)
                .field("max_step", max_step)
                .finish_non_exhaustive(),
        }
    }
}

impl LinearAuxiliary {
    pub fn constant(beta: Vector, bmat: Matrix, sigma: Matrix) -> Result<Self> {
        let d = beta.len();
        if bmat.shape() != (d, d) || sigma.nrows() != d {
            return Err(Error::config(format!(
                "auxiliary dimensions disagree: beta {d}, B {:?}, sigma {:?}",
                bmat.shape(),
                sigma.shape()
            )));
        }
        let a = &sigma * sigma.transpose();
        if !is_spd(&a) {
            return Err(Error::config(
                "auxiliary diffusion matrix sigma sigma' is not positive definite",
            ));
        }
        Ok(LinearAuxiliary::Constant { beta, bmat, sigma })
    }

    /// Scaled Brownian motion: zero drift, constant dispersion.
    pub fn brownian(sigma: Matrix) -> Result<Self> {
        let d = sigma.nrows();
        Self::constant(Vector::zeros(d), Matrix::zeros(d, d), sigma)
    }

    pub fn time_varying(
        dim: usize,
        noise_dim: usize,
        beta: Arc<TimeVector>,
        bmat: Arc<TimeMatrix>,
        sigma: Arc<TimeMatrix>,
    ) -> Self {
        LinearAuxiliary::TimeVarying {
            dim,
            noise_dim,
            beta,
            bmat,
            sigma,
            max_step: DEFAULT_MAX_STEP,
        }
    }

    /// Override the RK4 sub-step (time-varying coefficients only).
    pub fn with_max_step(mut self, step: f64) -> Self {
        if let LinearAuxiliary::TimeVarying { max_step, .. } = &mut self {
            *max_step = step;
        }
        self
    }

    pub fn dim(&self) -> usize {
        match self {
            LinearAuxiliary::Constant { beta, .. } => beta.len(),
            LinearAuxiliary::TimeVarying { dim, .. } => *dim,
        }
    }

    pub fn noise_dim(&self) -> usize {
        match self {
            LinearAuxiliary::Constant { sigma, .. } => sigma.ncols(),
            LinearAuxiliary::TimeVarying { noise_dim, .. } => *noise_dim,
        }
    }

    pub fn beta(&self, t: f64) -> Vector {
        match self {
            LinearAuxiliary::Constant { beta, .. } => beta.clone(),
            LinearAuxiliary::TimeVarying { beta, .. } => beta(t),
        }
    }

    pub fn bmat(&self, t: f64) -> Matrix {
        match self {
            LinearAuxiliary::Constant { bmat, .. } => bmat.clone(),
            LinearAuxiliary::TimeVarying { bmat, .. } => bmat(t),
        }
    }

    pub fn sigma(&self, t: f64) -> Matrix {
        match self {
            LinearAuxiliary::Constant { sigma, .. } => sigma.clone(),
            LinearAuxiliary::TimeVarying { sigma, .. } => sigma(t),
        }
    }

    /// `a~(t) = sigma~(t) sigma~(t)'`.
    pub fn diffusion_matrix(&self, t: f64) -> Matrix {
        let s = self.sigma(t);
        &s * s.transpose()
    }

    /// Auxiliary drift `beta(t) + B(t) x`.
    pub fn drift(&self, t: f64, x: &Vector) -> Vector {
        self.beta(t) + self.bmat(t) * x
    }

    /// Time-constant coefficients with `B = 0`: the regime with closed-form
    /// pulling terms.
    pub fn is_constant(&self) -> bool {
        matches!(self, LinearAuxiliary::Constant { bmat, .. } if is_zero(bmat))
    }

    pub fn has_constant_coefficients(&self) -> bool {
        matches!(self, LinearAuxiliary::Constant { .. })
    }
}
