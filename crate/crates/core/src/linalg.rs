//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

pub fn is_zero(m: &Matrix) -> bool {
    m.iter().all(|v| *v == 0.0)
}

pub fn all_finite(v: &Vector) -> bool {
    v.iter().all(|x| x.is_finite())
}

pub fn cholesky(m: &Matrix) -> Option<Cholesky<f64, Dyn>> {
    if !m.iter().all(|x| x.is_finite()) {
        return None;
    }
    let scale = m.diagonal().amax();
    let c = Cholesky::new(symmetrize(m))?;
    // reject factorizations of numerically singular matrices
    let floor = (1e-14 * scale).sqrt();
    c.l_dirty().diagonal().iter().all(|d| *d > floor).then_some(c)
}

/// Symmetric positive-definite check by attempted Cholesky factorization.
pub fn is_spd(m: &Matrix) -> bool {
    m.is_square() && (m - m.transpose()).amax() <= 1e-9 * (1.0 + m.amax()) && cholesky(m).is_some()
}

/// Inverse of a symmetric positive-definite matrix via its Cholesky factor.
pub fn spd_inverse(m: &Matrix) -> Option<Matrix> {
    cholesky(m).map(|c| symmetrize(&c.inverse()))
}

/// Symmetric square root of a symmetric positive-semidefinite matrix. Negative
/// eigenvalues produced by rounding are clamped to zero.
pub fn psd_sqrt(m: &Matrix) -> Matrix {
    let eig = SymmetricEigen::new(symmetrize(m));
    let sqrt_vals = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * Matrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose()
}

/// Minimum-norm solution of `l u = v` for a full-row-rank `l`.
pub fn min_norm_solution(l: &Matrix, v: &Vector) -> Result<Vector> {
    let llt = l * l.transpose();
    let chol = cholesky(&llt)
        .ok_or_else(|| Error::domain("observation matrix does not have full row rank"))?;
    Ok(l.transpose() * chol.solve(v))
}

/// Log of the Gaussian density with mean `mean` and covariance factored in `chol`.
pub fn log_normal_chol(x: &Vector, mean: &Vector, chol: &Cholesky<f64, Dyn>) -> f64 {
    let r = x - mean;
    let l = chol.l();
    let z = l
        .solve_lower_triangular(&r)
        .expect("Cholesky factor has a positive diagonal");
    let log_det: f64 = l.diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    -0.5 * (r.len() as f64 * LN_2PI + log_det + z.norm_squared())
}

pub fn log_normal(x: &Vector, mean: &Vector, cov: &Matrix) -> Result<f64> {
    let chol = cholesky(cov)
        .ok_or_else(|| Error::domain("covariance is not positive definite"))?;
    Ok(log_normal_chol(x, mean, &chol))
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vector {
    Vector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Multivariate normal law.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub mean: Vector,
    pub cov: Matrix,
}

impl Gaussian {
    pub fn new(mean: Vector, cov: Matrix) -> Result<Self> {
        if cov.nrows() != mean.len() || !cov.is_square() {
            return Err(Error::config(format!(
                "covariance is {}x{} but mean has length {}",
                cov.nrows(),
                cov.ncols(),
                mean.len()
            )));
        }
        Ok(Gaussian { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_density(&self, x: &Vector) -> Result<f64> {
        log_normal(x, &self.mean, &self.cov)
    }

    /// Draw one sample. Works for singular covariances.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector {
        &self.mean + psd_sqrt(&self.cov) * standard_normal(rng, self.dim())
    }
}
