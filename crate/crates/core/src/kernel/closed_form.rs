//! Closed-form pulling term for an auxiliary process with constant
//! `a~` and `B~ = 0` (so `Phi = I`, `g_H(t) = (H - t) beta`).
//!
//! With `S` the time of the noisy observation and `T` the time of the full one,
//!
//! ```text
//! N(t) = (L a~ L' + (T-t)/((S-t)(T-S)) Sigma)^{-1},   Q(t) = L' N(t) L
//! r~(t,x) = Q h_S/(S-t) + (a~^{-1} - Q) h_T/(T-t)        t < S
//!         = a~^{-1} h_T/(T-t)                              S <= t < T
//! ```
//! where `h_S = u_S - (S-t) beta - x` and `h_T = x_T - (T-t) beta - x`.

use crate::error::{Error, Result};
use crate::linalg::{cholesky, spd_inverse, symmetrize, Matrix, Vector};

/// Inputs of the constant-coefficient formulas.
#[derive(Debug, Clone)]
pub struct ConstantPull {
    pub a: Matrix,
    pub a_inv: Matrix,
    pub beta: Vector,
    pub l: Matrix,
    pub sigma: Matrix,
    pub u_s: Vector,
    pub x_t: Vector,
    pub s: f64,
    pub t_end: f64,
}

impl ConstantPull {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a: &Matrix,
        beta: Vector,
        l: Matrix,
        sigma: Matrix,
        u_s: Vector,
        x_t: Vector,
        s: f64,
        t_end: f64,
    ) -> Result<Self> {
        let a_inv =
            spd_inverse(a).ok_or_else(|| Error::domain("auxiliary diffusion matrix is singular"))?;
        Ok(ConstantPull {
            a: a.clone(),
            a_inv,
            beta,
            l,
            sigma,
            u_s,
            x_t,
            s,
            t_end,
        })
    }

    /// `N(t)`, defined for `t < S`.
    pub fn n(&self, t: f64) -> Result<Matrix> {
        let (s, tt) = (self.s, self.t_end);
        let m = &self.l * &self.a * self.l.transpose() + &self.sigma * ((tt - t) / ((s - t) * (tt - s)));
        spd_inverse(&m).ok_or_else(|| Error::kernel(t, "L a L' + c Sigma is not positive definite"))
    }

    pub fn q(&self, t: f64) -> Result<Matrix> {
        Ok(self.l.transpose() * self.n(t)? * &self.l)
    }

    pub fn h_s(&self, t: f64, x: &Vector) -> Vector {
        &self.u_s - &self.beta * (self.s - t) - x
    }

    pub fn h_t(&self, t: f64, x: &Vector) -> Vector {
        &self.x_t - &self.beta * (self.t_end - t) - x
    }

    pub fn pull(&self, t: f64, x: &Vector) -> Result<Vector> {
        let (s, tt) = (self.s, self.t_end);
        if t < s {
            let q = self.q(t)?;
            Ok(&q * self.h_s(t, x) / (s - t) + (&self.a_inv - &q) * self.h_t(t, x) / (tt - t))
        } else {
            Ok(&self.a_inv * self.h_t(t, x) / (tt - t))
        }
    }

    pub fn curvature(&self, t: f64) -> Result<Matrix> {
        let (s, tt) = (self.s, self.t_end);
        if t < s {
            let q = self.q(t)?;
            Ok((&self.a_inv + q * ((tt - s) / (s - t))) / (tt - t))
        } else {
            Ok(&self.a_inv / (tt - t))
        }
    }

    /// Precision matrix `U(t)` by the Schur-complement block formulas.
    pub fn precision_u(&self, t: f64) -> Result<Matrix> {
        let (s, tt) = (self.s, self.t_end);
        let n = self.n(t)?;
        let m = self.l.nrows();
        let d = self.l.ncols();
        let mut u = Matrix::zeros(m + d, m + d);
        u.view_mut((0, 0), (m, m))
            .copy_from(&(&n * ((tt - t) / ((s - t) * (tt - s)))));
        let off = &n * &self.l * (-1.0 / (tt - s));
        u.view_mut((0, m), (m, d)).copy_from(&off);
        u.view_mut((m, 0), (d, m)).copy_from(&off.transpose());
        let lower = &self.a_inv / (tt - t)
            + self.l.transpose() * &n * &self.l * ((s - t) / ((tt - t) * (tt - s)));
        u.view_mut((m, m), (d, d)).copy_from(&lower);
        Ok(symmetrize(&u))
    }

    /// `lim_{t -> S-} r~(t, x) = L' Sigma^{-1} L (u_S - x) + a~^{-1} h_T(S, x)/(T - S)`.
    pub fn limit_at_s(&self, x: &Vector) -> Result<Vector> {
        let chol = cholesky(&self.sigma)
            .ok_or_else(|| Error::domain("limit at the observation time needs a nonsingular Sigma"))?;
        let sig_inv = symmetrize(&chol.inverse());
        Ok(self.l.transpose() * sig_inv * &self.l * (&self.u_s - x)
            + &self.a_inv * self.h_t(self.s, x) / (self.t_end - self.s))
    }
}
