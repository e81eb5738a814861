//! Gaussian transitions of the auxiliary linear process.
//!
//! For `s <= t`, `X~_t | X~_s = x ~ N(Phi(t,s) x + g_t(s), K_t(s))` with
//! `g_t(s) = int_s^t Phi(t,r) beta(r) dr` and
//! `K_t(s) = int_s^t Phi(t,r) a~(r) Phi(t,r)' dr`.

use crate::error::{Error, Result};
use crate::linalg::{symmetrize, Matrix, Vector};
use crate::model::{check_grid, LinearAuxiliary};

/// Affine-Gaussian map `x -> N(phi x + g, k)` between two times.
#[derive(Debug, Clone, PartialEq)]
pub struct Propagator {
    pub phi: Matrix,
    pub g: Vector,
    pub k: Matrix,
}

impl Propagator {
    pub fn identity(d: usize) -> Self {
        Propagator {
            phi: Matrix::identity(d, d),
            g: Vector::zeros(d),
            k: Matrix::zeros(d, d),
        }
    }

    /// `self` (s -> u) followed by `later` (u -> t).
    pub fn then(&self, later: &Propagator) -> Propagator {
        Propagator {
            phi: &later.phi * &self.phi,
            g: &later.phi * &self.g + &later.g,
            k: symmetrize(&(&later.phi * &self.k * later.phi.transpose() + &later.k)),
        }
    }

    pub fn mean(&self, x: &Vector) -> Vector {
        &self.phi * x + &self.g
    }
}

/// Transition of the auxiliary process from `s` to `t >= s`.
pub fn transition(aux: &LinearAuxiliary, s: f64, t: f64) -> Result<Propagator> {
    if !(t >= s) {
        return Err(Error::domain(format!("transition needs s <= t, got s = {s}, t = {t}")));
    }
    let d = aux.dim();
    let tau = t - s;
    if tau == 0.0 {
        return Ok(Propagator::identity(d));
    }
    let p = match aux {
        LinearAuxiliary::Constant { beta, bmat, .. } if crate::linalg::is_zero(bmat) => Propagator {
            phi: Matrix::identity(d, d),
            g: beta * tau,
            k: aux.diffusion_matrix(s) * tau,
        },
        LinearAuxiliary::Constant { beta, bmat, .. } => van_loan(bmat, beta, &aux.diffusion_matrix(s), tau),
        LinearAuxiliary::TimeVarying { max_step, .. } => rk4_backward(aux, s, t, *max_step),
    };
    if !p.phi.iter().chain(p.g.iter()).chain(p.k.iter()).all(|v| v.is_finite()) {
        return Err(Error::numeric(s, "non-finite auxiliary transition"));
    }
    Ok(p)
}

/// Constant coefficients with `B != 0`: block matrix exponentials.
fn van_loan(bmat: &Matrix, beta: &Vector, a: &Matrix, tau: f64) -> Propagator {
    let d = beta.len();
    let mut m1 = Matrix::zeros(d + 1, d + 1);
    m1.view_mut((0, 0), (d, d)).copy_from(bmat);
    m1.view_mut((0, d), (d, 1)).copy_from(beta);
    let e1 = (m1 * tau).exp();
    let phi = e1.view((0, 0), (d, d)).into_owned();
    let g = e1.view((0, d), (d, 1)).column(0).into_owned();

    let mut m2 = Matrix::zeros(2 * d, 2 * d);
    m2.view_mut((0, 0), (d, d)).copy_from(&(-bmat));
    m2.view_mut((0, d), (d, d)).copy_from(a);
    m2.view_mut((d, d), (d, d)).copy_from(&bmat.transpose());
    let e2 = (m2 * tau).exp();
    let f12 = e2.view((0, d), (d, d)).into_owned();
    let f22t = e2.view((d, d), (d, d)).transpose();
    let k = symmetrize(&(f22t * f12));
    Propagator { phi, g, k }
}

/// Time-varying coefficients: classical RK4 on `(Phi(t, r), g_t(r), K_t(r))`
/// integrated from `r = t` back to `r = s`.
fn rk4_backward(aux: &LinearAuxiliary, s: f64, t: f64, max_step: f64) -> Propagator {
    let d = aux.dim();
    let n = ((t - s) / max_step).ceil().max(1.0) as usize;
    let h = (t - s) / n as f64;
    // With u(sig) = y(t - sig): du/dsig = (Phi B, Phi beta, Phi a Phi').
    let rhs = |r: f64, phi: &Matrix| -> (Matrix, Vector, Matrix) {
        (
            phi * aux.bmat(r),
            phi * aux.beta(r),
            phi * aux.diffusion_matrix(r) * phi.transpose(),
        )
    };
    let mut phi = Matrix::identity(d, d);
    let mut g = Vector::zeros(d);
    let mut k = Matrix::zeros(d, d);
    for i in 0..n {
        let r0 = t - i as f64 * h;
        let rm = r0 - 0.5 * h;
        let r1 = r0 - h;
        let (p1, g1, k1) = rhs(r0, &phi);
        let (p2, g2, k2) = rhs(rm, &(&phi + &p1 * (0.5 * h)));
        let (p3, g3, k3) = rhs(rm, &(&phi + &p2 * (0.5 * h)));
        let (p4, g4, k4) = rhs(r1, &(&phi + &p3 * h));
        phi += (p1 + p2 * 2.0 + p3 * 2.0 + p4) * (h / 6.0);
        g += (g1 + g2 * 2.0 + g3 * 2.0 + g4) * (h / 6.0);
        k += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    Propagator {
        phi,
        g,
        k: symmetrize(&k),
    }
}

/// Per-cell transitions `s_k -> s_{k+1}` on a grid. Constant coefficients are
/// memoised by step length.
pub(crate) fn cell_transitions(aux: &LinearAuxiliary, grid: &[f64]) -> Result<Vec<Propagator>> {
    let mut out: Vec<Propagator> = Vec::with_capacity(grid.len().saturating_sub(1));
    let mut memo: Vec<(f64, usize)> = Vec::new();
    for w in grid.windows(2) {
        let h = w[1] - w[0];
        if aux.has_constant_coefficients() {
            if let Some(&(_, idx)) = memo.iter().find(|(hh, _)| *hh == h) {
                let p = out[idx].clone();
                out.push(p);
                continue;
            }
            memo.push((h, out.len()));
        }
        out.push(transition(aux, w[0], w[1])?);
    }
    Ok(out)
}

/// Fundamental matrices `Phi(s_k, s_0)` at every grid node.
pub fn fundamental_matrix(aux: &LinearAuxiliary, grid: &[f64]) -> Result<Vec<Matrix>> {
    check_grid(grid)?;
    let cells = cell_transitions(aux, grid)?;
    let d = aux.dim();
    let mut out = Vec::with_capacity(grid.len());
    out.push(Matrix::identity(d, d));
    for c in &cells {
        let next = &c.phi * out.last().expect("non-empty");
        out.push(next);
    }
    Ok(out)
}

/// `Phi(t, s) = Phi(t) Phi(s)^{-1}` from a list of fundamental matrices.
pub fn phi_between(phis: &[Matrix], t_index: usize, s_index: usize) -> Result<Matrix> {
    let inv = phis[s_index]
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::domain("singular fundamental matrix"))?;
    Ok(&phis[t_index] * inv)
}

/// Propagators from every grid node to `horizon`, built by backward
/// composition of cell transitions. Nodes after the horizon get `None`.
pub fn horizon_propagators(
    aux: &LinearAuxiliary,
    horizon: f64,
    grid: &[f64],
) -> Result<Vec<Option<Propagator>>> {
    check_grid(grid)?;
    let cells = cell_transitions(aux, grid)?;
    horizon_from_cells(aux, horizon, grid, &cells)
}

pub(crate) fn horizon_from_cells(
    aux: &LinearAuxiliary,
    horizon: f64,
    grid: &[f64],
    cells: &[Propagator],
) -> Result<Vec<Option<Propagator>>> {
    let n = grid.len();
    let mut out: Vec<Option<Propagator>> = vec![None; n];
    // last node at or before the horizon
    let last = grid.partition_point(|s| *s <= horizon);
    if last == 0 {
        return Ok(out);
    }
    let mut acc = transition(aux, grid[last - 1], horizon)?;
    out[last - 1] = Some(acc.clone());
    for k in (0..last - 1).rev() {
        acc = cells[k].then(&acc);
        out[k] = Some(acc.clone());
    }
    Ok(out)
}

/// `(g_H(s_k), K_H(s_k))` for every grid node `s_k <= horizon`.
pub fn gain_and_covariance(
    aux: &LinearAuxiliary,
    horizon: f64,
    grid: &[f64],
) -> Result<Vec<(Vector, Matrix)>> {
    if grid.last().is_some_and(|t| *t > horizon) {
        return Err(Error::domain("grid extends beyond the horizon"));
    }
    Ok(horizon_propagators(aux, horizon, grid)?
        .into_iter()
        .flatten()
        .map(|p| (p.g, p.k))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};
    use std::sync::Arc;

    #[test]
    fn zero_drift_matrix_gives_identity_flow() {
        let aux = LinearAuxiliary::brownian(dmatrix![1.0, 0.0; 0.3, 2.0]).unwrap();
        let phis = fundamental_matrix(&aux, &[0.0, 0.3, 1.1]).unwrap();
        for p in &phis {
            assert_eq!(*p, Matrix::identity(2, 2));
        }
    }

    #[test]
    fn scalar_exponential() {
        let aux = LinearAuxiliary::constant(dvector![0.0], dmatrix![-1.0], dmatrix![1.0]).unwrap();
        let p = transition(&aux, 0.5, 1.5).unwrap();
        assert!((p.phi[(0, 0)] - (-1.0f64).exp()).abs() < 1e-14);
        // K = (1 - e^{-2})/2
        assert!((p.k[(0, 0)] - (1.0 - (-2.0f64).exp()) / 2.0).abs() < 1e-13);
    }

    #[test]
    fn constant_integrands() {
        let a = dmatrix![2.0, 0.5; 0.5, 1.0];
        let sig = crate::linalg::psd_sqrt(&a);
        let aux = LinearAuxiliary::constant(dvector![1.0, 0.0], Matrix::zeros(2, 2), sig).unwrap();
        let grid = [0.0, 0.25, 0.5];
        let gk = gain_and_covariance(&aux, 1.0, &grid).unwrap();
        for (i, (g, k)) in gk.iter().enumerate() {
            let tau = 1.0 - grid[i];
            assert!((g - dvector![tau, 0.0]).amax() < 1e-14);
            assert!((k - &a * tau).amax() < 1e-12);
        }
    }

    #[test]
    fn rk4_matches_van_loan() {
        let b = dmatrix![-0.5, 1.0; -1.0, -0.2];
        let beta = dvector![0.3, -0.1];
        let sig = dmatrix![0.7, 0.0; 0.2, 0.4];
        let cst = LinearAuxiliary::constant(beta.clone(), b.clone(), sig.clone()).unwrap();
        let tv = LinearAuxiliary::time_varying(
            2,
            2,
            Arc::new(move |_| beta.clone()),
            Arc::new(move |_| b.clone()),
            Arc::new(move |_| sig.clone()),
        );
        let p1 = transition(&cst, 0.1, 1.3).unwrap();
        let p2 = transition(&tv, 0.1, 1.3).unwrap();
        assert!((p1.phi - p2.phi).amax() < 1e-12);
        assert!((p1.g - p2.g).amax() < 1e-12);
        assert!((p1.k - p2.k).amax() < 1e-12);
    }

    #[test]
    fn composition_matches_direct() {
        let aux = LinearAuxiliary::constant(dvector![0.2], dmatrix![-0.7], dmatrix![0.9]).unwrap();
        let a = transition(&aux, 0.0, 0.4).unwrap();
        let b = transition(&aux, 0.4, 1.0).unwrap();
        let c = transition(&aux, 0.0, 1.0).unwrap();
        let ab = a.then(&b);
        assert!((ab.phi - c.phi).amax() < 1e-14);
        assert!((ab.g - c.g).amax() < 1e-14);
        assert!((ab.k - c.k).amax() < 1e-14);
    }
}
