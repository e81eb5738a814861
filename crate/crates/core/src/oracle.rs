//! Slow reference computations for validation.
//!
//! Nothing here calls into the kernel or bridge code: transition laws are
//! supplied explicitly or computed by a local matrix-exponential series, and
//! posteriors come from plain Gaussian conditioning. Intended for small
//! problems only.

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{cholesky, log_normal, psd_sqrt, standard_normal, symmetrize, Gaussian, Matrix, Vector};
use crate::model::StartPrior;

/// Transition `X_{i+1} = phi X_i + g + N(0, k)` of one observation interval.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearTransition {
    pub phi: Matrix,
    pub g: Vector,
    pub k: Matrix,
}

/// Discrete-time linear Gaussian model at the observation times.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearStateSpace {
    /// `transitions[i]` maps `X_{t_i}` to `X_{t_{i+1}}`.
    pub transitions: Vec<LinearTransition>,
    /// `(L_i, Sigma_i)` for every observation time.
    pub observations: Vec<(Matrix, Matrix)>,
}

/// `exp(m)` by scaling and squaring of a Taylor series.
fn expm_series(m: &Matrix) -> Matrix {
    let norm = m.iter().map(|v| v.abs()).fold(0.0, f64::max) * m.nrows() as f64;
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let a = m / 2f64.powi(squarings);
    let n = m.nrows();
    let mut term = Matrix::identity(n, n);
    let mut sum = term.clone();
    for k in 1..30 {
        term = &term * &a / k as f64;
        sum += &term;
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

/// Exact discretisation of `dX = (beta + B X) dt + sigma dW` over a step `h`.
pub fn linear_sde_transition(beta: &Vector, bmat: &Matrix, sigma: &Matrix, h: f64) -> LinearTransition {
    let d = beta.len();
    let a = sigma * sigma.transpose();
    // drift block [[B, beta], [0, 0]]
    let mut m = Matrix::zeros(d + 1, d + 1);
    m.view_mut((0, 0), (d, d)).copy_from(bmat);
    m.view_mut((0, d), (d, 1)).copy_from(beta);
    let e = expm_series(&(m * h));
    let phi = e.view((0, 0), (d, d)).into_owned();
    let g = e.view((0, d), (d, 1)).column(0).into_owned();
    // covariance block [[-B, a], [0, B']]
    let mut c = Matrix::zeros(2 * d, 2 * d);
    c.view_mut((0, 0), (d, d)).copy_from(&(-bmat));
    c.view_mut((0, d), (d, d)).copy_from(&a);
    c.view_mut((d, d), (d, d)).copy_from(&bmat.transpose());
    let f = expm_series(&(c * h));
    let f22 = f.view((d, d), (d, d)).into_owned();
    let f12 = f.view((0, d), (d, d)).into_owned();
    LinearTransition {
        phi,
        g,
        k: symmetrize(&(f22.transpose() * f12)),
    }
}

/// Closed-form transition of `dX = theta1 (theta2 - X) dt + theta3 dW` over `h`.
pub fn ou_transition(theta: &[f64], h: f64) -> LinearTransition {
    let (a, mu, s) = (theta[0], theta[1], theta[2]);
    let e = (-a * h).exp();
    let var = if a.abs() < 1e-12 {
        s * s * h
    } else {
        s * s * (1.0 - e * e) / (2.0 * a)
    };
    LinearTransition {
        phi: Matrix::from_element(1, 1, e),
        g: Vector::from_element(1, mu * (1.0 - e)),
        k: Matrix::from_element(1, 1, var),
    }
}

impl LinearStateSpace {
    pub fn new(transitions: Vec<LinearTransition>, observations: Vec<(Matrix, Matrix)>) -> Result<Self> {
        if observations.len() != transitions.len() + 1 {
            return Err(Error::config("need one more observation than transitions"));
        }
        Ok(LinearStateSpace {
            transitions,
            observations,
        })
    }

    /// State space of a linear SDE with constant coefficients observed at `times`.
    pub fn from_linear_sde(
        beta: &Vector,
        bmat: &Matrix,
        sigma: &Matrix,
        times: &[f64],
        observations: Vec<(Matrix, Matrix)>,
    ) -> Result<Self> {
        let transitions = times
            .windows(2)
            .map(|w| linear_sde_transition(beta, bmat, sigma, w[1] - w[0]))
            .collect();
        Self::new(transitions, observations)
    }

    pub fn ornstein_uhlenbeck(theta: &[f64], times: &[f64], observations: Vec<(Matrix, Matrix)>) -> Result<Self> {
        let transitions = times.windows(2).map(|w| ou_transition(theta, w[1] - w[0])).collect();
        Self::new(transitions, observations)
    }

    pub fn dim(&self) -> usize {
        self.observations[0].0.ncols()
    }

    /// Mean and covariance of the stacked states `(X_0, ..., X_n)` under the prior.
    pub fn joint_prior(&self, prior: &StartPrior) -> (Vector, Matrix) {
        let d = self.dim();
        let n = self.transitions.len() + 1;
        let mut mean = Vector::zeros(n * d);
        let mut cov = Matrix::zeros(n * d, n * d);
        mean.rows_mut(0, d).copy_from(&prior.mean);
        cov.view_mut((0, 0), (d, d)).copy_from(&prior.cov);
        for (i, tr) in self.transitions.iter().enumerate() {
            let (a, b) = (i * d, (i + 1) * d);
            let m = &tr.phi * mean.rows(a, d) + &tr.g;
            mean.rows_mut(b, d).copy_from(&m);
            // Cov(X_j, X_{i+1}) = Cov(X_j, X_i) phi'
            let cross = cov.view((0, a), (b, d)) * tr.phi.transpose();
            cov.view_mut((0, b), (b, d)).copy_from(&cross);
            cov.view_mut((b, 0), (d, b)).copy_from(&cross.transpose());
            let pii = &tr.phi * cov.view((a, a), (d, d)) * tr.phi.transpose() + &tr.k;
            cov.view_mut((b, b), (d, d)).copy_from(&symmetrize(&pii));
        }
        (mean, cov)
    }

    /// Block-diagonal observation operator and noise covariance.
    fn stacked_observation(&self) -> (Matrix, Matrix) {
        let d = self.dim();
        let m_total: usize = self.observations.iter().map(|(l, _)| l.nrows()).sum();
        let n = self.observations.len();
        let mut big_l = Matrix::zeros(m_total, n * d);
        let mut big_s = Matrix::zeros(m_total, m_total);
        let mut r = 0;
        for (i, (l, s)) in self.observations.iter().enumerate() {
            let m = l.nrows();
            big_l.view_mut((r, i * d), (m, d)).copy_from(l);
            big_s.view_mut((r, r), (m, m)).copy_from(s);
            r += m;
        }
        (big_l, big_s)
    }
}

fn stack(values: &[Vector]) -> Vector {
    let total: usize = values.iter().map(|v| v.len()).sum();
    let mut out = Vector::zeros(total);
    let mut r = 0;
    for v in values {
        out.rows_mut(r, v.len()).copy_from(v);
        r += v.len();
    }
    out
}

/// Exact log-likelihood of the observations by the Kalman filter.
pub fn kalman_loglik(ssm: &LinearStateSpace, values: &[Vector], prior: &StartPrior) -> Result<f64> {
    if values.is_empty() {
        return Ok(0.0);
    }
    if values.len() != ssm.observations.len() {
        return Err(Error::config("one observed value per observation time is required"));
    }
    let mut m = prior.mean.clone();
    let mut p = prior.cov.clone();
    let mut ll = 0.0;
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            let tr = &ssm.transitions[i - 1];
            m = &tr.phi * m + &tr.g;
            p = symmetrize(&(&tr.phi * &p * tr.phi.transpose() + &tr.k));
        }
        let (l, sigma) = &ssm.observations[i];
        let s = l * &p * l.transpose() + sigma;
        let chol = cholesky(&s).ok_or_else(|| Error::numeric(i as f64, "innovation covariance is not positive definite"))?;
        let resid = v - l * &m;
        ll += crate::linalg::log_normal_chol(v, &(l * &m), &chol);
        let lp = l * &p;
        let gain_t = chol.solve(&lp);
        m += gain_t.transpose() * resid;
        p = symmetrize(&(&p - lp.transpose() * gain_t));
    }
    Ok(ll)
}

/// Log-likelihood from the joint Gaussian law of all observations.
pub fn joint_gaussian_loglik(ssm: &LinearStateSpace, values: &[Vector], prior: &StartPrior) -> Result<f64> {
    let (mean, cov) = ssm.joint_prior(prior);
    let (big_l, big_s) = ssm.stacked_observation();
    log_normal(&stack(values), &(&big_l * mean), &(&big_l * cov * big_l.transpose() + big_s))
}

/// `X | Y = y` for jointly Gaussian `(X, Y)`.
pub fn condition_gaussian(
    mean_x: &Vector,
    cov_xx: &Matrix,
    cov_xy: &Matrix,
    mean_y: &Vector,
    cov_yy: &Matrix,
    y: &Vector,
) -> Result<Gaussian> {
    let chol = cholesky(cov_yy).ok_or_else(|| Error::domain("conditioning covariance is singular"))?;
    let w = chol.solve(&cov_xy.transpose());
    Ok(Gaussian {
        mean: mean_x + w.transpose() * (y - mean_y),
        cov: symmetrize(&(cov_xx - cov_xy * w)),
    })
}

/// Joint posterior of the states `(X_0, ..., X_n)` given all observations.
pub fn smoothing_posterior(ssm: &LinearStateSpace, values: &[Vector], prior: &StartPrior) -> Result<Gaussian> {
    let (mean, cov) = ssm.joint_prior(prior);
    let (big_l, big_s) = ssm.stacked_observation();
    let cov_xy = &cov * big_l.transpose();
    let cov_yy = &big_l * &cov * big_l.transpose() + big_s;
    condition_gaussian(&mean, &cov, &cov_xy, &(&big_l * &mean), &cov_yy, &stack(values))
}

/// Marginal of state `i` extracted from a joint law over stacked states.
pub fn marginal(joint: &Gaussian, i: usize, d: usize) -> Gaussian {
    Gaussian {
        mean: joint.mean.rows(i * d, d).into_owned(),
        cov: joint.cov.view((i * d, i * d), (d, d)).into_owned(),
    }
}

/// Central-difference gradient.
pub fn finite_diff_grad(f: impl Fn(&Vector) -> f64, x: &Vector, h: f64) -> Vector {
    Vector::from_fn(x.len(), |i, _| {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        (f(&xp) - f(&xm)) / (2.0 * h)
    })
}

/// Central-difference Hessian.
pub fn finite_diff_hess(f: impl Fn(&Vector) -> f64, x: &Vector, h: f64) -> Matrix {
    let d = x.len();
    let fx = f(x);
    let shifted = |i: usize, si: f64, j: usize, sj: f64| {
        let mut y = x.clone();
        y[i] += si * h;
        y[j] += sj * h;
        f(&y)
    };
    let mut hess = Matrix::zeros(d, d);
    for i in 0..d {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        hess[(i, i)] = (f(&xp) - 2.0 * fx + f(&xm)) / (h * h);
        for j in 0..i {
            let v = (shifted(i, 1.0, j, 1.0) - shifted(i, 1.0, j, -1.0) - shifted(i, -1.0, j, 1.0)
                + shifted(i, -1.0, j, -1.0))
                / (4.0 * h * h);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    hess
}

/// Richardson extrapolation of the central-difference gradient (steps `h`, `h/2`).
pub fn richardson_grad(f: impl Fn(&Vector) -> f64, x: &Vector, h: f64) -> Vector {
    let coarse = finite_diff_grad(&f, x, h);
    let fine = finite_diff_grad(&f, x, h / 2.0);
    (fine * 4.0 - coarse) / 3.0
}

/// Small bridge problem: start at `x_a`, noisy observation at `S`, optionally
/// an exact state `x_t` at `T`.
#[derive(Debug, Clone)]
pub struct BridgeProblem {
    pub x_a: Vector,
    pub to_s: LinearTransition,
    pub l: Matrix,
    pub sigma: Matrix,
    pub v: Vector,
    pub to_t: Option<(LinearTransition, Vector)>,
}

impl BridgeProblem {
    /// Exact law of `X_S` given the conditioning data.
    pub fn conditional(&self) -> Result<Gaussian> {
        let d = self.x_a.len();
        let m = self.l.nrows();
        let mean_s = &self.to_s.phi * &self.x_a + &self.to_s.g;
        let p = &self.to_s.k;
        let (mean_y, cov_xy, cov_yy, y) = match &self.to_t {
            None => (
                &self.l * &mean_s,
                p * self.l.transpose(),
                &self.l * p * self.l.transpose() + &self.sigma,
                self.v.clone(),
            ),
            Some((tr, x_t)) => {
                let mean_t = &tr.phi * &mean_s + &tr.g;
                let mut mean_y = Vector::zeros(m + d);
                mean_y.rows_mut(0, m).copy_from(&(&self.l * &mean_s));
                mean_y.rows_mut(m, d).copy_from(&mean_t);
                let mut cov_xy = Matrix::zeros(d, m + d);
                cov_xy.view_mut((0, 0), (d, m)).copy_from(&(p * self.l.transpose()));
                cov_xy.view_mut((0, m), (d, d)).copy_from(&(p * tr.phi.transpose()));
                let mut cov_yy = Matrix::zeros(m + d, m + d);
                cov_yy
                    .view_mut((0, 0), (m, m))
                    .copy_from(&(&self.l * p * self.l.transpose() + &self.sigma));
                let c12 = &self.l * p * tr.phi.transpose();
                cov_yy.view_mut((0, m), (m, d)).copy_from(&c12);
                cov_yy.view_mut((m, 0), (d, m)).copy_from(&c12.transpose());
                cov_yy
                    .view_mut((m, m), (d, d))
                    .copy_from(&(&tr.phi * p * tr.phi.transpose() + &tr.k));
                let mut y = Vector::zeros(m + d);
                y.rows_mut(0, m).copy_from(&self.v);
                y.rows_mut(m, d).copy_from(x_t);
                (mean_y, cov_xy, cov_yy, y)
            }
        };
        condition_gaussian(&mean_s, p, &cov_xy, &mean_y, &cov_yy, &y)
    }
}

/// Empirical moments of accepted draws.
#[derive(Debug, Clone)]
pub struct EmpiricalMoments {
    pub mean: Vector,
    pub cov: Matrix,
    /// Monte-Carlo standard error of each mean component.
    pub std_err: Vector,
    pub accepted: usize,
    pub proposed: usize,
}

/// Moments of `X_S` by rejection: draw `X_S` from the forward law, accept with
/// probability `q(v - L X_S) p(S, X_S; T, x_T)` divided by its supremum.
pub fn rejection_bridge_sampler<R: Rng + ?Sized>(
    problem: &BridgeProblem,
    n_samples: usize,
    rng: &mut R,
) -> Result<EmpiricalMoments> {
    let d = problem.x_a.len();
    let mean_s = &problem.to_s.phi * &problem.x_a + &problem.to_s.g;
    let root = psd_sqrt(&problem.to_s.k);
    let obs_chol = cholesky(&problem.sigma).ok_or_else(|| Error::domain("rejection sampling needs a nonsingular Sigma"))?;
    let end = match &problem.to_t {
        Some((tr, x_t)) => {
            let c = cholesky(&tr.k).ok_or_else(|| Error::domain("end transition covariance is singular"))?;
            Some((tr, x_t, c))
        }
        None => None,
    };
    let mut draws = Vec::with_capacity(n_samples);
    let mut proposed = 0usize;
    let limit = n_samples.saturating_mul(1_000_000).max(1_000_000);
    while draws.len() < n_samples {
        proposed += 1;
        if proposed > limit {
            return Err(Error::domain(format!(
                "acceptance rate below 1e-6 ({} of {proposed})",
                draws.len()
            )));
        }
        let x = &mean_s + &root * standard_normal(rng, d);
        let r = &problem.v - &problem.l * &x;
        let z = obs_chol.l().solve_lower_triangular(&r).expect("positive diagonal");
        let mut log_acc = -0.5 * z.norm_squared();
        if let Some((tr, x_t, c)) = &end {
            let r = *x_t - (&tr.phi * &x + &tr.g);
            let z = c.l().solve_lower_triangular(&r).expect("positive diagonal");
            log_acc -= 0.5 * z.norm_squared();
        }
        if rng.random::<f64>().ln() < log_acc {
            draws.push(x);
        }
    }
    let n = draws.len() as f64;
    let mean = draws.iter().fold(Vector::zeros(d), |a, x| a + x) / n;
    let cov = draws
        .iter()
        .fold(Matrix::zeros(d, d), |a, x| a + (x - &mean) * (x - &mean).transpose())
        / (n - 1.0);
    let std_err = cov.diagonal().map(|v| (v / n).sqrt());
    Ok(EmpiricalMoments {
        mean,
        cov,
        std_err,
        accepted: draws.len(),
        proposed,
    })
}

/// Inverse-gamma law with shape `alpha` and scale `beta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverseGamma {
    pub alpha: f64,
    pub beta: f64,
}

impl InverseGamma {
    pub fn log_density(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return f64::NEG_INFINITY;
        }
        self.alpha * self.beta.ln() - ln_gamma(self.alpha) - (self.alpha + 1.0) * x.ln() - self.beta / x
    }

    pub fn mean(&self) -> f64 {
        self.beta / (self.alpha - 1.0)
    }

    pub fn variance(&self) -> f64 {
        let a1 = self.alpha - 1.0;
        self.beta * self.beta / (a1 * a1 * (self.alpha - 2.0))
    }

    /// Posterior of a variance `eps` after observing residuals `r_i ~ N(0, eps I)`.
    pub fn posterior(&self, residuals: &[Vector]) -> InverseGamma {
        let count: usize = residuals.iter().map(|r| r.len()).sum();
        let ss: f64 = residuals.iter().map(|r| r.norm_squared()).sum();
        InverseGamma {
            alpha: self.alpha + count as f64 / 2.0,
            beta: self.beta + ss / 2.0,
        }
    }
}

/// Lanczos approximation of `ln Gamma(x)`, `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        return (std::f64::consts::PI / (std::f64::consts::PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let t = x + G + 0.5;
    let series = C[1..].iter().enumerate().fold(C[0], |a, (i, c)| a + c / (x + i as f64 + 1.0));
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + series.ln()
}

/// Normalised posterior on a parameter grid from log-likelihood and log-prior values.
pub fn grid_posterior(points: &[f64], log_post: impl Fn(f64) -> f64) -> Vec<f64> {
    let lp: Vec<f64> = points.iter().map(|&p| log_post(p)).collect();
    let max = lp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = lp.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    w.iter().map(|x| x / total).collect()
}
