//! Guiding terms for filtered bridges.
//!
//! A [`GuidedKernel`] holds, for one bridge segment and one auxiliary linear
//! process, everything needed to evaluate the pulling term
//! `r~(t, x) = D log p~(t, x)` and its curvature `H~(t) = -D^2 log p~(t, x)`.
//! Because the auxiliary process is linear, `p~(t, .)` is Gaussian in the
//! stacked conditioning data and `r~` is affine in `x`; the kernel stores it as
//! `r~(t, x) = offset(t) - H~(t) x` on every grid node.
//!
//! Three segment kinds exist:
//! - interior: full state at `t_left`, noisy linear observation at `S`, full state at `T = t_right`;
//! - end: full state at `t_left`, noisy linear observation at `t_right`, nothing after;
//! - start: prior plus noisy observation at `t_left`, full state at `t_right`.
//!
//! For `t < S` on interior segments `p~` is the density of `(L X_S + eta, X_T)`
//! given `X_t = x`; from `S` on it is the plain transition density to `x_T`.
//! Evaluation exactly at `S` uses the second branch.

mod closed_form;
mod transition;

use nalgebra::{Cholesky, Dyn};

pub use closed_form::ConstantPull;
pub use transition::{
    fundamental_matrix, gain_and_covariance, horizon_propagators, phi_between, transition, Propagator,
};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, log_normal_chol, min_norm_solution, symmetrize, Gaussian, Matrix, Vector};
use crate::model::{check_grid, LinearAuxiliary, Observation, StartPrior};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SegmentKind {
    Interior,
    End,
    Start,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LeftAnchor {
    State(Vector),
    Prior(StartPrior),
}

/// Conditioning data of one bridge segment.
#[derive(Debug, Clone)]
pub struct SegmentSpec {
    pub kind: SegmentKind,
    pub t_left: f64,
    pub t_right: f64,
    /// Time of the noisy observation on interior segments.
    pub s_mid: Option<f64>,
    pub left: LeftAnchor,
    pub right: Option<Vector>,
    /// Noisy observation: at `s_mid` (interior), `t_right` (end) or `t_left` (start).
    pub obs: Observation,
}

impl SegmentSpec {
    pub fn interior(
        t_left: f64,
        x_left: Vector,
        s_mid: f64,
        obs: Observation,
        t_right: f64,
        x_right: Vector,
    ) -> Result<Self> {
        let s = SegmentSpec {
            kind: SegmentKind::Interior,
            t_left,
            t_right,
            s_mid: Some(s_mid),
            left: LeftAnchor::State(x_left),
            right: Some(x_right),
            obs,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn end(t_left: f64, x_left: Vector, t_right: f64, obs: Observation) -> Result<Self> {
        let s = SegmentSpec {
            kind: SegmentKind::End,
            t_left,
            t_right,
            s_mid: None,
            left: LeftAnchor::State(x_left),
            right: None,
            obs,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn start(
        t_left: f64,
        prior: StartPrior,
        obs: Observation,
        t_right: f64,
        x_right: Vector,
    ) -> Result<Self> {
        let s = SegmentSpec {
            kind: SegmentKind::Start,
            t_left,
            t_right,
            s_mid: None,
            left: LeftAnchor::Prior(prior),
            right: Some(x_right),
            obs,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.obs.l.ncols()
    }

    /// Time of the noisy observation.
    pub fn obs_time(&self) -> f64 {
        match self.kind {
            SegmentKind::Interior => self.s_mid.expect("interior segments carry s_mid"),
            SegmentKind::End => self.t_right,
            SegmentKind::Start => self.t_left,
        }
    }

    pub fn left_state(&self) -> Option<&Vector> {
        match &self.left {
            LeftAnchor::State(x) => Some(x),
            LeftAnchor::Prior(_) => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_left < self.t_right) {
            return Err(Error::config("segment needs t_left < t_right"));
        }
        let d = self.dim();
        self.obs.validate(Some(d))?;
        match self.kind {
            SegmentKind::Interior => {
                let s = self.s_mid.ok_or_else(|| Error::config("interior segment needs s_mid"))?;
                if !(self.t_left < s && s < self.t_right) {
                    return Err(Error::config("interior segment needs t_left < s_mid < t_right"));
                }
            }
            _ => {
                if self.s_mid.is_some() {
                    return Err(Error::config("only interior segments have s_mid"));
                }
            }
        }
        let left_dim = match &self.left {
            LeftAnchor::State(x) => x.len(),
            LeftAnchor::Prior(p) => p.mean.len(),
        };
        if left_dim != d {
            return Err(Error::config("left anchor dimension does not match the observation matrix"));
        }
        match (self.kind, &self.right) {
            (SegmentKind::End, None) => {}
            (SegmentKind::End, Some(_)) => return Err(Error::config("end segments have no right anchor")),
            (_, Some(x)) if x.len() == d => {}
            _ => return Err(Error::config("right anchor missing or of the wrong dimension")),
        }
        if matches!(self.kind, SegmentKind::Start) != matches!(self.left, LeftAnchor::Prior(_)) {
            return Err(Error::config("start segments, and only those, have a prior as left anchor"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelMethod {
    /// Closed forms for interior segments with constant `a~` and `B~ = 0`, generic otherwise.
    Auto,
    /// Cholesky factorisation of the stacked covariance.
    Generic,
    /// Constant-coefficient closed forms (interior segments only).
    ClosedForm,
}

/// `r~(t, x) = offset - curvature * x`; `curvature = H~(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Guide {
    pub offset: Vector,
    pub curvature: Matrix,
}

impl Guide {
    pub fn pull(&self, x: &Vector) -> Vector {
        &self.offset - &self.curvature * x
    }
}

/// Auxiliary transitions from one time to the observation and anchor horizons.
#[derive(Debug, Clone)]
pub struct NodeQuantities {
    pub t: f64,
    /// `Phi(S, t)`, `g_S(t)`, `K_S(t)`.
    pub to_obs: Option<Propagator>,
    /// `Phi(T, t)`, `g_T(t)`, `K_T(t)`.
    pub to_anchor: Option<Propagator>,
}

/// `p~(t, x) = N(y; A x + c, cov)`.
struct GaussianForm {
    a: Matrix,
    c: Vector,
    y: Vector,
    chol: Cholesky<f64, Dyn>,
}

impl GaussianForm {
    fn guide(&self) -> Guide {
        let ua = self.chol.solve(&self.a);
        Guide {
            offset: ua.transpose() * (&self.y - &self.c),
            curvature: symmetrize(&(self.a.transpose() * ua)),
        }
    }

    fn log_density(&self, x: &Vector) -> f64 {
        log_normal_chol(&self.y, &(&self.a * x + &self.c), &self.chol)
    }
}

#[derive(Debug, Clone)]
pub struct GuidedKernel {
    spec: SegmentSpec,
    aux: LinearAuxiliary,
    grid: Vec<f64>,
    obs_index: usize,
    method: KernelMethod,
    u_s: Vector,
    obs_to_anchor: Option<Propagator>,
    closed: Option<ConstantPull>,
    nodes: Vec<NodeQuantities>,
    guides: Vec<Guide>,
}

fn locate(grid: &[f64], t: f64) -> Option<usize> {
    let tol = 1e-12 * (1.0 + t.abs());
    let k = grid.partition_point(|s| *s < t - tol);
    (k < grid.len() && (grid[k] - t).abs() <= tol).then_some(k)
}

impl GuidedKernel {
    pub fn build(spec: SegmentSpec, aux: LinearAuxiliary, grid: Vec<f64>) -> Result<Self> {
        Self::build_with_method(spec, aux, grid, KernelMethod::Auto)
    }

    pub fn build_with_method(
        spec: SegmentSpec,
        aux: LinearAuxiliary,
        grid: Vec<f64>,
        method: KernelMethod,
    ) -> Result<Self> {
        spec.validate()?;
        check_grid(&grid)?;
        let d = spec.dim();
        if aux.dim() != d {
            return Err(Error::config(format!(
                "auxiliary process has dimension {} but the segment has {d}",
                aux.dim()
            )));
        }
        if grid.len() < 2
            || (grid[0] - spec.t_left).abs() > 1e-12 * (1.0 + spec.t_left.abs())
            || (grid[grid.len() - 1] - spec.t_right).abs() > 1e-12 * (1.0 + spec.t_right.abs())
        {
            return Err(Error::config("grid must run from t_left to t_right"));
        }
        let obs_index = locate(&grid, spec.obs_time())
            .ok_or_else(|| Error::config("the observation time must be a grid node"))?;
        let interior = spec.kind == SegmentKind::Interior;
        let method = match method {
            KernelMethod::Auto if interior && aux.is_constant() => KernelMethod::ClosedForm,
            KernelMethod::Auto => KernelMethod::Generic,
            KernelMethod::ClosedForm if !(interior && aux.is_constant()) => {
                return Err(Error::config(
                    "closed-form kernels need an interior segment and constant a~ with B~ = 0",
                ))
            }
            m => m,
        };
        let u_s = min_norm_solution(&spec.obs.l, &spec.obs.v)?;

        let cells = transition::cell_transitions(&aux, &grid)?;
        let n = grid.len();
        let (to_obs, to_anchor): (Vec<Option<Propagator>>, Vec<Option<Propagator>>) = match spec.kind {
            SegmentKind::Interior => (
                transition::horizon_from_cells(&aux, spec.obs_time(), &grid, &cells)?,
                transition::horizon_from_cells(&aux, spec.t_right, &grid, &cells)?,
            ),
            SegmentKind::End => (
                transition::horizon_from_cells(&aux, spec.t_right, &grid, &cells)?,
                vec![None; n],
            ),
            SegmentKind::Start => (
                vec![None; n],
                transition::horizon_from_cells(&aux, spec.t_right, &grid, &cells)?,
            ),
        };
        let obs_to_anchor = interior.then(|| to_anchor[obs_index].clone()).flatten();
        let nodes: Vec<NodeQuantities> = grid
            .iter()
            .zip(to_obs.into_iter().zip(to_anchor))
            .map(|(&t, (to_obs, to_anchor))| NodeQuantities {
                t,
                to_obs,
                to_anchor,
            })
            .collect();

        let closed = if method == KernelMethod::ClosedForm {
            Some(ConstantPull::new(
                &aux.diffusion_matrix(spec.t_left),
                aux.beta(spec.t_left),
                spec.obs.l.clone(),
                spec.obs.sigma.clone(),
                u_s.clone(),
                spec.right.clone().expect("interior segments have a right anchor"),
                spec.obs_time(),
                spec.t_right,
            )?)
        } else {
            None
        };

        let mut kernel = GuidedKernel {
            spec,
            aux,
            grid,
            obs_index,
            method,
            u_s,
            obs_to_anchor,
            closed,
            nodes,
            guides: Vec::new(),
        };
        let guides = (0..n - 1)
            .map(|k| kernel.guide_from(&kernel.nodes[k]))
            .collect::<Result<Vec<_>>>()?;
        kernel.guides = guides;
        Ok(kernel)
    }

    pub fn spec(&self) -> &SegmentSpec {
        &self.spec
    }

    pub fn aux(&self) -> &LinearAuxiliary {
        &self.aux
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn kind(&self) -> SegmentKind {
        self.spec.kind
    }

    pub fn method(&self) -> KernelMethod {
        self.method
    }

    /// Grid index of the noisy-observation time.
    pub fn obs_index(&self) -> usize {
        self.obs_index
    }

    /// Minimum-norm solution of `L u = v`.
    pub fn u_s(&self) -> &Vector {
        &self.u_s
    }

    pub fn node(&self, k: usize) -> &NodeQuantities {
        &self.nodes[k]
    }

    /// Cached guide on grid node `k` (`k < grid.len() - 1`).
    pub fn node_guide(&self, k: usize) -> &Guide {
        &self.guides[k]
    }

    /// Node whose observed part is pinned by an exact observation.
    pub fn noiseless_snap(&self) -> Option<(usize, &Observation)> {
        match self.spec.kind {
            SegmentKind::Interior | SegmentKind::End if self.spec.obs.is_noiseless() => {
                Some((self.obs_index, &self.spec.obs))
            }
            _ => None,
        }
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(t >= self.spec.t_left && t < self.spec.t_right) {
            return Err(Error::domain(format!(
                "t = {t} outside [{}, {})",
                self.spec.t_left, self.spec.t_right
            )));
        }
        Ok(())
    }

    fn before_obs(&self, t: f64) -> bool {
        match self.spec.kind {
            SegmentKind::Interior => t < self.spec.obs_time(),
            SegmentKind::End => true,
            SegmentKind::Start => false,
        }
    }

    /// Auxiliary transitions from an arbitrary time of the segment.
    pub fn quantities_at(&self, t: f64) -> Result<NodeQuantities> {
        self.check_time(t)?;
        if let Some(k) = locate(&self.grid, t) {
            return Ok(self.nodes[k].clone());
        }
        let (to_obs, to_anchor) = match self.spec.kind {
            SegmentKind::Interior if self.before_obs(t) => {
                let p = transition(&self.aux, t, self.spec.obs_time())?;
                let q = p.then(self.obs_to_anchor.as_ref().expect("interior"));
                (Some(p), Some(q))
            }
            SegmentKind::Interior | SegmentKind::Start => {
                (None, Some(transition(&self.aux, t, self.spec.t_right)?))
            }
            SegmentKind::End => (Some(transition(&self.aux, t, self.spec.t_right)?), None),
        };
        Ok(NodeQuantities { t, to_obs, to_anchor })
    }

    fn form(&self, q: &NodeQuantities) -> Result<GaussianForm> {
        let t = q.t;
        let obs = &self.spec.obs;
        let d = self.spec.dim();
        let m = obs.dim();
        let not_pd = || Error::kernel(t, "conditioning covariance is not positive definite");
        if self.spec.kind == SegmentKind::Interior && self.before_obs(t) {
            let ps = q.to_obs.as_ref().expect("interior node before S");
            let pt = q.to_anchor.as_ref().expect("interior node");
            let phi_ts = &self.obs_to_anchor.as_ref().expect("interior").phi;
            let lk = &obs.l * &ps.k;
            let mut cov = Matrix::zeros(m + d, m + d);
            cov.view_mut((0, 0), (m, m)).copy_from(&(&lk * obs.l.transpose() + &obs.sigma));
            let c12 = &lk * phi_ts.transpose();
            cov.view_mut((0, m), (m, d)).copy_from(&c12);
            cov.view_mut((m, 0), (d, m)).copy_from(&c12.transpose());
            cov.view_mut((m, m), (d, d)).copy_from(&pt.k);
            let chol = cholesky(&cov).ok_or_else(not_pd)?;
            let mut a = Matrix::zeros(m + d, d);
            a.view_mut((0, 0), (m, d)).copy_from(&(&obs.l * &ps.phi));
            a.view_mut((m, 0), (d, d)).copy_from(&pt.phi);
            let mut c = Vector::zeros(m + d);
            c.rows_mut(0, m).copy_from(&(&obs.l * &ps.g));
            c.rows_mut(m, d).copy_from(&pt.g);
            let mut y = Vector::zeros(m + d);
            y.rows_mut(0, m).copy_from(&obs.v);
            y.rows_mut(m, d).copy_from(self.spec.right.as_ref().expect("interior"));
            Ok(GaussianForm { a, c, y, chol })
        } else if self.spec.kind == SegmentKind::End {
            let ps = q.to_obs.as_ref().expect("end node");
            let cov = &obs.l * &ps.k * obs.l.transpose() + &obs.sigma;
            let chol = cholesky(&cov).ok_or_else(not_pd)?;
            Ok(GaussianForm {
                a: &obs.l * &ps.phi,
                c: &obs.l * &ps.g,
                y: obs.v.clone(),
                chol,
            })
        } else {
            let pt = q.to_anchor.as_ref().expect("node with anchor horizon");
            let chol = cholesky(&pt.k).ok_or_else(not_pd)?;
            Ok(GaussianForm {
                a: pt.phi.clone(),
                c: pt.g.clone(),
                y: self.spec.right.clone().expect("anchored segment"),
                chol,
            })
        }
    }

    fn guide_from(&self, q: &NodeQuantities) -> Result<Guide> {
        match &self.closed {
            Some(cf) => {
                let zero = Vector::zeros(self.spec.dim());
                Ok(Guide {
                    offset: cf.pull(q.t, &zero)?,
                    curvature: symmetrize(&cf.curvature(q.t)?),
                })
            }
            None => Ok(self.form(q)?.guide()),
        }
    }

    pub fn guide_at(&self, t: f64) -> Result<Guide> {
        self.check_time(t)?;
        if let Some(k) = locate(&self.grid, t) {
            return Ok(self.guides[k].clone());
        }
        self.guide_from(&self.quantities_at(t)?)
    }

    /// Pulling term `r~(t, x)`.
    pub fn guiding_r(&self, t: f64, x: &Vector) -> Result<Vector> {
        Ok(self.guide_at(t)?.pull(x))
    }

    /// `H~(t)`; independent of `x`.
    pub fn guiding_h(&self, t: f64) -> Result<Matrix> {
        Ok(self.guide_at(t)?.curvature)
    }

    /// `log p~(t, x)`, evaluated directly as a Gaussian log-density.
    pub fn log_density(&self, t: f64, x: &Vector) -> Result<f64> {
        self.check_time(t)?;
        Ok(self.form(&self.quantities_at(t)?)?.log_density(x))
    }

    /// Covariance of the stacked conditioning data `(L X_S + eta, X_T)` given `X_t`, `t < S`.
    pub fn covariance_block(&self, t: f64) -> Result<Matrix> {
        let form = self.precision_form(t)?;
        let l = form.chol.l();
        Ok(&l * l.transpose())
    }

    fn precision_form(&self, t: f64) -> Result<GaussianForm> {
        if self.spec.kind != SegmentKind::Interior || !self.before_obs(t) {
            return Err(Error::domain("U(t) is defined for t < S on interior segments"));
        }
        self.form(&self.quantities_at(t)?)
    }

    /// Precision matrix `U(t)`, `t < S`, interior segments.
    pub fn precision_u(&self, t: f64) -> Result<Matrix> {
        match &self.closed {
            Some(cf) => {
                self.precision_form(t)?;
                cf.precision_u(t)
            }
            None => Ok(symmetrize(&self.precision_form(t)?.chol.inverse())),
        }
    }

    /// Left limit of `r~` at `S` for constant-coefficient interior kernels.
    pub fn limit_r_at_s(&self, x: &Vector) -> Result<Vector> {
        let cf = match &self.closed {
            Some(cf) => cf.clone(),
            None if self.spec.kind == SegmentKind::Interior && self.aux.is_constant() => ConstantPull::new(
                &self.aux.diffusion_matrix(self.spec.t_left),
                self.aux.beta(self.spec.t_left),
                self.spec.obs.l.clone(),
                self.spec.obs.sigma.clone(),
                self.u_s.clone(),
                self.spec.right.clone().expect("interior"),
                self.spec.obs_time(),
                self.spec.t_right,
            )?,
            None => {
                return Err(Error::domain(
                    "the limit formula needs an interior kernel with constant a~ and B~ = 0",
                ))
            }
        };
        cf.limit_at_s(x)
    }

    /// Closed-form inputs, when this kernel uses them.
    pub fn constant_pull(&self) -> Option<&ConstantPull> {
        self.closed.as_ref()
    }
}

/// Kernel for the segment next to the last observation.
pub fn boundary_kernel_end(spec: SegmentSpec, aux: LinearAuxiliary, grid: Vec<f64>) -> Result<GuidedKernel> {
    if spec.kind != SegmentKind::End {
        return Err(Error::config("boundary_kernel_end needs an end segment"));
    }
    GuidedKernel::build(spec, aux, grid)
}

/// Conjugate posterior of `X_0 | V_0 = v` for the prior `N(mu, C)` and
/// observation `V_0 = L X_0 + eta`, `eta ~ N(0, Sigma)`.
pub fn start_posterior(prior: &StartPrior, l: &Matrix, sigma: &Matrix, v: &Vector) -> Result<Gaussian> {
    let c = &prior.cov;
    let s = l * c * l.transpose() + sigma;
    let chol = cholesky(&s).ok_or_else(|| Error::domain("L C L' + Sigma is singular"))?;
    let lc = l * c;
    // gain' = S^{-1} L C
    let gain_t = chol.solve(&lc);
    let mean = &prior.mean + gain_t.transpose() * (v - l * &prior.mean);
    let cov = symmetrize(&(c - lc.transpose() * gain_t));
    Ok(Gaussian { mean, cov })
}
