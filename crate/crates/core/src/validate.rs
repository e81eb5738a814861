//! Self-checks of the guiding terms, bridges and oracles on random problems.
//!
//! Each check reports the largest error it saw and the tolerance it was held
//! to. [`run_validation`] bundles them into a report.

use std::fmt;

use nalgebra::{dmatrix, dvector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bridge::{forward_guided_from, inverse_innovation, log_psi, InnovationSegment};
use crate::error::Result;
use crate::kernel::{GuidedKernel, KernelMethod, SegmentKind, SegmentSpec};
use crate::linalg::{standard_normal, Matrix, Vector};
use crate::model::{uniform_grid, DiffusionModel, LinearAuxiliary, ModelRegistry, Observation, StartPrior};
use crate::oracle::{finite_diff_grad, finite_diff_hess, joint_gaussian_loglik, kalman_loglik, LinearStateSpace};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub max_error: f64,
    pub tolerance: f64,
    pub cases: usize,
}

impl CheckResult {
    fn new(name: &str, max_error: f64, tolerance: f64, cases: usize) -> Self {
        CheckResult {
            name: name.to_string(),
            passed: max_error <= tolerance,
            max_error,
            tolerance,
            cases,
        }
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<34} max error {:.3e} (tolerance {:.1e}, {} cases)",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.max_error,
            self.tolerance,
            self.cases
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        let failed = self.checks.iter().filter(|c| !c.passed).count();
        write!(f, "{} checks, {failed} failed", self.checks.len())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ValidateOptions {
    pub seed: u64,
    /// Random configurations per check.
    pub cases: usize,
    /// Constant added to every component of the pulling term before it is
    /// compared with finite differences (negative control).
    pub guiding_bias: f64,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        ValidateOptions {
            seed: 20240101,
            cases: 200,
            guiding_bias: 0.0,
        }
    }
}

/// Randomly drawn kernel and an evaluation time inside its domain.
#[derive(Debug, Clone)]
pub struct KernelCase {
    pub kernel: GuidedKernel,
    pub t: f64,
    pub x: Vector,
}

fn random_matrix<R: Rng + ?Sized>(rng: &mut R, r: usize, c: usize, scale: f64) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal) * scale)
}

/// Lower-triangular dispersion with diagonal in `[0.5, 1.5]`, so that
/// `sigma sigma'` stays well conditioned.
pub fn random_dispersion<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Matrix {
    Matrix::from_fn(d, d, |i, j| match i.cmp(&j) {
        std::cmp::Ordering::Less => 0.0,
        std::cmp::Ordering::Equal => rng.random_range(0.5..1.5),
        std::cmp::Ordering::Greater => rng.sample::<f64, _>(rand_distr::StandardNormal) * 0.3,
    })
}

fn random_spd<R: Rng + ?Sized>(rng: &mut R, d: usize, floor: f64) -> Matrix {
    let a = random_matrix(rng, d, d, 0.5);
    &a * a.transpose() + Matrix::identity(d, d) * floor
}

/// Random full-row-rank `m x d` matrix.
pub fn random_observation_matrix<R: Rng + ?Sized>(rng: &mut R, m: usize, d: usize) -> Matrix {
    loop {
        let l = random_matrix(rng, m, d, 1.0);
        let g = &l * l.transpose();
        if g.clone().try_inverse().is_some() && g.determinant().abs() > 1e-2 {
            return l;
        }
    }
}

/// Random linear auxiliary process: constant with `B = 0`, constant with
/// `B != 0`, or time-varying, chosen uniformly.
pub fn random_auxiliary<R: Rng + ?Sized>(rng: &mut R, d: usize) -> LinearAuxiliary {
    let beta = random_matrix(rng, d, 1, 0.5).column(0).into_owned();
    let sigma = random_dispersion(rng, d);
    match rng.random_range(0..3) {
        0 => LinearAuxiliary::constant(beta, Matrix::zeros(d, d), sigma).expect("nonsingular sigma"),
        1 => LinearAuxiliary::constant(beta, random_matrix(rng, d, d, 0.5), sigma).expect("nonsingular sigma"),
        _ => {
            let b0 = random_matrix(rng, d, d, 0.4);
            let b1 = random_matrix(rng, d, d, 0.4);
            let s0 = sigma;
            LinearAuxiliary::time_varying(
                d,
                d,
                std::sync::Arc::new(move |t: f64| &beta * (1.0 + 0.5 * t.sin())),
                std::sync::Arc::new(move |t: f64| &b0 + &b1 * t),
                std::sync::Arc::new(move |t: f64| &s0 * (1.0 + 0.3 * t.cos())),
            )
            .with_max_step(2e-3)
        }
    }
}

/// A random kernel of the given kind (random kind when `None`) with dimension
/// up to 4, a positive-definite `Sigma`, and an evaluation time at least
/// `margin` away from every horizon.
pub fn random_kernel_case<R: Rng + ?Sized>(rng: &mut R, kind: Option<SegmentKind>, margin: f64) -> Result<KernelCase> {
    let d = rng.random_range(1..=4);
    let m = rng.random_range(1..=d);
    let kind = kind.unwrap_or(match rng.random_range(0..3) {
        0 => SegmentKind::Interior,
        1 => SegmentKind::End,
        _ => SegmentKind::Start,
    });
    let obs = Observation::new(
        random_observation_matrix(rng, m, d),
        random_spd(rng, m, 0.05),
        standard_normal(rng, m),
    )?;
    let aux = random_auxiliary(rng, d);
    let s = rng.random_range(0.3..1.0);
    let t_end = s + rng.random_range(0.3..1.0);
    let x_left = standard_normal(rng, d);
    let x_right = standard_normal(rng, d);
    let (spec, grid, t) = match kind {
        SegmentKind::Interior => {
            let mut grid = uniform_grid(0.0, s, 20);
            grid.extend(uniform_grid(s, t_end, 20).into_iter().skip(1));
            let t = if rng.random_bool(0.5) {
                rng.random_range(0.0..s - margin)
            } else {
                rng.random_range(s..t_end - margin)
            };
            (SegmentSpec::interior(0.0, x_left, s, obs, t_end, x_right)?, grid, t)
        }
        SegmentKind::End => (
            SegmentSpec::end(0.0, x_left, s, obs)?,
            uniform_grid(0.0, s, 20),
            rng.random_range(0.0..s - margin),
        ),
        SegmentKind::Start => {
            let prior = StartPrior::new(standard_normal(rng, d), random_spd(rng, d, 0.1))?;
            (
                SegmentSpec::start(0.0, prior, obs, t_end, x_right)?,
                uniform_grid(0.0, t_end, 20),
                rng.random_range(0.0..t_end - margin),
            )
        }
    };
    let kernel = GuidedKernel::build(spec, aux, grid)?;
    Ok(KernelCase {
        kernel,
        t,
        x: standard_normal(rng, d) * 1.5,
    })
}

/// Worst relative gradient error and worst absolute Hessian error of
/// `r~`, `H~` against finite differences of `log p~`.
pub fn gradient_consistency(cases: &[KernelCase], bias: f64) -> Result<(f64, f64)> {
    let mut worst_r: f64 = 0.0;
    let mut worst_h: f64 = 0.0;
    for c in cases {
        let k = &c.kernel;
        let f = |x: &Vector| k.log_density(c.t, x).expect("t inside the domain");
        let fd_r = finite_diff_grad(f, &c.x, 1e-4);
        let fd_h = -finite_diff_hess(f, &c.x, 1e-2);
        let r = k.guiding_r(c.t, &c.x)?.add_scalar(bias);
        let h = k.guiding_h(c.t)?;
        worst_r = worst_r.max((r - &fd_r).norm() / fd_r.norm().max(1.0));
        worst_h = worst_h.max((h - fd_h).amax());
    }
    Ok((worst_r, worst_h))
}

fn relative(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).amax() / b.amax().max(1.0)
}

fn rel_vec(a: &Vector, b: &Vector) -> f64 {
    (a - b).amax() / b.amax().max(1.0)
}

/// Largest relative disagreement between the constant-coefficient closed forms
/// and the general factorisation: `(N, Q, r~, H~, U, limit at S)`.
pub fn closed_form_agreement<R: Rng + ?Sized>(rng: &mut R, points: usize) -> Result<[f64; 6]> {
    let mut worst = [0.0f64; 6];
    for _ in 0..points {
        let d = rng.random_range(1..=4);
        let m = rng.random_range(1..=d);
        let aux = LinearAuxiliary::constant(
            random_matrix(rng, d, 1, 0.5).column(0).into_owned(),
            Matrix::zeros(d, d),
            random_dispersion(rng, d),
        )?;
        let obs = Observation::new(
            random_observation_matrix(rng, m, d),
            random_spd(rng, m, 0.05),
            standard_normal(rng, m),
        )?;
        let s = rng.random_range(0.3..1.0);
        let t_end = s + rng.random_range(0.3..1.0);
        let spec = SegmentSpec::interior(0.0, standard_normal(rng, d), s, obs.clone(), t_end, standard_normal(rng, d))?;
        let mut grid = uniform_grid(0.0, s, 10);
        grid.extend(uniform_grid(s, t_end, 10).into_iter().skip(1));
        let gen = GuidedKernel::build_with_method(spec.clone(), aux.clone(), grid.clone(), KernelMethod::Generic)?;
        let cf = GuidedKernel::build_with_method(spec, aux, grid, KernelMethod::ClosedForm)?;
        let closed = cf.constant_pull().expect("closed-form kernel");
        let t = rng.random_range(0.0..s - 0.02);
        let x = standard_normal(rng, d);

        let u_gen = gen.precision_u(t)?;
        let n_gen = u_gen.view((0, 0), (m, m)).into_owned() * ((s - t) * (t_end - s) / (t_end - t));
        let n_cf = closed.n(t)?;
        worst[0] = worst[0].max(relative(&n_cf, &n_gen));
        let q_gen = obs.l.transpose() * &n_gen * &obs.l;
        worst[1] = worst[1].max(relative(&closed.q(t)?, &q_gen));
        let r_gen = gen.guiding_r(t, &x)?;
        worst[2] = worst[2].max(rel_vec(&cf.guiding_r(t, &x)?, &r_gen));
        let t2 = rng.random_range(s..t_end - 0.02);
        let r2 = gen.guiding_r(t2, &x)?;
        worst[2] = worst[2].max(rel_vec(&cf.guiding_r(t2, &x)?, &r2));
        worst[3] = worst[3].max(relative(&cf.guiding_h(t)?, &gen.guiding_h(t)?));
        worst[4] = worst[4].max(relative(&cf.precision_u(t)?, &u_gen));
        // polynomial extrapolation of the generic pull to t = S
        let deltas = [1e-6, 2e-6, 4e-6, 8e-6];
        let mut limit = Vector::zeros(d);
        for (k, dk) in deltas.iter().enumerate() {
            let w: f64 = deltas
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != k)
                .map(|(_, dj)| dj / (dj - dk))
                .product();
            limit += gen.guiding_r(s - dk, &x)? * w;
        }
        worst[5] = worst[5].max(rel_vec(&cf.limit_r_at_s(&x)?, &limit));
    }
    Ok(worst)
}

/// Planar Brownian motion observed in its first coordinate at `S` and fully at
/// `T`: worst error of `N(t)` against `(S-t)(T-S)/((S-t)(T-S) + Sigma (T-t))`
/// and of the second pulling component against `(x_T - x)/(T - t)`.
pub fn planar_example(times: usize) -> Result<(f64, f64)> {
    let (s, t_end, sigma) = (1.0, 2.5, 0.3);
    let obs = Observation::new(dmatrix![1.0, 0.0], dmatrix![sigma], dvector![0.4])?;
    let x_t = dvector![-0.2, 0.9];
    let spec = SegmentSpec::interior(0.0, dvector![0.0, 0.0], s, obs, t_end, x_t.clone())?;
    let mut grid = uniform_grid(0.0, s, 20);
    grid.extend(uniform_grid(s, t_end, 20).into_iter().skip(1));
    let aux = LinearAuxiliary::brownian(Matrix::identity(2, 2))?;
    let gen = GuidedKernel::build_with_method(spec.clone(), aux.clone(), grid.clone(), KernelMethod::Generic)?;
    let cf = GuidedKernel::build_with_method(spec, aux, grid, KernelMethod::ClosedForm)?;
    let x = dvector![0.3, -0.7];
    let mut worst_n: f64 = 0.0;
    let mut worst_r: f64 = 0.0;
    for j in 0..times {
        let t = s * j as f64 / times as f64;
        let expect = (s - t) * (t_end - s) / ((s - t) * (t_end - s) + sigma * (t_end - t));
        let n_cf = cf.constant_pull().expect("closed form").n(t)?[(0, 0)];
        let n_gen = gen.precision_u(t)?[(0, 0)] * (s - t) * (t_end - s) / (t_end - t);
        worst_n = worst_n.max((n_cf - expect).abs()).max((n_gen - expect).abs());
        let second = (x_t[1] - x[1]) / (t_end - t);
        worst_r = worst_r
            .max((gen.guiding_r(t, &x)?[1] - second).abs())
            .max((cf.guiding_r(t, &x)?[1] - second).abs());
    }
    Ok((worst_n, worst_r))
}

/// Worst node error of `forward_guided(inverse_innovation(path))` over random
/// segments of the built-in nonlinear models, with innovation error excluding
/// the anchored last cell.
pub fn round_trip<R: Rng + ?Sized>(rng: &mut R, segments: usize) -> Result<(f64, f64)> {
    let registry = ModelRegistry::with_builtins();
    let models: [(&str, Vec<f64>); 3] = [
        ("ou", vec![0.8, 0.5, 0.7]),
        ("2d-bm", vec![0.9]),
        ("double-well", vec![1.0, 0.8]),
    ];
    let mut worst_path: f64 = 0.0;
    let mut worst_z: f64 = 0.0;
    for j in 0..segments {
        let (name, theta) = &models[j % models.len()];
        let model = registry.build(name, None)?;
        let d = model.dim_state();
        let kind = [SegmentKind::Interior, SegmentKind::End, SegmentKind::Start][(j / models.len()) % 3];
        let obs = Observation::new(
            random_observation_matrix(rng, 1, d),
            Matrix::identity(1, 1) * 0.2,
            standard_normal(rng, 1),
        )?;
        let x_left = standard_normal(rng, d) * 0.5;
        let x_right = standard_normal(rng, d) * 0.5;
        let (spec, grid) = match kind {
            SegmentKind::Interior => {
                let mut g = uniform_grid(0.0, 0.5, 25);
                g.extend(uniform_grid(0.5, 1.0, 25).into_iter().skip(1));
                (SegmentSpec::interior(0.0, x_left.clone(), 0.5, obs, 1.0, x_right)?, g)
            }
            SegmentKind::End => (SegmentSpec::end(0.0, x_left.clone(), 1.0, obs)?, uniform_grid(0.0, 1.0, 50)),
            SegmentKind::Start => {
                let prior = StartPrior::new(Vector::zeros(d), Matrix::identity(d, d))?;
                (SegmentSpec::start(0.0, prior, obs, 1.0, x_right)?, uniform_grid(0.0, 1.0, 50))
            }
        };
        let sigma = model.dispersion(theta, 1.0, &x_left);
        let aux = LinearAuxiliary::constant(Vector::zeros(d), Matrix::zeros(d, d), sigma)?;
        let kernel = GuidedKernel::build(spec, aux, grid)?;
        let z = InnovationSegment::fresh(kernel.grid(), d, rng);
        let path = forward_guided_from(&model, theta, &kernel, &x_left, &z)?;
        let z_back = inverse_innovation(&model, theta, &kernel, &path)?;
        let again = forward_guided_from(&model, theta, &kernel, &x_left, &z_back)?;
        for (a, b) in path.values.iter().zip(&again.values) {
            worst_path = worst_path.max((a - b).amax());
        }
        let cells = if kind == SegmentKind::End { z.increments.len() } else { z.increments.len() - 1 };
        for k in 0..cells {
            worst_z = worst_z.max((&z.increments[k] - &z_back.increments[k]).amax());
        }
    }
    Ok((worst_path, worst_z))
}

/// `log Psi` on segments where the model coincides with its auxiliary process.
pub fn matched_model_weight<R: Rng + ?Sized>(rng: &mut R, segments: usize) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for _ in 0..segments {
        let case = random_kernel_case(rng, None, 0.05)?;
        let k = &case.kernel;
        let model = DiffusionModel::linear(k.aux().clone());
        let x0 = match k.spec().left_state() {
            Some(x) => x.clone(),
            None => standard_normal(rng, k.spec().dim()),
        };
        let z = InnovationSegment::fresh(k.grid(), k.spec().dim(), rng);
        let path = forward_guided_from(&model, &[], k, &x0, &z)?;
        worst = worst.max(log_psi(&model, &[], k, &path)?.abs());
    }
    Ok(worst)
}

/// Kalman filter against the stacked joint Gaussian on random small problems.
pub fn kalman_vs_joint<R: Rng + ?Sized>(rng: &mut R, problems: usize) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for _ in 0..problems {
        let d = rng.random_range(1..=2);
        let n = rng.random_range(1..=6);
        let times: Vec<f64> = (0..n).map(|i| i as f64 * 0.4).collect();
        let obs: Vec<(Matrix, Matrix)> = (0..n)
            .map(|_| {
                let m = rng.random_range(1..=d);
                (random_observation_matrix(rng, m, d), random_spd(rng, m, 0.05))
            })
            .collect();
        let values: Vec<Vector> = obs.iter().map(|(l, _)| standard_normal(rng, l.nrows())).collect();
        let ssm = LinearStateSpace::from_linear_sde(
            &(random_matrix(rng, d, 1, 0.5).column(0).into_owned()),
            &random_matrix(rng, d, d, 0.5),
            &(random_dispersion(rng, d)),
            &times,
            obs,
        )?;
        let prior = StartPrior::new(standard_normal(rng, d), random_spd(rng, d, 0.2))?;
        let a = kalman_loglik(&ssm, &values, &prior)?;
        let b = joint_gaussian_loglik(&ssm, &values, &prior)?;
        worst = worst.max((a - b).abs());
    }
    Ok(worst)
}

/// Run every check.
pub fn run_validation(opts: &ValidateOptions) -> Result<ValidationReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let cases = opts.cases.max(1);
    let mut report = ValidationReport::default();

    let kernels = (0..cases)
        .map(|_| random_kernel_case(&mut rng, None, 0.05))
        .collect::<Result<Vec<_>>>()?;
    let (gr, gh) = gradient_consistency(&kernels, opts.guiding_bias)?;
    report.checks.push(CheckResult::new("pulling term vs D log p~", gr, 1e-6, cases));
    report.checks.push(CheckResult::new("curvature vs -D^2 log p~", gh, 1e-5, cases));

    let ends = (0..cases.div_ceil(4))
        .map(|_| random_kernel_case(&mut rng, Some(SegmentKind::End), 0.05))
        .collect::<Result<Vec<_>>>()?;
    let (er, eh) = gradient_consistency(&ends, opts.guiding_bias)?;
    report.checks.push(CheckResult::new("end-segment pull vs D log p~", er, 1e-6, ends.len()));
    report.checks.push(CheckResult::new("end-segment curvature", eh, 1e-5, ends.len()));

    let cf = closed_form_agreement(&mut rng, cases.div_ceil(2))?;
    let names = ["closed form N", "closed form Q", "closed form pull", "closed form curvature", "closed form precision", "limit at the observation time"];
    for (name, err) in names.iter().zip(cf) {
        report.checks.push(CheckResult::new(name, err, 1e-10, cases.div_ceil(2)));
    }

    let (pn, pr) = planar_example(20)?;
    report.checks.push(CheckResult::new("planar Brownian example N(t)", pn, 1e-12, 20));
    report.checks.push(CheckResult::new("planar Brownian second component", pr, 1e-12, 20));

    let (rp, rz) = round_trip(&mut rng, cases.div_ceil(2))?;
    report.checks.push(CheckResult::new("innovation round trip (paths)", rp, 1e-10, cases.div_ceil(2)));
    report.checks.push(CheckResult::new("innovation round trip (noise)", rz, 1e-10, cases.div_ceil(2)));

    let mw = matched_model_weight(&mut rng, cases.div_ceil(4))?;
    report.checks.push(CheckResult::new("weight of a matched model", mw, 1e-10, cases.div_ceil(4)));

    let kj = kalman_vs_joint(&mut rng, cases.div_ceil(4))?;
    report.checks.push(CheckResult::new("Kalman vs joint Gaussian", kj, 1e-8, cases.div_ceil(4)));
    Ok(report)
}

