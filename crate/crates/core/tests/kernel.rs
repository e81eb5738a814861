mod common;

use std::f64::consts::FRAC_PI_2;
use std::sync::Arc;

use guided_bridge::kernel::{
    boundary_kernel_end, fundamental_matrix, gain_and_covariance, start_posterior, transition, ConstantPull,
    GuidedKernel, KernelMethod, SegmentKind, SegmentSpec,
};
use guided_bridge::linalg::{is_spd, Matrix, Vector};
use guided_bridge::model::{uniform_grid, LinearAuxiliary, Observation, StartPrior};
use guided_bridge::validate::{gradient_consistency, random_kernel_case};
use nalgebra::{dmatrix, dvector};
use proptest::prelude::*;

use common::{refined_grid, rng};

fn bm(d: usize) -> LinearAuxiliary {
    LinearAuxiliary::brownian(Matrix::identity(d, d)).unwrap()
}

fn interior(aux: LinearAuxiliary, l: Matrix, sigma: Matrix, v: Vector, x0: Vector, xt: Vector) -> GuidedKernel {
    let spec = SegmentSpec::interior(0.0, x0, 1.0, Observation::new(l, sigma, v).unwrap(), 2.0, xt).unwrap();
    GuidedKernel::build(spec, aux, refined_grid(&[0.0, 1.0, 2.0], 50)).unwrap()
}

#[test]
fn flows_of_simple_drift_matrices() {
    let phis = fundamental_matrix(&bm(3), &[0.0, 0.4, 1.0]).unwrap();
    assert!(phis.iter().all(|p| *p == Matrix::identity(3, 3)));

    let decay = LinearAuxiliary::constant(dvector![0.0], dmatrix![-1.0], dmatrix![1.0]).unwrap();
    let p = transition(&decay, 0.5, 1.5).unwrap();
    assert!((p.phi[(0, 0)] - (-1.0f64).exp()).abs() < 1e-14);
}

#[test]
fn rotation_flow_with_time_varying_solver() {
    let aux = LinearAuxiliary::time_varying(
        2,
        2,
        Arc::new(|_| Vector::zeros(2)),
        Arc::new(|_| dmatrix![0.0, 1.0; -1.0, 0.0]),
        Arc::new(|_| Matrix::identity(2, 2)),
    )
    .with_max_step(1e-4);
    let p = transition(&aux, 0.0, FRAC_PI_2).unwrap();
    assert!((p.phi - dmatrix![0.0, 1.0; -1.0, 0.0]).amax() < 1e-8);
}

#[test]
fn gains_and_covariances_with_constant_coefficients() {
    let a = dmatrix![2.0, 0.5; 0.5, 1.0];
    let sigma = a.clone().cholesky().unwrap().l();
    let aux = LinearAuxiliary::constant(Vector::zeros(2), Matrix::zeros(2, 2), sigma.clone()).unwrap();
    let grid = uniform_grid(0.0, 1.0, 10);
    for ((g, k), t) in gain_and_covariance(&aux, 1.0, &grid).unwrap().iter().zip(&grid) {
        assert_eq!(*g, Vector::zeros(2));
        assert!((k - &a * (1.0 - t)).amax() < 1e-14);
    }
    let drifted = LinearAuxiliary::constant(dvector![1.0], dmatrix![0.0], dmatrix![1.0]).unwrap();
    for ((g, _), t) in gain_and_covariance(&drifted, 1.0, &grid).unwrap().iter().zip(&grid) {
        assert!((g[0] - (1.0 - t)).abs() < 1e-14);
    }
}

#[test]
fn scalar_precision_matches_two_by_two_inverse() {
    let k = interior(bm(1), dmatrix![1.0], dmatrix![0.0], dvector![0.3], dvector![0.0], dvector![1.0]);
    let (s, tt) = (1.0, 2.0);
    for t in [0.0, 0.25, 0.6] {
        let u = k.precision_u(t).unwrap();
        let expect = dmatrix![tt - t, -(s - t); -(s - t), s - t] / ((s - t) * (tt - s));
        assert!((u - expect).amax() < 1e-10);
    }
}

#[test]
fn huge_noise_forgets_the_observation() {
    let mk = |v: f64| interior(bm(1), dmatrix![1.0], dmatrix![1e8], dvector![v], dvector![0.0], dvector![1.0]);
    let (a, b) = (mk(-5.0), mk(5.0));
    let u = a.precision_u(0.3).unwrap();
    assert!(u[(0, 0)].abs() < 1e-7);
    let x = dvector![0.2];
    assert!((a.guiding_r(0.3, &x).unwrap() - b.guiding_r(0.3, &x).unwrap()).amax() < 1e-6);
}

#[test]
fn planar_example_closed_form_n() {
    let (s, tt, sig) = (1.0, 2.0, 0.4);
    let x_t = dvector![0.5, -1.0];
    let k = interior(bm(2), dmatrix![1.0, 0.0], dmatrix![sig], dvector![1.5], dvector![0.0, 0.0], x_t.clone());
    let cf = k.constant_pull().expect("constant coefficients use the closed form");
    for t in [0.0, 0.3, 0.9] {
        let n = cf.n(t).unwrap()[(0, 0)];
        assert!((n - (s - t) * (tt - s) / ((s - t) * (tt - s) + sig * (tt - t))).abs() < 1e-12);
        let x = dvector![0.7, 0.2];
        let r = k.guiding_r(t, &x).unwrap();
        assert!((r[1] - (x_t[1] - x[1]) / (tt - t)).abs() < 1e-12);
    }
}

#[test]
fn full_noiseless_observation_reduces_to_plain_bridge() {
    // L = I, Sigma = 0: Q = a^{-1}, the terminal term vanishes before S and H = a^{-1} / (S - t)
    let a = dmatrix![1.5, 0.3; 0.3, 0.8];
    let sigma = a.clone().cholesky().unwrap().l();
    let aux = LinearAuxiliary::brownian(sigma).unwrap();
    let u = dvector![0.4, -0.2];
    let k = interior(aux, Matrix::identity(2, 2), Matrix::zeros(2, 2), u.clone(), dvector![0.0, 0.0], dvector![3.0, 1.0]);
    let a_inv = a.clone().try_inverse().unwrap();
    for t in [0.1, 0.5, 0.8] {
        let q = k.constant_pull().unwrap().q(t).unwrap();
        assert!((q - &a_inv).amax() < 1e-10);
        let h = k.guiding_h(t).unwrap();
        assert!((h - &a_inv / (1.0 - t)).amax() < 1e-9);
        let x = dvector![0.1, 0.9];
        let r = k.guiding_r(t, &x).unwrap();
        assert!((r - &a_inv * (&u - &x) / (1.0 - t)).amax() < 1e-9);
    }
}

#[test]
fn curvature_identity_for_constant_coefficients() {
    let sig = dmatrix![0.3];
    let k = interior(bm(2), dmatrix![1.0, 0.5], sig, dvector![0.2], dvector![0.0, 0.0], dvector![1.0, 1.0]);
    let cf = k.constant_pull().unwrap();
    let (s, tt) = (1.0, 2.0);
    for t in [0.0, 0.4, 0.95] {
        let lhs = k.guiding_h(t).unwrap() * (tt - t);
        let rhs = Matrix::identity(2, 2) + cf.q(t).unwrap() * ((tt - s) / (s - t));
        assert!((lhs - rhs).amax() < 1e-10);
    }
}

#[test]
fn pull_converges_linearly_to_its_limit_at_s() {
    let k = interior(bm(2), dmatrix![1.0, -0.5], dmatrix![0.2], dvector![0.7], dvector![0.0, 0.0], dvector![1.0, -1.0]);
    let x = dvector![0.3, 0.4];
    let lim = k.limit_r_at_s(&x).unwrap();
    let errs: Vec<f64> = (2..=6)
        .map(|e| (k.guiding_r(1.0 - 10f64.powi(-e), &x).unwrap() - &lim).norm())
        .collect();
    for w in errs.windows(2) {
        let ratio = w[1] / w[0];
        assert!((0.05..0.2).contains(&ratio), "ratio {ratio}");
    }
}

#[test]
fn limit_at_the_observed_point_keeps_only_the_terminal_term() {
    let u = dvector![0.4, 0.1];
    let xt = dvector![1.0, -1.0];
    let k = interior(bm(2), Matrix::identity(2, 2), Matrix::identity(2, 2) * 0.05, u.clone(), dvector![0.0, 0.0], xt.clone());
    let lim = k.limit_r_at_s(&u).unwrap();
    assert!((lim - (&xt - &u) / 1.0).amax() < 1e-12);
}

#[test]
fn limit_needs_nonsingular_noise() {
    let k = interior(bm(1), dmatrix![1.0], dmatrix![0.0], dvector![0.0], dvector![0.0], dvector![0.0]);
    assert!(k.limit_r_at_s(&dvector![0.0]).is_err());
}

#[test]
fn pull_is_invariant_to_the_choice_of_u_s() {
    let a = Matrix::identity(2, 2);
    let l = dmatrix![1.0, 1.0];
    let sigma = dmatrix![0.1];
    let mk = |u: Vector| ConstantPull::new(&a, Vector::zeros(2), l.clone(), sigma.clone(), u, dvector![0.5, 0.5], 1.0, 2.0).unwrap();
    // both satisfy L u = 1
    let (p, q) = (mk(dvector![0.5, 0.5]), mk(dvector![2.0, -1.0]));
    let x = dvector![0.3, -0.2];
    for t in [0.0, 0.5, 0.9] {
        assert!((p.pull(t, &x).unwrap() - q.pull(t, &x).unwrap()).amax() < 1e-13);
        assert!((p.curvature(t).unwrap() - q.curvature(t).unwrap()).amax() < 1e-13);
    }
    assert!((p.limit_at_s(&x).unwrap() - q.limit_at_s(&x).unwrap()).amax() < 1e-12);
}

#[test]
fn generic_and_closed_form_agree() {
    let spec = SegmentSpec::interior(
        0.0,
        dvector![0.1, 0.2, 0.0],
        0.7,
        Observation::new(dmatrix![1.0, 0.0, 1.0; 0.0, 1.0, 0.0], dmatrix![0.2, 0.05; 0.05, 0.1], dvector![0.5, -0.3]).unwrap(),
        1.5,
        dvector![1.0, 0.0, -1.0],
    )
    .unwrap();
    let sigma = dmatrix![1.0, 0.0, 0.0; 0.2, 0.9, 0.0; -0.1, 0.3, 1.2];
    let aux = LinearAuxiliary::constant(dvector![0.3, -0.1, 0.2], Matrix::zeros(3, 3), sigma).unwrap();
    let grid = refined_grid(&[0.0, 0.7, 1.5], 30);
    let g = GuidedKernel::build_with_method(spec.clone(), aux.clone(), grid.clone(), KernelMethod::Generic).unwrap();
    let c = GuidedKernel::build_with_method(spec, aux, grid, KernelMethod::ClosedForm).unwrap();
    let x = dvector![0.4, 0.4, -0.4];
    for t in [0.0, 0.33, 0.69, 0.7, 1.2] {
        assert!((g.guiding_r(t, &x).unwrap() - c.guiding_r(t, &x).unwrap()).amax() < 1e-10);
        assert!((g.guiding_h(t).unwrap() - c.guiding_h(t).unwrap()).amax() < 1e-10);
    }
}

#[test]
fn end_kernel_full_observation_is_the_standard_bridge_pull() {
    let u = dvector![1.0, -2.0];
    let spec = SegmentSpec::end(0.0, dvector![0.0, 0.0], 1.0, Observation::full(u.clone())).unwrap();
    let k = boundary_kernel_end(spec, bm(2), uniform_grid(0.0, 1.0, 20)).unwrap();
    assert_eq!(k.kind(), SegmentKind::End);
    let x = dvector![0.3, 0.3];
    for t in [0.0, 0.5, 0.9] {
        assert!((k.guiding_r(t, &x).unwrap() - (&u - &x) / (1.0 - t)).amax() < 1e-10);
    }
}

#[test]
fn end_kernel_with_huge_noise_does_not_pull() {
    let obs = Observation::new(dmatrix![1.0, 0.0], dmatrix![1e12], dvector![5.0]).unwrap();
    let spec = SegmentSpec::end(0.0, dvector![0.0, 0.0], 1.0, obs).unwrap();
    let k = boundary_kernel_end(spec, bm(2), uniform_grid(0.0, 1.0, 20)).unwrap();
    assert!(k.guiding_r(0.5, &dvector![1.0, 1.0]).unwrap().amax() < 1e-10);
}

#[test]
fn start_posterior_examples() {
    let prior = StartPrior::new(dvector![1.0, -1.0], dmatrix![2.0, 0.3; 0.3, 1.0]).unwrap();
    let exact = start_posterior(&prior, &Matrix::identity(2, 2), &Matrix::zeros(2, 2), &dvector![0.5, 0.5]).unwrap();
    assert!((exact.mean - dvector![0.5, 0.5]).amax() < 1e-12);
    assert!(exact.cov.amax() < 1e-12);
    let vague = start_posterior(&prior, &dmatrix![1.0, 0.0], &dmatrix![1e12], &dvector![3.0]).unwrap();
    assert!((vague.mean - &prior.mean).amax() < 1e-9);
    assert!((vague.cov - &prior.cov).amax() < 1e-9);
    let conj = start_posterior(
        &StartPrior::new(Vector::zeros(2), Matrix::identity(2, 2)).unwrap(),
        &dmatrix![1.0, 0.0],
        &dmatrix![1.0],
        &dvector![2.0],
    )
    .unwrap();
    assert!((conj.mean - dvector![1.0, 0.0]).amax() < 1e-14);
    assert!((conj.cov - dmatrix![0.5, 0.0; 0.0, 1.0]).amax() < 1e-14);
    assert!(start_posterior(&prior, &dmatrix![0.0, 0.0], &dmatrix![0.0], &dvector![0.0]).is_err());
}

#[test]
fn evaluation_outside_the_segment_is_a_domain_error() {
    let k = interior(bm(1), dmatrix![1.0], dmatrix![0.1], dvector![0.0], dvector![0.0], dvector![0.0]);
    assert!(k.guiding_r(2.0, &dvector![0.0]).is_err());
    assert!(k.guiding_r(-0.1, &dvector![0.0]).is_err());
}

#[test]
fn grid_must_contain_the_observation_time() {
    let sigma = dmatrix![1.0, 0.0; 0.0, 1.0];
    let aux = LinearAuxiliary::brownian(sigma).unwrap();
    let obs = Observation::new(dmatrix![1.0, 0.0], dmatrix![0.0], dvector![0.0]).unwrap();
    let spec = SegmentSpec::interior(0.0, dvector![0.0, 0.0], 1.0, obs, 2.0, dvector![0.0, 0.0]).unwrap();
    assert!(GuidedKernel::build(spec, aux, uniform_grid(0.0, 2.0, 7)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_kernels_match_finite_differences(seed in any::<u64>()) {
        let case = random_kernel_case(&mut rng(seed), None, 0.05).unwrap();
        let (r, h) = gradient_consistency(&[case], 0.0).unwrap();
        prop_assert!(r < 1e-6 && h < 1e-5, "r {} h {}", r, h);
    }

    #[test]
    fn semigroup_and_positive_definiteness(seed in any::<u64>()) {
        let case = random_kernel_case(&mut rng(seed), Some(SegmentKind::Interior), 0.05).unwrap();
        let k = &case.kernel;
        let s = k.spec().s_mid.unwrap();
        let t_end = k.spec().t_right;
        for (i, &t) in k.grid().iter().enumerate() {
            if t < s {
                let to_s = transition(k.aux(), t, s).unwrap();
                let s_to_t = transition(k.aux(), s, t_end).unwrap();
                let direct = transition(k.aux(), t, t_end).unwrap();
                prop_assert!((&s_to_t.phi * &to_s.phi - &direct.phi).amax() < 1e-8);
                prop_assert!(is_spd(&k.precision_u(t).unwrap()));
                prop_assert!(is_spd(&k.node(i).to_obs.as_ref().unwrap().k));
            }
            if t < t_end {
                prop_assert!(is_spd(&k.node(i).to_anchor.as_ref().unwrap().k));
            }
        }
    }
}
