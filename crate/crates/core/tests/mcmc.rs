mod common;

use std::sync::Arc;

use guided_bridge::bridge::{forward_guided_from, inverse_innovation};
use guided_bridge::diagnostics::{batch_means_se, bin_weights, histogram, mean, total_variation, variance};
use guided_bridge::linalg::{Matrix, Vector};
use guided_bridge::mcmc::{AuxiliaryChoice, Block, ChainConfig, NoiseConfig, Parity, Sampler, ThetaUpdate};
use guided_bridge::model::{
    brownian_with_drift, double_well, ornstein_uhlenbeck, DiffusionModel, Observation, ObservationScheme, StartPrior,
};
use guided_bridge::oracle::{grid_posterior, linear_sde_transition, ou_transition, BridgeProblem, InverseGamma};
use nalgebra::{dmatrix, dvector};
use proptest::prelude::*;

use common::{equally_spaced, rng, simulate_data};

fn scalar_scheme(times: &[f64], values: &[f64], sigma: f64) -> ObservationScheme {
    let obs = values
        .iter()
        .map(|v| Observation::new(dmatrix![1.0], dmatrix![sigma], dvector![*v]).unwrap())
        .collect();
    ObservationScheme::new(times.to_vec(), obs, 1).unwrap()
}

fn unit_prior() -> StartPrior {
    StartPrior::new(dvector![0.0], dmatrix![1.0]).unwrap()
}

fn ou_sampler(n_times: usize, seed: u64, config: ChainConfig) -> Sampler {
    let theta = [1.0, 0.0, 0.7];
    let times = equally_spaced(n_times, 0.5);
    let (_, scheme) = simulate_data(&ornstein_uhlenbeck(), &theta, &dvector![0.0], &times, 20, &dmatrix![1.0], &dmatrix![0.1], seed);
    Sampler::new(ornstein_uhlenbeck(), AuxiliaryChoice::Auto, scheme, unit_prior(), config).unwrap()
}

fn ou_config(n_sweeps: usize) -> ChainConfig {
    let mut c = ChainConfig::new(vec![1.0, 0.0, 0.7]);
    c.n_sweeps = n_sweeps;
    c.steps_per_segment = 20;
    c.update_theta_in = ThetaUpdate::Never;
    c
}

fn assert_continuous(segments: &[guided_bridge::model::PathSegment]) {
    for w in segments.windows(2) {
        assert_eq!(w[0].last(), w[1].first());
        assert_eq!(w[0].grid.last(), w[1].grid.first());
    }
}

#[test]
fn rejects_invalid_configuration() {
    let scheme = scalar_scheme(&[0.0, 1.0, 2.0], &[0.0, 0.0, 0.0], 0.1);
    let mut c = ou_config(1);
    c.rho = 1.0;
    assert!(Sampler::new(ornstein_uhlenbeck(), AuxiliaryChoice::Auto, scheme.clone(), unit_prior(), c).is_err());
    let short = scalar_scheme(&[0.0, 1.0], &[0.0, 0.0], 0.1);
    assert!(Sampler::new(ornstein_uhlenbeck(), AuxiliaryChoice::Auto, short, unit_prior(), ou_config(1)).is_err());
    let mut c = ou_config(1);
    c.theta_init = vec![1.0];
    assert!(Sampler::new(ornstein_uhlenbeck(), AuxiliaryChoice::Auto, scheme, unit_prior(), c).is_err());
}

#[test]
fn two_intervals_initialise_to_a_joined_path() {
    let s = ou_sampler(3, 1, ou_config(0));
    let state = s.init_chain().unwrap();
    assert_eq!(state.segments.len(), 2);
    assert_continuous(&state.segments);
    let full = state.full_path();
    assert_eq!(full.len(), 41);
    assert_eq!(full.grid[0], 0.0);
    assert_eq!(*full.grid.last().unwrap(), 1.0);
}

#[test]
fn initialisation_is_deterministic() {
    let a = ou_sampler(6, 2, ou_config(0)).init_chain().unwrap();
    let b = ou_sampler(6, 2, ou_config(0)).init_chain().unwrap();
    assert_eq!(a, b);
}

#[test]
fn noiseless_full_observations_pin_the_initial_path() {
    let times = [0.0, 0.4, 1.0, 1.3];
    let values = [0.2, -0.1, 0.5, 0.0];
    let s = Sampler::new(
        ornstein_uhlenbeck(),
        AuxiliaryChoice::Auto,
        scalar_scheme(&times, &values, 0.0),
        unit_prior(),
        ou_config(0),
    )
    .unwrap();
    let state = s.init_chain().unwrap();
    for (i, v) in values.iter().enumerate() {
        assert!((state.state_at_obs(i)[0] - v).abs() < 1e-12);
    }
}

#[test]
fn sweeps_keep_paths_continuous_and_consistent() {
    let s = ou_sampler(8, 3, ou_config(0));
    let mut state = s.init_chain().unwrap();
    for _ in 0..20 {
        s.sweep(&mut state).unwrap();
        assert_continuous(&state.segments);
        for parity in [Parity::Even, Parity::Odd] {
            for b in s.blocks(parity) {
                let k = s.block_kernel(&state.theta, b, &state.segments, state.eps).unwrap();
                let path = s.block_path(b, &state.segments);
                let z = inverse_innovation(s.model(), &state.theta, &k, &path).unwrap();
                let again = forward_guided_from(s.model(), &state.theta, &k, path.first(), &z).unwrap();
                let err = path.values.iter().zip(&again.values).map(|(x, y)| (x - y).amax()).fold(0.0, f64::max);
                assert!(err < 1e-10, "{b}: {err}");
            }
        }
    }
}

#[test]
fn each_pass_leaves_its_anchors_alone() {
    for n_times in [7, 8] {
        let s = ou_sampler(n_times, 4, ou_config(0));
        let mut state = s.init_chain().unwrap();
        for _ in 0..10 {
            let before = state.clone();
            s.update_blocks(&mut state, Parity::Even).unwrap();
            for i in (0..n_times).step_by(2) {
                assert_eq!(state.state_at_obs(i), before.state_at_obs(i));
            }
            let before = state.clone();
            s.update_blocks(&mut state, Parity::Odd).unwrap();
            for i in (1..n_times).step_by(2) {
                assert_eq!(state.state_at_obs(i), before.state_at_obs(i));
            }
        }
    }
}

#[test]
fn tiny_refresh_steps_are_nearly_always_accepted() {
    let theta = [1.0, 0.7];
    let times = equally_spaced(8, 0.5);
    let (_, scheme) = simulate_data(&double_well(), &theta, &dvector![1.0], &times, 20, &dmatrix![1.0], &dmatrix![0.05], 5);
    let mut c = ChainConfig::new(theta.to_vec());
    c.rho = 0.9999;
    c.steps_per_segment = 20;
    c.n_sweeps = 100;
    c.update_theta_in = ThetaUpdate::Never;
    let s = Sampler::new(double_well(), AuxiliaryChoice::Auto, scheme, StartPrior::new(dvector![1.0], dmatrix![0.25]).unwrap(), c).unwrap();
    let trace = s.run().unwrap();
    let (even, odd, _) = trace.mean_acceptance();
    assert!(even > 0.95 && odd > 0.95, "{even} {odd}");
}

#[test]
fn interior_block_chain_matches_the_exact_bridge() {
    let c = 0.8;
    let model = brownian_with_drift(1);
    let (x0, v, xt, sig) = (0.0, 1.5, 0.5, 0.3);
    let scheme = ObservationScheme::new(
        vec![0.0, 1.0, 2.0],
        vec![
            Observation::new(dmatrix![1.0], dmatrix![0.0], dvector![x0]).unwrap(),
            Observation::new(dmatrix![1.0], dmatrix![sig], dvector![v]).unwrap(),
            Observation::new(dmatrix![1.0], dmatrix![0.0], dvector![xt]).unwrap(),
        ],
        1,
    )
    .unwrap();
    let mut cfg = ChainConfig::new(vec![c]);
    cfg.steps_per_segment = 100;
    cfg.update_theta_in = ThetaUpdate::Never;
    let s = Sampler::new(model, AuxiliaryChoice::Auto, scheme, unit_prior(), cfg).unwrap();
    let mut state = s.init_chain().unwrap();
    let mut r = rng(6);
    let mut draws = Vec::new();
    for _ in 0..20_000 {
        if let Some(p) = s.update_block(&state, Block::Interior { left: 0 }, &mut r).unwrap() {
            state.segments = p.split_at_nodes(&[100]);
        }
        draws.push(state.state_at_obs(1)[0]);
    }
    let tr = linear_sde_transition(&dvector![c], &dmatrix![0.0], &dmatrix![1.0], 1.0);
    let exact = BridgeProblem {
        x_a: dvector![x0],
        to_s: tr.clone(),
        l: dmatrix![1.0],
        sigma: dmatrix![sig],
        v: dvector![v],
        to_t: Some((tr, dvector![xt])),
    }
    .conditional()
    .unwrap();
    let se = batch_means_se(&draws, 40);
    assert!((mean(&draws) - exact.mean[0]).abs() < 3.0 * se, "{} vs {} (se {se})", mean(&draws), exact.mean[0]);
    let (m2, se2) = common::second_moment_about(&draws, exact.mean[0], 40);
    assert!((m2 - exact.cov[(0, 0)]).abs() < 3.0 * se2, "{m2} vs {}", exact.cov[(0, 0)]);
}

#[test]
fn unchanged_parameter_is_always_accepted() {
    let mut cfg = ou_config(0);
    cfg.theta_proposal = vec![0.0; 3];
    let s = ou_sampler(6, 7, cfg);
    let mut state = s.init_chain().unwrap();
    state.sweep_index = 1;
    for parity in [Parity::Even, Parity::Odd] {
        let before = state.clone();
        let (acc, fail) = s.update_theta(&mut state, parity, &mut rng(7)).unwrap();
        assert!(acc && !fail);
        for (a, b) in state.segments.iter().zip(&before.segments) {
            let err = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).amax()).fold(0.0, f64::max);
            assert!(err < 1e-10);
        }
    }
}

#[test]
fn reconstitution_is_reversible() {
    let s = ou_sampler(7, 8, ou_config(0));
    let mut state = s.init_chain().unwrap();
    s.sweep(&mut state).unwrap();
    let theta_new = [1.4, 0.2, 0.6];
    for parity in [Parity::Even, Parity::Odd] {
        let (segs, there) = s.reconstitute(&state, parity, &theta_new).unwrap().unwrap();
        let mut moved = state.clone();
        moved.theta = theta_new.to_vec();
        moved.segments = segs;
        assert_continuous(&moved.segments);
        let (back, home) = s.reconstitute(&moved, parity, &state.theta).unwrap().unwrap();
        assert!((there + home).abs() < 1e-10, "{there} {home}");
        for (a, b) in back.iter().zip(&state.segments) {
            let err = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).amax()).fold(0.0, f64::max);
            assert!(err < 1e-10);
        }
    }
}

#[test]
fn parameter_free_model_returns_the_prior() {
    let model = DiffusionModel::new("flat", 1, 1, 1, |_, _, x| dvector![-x[0]], |_, _, _| dmatrix![1.0]);
    let times = equally_spaced(5, 0.5);
    let scheme = scalar_scheme(&times, &[0.3, 0.1, -0.2, 0.4, 0.0], 0.2);
    let mut cfg = ChainConfig::new(vec![0.0]).with_prior(|th| -0.5 * th[0] * th[0]);
    cfg.theta_proposal = vec![1.5];
    cfg.n_sweeps = 10_000;
    cfg.steps_per_segment = 10;
    cfg.update_theta_in = ThetaUpdate::Both;
    let s = Sampler::new(model, AuxiliaryChoice::Auto, scheme, unit_prior(), cfg).unwrap();
    let trace = s.run().unwrap();
    let th: Vec<f64> = trace.theta_draws(500, 1).iter().map(|t| t[0]).collect();
    let se = batch_means_se(&th, 40);
    assert!(mean(&th).abs() < 3.0 * se, "mean {} se {se}", mean(&th));
    let (m2, se2) = common::second_moment_about(&th, 0.0, 40);
    assert!((m2 - 1.0).abs() < 3.0 * se2, "second moment {m2} se {se2}");
}

#[test]
fn mean_reversion_posterior_from_exact_observations() {
    let truth = [2.0, 0.0, 0.8];
    let times = equally_spaced(8, 0.5);
    let (_, scheme) = simulate_data(&ornstein_uhlenbeck(), &truth, &dvector![1.0], &times, 200, &dmatrix![1.0], &dmatrix![0.0], 9);
    let xs: Vec<f64> = scheme.values().iter().map(|v| v[0]).collect();
    let upper = 12.0;
    let mut cfg = ChainConfig::new(truth.to_vec()).with_prior(move |th| {
        if th[0] > 0.0 && th[0] < upper { 0.0 } else { f64::NEG_INFINITY }
    });
    cfg.theta_proposal = vec![1.2, 0.0, 0.0];
    cfg.n_sweeps = 10_000;
    cfg.steps_per_segment = 10;
    cfg.update_theta_in = ThetaUpdate::Both;
    let s = Sampler::new(ornstein_uhlenbeck(), AuxiliaryChoice::Linearization, scheme, unit_prior(), cfg).unwrap();
    let trace = s.run().unwrap();
    let draws: Vec<f64> = trace.theta_draws(500, 1).iter().map(|t| t[0]).collect();

    let points: Vec<f64> = (1..3000).map(|k| k as f64 * upper / 3000.0).collect();
    let weights = grid_posterior(&points, |a| {
        xs.windows(2)
            .map(|w| {
                let tr = ou_transition(&[a, truth[1], truth[2]], 0.5);
                let m = tr.phi[(0, 0)] * w[0] + tr.g[0];
                let k = tr.k[(0, 0)];
                -0.5 * ((w[1] - m).powi(2) / k + k.ln())
            })
            .sum()
    });
    let mut edges = vec![0.0];
    let mut cdf = 0.0;
    for (p, w) in points.iter().zip(&weights) {
        cdf += w;
        if edges.len() < 5 && cdf >= edges.len() as f64 / 5.0 {
            edges.push(*p);
        }
    }
    edges.push(upper);
    let tv = total_variation(&histogram(&draws, &edges), &bin_weights(&points, &weights, &edges));
    assert!(tv < 0.05, "total variation {tv}");
}

#[test]
fn noise_parameter_matches_its_conjugate_posterior() {
    let times = equally_spaced(12, 0.5);
    let (_, scheme) = simulate_data(&ornstein_uhlenbeck(), &[1.0, 0.0, 0.7], &dvector![0.0], &times, 10, &dmatrix![1.0], &dmatrix![0.2], 10);
    let prior = InverseGamma { alpha: 3.0, beta: 0.4 };
    let mut cfg = ou_config(0);
    cfg.steps_per_segment = 10;
    cfg.noise = Some(NoiseConfig {
        init: 0.2,
        step: 0.08,
        log_prior: Arc::new(move |e| prior.log_density(e)),
    });
    let s = Sampler::new(ornstein_uhlenbeck(), AuxiliaryChoice::Auto, scheme.clone(), unit_prior(), cfg).unwrap();
    let mut state = s.init_chain().unwrap();
    let residuals: Vec<Vector> = (0..scheme.len()).map(|i| &scheme.observations[i].v - state.state_at_obs(i)).collect();
    let post = prior.posterior(&residuals);
    let mut r = rng(11);
    let mut eps = Vec::new();
    for _ in 0..40_000 {
        s.update_noise_param(&mut state, &mut r).unwrap();
        eps.push(state.eps.unwrap());
    }
    assert!(eps.iter().all(|e| *e > 0.0));
    let se = batch_means_se(&eps, 40);
    assert!((mean(&eps) - post.mean()).abs() < 3.0 * se, "{} vs {} (se {se})", mean(&eps), post.mean());
    let (m2, se2) = common::second_moment_about(&eps, post.mean(), 40);
    assert!((m2 - post.variance()).abs() < 3.0 * se2, "{m2} vs {}", post.variance());
}

#[test]
fn noise_parameter_stays_positive_in_a_full_run() {
    let mut cfg = ou_config(200);
    cfg.noise = Some(NoiseConfig {
        init: 0.1,
        step: 0.2,
        log_prior: Arc::new(|e| -e),
    });
    let trace = ou_sampler(6, 12, cfg).run().unwrap();
    assert!(trace.records.iter().skip(1).all(|r| r.eps.len() == 1 && r.eps[0] > 0.0));
}

#[test]
fn zero_sweeps_record_only_the_start() {
    let trace = ou_sampler(5, 13, ou_config(0)).run().unwrap();
    assert_eq!(trace.records.len(), 1);
    assert_eq!(trace.records[0].sweep, 0);
}

#[test]
fn runs_are_reproducible() {
    let mut cfg = ou_config(30);
    cfg.update_theta_in = ThetaUpdate::Odd;
    cfg.theta_proposal = vec![0.2, 0.1, 0.0];
    let a = ou_sampler(9, 14, cfg.clone()).run().unwrap();
    let b = ou_sampler(9, 14, cfg.clone()).run().unwrap();
    assert_eq!(a.to_jsonl(), b.to_jsonl());
    assert_eq!(a.final_state, b.final_state);
    cfg.seed = 1;
    let c = ou_sampler(9, 14, cfg).run().unwrap();
    assert_ne!(a.final_state, c.final_state);
}

#[test]
fn exact_full_start_observation_pins_the_initial_state() {
    let times = equally_spaced(5, 0.5);
    let mut obs: Vec<Observation> = (0..5)
        .map(|_| Observation::new(dmatrix![1.0], dmatrix![0.1], dvector![0.2]).unwrap())
        .collect();
    obs[0] = Observation::new(Matrix::identity(1, 1), Matrix::zeros(1, 1), dvector![-0.7]).unwrap();
    let scheme = ObservationScheme::new(times, obs, 1).unwrap();
    let trace = Sampler::new(ornstein_uhlenbeck(), AuxiliaryChoice::Auto, scheme, unit_prior(), ou_config(50))
        .unwrap()
        .run()
        .unwrap();
    assert!((trace.final_state.state_at_obs(0)[0] + 0.7).abs() < 1e-12);
    assert!(variance(&trace.final_state.full_path().values.iter().map(|x| x[0]).collect::<Vec<_>>()) > 0.0);
}

proptest! {
    #[test]
    fn each_pass_partitions_the_intervals(n_times in 3usize..41) {
        let s = ou_sampler(n_times, 0, ou_config(0));
        let n = n_times - 1;
        for parity in [Parity::Even, Parity::Odd] {
            let mut covered = vec![0usize; n];
            for b in s.blocks(parity) {
                let range = match b {
                    Block::Start => 0..1,
                    Block::Interior { left } => left..left + 2,
                    Block::End => n - 1..n,
                };
                for i in range {
                    covered[i] += 1;
                }
            }
            prop_assert!(covered.iter().all(|c| *c == 1), "{:?} {:?}", parity, covered);
        }
    }
}
