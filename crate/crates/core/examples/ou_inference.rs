//! Mean-reversion rate of an Ornstein–Uhlenbeck process from noisy
//! observations, checked against the exact Kalman-filter posterior on a grid.

use guided_bridge::diagnostics::{batch_means_se, mean, quantile};
use guided_bridge::mcmc::{AuxiliaryChoice, ChainConfig, Sampler, ThetaUpdate};
use guided_bridge::model::{
    ornstein_uhlenbeck, sample_observations, simulate_euler_rng, uniform_grid, Observation, ObservationScheme, StartPrior,
};
use guided_bridge::oracle::{grid_posterior, kalman_loglik, LinearStateSpace};
use nalgebra::{dmatrix, dvector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> guided_bridge::Result<()> {
    let model = ornstein_uhlenbeck();
    let truth = [2.0, 1.0, 0.5];
    let times: Vec<f64> = (0..15).map(|i| 0.5 * i as f64).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let grid = uniform_grid(0.0, *times.last().unwrap(), 14 * 100);
    let latent = simulate_euler_rng(&model, &truth, &dvector![1.0], &grid, &mut rng)?;
    let design = Observation::new(dmatrix![1.0], dmatrix![0.05], dvector![0.0])?;
    let scheme = ObservationScheme::new(times.clone(), vec![design; times.len()], 1)?;
    let values = sample_observations(&latent, &scheme, &mut rng)?;
    let scheme = scheme.with_values(values.clone())?;
    let prior_x0 = StartPrior::new(dvector![1.0], dmatrix![0.25])?;

    let mut config = ChainConfig::new(truth.to_vec()).with_prior(|th| {
        if th[0] > 0.0 && th[0] < 15.0 { 0.0 } else { f64::NEG_INFINITY }
    });
    // only the rate moves; mean level and volatility stay at their true values
    config.theta_proposal = vec![0.8, 0.0, 0.0];
    config.update_theta_in = ThetaUpdate::Both;
    config.n_sweeps = 3000;
    config.steps_per_segment = 10;
    config.rho = 0.3;
    config.seed = 5;
    let sampler = Sampler::new(model, AuxiliaryChoice::Linearization, scheme, prior_x0.clone(), config)?;
    let trace = sampler.run()?;
    let draws: Vec<f64> = trace.theta_draws(300, 1).iter().map(|t| t[0]).collect();

    let points: Vec<f64> = (1..1500).map(|k| k as f64 * 0.01).collect();
    let weights = grid_posterior(&points, |a| {
        let obs = vec![(dmatrix![1.0], dmatrix![0.05]); times.len()];
        let ssm = LinearStateSpace::ornstein_uhlenbeck(&[a, truth[1], truth[2]], &times, obs).expect("valid model");
        kalman_loglik(&ssm, &values, &prior_x0).unwrap_or(f64::NEG_INFINITY)
    });
    let exact_mean: f64 = points.iter().zip(&weights).map(|(p, w)| p * w).sum();

    let (acc_even, acc_odd, acc_theta) = trace.mean_acceptance();
    println!("acceptance: even {acc_even:.2}, odd {acc_odd:.2}, parameter {:.2}", acc_theta.unwrap_or(0.0));
    println!(
        "MCMC posterior of the rate: mean {:.3} (MC standard error {:.3}), 95% interval [{:.3}, {:.3}]",
        mean(&draws),
        batch_means_se(&draws, 30),
        quantile(&draws, 0.025),
        quantile(&draws, 0.975)
    );
    println!("Kalman grid posterior mean: {exact_mean:.3} (truth {})", truth[0]);
    Ok(())
}
