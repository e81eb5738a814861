//! Joint sampling of the path and an unknown observation-noise variance
//! eps, with an inverse-gamma prior on eps.

use std::sync::Arc;

use guided_bridge::diagnostics::{mean, quantile};
use guided_bridge::mcmc::{AuxiliaryChoice, ChainConfig, NoiseConfig, Sampler, ThetaUpdate};
use guided_bridge::model::{
    ornstein_uhlenbeck, sample_observations, simulate_euler_rng, uniform_grid, Observation, ObservationScheme, StartPrior,
};
use guided_bridge::oracle::InverseGamma;
use nalgebra::{dmatrix, dvector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> guided_bridge::Result<()> {
    let model = ornstein_uhlenbeck();
    let theta = [1.0, 0.0, 0.4];
    let true_eps = 0.1;
    let times: Vec<f64> = (0..41).map(|i| 0.25 * i as f64).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let latent = simulate_euler_rng(&model, &theta, &dvector![0.0], &uniform_grid(0.0, 10.0, 4000), &mut rng)?;
    let design = Observation::new(dmatrix![1.0], dmatrix![true_eps], dvector![0.0])?;
    let scheme = ObservationScheme::new(times.clone(), vec![design; times.len()], 1)?;
    let values = sample_observations(&latent, &scheme, &mut rng)?;
    let scheme = scheme.with_values(values)?;

    let prior = InverseGamma { alpha: 2.0, beta: 0.1 };
    let mut config = ChainConfig::new(theta.to_vec());
    config.update_theta_in = ThetaUpdate::Never;
    config.n_sweeps = 3000;
    config.steps_per_segment = 10;
    config.seed = 9;
    config.noise = Some(NoiseConfig {
        init: 0.5,
        step: 0.05,
        log_prior: Arc::new(move |e| prior.log_density(e)),
    });
    let sampler = Sampler::new(model, AuxiliaryChoice::Auto, scheme, StartPrior::new(dvector![0.0], dmatrix![1.0])?, config)?;
    let trace = sampler.run()?;
    let eps: Vec<f64> = trace.records.iter().skip(501).map(|r| r.eps[0]).collect();
    println!(
        "eps: posterior mean {:.4}, 95% interval [{:.4}, {:.4}], truth {true_eps}",
        mean(&eps),
        quantile(&eps, 0.025),
        quantile(&eps, 0.975)
    );
    Ok(())
}
