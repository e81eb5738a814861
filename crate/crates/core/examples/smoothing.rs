//! Posterior mean and 95% bands of both coordinates of a damped oscillator
//! when only the position is observed.

use guided_bridge::cli::smooth;
use guided_bridge::mcmc::{AuxiliaryChoice, ChainConfig, Sampler, ThetaUpdate};
use guided_bridge::model::{
    damped_oscillator, sample_observations, simulate_euler_rng, uniform_grid, Observation, ObservationScheme, StartPrior,
};
use nalgebra::{dmatrix, dvector, DMatrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> guided_bridge::Result<()> {
    let model = damped_oscillator();
    let theta = [4.0, 0.5, 0.1, 0.5];
    let times: Vec<f64> = (0..9).map(|i| 0.4 * i as f64).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let grid = uniform_grid(0.0, *times.last().unwrap(), 8 * 200);
    let latent = simulate_euler_rng(&model, &theta, &dvector![1.0, 0.0], &grid, &mut rng)?;
    let design = Observation::new(dmatrix![1.0, 0.0], dmatrix![0.01], dvector![0.0])?;
    let scheme = ObservationScheme::new(times.clone(), vec![design; times.len()], 2)?;
    let values = sample_observations(&latent, &scheme, &mut rng)?;
    let scheme = scheme.with_values(values)?;

    let mut config = ChainConfig::new(theta.to_vec());
    config.update_theta_in = ThetaUpdate::Never;
    config.n_sweeps = 1500;
    config.steps_per_segment = 20;
    config.seed = 7;
    let prior = StartPrior::new(dvector![0.0, 0.0], DMatrix::identity(2, 2))?;
    let sampler = Sampler::new(model, AuxiliaryChoice::Linearization, scheme, prior, config)?;
    let s = smooth(&sampler, 300, 1)?;

    println!("{} draws; every tenth grid node:", s.draws);
    println!("{:>5} {:>8} {:>8} {:>15} {:>8} {:>8} {:>15}", "t", "x1 true", "x1 mean", "x1 band", "x2 true", "x2 mean", "x2 band");
    for k in (0..s.grid.len()).step_by(10) {
        let t = s.grid[k];
        let truth = &latent.values[(t / 0.002).round() as usize];
        println!(
            "{t:>5.2} {:>8.3} {:>8.3} [{:>6.3},{:>6.3}] {:>8.3} {:>8.3} [{:>6.3},{:>6.3}]",
            truth[0], s.mean[k][0], s.lower[k][0], s.upper[k][0], truth[1], s.mean[k][1], s.lower[k][1], s.upper[k][1]
        );
    }
    Ok(())
}
