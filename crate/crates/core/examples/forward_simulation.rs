//! Euler–Maruyama simulation of a damped oscillator observed through its
//! position with Gaussian noise.

use guided_bridge::model::{damped_oscillator, sample_observations, simulate_euler_rng, uniform_grid, Observation, ObservationScheme};
use nalgebra::{dmatrix, dvector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> guided_bridge::Result<()> {
    let model = damped_oscillator();
    // stiffness, damping, noise on position, noise on velocity
    let theta = [4.0, 0.5, 0.1, 0.5];
    let mut rng = ChaCha8Rng::seed_from_u64(1);

    let grid = uniform_grid(0.0, 5.0, 5000);
    let path = simulate_euler_rng(&model, &theta, &dvector![1.0, 0.0], &grid, &mut rng)?;

    let times: Vec<f64> = (0..=10).map(|i| 0.5 * i as f64).collect();
    let design = Observation::new(dmatrix![1.0, 0.0], dmatrix![0.01], dvector![0.0])?;
    let scheme = ObservationScheme::new(times.clone(), vec![design; times.len()], 2)?;
    let values = sample_observations(&path, &scheme, &mut rng)?;

    println!("{:>6} {:>10} {:>10} {:>10}", "t", "position", "velocity", "observed");
    for (t, v) in times.iter().zip(&values) {
        let k = grid.iter().position(|s| s == t).expect("observation times are grid nodes");
        let x = &path.values[k];
        println!("{t:>6.2} {:>10.4} {:>10.4} {:>10.4}", x[0], x[1], v[0]);
    }
    Ok(())
}
