#![allow(dead_code)]

use guided_bridge::linalg::{Matrix, Vector};
use guided_bridge::model::{
    sample_observations, simulate_euler_rng, uniform_grid, DiffusionModel, Observation, ObservationScheme,
    PathSegment,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Grid with `m` cells per interval between consecutive `times`.
pub fn refined_grid(times: &[f64], m: usize) -> Vec<f64> {
    let mut grid = vec![times[0]];
    for w in times.windows(2) {
        grid.extend(uniform_grid(w[0], w[1], m).into_iter().skip(1));
    }
    grid
}

/// Latent Euler path on `refined_grid(times, m)` and observations `V_i = L X_i + N(0, Sigma)`.
pub fn simulate_data(
    model: &DiffusionModel,
    theta: &[f64],
    x0: &Vector,
    times: &[f64],
    m: usize,
    l: &Matrix,
    sigma: &Matrix,
    seed: u64,
) -> (PathSegment, ObservationScheme) {
    let mut r = rng(seed);
    let grid = refined_grid(times, m);
    let truth = simulate_euler_rng(model, theta, x0, &grid, &mut r).unwrap();
    let design = Observation::new(l.clone(), sigma.clone(), Vector::zeros(l.nrows())).unwrap();
    let scheme = ObservationScheme::new(times.to_vec(), vec![design; times.len()], model.dim_state()).unwrap();
    let values = sample_observations(&truth, &scheme, &mut r).unwrap();
    (truth, scheme.with_values(values).unwrap())
}

pub fn equally_spaced(n_times: usize, dt: f64) -> Vec<f64> {
    (0..n_times).map(|i| i as f64 * dt).collect()
}

/// Sample variance of `xs` around a known mean and its batch-means standard error.
pub fn second_moment_about(xs: &[f64], mu: f64, batches: usize) -> (f64, f64) {
    let sq: Vec<f64> = xs.iter().map(|x| (x - mu) * (x - mu)).collect();
    (
        guided_bridge::diagnostics::mean(&sq),
        guided_bridge::diagnostics::batch_means_se(&sq, batches),
    )
}
