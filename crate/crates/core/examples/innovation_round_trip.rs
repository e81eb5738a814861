//! A guided path is a deterministic function of its Wiener increments. The
//! inverse map recovers them, and a Crank–Nicolson refresh perturbs them
//! while keeping their law.

use guided_bridge::bridge::{forward_guided, inverse_innovation, InnovationSegment};
use guided_bridge::kernel::{GuidedKernel, SegmentSpec};
use guided_bridge::model::{double_well, uniform_grid, LinearAuxiliary, Observation};
use nalgebra::{dmatrix, dvector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> guided_bridge::Result<()> {
    let model = double_well();
    let theta = [1.0, 0.6];
    let obs = Observation::new(dmatrix![1.0], dmatrix![0.02], dvector![-0.8])?;
    let spec = SegmentSpec::interior(0.0, dvector![1.0], 1.0, obs, 2.0, dvector![-1.0])?;
    let mut grid = uniform_grid(0.0, 1.0, 200);
    grid.extend(uniform_grid(1.0, 2.0, 200).into_iter().skip(1));
    let kernel = GuidedKernel::build(spec, LinearAuxiliary::brownian(dmatrix![0.6])?, grid)?;

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let z = InnovationSegment::fresh(kernel.grid(), 1, &mut rng);
    let path = forward_guided(&model, &theta, &kernel, &z)?;
    let back = inverse_innovation(&model, &theta, &kernel, &path)?;
    let again = forward_guided(&model, &theta, &kernel, &back)?;

    // the last cell ends at the pinned endpoint, so its increment is not recoverable
    let cells = z.increments.len() - 1;
    let noise_err = z.increments[..cells].iter().zip(&back.increments).map(|(a, b)| (a - b).amax()).fold(0.0, f64::max);
    let path_err = path.values.iter().zip(&again.values).map(|(a, b)| (a - b).amax()).fold(0.0, f64::max);
    println!("max increment error {noise_err:.2e}, max path error {path_err:.2e}");

    for rho in [0.0, 0.5, 0.9, 0.99] {
        let moved = forward_guided(&model, &theta, &kernel, &z.pcn(rho, &mut rng))?;
        let dist = path.values.iter().zip(&moved.values).map(|(a, b)| (a - b).amax()).fold(0.0, f64::max);
        println!("rho = {rho:<4} largest change of the path {dist:.3}");
    }
    Ok(())
}
