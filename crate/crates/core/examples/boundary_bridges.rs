//! The two boundary segments: the conjugate posterior of X_0 given the first
//! observation, and an end segment pulled only toward a noisy final
//! observation.

use guided_bridge::bridge::{forward_guided, InnovationSegment};
use guided_bridge::kernel::{boundary_kernel_end, start_posterior, SegmentSpec};
use guided_bridge::model::{planar_brownian, uniform_grid, LinearAuxiliary, Observation, StartPrior};
use nalgebra::{dmatrix, dvector, DMatrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> guided_bridge::Result<()> {
    let prior = StartPrior::new(dvector![0.0, 0.0], DMatrix::identity(2, 2))?;
    let post = start_posterior(&prior, &dmatrix![1.0, 0.0], &dmatrix![1.0], &dvector![2.0])?;
    println!("X_0 | V_0 = 2: mean {:?}, covariance diagonal {:?}", post.mean.as_slice(), post.cov.diagonal().as_slice());

    let model = planar_brownian();
    let obs = Observation::new(dmatrix![1.0, 1.0], dmatrix![0.01], dvector![3.0])?;
    let spec = SegmentSpec::end(0.0, dvector![0.0, 0.0], 1.0, obs)?;
    let kernel = boundary_kernel_end(spec, LinearAuxiliary::brownian(DMatrix::identity(2, 2))?, uniform_grid(0.0, 1.0, 200))?;

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let n = 1000;
    let mut sums = (0.0, 0.0);
    for _ in 0..n {
        let path = forward_guided(&model, &[1.0], &kernel, &InnovationSegment::fresh(kernel.grid(), 2, &mut rng))?;
        let x = path.last();
        sums.0 += (x[0] + x[1]) / n as f64;
        sums.1 += (x[0] - x[1]) / n as f64;
    }
    // the sum is observed; the difference is left free
    println!("end of {n} proposals: mean of x1 + x2 = {:.3}, mean of x1 - x2 = {:.3}", sums.0, sums.1);
    Ok(())
}
