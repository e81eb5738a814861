//! Guided proposals for a planar Brownian motion that passes a noisy
//! observation of its first coordinate at S = 1 and ends exactly at x_T.

use guided_bridge::bridge::{forward_guided, log_psi, InnovationSegment};
use guided_bridge::kernel::{GuidedKernel, SegmentSpec};
use guided_bridge::model::{planar_brownian, uniform_grid, LinearAuxiliary, Observation};
use guided_bridge::oracle::{linear_sde_transition, BridgeProblem};
use nalgebra::{dmatrix, dvector, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> guided_bridge::Result<()> {
    let model = planar_brownian();
    let obs = Observation::new(dmatrix![1.0, 0.0], dmatrix![0.05], dvector![1.0])?;
    let x_t = dvector![0.0, -1.0];
    let spec = SegmentSpec::interior(0.0, dvector![0.0, 0.0], 1.0, obs.clone(), 2.0, x_t.clone())?;

    let mut grid = uniform_grid(0.0, 1.0, 100);
    grid.extend(uniform_grid(1.0, 2.0, 100).into_iter().skip(1));
    let aux = LinearAuxiliary::brownian(DMatrix::identity(2, 2))?;
    let kernel = GuidedKernel::build(spec, aux, grid)?;

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let k_s = kernel.obs_index();
    let n = 2000;
    let (mut mean_s, mut worst_psi) = (dvector![0.0, 0.0], 0.0f64);
    for _ in 0..n {
        let z = InnovationSegment::fresh(kernel.grid(), 2, &mut rng);
        let path = forward_guided(&model, &[1.0], &kernel, &z)?;
        mean_s += &path.values[k_s] / n as f64;
        worst_psi = worst_psi.max(log_psi(&model, &[1.0], &kernel, &path)?.abs());
    }
    // the auxiliary process is the model itself, so every weight is one
    println!("mean of X_S over {n} proposals: ({:.4}, {:.4})", mean_s[0], mean_s[1]);
    let step = linear_sde_transition(&DVector::zeros(2), &DMatrix::zeros(2, 2), &DMatrix::identity(2, 2), 1.0);
    let exact = BridgeProblem {
        x_a: dvector![0.0, 0.0],
        to_s: step.clone(),
        l: obs.l,
        sigma: obs.sigma,
        v: obs.v,
        to_t: Some((step, x_t)),
    }
    .conditional()?;
    println!("exact conditional mean:          ({:.4}, {:.4})", exact.mean[0], exact.mean[1]);
    println!("largest |log Psi|: {worst_psi:e}");
    Ok(())
}
