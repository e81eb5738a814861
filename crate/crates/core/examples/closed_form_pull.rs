//! The pulling term r~ and its curvature H~ from the constant-coefficient
//! closed forms against the generic stacked-covariance computation.

use guided_bridge::kernel::{GuidedKernel, KernelMethod, SegmentSpec};
use guided_bridge::model::{uniform_grid, LinearAuxiliary, Observation};
use nalgebra::{dmatrix, dvector};

fn main() -> guided_bridge::Result<()> {
    let obs = Observation::new(dmatrix![1.0, 1.0, 0.0], dmatrix![0.2], dvector![0.7])?;
    let spec = SegmentSpec::interior(0.0, dvector![0.0, 0.5, -0.2], 0.6, obs, 1.5, dvector![1.0, 0.0, 0.3])?;
    let sigma = dmatrix![1.0, 0.0, 0.0; 0.3, 0.8, 0.0; -0.2, 0.1, 0.5];
    let aux = LinearAuxiliary::constant(dvector![0.4, -0.1, 0.2], dmatrix![0.0, 0.0, 0.0; 0.0, 0.0, 0.0; 0.0, 0.0, 0.0], sigma)?;
    let mut grid = uniform_grid(0.0, 0.6, 30);
    grid.extend(uniform_grid(0.6, 1.5, 45).into_iter().skip(1));

    let closed = GuidedKernel::build_with_method(spec.clone(), aux.clone(), grid.clone(), KernelMethod::ClosedForm)?;
    let generic = GuidedKernel::build_with_method(spec, aux, grid, KernelMethod::Generic)?;

    let x = dvector![0.2, -0.3, 0.1];
    println!("{:>6} {:>12} {:>12}", "t", "|dr|", "|dH|");
    for t in [0.0, 0.3, 0.59, 0.6, 0.9, 1.4] {
        let dr = (closed.guiding_r(t, &x)? - generic.guiding_r(t, &x)?).amax();
        let dh = (closed.guiding_h(t)? - generic.guiding_h(t)?).amax();
        println!("{t:>6.2} {dr:>12.3e} {dh:>12.3e}");
    }
    println!("limit of r~ as t -> S: {:?}", closed.limit_r_at_s(&x)?.as_slice());
    Ok(())
}
