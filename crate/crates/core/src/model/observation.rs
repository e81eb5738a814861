use rand::Rng;

use super::{check_grid, PathSegment};
use crate::error::{Error, Result};
use crate::linalg::{cholesky, psd_sqrt, standard_normal, symmetrize, Matrix, Vector};

/// One noisy linear observation `v = L x + eta`, `eta ~ N(0, sigma)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub l: Matrix,
    pub sigma: Matrix,
    pub v: Vector,
}

impl Observation {
    pub fn new(l: Matrix, sigma: Matrix, v: Vector) -> Result<Self> {
        let o = Observation { l, sigma, v };
        o.validate(None)?;
        Ok(o)
    }

    /// Exact observation of the full state.
    pub fn full(v: Vector) -> Self {
        let d = v.len();
        Observation {
            l: Matrix::identity(d, d),
            sigma: Matrix::zeros(d, d),
            v,
        }
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn is_noiseless(&self) -> bool {
        crate::linalg::is_zero(&self.sigma)
    }

    pub fn with_noise(&self, sigma: Matrix) -> Self {
        Observation {
            l: self.l.clone(),
            sigma,
            v: self.v.clone(),
        }
    }

    pub(crate) fn validate(&self, dim_state: Option<usize>) -> Result<()> {
        let m = self.l.nrows();
        if let Some(d) = dim_state {
            if self.l.ncols() != d {
                return Err(Error::config(format!(
                    "observation matrix has {} columns but the state has dimension {d}",
                    self.l.ncols()
                )));
            }
        }
        if m == 0 || m > self.l.ncols() {
            return Err(Error::config(format!(
                "observation matrix must have 1..=d rows, got {m}"
            )));
        }
        if self.sigma.shape() != (m, m) || self.v.len() != m {
            return Err(Error::config(format!(
                "observation of dimension {m} has noise covariance {:?} and value of length {}",
                self.sigma.shape(),
                self.v.len()
            )));
        }
        if cholesky(&(&self.l * self.l.transpose())).is_none() {
            return Err(Error::config("observation matrix is not of full row rank"));
        }
        if (&self.sigma - self.sigma.transpose()).amax() > 1e-12 * (1.0 + self.sigma.amax()) {
            return Err(Error::config("noise covariance is not symmetric"));
        }
        let eig = nalgebra::SymmetricEigen::new(symmetrize(&self.sigma));
        if eig.eigenvalues.iter().any(|l| *l < -1e-12 * (1.0 + self.sigma.amax())) {
            return Err(Error::config("noise covariance is not positive semidefinite"));
        }
        Ok(())
    }
}

/// Observation times `t_0 < ... < t_n` with one observation each.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationScheme {
    pub times: Vec<f64>,
    pub observations: Vec<Observation>,
}

impl ObservationScheme {
    pub fn new(times: Vec<f64>, observations: Vec<Observation>, dim_state: usize) -> Result<Self> {
        if times.len() != observations.len() {
            return Err(Error::config(format!(
                "{} observation times but {} observations",
                times.len(),
                observations.len()
            )));
        }
        check_grid(&times)?;
        for o in &observations {
            o.validate(Some(dim_state))?;
        }
        Ok(ObservationScheme {
            times,
            observations,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Number of inter-observation intervals (`n` with times `t_0..t_n`).
    pub fn intervals(&self) -> usize {
        self.times.len().saturating_sub(1)
    }

    pub fn values(&self) -> Vec<Vector> {
        self.observations.iter().map(|o| o.v.clone()).collect()
    }

    /// Same design with new observed values.
    pub fn with_values(&self, values: Vec<Vector>) -> Result<Self> {
        if values.len() != self.len() {
            return Err(Error::config("wrong number of observed values"));
        }
        let observations = self
            .observations
            .iter()
            .zip(values)
            .map(|(o, v)| {
                if v.len() != o.dim() {
                    return Err(Error::config("observed value has the wrong dimension"));
                }
                Ok(Observation {
                    l: o.l.clone(),
                    sigma: o.sigma.clone(),
                    v,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ObservationScheme {
            times: self.times.clone(),
            observations,
        })
    }
}

fn node_index(path: &PathSegment, t: f64) -> Option<usize> {
    let tol = 1e-12 * (1.0 + t.abs());
    let k = path.grid.partition_point(|s| *s < t - tol);
    (k < path.len() && (path.grid[k] - t).abs() <= tol).then_some(k)
}

/// Draw `V_i = L_i X(t_i) + eta_i` with independent `eta_i ~ N(0, Sigma_i)`.
/// The path must contain a node at every observation time.
pub fn sample_observations<R: Rng + ?Sized>(
    path: &PathSegment,
    scheme: &ObservationScheme,
    rng: &mut R,
) -> Result<Vec<Vector>> {
    scheme
        .times
        .iter()
        .zip(&scheme.observations)
        .map(|(&t, o)| {
            let k = node_index(path, t)
                .ok_or_else(|| Error::config(format!("path has no node at observation time {t}")))?;
            let x = &path.values[k];
            if x.len() != o.l.ncols() {
                return Err(Error::config(format!(
                    "observation matrix expects dimension {} but state has {}",
                    o.l.ncols(),
                    x.len()
                )));
            }
            let noise = psd_sqrt(&o.sigma) * standard_normal(rng, o.dim());
            Ok(&o.l * x + noise)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one_point(x: Vector) -> PathSegment {
        PathSegment::new(vec![0.0], vec![x]).unwrap()
    }

    #[test]
    fn noiseless_projection() {
        let scheme = ObservationScheme::new(
            vec![0.0],
            vec![Observation::new(dmatrix![1.0, 0.0], dmatrix![0.0], dvector![0.0]).unwrap()],
            2,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = sample_observations(&one_point(dvector![3.0, 7.0]), &scheme, &mut rng).unwrap();
        assert_eq!(v[0], dvector![3.0]);
    }

    #[test]
    fn full_observation() {
        let scheme =
            ObservationScheme::new(vec![0.0], vec![Observation::full(dvector![0.0, 0.0])], 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = sample_observations(&one_point(dvector![3.0, 7.0]), &scheme, &mut rng).unwrap();
        assert_eq!(v[0], dvector![3.0, 7.0]);
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let scheme =
            ObservationScheme::new(vec![0.0], vec![Observation::full(dvector![0.0, 0.0])], 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = sample_observations(&one_point(dvector![3.0, 7.0, 1.0]), &scheme, &mut rng);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn noisy_sum_has_right_mean() {
        let scheme = ObservationScheme::new(
            vec![0.0],
            vec![Observation::new(dmatrix![1.0, 1.0], dmatrix![0.01], dvector![0.0]).unwrap()],
            2,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = one_point(dvector![1.0, 2.0]);
        let n = 100_000;
        let mean: f64 = (0..n)
            .map(|_| sample_observations(&p, &scheme, &mut rng).unwrap()[0][0])
            .sum::<f64>()
            / n as f64;
        assert!((mean - 3.0).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn rejects_rank_deficient_l() {
        let o = Observation::new(dmatrix![1.0, 1.0; 2.0, 2.0], Matrix::identity(2, 2), dvector![0.0, 0.0]);
        assert!(o.is_err());
    }
}
