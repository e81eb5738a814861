use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::dmatrix;

use super::{DiffusionModel, LinearAuxiliary};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

/// Builds a model; the argument is the requested state dimension where the
/// model family supports more than one.
pub type ModelFactory = Arc<dyn Fn(Option<usize>) -> Result<DiffusionModel> + Send + Sync>;

/// Models looked up by name.
///
/// Built-ins:
/// - `bm`: Brownian motion with drift vector `theta` (dimension = `theta.len()`, default 1).
/// - `ou`: `dX = theta1 (theta2 - X) dt + theta3 dW`.
/// - `2d-bm`: planar Brownian motion `dX = theta1 dW`.
/// - `oscillator`: `dX1 = X2 dt + theta3 dW1`, `dX2 = (-theta1 X1 - theta2 X2) dt + theta4 dW2`.
/// - `double-well`: `dX = theta1 X (1 - X^2) dt + theta2 dW`.
#[derive(Clone)]
pub struct ModelRegistry {
    factories: BTreeMap<String, ModelFactory>,
}

impl Default for ModelRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl ModelRegistry {
    pub fn empty() -> Self {
        ModelRegistry {
            factories: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register("bm", |dim| Ok(brownian_with_drift(dim.unwrap_or(1))));
        r.register("ou", |_| Ok(ornstein_uhlenbeck()));
        r.register("2d-bm", |_| Ok(planar_brownian()));
        r.register("oscillator", |_| Ok(damped_oscillator()));
        r.register("double-well", |_| Ok(double_well()));
        r
    }

    pub fn register(
        &mut self,
        name: impl Into<String>,
        factory: impl Fn(Option<usize>) -> Result<DiffusionModel> + Send + Sync + 'static,
    ) {
        self.factories.insert(name.into(), Arc::new(factory));
    }

    pub fn build(&self, name: &str, dim: Option<usize>) -> Result<DiffusionModel> {
        let f = self.factories.get(name).ok_or_else(|| {
            Error::config(format!(
                "unknown model '{name}' (known: {})",
                self.names().join(", ")
            ))
        })?;
        f(dim)
    }

    pub fn names(&self) -> Vec<String> {
        self.factories.keys().cloned().collect()
    }
}

pub fn brownian_with_drift(d: usize) -> DiffusionModel {
    DiffusionModel::new(
        "bm",
        d,
        d,
        d,
        |th, _, _| Vector::from_column_slice(th),
        move |_, _, _| Matrix::identity(d, d),
    )
    .with_linearization(move |th| {
        LinearAuxiliary::constant(
            Vector::from_column_slice(th),
            Matrix::zeros(d, d),
            Matrix::identity(d, d),
        )
    })
}

pub fn ornstein_uhlenbeck() -> DiffusionModel {
    DiffusionModel::new(
        "ou",
        1,
        1,
        3,
        |th, _, x| Vector::from_element(1, th[0] * (th[1] - x[0])),
        |th, _, _| Matrix::from_element(1, 1, th[2]),
    )
    .with_linearization(|th| {
        LinearAuxiliary::constant(
            Vector::from_element(1, th[0] * th[1]),
            Matrix::from_element(1, 1, -th[0]),
            Matrix::from_element(1, 1, th[2]),
        )
    })
}

pub fn planar_brownian() -> DiffusionModel {
    DiffusionModel::new(
        "2d-bm",
        2,
        2,
        1,
        |_, _, _| Vector::zeros(2),
        |th, _, _| Matrix::identity(2, 2) * th[0],
    )
    .with_linearization(|th| LinearAuxiliary::brownian(Matrix::identity(2, 2) * th[0]))
}

pub fn damped_oscillator() -> DiffusionModel {
    let bmat = |th: &[f64]| dmatrix![0.0, 1.0; -th[0], -th[1]];
    let sig = |th: &[f64]| dmatrix![th[2], 0.0; 0.0, th[3]];
    DiffusionModel::new(
        "oscillator",
        2,
        2,
        4,
        move |th, _, x| bmat(th) * x,
        move |th, _, _| sig(th),
    )
    .with_linearization(move |th| LinearAuxiliary::constant(Vector::zeros(2), bmat(th), sig(th)))
}

pub fn double_well() -> DiffusionModel {
    DiffusionModel::new(
        "double-well",
        1,
        1,
        2,
        |th, _, x| Vector::from_element(1, th[0] * x[0] * (1.0 - x[0] * x[0])),
        |th, _, _| Matrix::from_element(1, 1, th[1]),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_resolve() {
        let r = ModelRegistry::with_builtins();
        for name in ["bm", "ou", "2d-bm", "oscillator", "double-well"] {
            let m = r.build(name, None).unwrap();
            assert_eq!(m.name(), name);
        }
        assert_eq!(r.build("bm", Some(3)).unwrap().dim_state(), 3);
        assert!(matches!(r.build("nope", None), Err(Error::Config(_))));
    }

    #[test]
    fn custom_registration() {
        let mut r = ModelRegistry::empty();
        r.register("zero", |_| {
            Ok(DiffusionModel::new(
                "zero",
                1,
                1,
                0,
                |_, _, _| Vector::zeros(1),
                |_, _, _| Matrix::identity(1, 1),
            ))
        });
        assert_eq!(r.names(), vec!["zero".to_string()]);
    }
}
