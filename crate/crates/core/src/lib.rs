pub mod bridge;
pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod kernel;
pub mod linalg;
pub mod mcmc;
pub mod model;
pub mod oracle;
pub mod validate;

pub use error::{Error, Result};
