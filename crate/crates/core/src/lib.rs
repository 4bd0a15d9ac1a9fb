pub mod error;
pub mod model;
pub mod spectral;
pub mod lindblad;
pub mod stochastic;
pub mod ensemble;

pub use error::{Error, Result};
