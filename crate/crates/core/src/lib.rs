pub mod config;
pub mod covariance_lab;
pub mod crystal_optics;
pub mod error;
pub mod homodyne_sim;
pub mod io;
pub mod linalg;
pub mod mode_decomposition;
pub mod pipeline;
pub mod pump_kernel;

pub use error::{Error, Result};
