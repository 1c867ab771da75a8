//! Dynamical encoding of static features, spiking networks trained with
//! surrogate gradients, and the dynamics/information measurements that
//! relate the two.

pub mod dynsys;
pub mod encoders;
pub mod error;
pub mod infodyn;
pub mod linalg;
pub mod lyapunov;
pub mod metrics;
pub mod rng;
pub mod snn;
pub mod statfit;
pub mod tasks;
pub mod theory;

pub use dynsys::{EncodingConfig, State3, SystemParams, Trajectory};
pub use error::{Error, Result};
pub use lyapunov::{LyapunovConfig, LyapunovSpectrum};
pub use rng::Stream;
