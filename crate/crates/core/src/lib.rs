pub mod checkpoint;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod fingerprint;
pub mod graph;
pub mod linalg;
pub mod metrics;
pub mod optim;
pub mod real;
pub mod reservoir;
pub mod training;

pub use error::{Result, SgpError};
pub use real::Real;
