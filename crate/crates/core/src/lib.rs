//! Linear precoding for the multiple-access channel with finite-alphabet
//! inputs and statistical channel knowledge at the transmitters.

pub mod channel;
pub mod constellation;
pub mod equivalent;
pub mod error;
pub mod fixed_point;
pub mod gradient;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod noise;
pub mod optimizer;

pub use error::{Error, Result};
