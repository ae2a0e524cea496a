pub mod correctors;
pub mod error;
pub mod finescale;
pub mod harness;
pub mod linalg;
pub mod mesh;
pub mod quadrature;
pub mod scalar;
pub mod spaces;
pub mod timestep;

pub use error::{Error, Result};
pub use scalar::{DoubleDouble, Precision, Real};
