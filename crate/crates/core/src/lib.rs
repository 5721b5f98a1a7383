pub mod autodiff;
pub mod error;
pub mod numerics;

pub use error::{Error, Result};
pub use numerics::DenseMatrix;
pub mod group;
pub mod model;
pub mod metrics;
pub mod tasks;
pub mod training;
pub mod quadform;

pub use quadform::{QuadraticForm, Signature};
pub mod cli;
