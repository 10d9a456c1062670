pub mod affine;
pub mod frontend;
pub mod golden;
pub mod extraction;
pub mod scheduler;
pub mod mapping;
pub mod hwsim;
pub mod cli;
pub mod error;

pub use error::{Error, Result};
