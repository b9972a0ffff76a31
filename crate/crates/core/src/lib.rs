pub mod checks;
pub mod deepc;
pub mod error;
pub mod experiment;
pub mod indirect;
pub mod linalg;
pub mod plants;
pub mod signals;
pub mod solver;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
