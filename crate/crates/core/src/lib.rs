pub mod agent;
pub mod dynamics;
pub mod env;
pub mod error;
pub mod nn;
pub mod scas_tabular;
pub mod tabular;

pub use error::{Result, ScasError};
