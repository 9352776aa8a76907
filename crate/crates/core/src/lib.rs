pub mod actor;
pub mod critic;
pub mod env;
pub mod error;
pub mod flow;
pub mod gradsuite;
pub mod kernel;
pub mod trainer;

pub use error::{Error, Result};
