pub mod attribution;
pub mod data;
pub mod error;
pub mod harness;
pub mod losses;
pub mod models;
pub mod numcore;

pub use error::{Error, Result};
