mod error;
pub mod eval;
pub mod model;
pub mod sample;
pub mod store;
pub mod tokenizer;
pub mod train;

pub use error::{Error, ErrorClass, Result};
