pub mod cart;
pub mod dataset;
pub mod error;
pub mod experiments;
pub mod gbt;
pub mod hal;
pub mod lasso;
pub mod ltb;
mod serde_float;

pub use error::{Error, Result};
