pub mod bart;
pub mod data;
pub mod error;
pub mod eval;
pub mod forest;
pub mod interpret;
pub mod linmod;
pub mod stats;
pub mod synth;
pub mod weights;

pub use error::{Error, Result};
