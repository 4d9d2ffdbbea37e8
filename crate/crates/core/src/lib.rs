//! Sparse coding with side information via deep unfolding.

pub mod dataset;
pub mod diffengine;
pub mod error;
pub mod imageops;
pub mod models;
pub mod proximal;
pub mod solvers;
pub mod tensor;
pub mod unfolded;

pub use error::{Error, Result};
