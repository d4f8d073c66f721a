pub mod augment;
pub mod cli;
pub mod decoder;
pub mod error;
pub mod geometry;
pub mod io;
pub mod prior;
pub mod protocol;
pub mod quantum;
pub mod solver;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Mat, Tensor3};
