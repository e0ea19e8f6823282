pub mod detect;
pub mod error;
pub mod extract;
pub mod math;
pub mod matrix;
pub mod persist;
pub mod prnu;
pub mod roc;
pub mod scaling;
pub mod simulate;

pub use error::{Error, Result};
pub use matrix::{LumaImage, Matrix, Residue};
