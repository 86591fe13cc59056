//! Dense matrices and the op set used by the models.

mod matrix;
pub mod ops;

pub use matrix::Matrix;
pub use ops::Logits;
