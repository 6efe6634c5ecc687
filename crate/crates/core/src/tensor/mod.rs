//! Deterministic n-dimensional arrays with reverse-mode differentiation.

mod array;
mod autodiff;
pub mod checkpoint;
mod conv;
mod gemm;
pub mod gradcheck;
pub mod layers;
mod ops;
mod params;

pub use array::Array;
pub use autodiff::Tensor;
pub use params::{AdamMoments, Init, Param, ParamStore, Scope};

pub(crate) use ops::sigmoid_f;
pub(crate) use params::fnv1a;
