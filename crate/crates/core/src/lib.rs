//! Multiplicative finetuning with hyperplane reflections.
//!
//! The crate provides a small define-by-run autodiff engine ([`autodiff`]),
//! the adapter family ETHER / ETHER+ / OFT / Naive / LoRA ([`adapters`]),
//! the measurement instruments used to compare them ([`metrics`]) and a
//! desk-scale experiment harness ([`harness`]).
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`). Training and
//! the harness run in double precision; the aliases below name the `f64`
//! instantiations.

pub mod adapters;
pub mod autodiff;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use adapters::{AdapterConfig, Method, Side};
pub use autodiff::Var;
pub use error::{Error, Result};
pub use rng::Prng;
pub use scalar::Scalar;

pub type Tensor = tensor::Tensor<f64>;
pub type Tape = autodiff::Tape<f64>;
pub type Gradients = autodiff::Gradients<f64>;
pub type Adapter = adapters::Adapter<f64>;
pub type AdaptedLinear = adapters::AdaptedLinear<f64>;

pub type TensorF32 = tensor::Tensor<f32>;
pub type TapeF32 = autodiff::Tape<f32>;
pub type AdapterF32 = adapters::Adapter<f32>;
