//! Tape-based reverse-mode automatic differentiation over dense `f64`
//! matrices.
//!
//! The engine is deliberately small: every value is a row-major matrix
//! (scalars are `1x1`), a [`Tape`] records one forward evaluation, and
//! [`Tape::backward`] sweeps it once in reverse to produce gradients for the
//! trainable parameters held in a [`ParamStore`].
//!
//! ```
//! use swarmwind_autodiff::{ParamStore, Tape, Tensor};
//!
//! let mut params = ParamStore::new();
//! let w = params.add("w", Tensor::from_vec(1, 2, vec![3.0, -1.0]).unwrap());
//! params.zero_grad();
//!
//! let mut tape = Tape::new();
//! let x = tape.param(&params, w);
//! let sq = tape.square(x);
//! let loss = tape.sum(sq);
//! tape.backward(loss, &mut params).unwrap();
//! assert_eq!(params.get(w).grad().unwrap(), &[6.0, -2.0]);
//! ```

pub mod check;
mod error;
mod gemm;
mod optim;
mod tape;
mod tensor;

pub use error::AdError;
pub use gemm::matmul_into;
pub use optim::{clip_global_norm, global_grad_norm, AdamState, ReduceOnPlateau};
pub use tape::{Axis, Tape, Var};
pub use tensor::{ParamId, ParamStore, Tensor};

pub type Result<T> = std::result::Result<T, AdError>;
