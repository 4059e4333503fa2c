//! Dense `f64` tensors, a recording tape for reverse-mode differentiation,
//! the convolution/pooling/loss primitives the re-identification model is
//! built from, and a plain SGD optimizer.
//!
//! ```
//! use tempattn_autograd::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::from_vec(vec![1.0, 2.0]).with_requires_grad(true));
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum(sq, None).unwrap();
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(x).unwrap(), &[2.0, 4.0]);
//! ```

pub mod error;
pub mod gradcheck;
pub mod kernels;
mod ops;
pub mod optim;
mod tape;
mod tensor;

pub use error::{AutogradError, Result};
pub use gradcheck::{grad_check, grad_check_many, relative_error, EntryCheck, GradCheckReport};
pub use ops::{sigmoid, L2_EPS};
pub use optim::{sgd_step, SgdConfig};
pub use tape::{BackwardCtx, BackwardFn, Tape, Var};
pub use tensor::Tensor;
