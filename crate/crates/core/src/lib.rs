//! Video person re-identification with fully convolutional temporal
//! attention, trained as a Siamese network on a tape-based autodiff core.
//!
//! Pipeline: [`preprocessing`] turns RGB frames into 5-channel tensors
//! (Y, U, V and Lucas–Kanade flow), [`frame_cnn`] maps each frame to a
//! 128-d feature, [`attention`] scores frames and pools them into an
//! L2-normalized video descriptor, [`losses`] defines the Siamese
//! objective and [`train_eval`] trains and scores models with CMC curves.

pub mod attention;
pub mod config;
pub mod data;
pub mod error;
pub mod frame_cnn;
pub mod gradcheck;
pub mod losses;
pub mod model;
pub mod params;
pub mod preprocessing;
pub mod train_eval;

pub use error::{ReidError, Result};
pub use model::ReidModel;
pub use tempattn_autograd as autograd;
