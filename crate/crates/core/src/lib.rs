//! A small CPU deep-learning framework built around the hierarchical-split
//! (HS) residual block: channel planning, split/concat dataflow, complexity
//! accounting, network construction and a desk-scale training recipe.

pub mod analyzer;
pub mod autograd;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod hs;
pub mod layers;
pub mod net;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod train;

pub use autograd::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::{Dims, Tensor4};
