//! Dense networks with reverse-mode gradients, stochastic policy heads and
//! an Adam optimizer. Everything is `f64` and single-sample; the networks
//! here are small enough that batching by loop is adequate.

mod adam;
mod dense;
pub mod gradcheck;
mod heads;

pub use adam::{Adam, StepStatus};
pub use dense::{Activation, DenseNet, LayerShape, Tape};
pub use heads::{HeadTerms, PolicyHeads, LOGIT_CLAMP, LOG_PROB_FLOOR};
