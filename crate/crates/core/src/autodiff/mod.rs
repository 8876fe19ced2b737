//! Reverse-mode automatic differentiation over scalar computation graphs.
//!
//! First derivatives come from a cached-partial reverse sweep over the
//! [`tape::Tape`]. Second directional derivatives are forward-over-reverse:
//! the tape's scalars carry forward tangent coefficients ([`scalar::Dual`],
//! [`scalar::Dual2`]) and the reverse sweep runs in the same truncated
//! ring, so parameter gradients of losses that contain first or second
//! input derivatives fall out of a single sweep.

pub mod scalar;
pub mod tape;

pub use scalar::{Dual, Dual2, Scalar};
pub use tape::{grad_input, grad_params, second_directional, FusedGroup, NodeId, ParamBlock, Tape, TapeError};
