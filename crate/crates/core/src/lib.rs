//! Solver for integral equations, integro-differential equations,
//! hypersingular integral equations and nonlocal PDEs that trains a small
//! dense network surrogate whose nonlocal-operator residuals are evaluated
//! by unbiased Monte Carlo estimators.
//!
//! Modules:
//! - [`autodiff`]: scalar-tape reverse-mode AD with forward tangents for
//!   first/second input derivatives.
//! - [`network`]: the dense tanh/relu surrogate, Glorot init, hard
//!   constraint wrapper, checkpoints, and the batched evaluation engine.
//! - [`samplers`]: pinned, seed-reproducible random streams.
//! - [`estimators`]: unbiased Monte Carlo estimators for every nonlocal
//!   operator, differentiable with respect to network parameters.
//! - [`oracles`]: deterministic quadrature references used only by tests
//!   and the verification harness.
//! - [`problems`]: the benchmark problem registry.
//! - [`training`]: loss assembly with adaptive weights, Adam, L-BFGS and
//!   the training loop.
//! - [`verify`]: the estimator-versus-oracle verification suite.
//! - [`cli`]: config-driven commands behind the `nonlocal-pinn` binary.

pub mod autodiff;
pub mod cli;
pub mod estimators;
pub mod network;
pub mod oracles;
pub mod problems;
pub mod samplers;
pub mod training;
pub mod verify;
