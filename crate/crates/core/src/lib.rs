//! Span-local cross-attention query steering for multi-event prompts.
//!
//! The crate is organized around the steering pipeline:
//!
//! - [`event_model`]: multi-event plans, temporal window assignment in
//!   latent frames, and anchor-phrase-to-token-index resolution.
//! - [`subspace`]: ridge-regularized right projectors onto event key
//!   spans and dominant key directions.
//! - [`strength_solver`]: the two-variable hinge QP that balances
//!   enhancement against suppression per span.
//! - [`steering`]: the per-head query update with row-wise
//!   renormalization, orchestrated across a whole attention layer.
//! - [`scheduler`]: step/block gating of the edit.
//! - [`simulator`]: a toy multi-head cross-attention stack that measures
//!   attention mass and margins with and without steering.
//!
//! All computation is `f64`, deterministic given explicit seeds, and free
//! of global state.

pub mod event_model;
pub mod linalg;
pub mod scheduler;
pub mod simulator;
pub mod steering;
pub mod strength_solver;
pub mod subspace;

pub use linalg::Mat;
