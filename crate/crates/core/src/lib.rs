//! In-context system identification on analytic toy physics.
//!
//! The pipeline: generate randomized-binary-search parameter-adaptation
//! sequences in toy simulators, distill them into a causal transformer that
//! predicts next-iteration environment parameters from interaction history,
//! and evaluate sim-to-sim adaptation against one-shot and
//! domain-randomization baselines.

pub mod datagen;
pub mod env;
pub mod harness;
pub mod io;
pub mod model;
pub mod num;
pub mod pipeline;
pub mod policy;
