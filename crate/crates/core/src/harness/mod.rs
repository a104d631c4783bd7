//! The online adaptation loop and its predictors: run a policy in the
//! believed simulation and the hidden target environment, feed the
//! interaction history to a predictor, and iterate. Includes the
//! domain-randomization and label-driven bisection baselines, observation
//! noise injection, evaluation campaigns and ablation sweeps.

mod adapt;
mod eval;
mod noise;
mod sweep;

pub use adapt::{
    run_adaptation, AdaptationTrace, BisectOraclePredictor, DrPredictor, IterationRecord,
    ModelPredictor, Predictor,
};
pub use eval::{evaluate_sim2sim, EvalConfig, Method};
pub use noise::{inject_noise, NoiseKind, NoiseSpec};
pub use sweep::{ablation_sweep, SweepAxis, SweepMember, SweepOutcome};
