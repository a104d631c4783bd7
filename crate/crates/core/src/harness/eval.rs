use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Env, EnvKind, EnvParams};
use crate::io::csv::MetricsRow;
use crate::model::{mix, Model};
use crate::policy::TaskPolicy;

use super::adapt::{run_adaptation, BisectOraclePredictor, DrPredictor, ModelPredictor, Predictor};
use super::noise::NoiseSpec;

/// Adaptation methods under evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
pub enum Method {
    /// History-conditioned sequence model (ours).
    #[serde(rename = "incontext")]
    InContext,
    /// One-shot direct prediction (expert distillation baseline).
    #[serde(rename = "ed")]
    Ed,
    /// One-shot residual prediction (TuneNet-style baseline).
    #[serde(rename = "tunenet")]
    TuneNet,
    /// Domain randomization: fresh uniform parameters each iteration.
    #[serde(rename = "dr")]
    Dr,
    /// Label-driven bisection reference (scooping only).
    #[serde(rename = "bisect")]
    BisectOracle,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::InContext => "incontext",
            Method::Ed => "ed",
            Method::TuneNet => "tunenet",
            Method::Dr => "dr",
            Method::BisectOracle => "bisect",
        }
    }

    pub fn needs_checkpoint(&self) -> bool {
        matches!(self, Method::InContext | Method::Ed | Method::TuneNet)
    }
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "incontext" => Ok(Method::InContext),
            "ed" => Ok(Method::Ed),
            "tunenet" => Ok(Method::TuneNet),
            "dr" => Ok(Method::Dr),
            "bisect" => Ok(Method::BisectOracle),
            other => Err(format!("unknown method '{other}'")),
        }
    }
}

/// Campaign settings: `pairs` hidden-target draws evaluated under `seeds`
/// independent rollout streams for every method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub pairs: u32,
    pub seeds: u32,
    pub max_iters: u32,
    pub methods: Vec<Method>,
    pub noise: NoiseSpec,
    pub base_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            pairs: 100,
            seeds: 3,
            max_iters: 30,
            methods: vec![Method::InContext, Method::Dr],
            noise: NoiseSpec::default(),
            base_seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.pairs < 1 || self.seeds < 1 {
            return Err("pairs and seeds must be >= 1".into());
        }
        if self.methods.is_empty() {
            return Err("no methods requested".into());
        }
        self.noise.validate()
    }
}

/// The hidden target and starting point for one evaluation pair. Targets
/// are drawn uniformly; the start is the space midpoint for scooping (the
/// absolute center) and a uniform draw for hockey.
pub fn eval_pair(env: &Env, base_seed: u64, pair: u32) -> (EnvParams, EnvParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(base_seed, 0x5000_0000 + pair as u64));
    let target = env.space.sample(&mut rng);
    let start = match env.kind {
        EnvKind::Scoop | EnvKind::ScoopDistance => env.space.midpoint(),
        EnvKind::Hockey => env.space.sample(&mut rng),
    };
    (target, start)
}

/// Run the full (method, seed, pair) grid and emit one row per
/// (iteration, dimension). Fails before any rollout if a learned method
/// has no checkpoint.
pub fn evaluate_sim2sim(
    env: &Env,
    policy: &TaskPolicy,
    cfg: &EvalConfig,
    models: &HashMap<Method, Model<f32>>,
) -> Result<Vec<MetricsRow>, String> {
    cfg.validate()?;
    for m in &cfg.methods {
        if m.needs_checkpoint() && !models.contains_key(m) {
            return Err(format!("method '{}' has no trained checkpoint", m.name()));
        }
        if *m == Method::BisectOracle && env.kind != EnvKind::Scoop {
            return Err("the bisection oracle is defined for the scoop env only".into());
        }
    }

    let dims = env.space.dim() as u32;
    let mut rows = Vec::with_capacity(
        (cfg.methods.len() as u32 * cfg.seeds * cfg.pairs * cfg.max_iters * dims) as usize,
    );
    for (mi, method) in cfg.methods.iter().enumerate() {
        for seed in 0..cfg.seeds {
            for pair in 0..cfg.pairs {
                let (target, start) = eval_pair(env, cfg.base_seed, pair);
                let cell =
                    ((mi as u64 * cfg.seeds as u64 + seed as u64) * cfg.pairs as u64) + pair as u64;
                let mut rng =
                    ChaCha8Rng::seed_from_u64(mix(cfg.base_seed ^ 0xE7A1_11CE, cell));
                let mut predictor: Box<dyn Predictor> = match method {
                    Method::InContext => Box::new(ModelPredictor::new(
                        models[method].clone(),
                        Method::InContext.name(),
                    )),
                    Method::Ed => {
                        Box::new(ModelPredictor::new(models[method].clone(), Method::Ed.name()))
                    }
                    Method::TuneNet => Box::new(ModelPredictor::new(
                        models[method].clone(),
                        Method::TuneNet.name(),
                    )),
                    Method::Dr => Box::new(DrPredictor::new(mix(cfg.base_seed ^ 0xD0, cell))),
                    Method::BisectOracle => Box::new(BisectOraclePredictor::new(env)),
                };
                let trace = run_adaptation(
                    predictor.as_mut(),
                    policy,
                    env,
                    &target,
                    &start,
                    cfg.max_iters,
                    &cfg.noise,
                    &mut rng,
                );
                for (iter, rec) in trace.iterations.iter().enumerate() {
                    for dim in 0..dims {
                        rows.push(MetricsRow {
                            env: env.kind.name().to_string(),
                            method: method.name().to_string(),
                            seed: seed as u64,
                            pair: pair as u64,
                            iter: iter as u32,
                            dim,
                            param_err: rec.param_err.per_dim[dim as usize],
                            traj_dist: rec.traj_dist,
                            label: rec.label,
                            success: rec.success,
                        });
                    }
                }
            }
        }
    }
    Ok(rows)
}
