use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::env::{param_error, trajectory_distance, Action, Env, EnvKind, EnvParams, ParamError, Trajectory};
use crate::model::{HistoryWindow, Model, NormRecord};
use crate::policy::TaskPolicy;

use super::noise::{inject_noise, NoiseSpec};

/// Anything that maps an interaction history to the next parameters to try.
/// Predictors see the (possibly noisy) history window and nothing else; the
/// hidden target parameters are structurally out of reach.
pub trait Predictor {
    fn name(&self) -> &'static str;
    /// Context window in iterations.
    fn window(&self) -> usize;
    fn predict(&mut self, env: &Env, window: &HistoryWindow) -> EnvParams;
    /// The parameters played at iteration 0. Defaults to the campaign's
    /// starting point; domain randomization draws fresh instead.
    fn initial(&mut self, _env: &Env, start: &EnvParams) -> EnvParams {
        start.clone()
    }
}

/// A trained sequence-model predictor.
pub struct ModelPredictor {
    pub model: Model<f32>,
    name: &'static str,
}

impl ModelPredictor {
    pub fn new(model: Model<f32>, name: &'static str) -> Self {
        ModelPredictor { model, name }
    }
}

impl Predictor for ModelPredictor {
    fn name(&self) -> &'static str {
        self.name
    }
    fn window(&self) -> usize {
        self.model.cfg.window
    }
    fn predict(&mut self, env: &Env, window: &HistoryWindow) -> EnvParams {
        self.model.predict_next(env, window)
    }
}

/// Domain randomization: a fresh uniform draw every iteration, no history
/// dependence.
pub struct DrPredictor {
    rng: ChaCha8Rng,
}

impl DrPredictor {
    pub fn new(seed: u64) -> Self {
        DrPredictor {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// The bare baseline step, exposed for coverage checks.
    pub fn step(env: &Env, rng: &mut ChaCha8Rng) -> EnvParams {
        env.space.sample(rng)
    }
}

impl Predictor for DrPredictor {
    fn name(&self) -> &'static str {
        "dr"
    }
    fn window(&self) -> usize {
        1
    }
    fn predict(&mut self, env: &Env, _window: &HistoryWindow) -> EnvParams {
        DrPredictor::step(env, &mut self.rng)
    }
    fn initial(&mut self, env: &Env, _start: &EnvParams) -> EnvParams {
        DrPredictor::step(env, &mut self.rng)
    }
}

/// Label-driven bisection for the scooping task: tightens a bracket around
/// the center of mass from observed tilt labels alone and plays the
/// midpoint; holds position once balanced.
pub struct BisectOraclePredictor {
    lower: f64,
    upper: f64,
}

impl BisectOraclePredictor {
    pub fn new(env: &Env) -> Self {
        assert!(
            matches!(env.kind, EnvKind::Scoop),
            "the bisection oracle reads tilt labels"
        );
        BisectOraclePredictor {
            lower: env.space.lower[0],
            upper: env.space.upper[0],
        }
    }
}

impl Predictor for BisectOraclePredictor {
    fn name(&self) -> &'static str {
        "bisect"
    }
    fn window(&self) -> usize {
        1
    }
    fn predict(&mut self, env: &Env, window: &HistoryWindow) -> EnvParams {
        let rec = window.records.last().expect("at least one record");
        let played = env.space.denormalize(&rec.eps).values[0];
        let label = rec.real[0];
        if label > 0.0 {
            // tipped right: mass is right of the scoop point
            self.lower = played;
        } else if label < 0.0 {
            self.upper = played;
        } else {
            return EnvParams {
                values: vec![played],
            };
        }
        EnvParams {
            values: vec![0.5 * (self.lower + self.upper)],
        }
    }
}

/// One adaptation iteration as recorded by the harness. The trajectories
/// stored here are the clean rollouts; noise only affects what the
/// predictor saw.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub eps: EnvParams,
    pub action: Action,
    pub tau_sim: Trajectory,
    pub tau_real: Trajectory,
    pub param_err: ParamError,
    pub traj_dist: Option<f64>,
    pub label: Option<f64>,
    pub success: Option<bool>,
}

#[derive(Debug, Clone)]
pub struct AdaptationTrace {
    pub method: &'static str,
    pub eps_target: EnvParams,
    pub iterations: Vec<IterationRecord>,
    /// Out-of-space predictions that had to be clamped.
    pub clamped: usize,
}

/// Run the online adaptation loop for `max_iters` iterations: act from the
/// policy under the believed parameters, roll out in both the believed
/// simulation and the hidden target, record metrics, and ask the predictor
/// for the next parameters given the last `window` iterations.
pub fn run_adaptation(
    predictor: &mut dyn Predictor,
    policy: &TaskPolicy,
    env: &Env,
    eps_target: &EnvParams,
    eps_0: &EnvParams,
    max_iters: u32,
    noise: &NoiseSpec,
    rng: &mut ChaCha8Rng,
) -> AdaptationTrace {
    let window_cap = predictor.window().max(1);
    let mut window: Vec<NormRecord> = Vec::with_capacity(window_cap);
    let mut eps = predictor.initial(env, eps_0);
    let mut iterations = Vec::with_capacity(max_iters as usize);
    let mut clamped = 0;

    for iter in 0..max_iters {
        let action = policy.action(env, &eps, rng);
        let tau_sim = env.rollout(&eps, &action).expect("eps in space");
        let tau_real = env.rollout(eps_target, &action).expect("target in space");
        let observed = inject_noise(&tau_real, noise, iter, rng);

        let param_err = param_error(&eps, eps_target, &env.space);
        let (traj_dist, label) = match env.kind {
            EnvKind::Hockey => (
                Some(trajectory_distance(&tau_sim, &tau_real).expect("equal lengths")),
                None,
            ),
            EnvKind::Scoop | EnvKind::ScoopDistance => (None, Some(tau_real.scalar())),
        };
        let success = env.scoop_success(eps_target, &action);
        iterations.push(IterationRecord {
            eps: eps.clone(),
            action: action.clone(),
            tau_sim: tau_sim.clone(),
            tau_real,
            param_err,
            traj_dist,
            label,
            success,
        });

        if window.len() == window_cap {
            window.remove(0);
        }
        window.push(NormRecord {
            eps: env.space.normalize_unchecked(&eps.values),
            act: env.action_space.normalize_unchecked(&action.0),
            sim: env.normalize_state(&tau_sim.states),
            real: env.normalize_state(&observed.states),
        });

        let next = predictor.predict(
            env,
            &HistoryWindow {
                records: window.clone(),
            },
        );
        eps = if env.space.check(&next).is_ok() {
            next
        } else {
            clamped += 1;
            env.space.clamp(&next.values)
        };
    }

    AdaptationTrace {
        method: predictor.name(),
        eps_target: eps_target.clone(),
        iterations,
        clamped,
    }
}
