//! Environment-conditioned action selection pi(a | s0, eps): the scooping
//! policy is the closed-form optimum (scoop at the believed center of mass);
//! hockey uses a small cross-entropy planner over (strike angle, speed)
//! scored by closest approach to a fixed goal point.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::env::{Action, Env, EnvKind, EnvParams, Goal};

/// Cross-entropy planner settings. The search starts from the full action
/// box and refits a diagonal Gaussian to the elites each round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub population: usize,
    pub rounds: usize,
    pub elites: usize,
    pub goal: Goal,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            population: 16,
            rounds: 2,
            elites: 4,
            // up-table so good shots traverse both friction zones and bank
            goal: Goal { x: 0.0, y: 1.7 },
        }
    }
}

/// The inverse-distance reward uses the bounded form 1/(1 + d); the raw
/// reciprocal diverges on exact hits.
pub const REWARD_SOFTENING: f64 = 1.0;

/// Closest approach of the rollout to the goal, in meters.
pub fn min_goal_distance(env: &Env, eps: &EnvParams, action: &Action, goal: &Goal) -> f64 {
    let traj = env.rollout(eps, action).expect("in-space rollout");
    (0..traj.traj_len())
        .map(|t| {
            let s = traj.state(t);
            ((s[0] - goal.x).powi(2) + (s[1] - goal.y).powi(2)).sqrt()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Softened inverse distance-to-goal.
pub fn reward(env: &Env, eps: &EnvParams, action: &Action, goal: &Goal) -> f64 {
    1.0 / (REWARD_SOFTENING + min_goal_distance(env, eps, action, goal))
}

/// The optimal scooping policy under the balance reward: scoop exactly at
/// the believed center of mass.
pub fn scoop_action(eps: &EnvParams) -> Action {
    Action(vec![eps.values[0]])
}

/// Cross-entropy search over the hockey action box. Deterministic given the
/// seed; returns the best action seen across all rounds.
pub fn plan_action(env: &Env, eps: &EnvParams, cfg: &PlannerConfig, seed: u64) -> Action {
    plan_action_traced(env, eps, cfg, seed).0
}

/// As [`plan_action`] but also returns the best-so-far min-distance after
/// each round (non-increasing by construction).
pub fn plan_action_traced(
    env: &Env,
    eps: &EnvParams,
    cfg: &PlannerConfig,
    seed: u64,
) -> (Action, Vec<f64>) {
    let bx = &env.action_space;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut best_action = Action(vec![
        0.5 * (bx.lower[0] + bx.upper[0]),
        0.5 * (bx.lower[1] + bx.upper[1]),
    ]);
    let mut best_dist = min_goal_distance(env, eps, &best_action, &cfg.goal);
    let mut round_best = Vec::with_capacity(cfg.rounds);

    // distribution state: None = uniform over the box (first round)
    let mut gaussian: Option<Vec<(f64, f64)>> = None;

    for _ in 0..cfg.rounds {
        let mut scored: Vec<(f64, Action)> = Vec::with_capacity(cfg.population);
        for _ in 0..cfg.population {
            let values: Vec<f64> = match &gaussian {
                None => (0..bx.dim())
                    .map(|j| rng.random_range(bx.lower[j]..=bx.upper[j]))
                    .collect(),
                Some(params) => params
                    .iter()
                    .enumerate()
                    .map(|(j, &(mean, std))| {
                        let n = Normal::new(mean, std).expect("positive std");
                        n.sample(&mut rng).clamp(bx.lower[j], bx.upper[j])
                    })
                    .collect(),
            };
            let a = Action(values);
            let d = min_goal_distance(env, eps, &a, &cfg.goal);
            scored.push((d, a));
        }
        scored.sort_by(|a, b| a.0.total_cmp(&b.0));
        if scored[0].0 < best_dist {
            best_dist = scored[0].0;
            best_action = scored[0].1.clone();
        }
        round_best.push(best_dist);

        let elites = &scored[..cfg.elites.min(scored.len())];
        gaussian = Some(
            (0..bx.dim())
                .map(|j| {
                    let mean = elites.iter().map(|(_, a)| a.0[j]).sum::<f64>()
                        / elites.len() as f64;
                    let var = elites
                        .iter()
                        .map(|(_, a)| (a.0[j] - mean).powi(2))
                        .sum::<f64>()
                        / elites.len() as f64;
                    // floor keeps the refit spread informative
                    let std = var.sqrt().max(0.01 * bx.width(j));
                    (mean, std)
                })
                .collect(),
        );
    }
    (best_action, round_best)
}

/// Env-conditioned task policy used by data generation and the adaptation
/// loop. Draws any randomness it needs from the caller's stream.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskPolicy {
    pub planner: PlannerConfig,
}

impl Default for TaskPolicy {
    fn default() -> Self {
        TaskPolicy {
            planner: PlannerConfig::default(),
        }
    }
}

impl TaskPolicy {
    pub fn action(&self, env: &Env, eps: &EnvParams, rng: &mut ChaCha8Rng) -> Action {
        match env.kind {
            EnvKind::Scoop | EnvKind::ScoopDistance => scoop_action(eps),
            EnvKind::Hockey => plan_action(env, eps, &self.planner, rng.random()),
        }
    }
}
