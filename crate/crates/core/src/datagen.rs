//! Source-to-target adaptation sequence generation.
//!
//! The core generator runs a randomized binary search over the parameter
//! box: per dimension it tightens a dynamic bound toward the hidden target
//! (using the ground-truth comparison available in simulation) and draws
//! the next query point from a symmetric beta distribution over the current
//! bounds. Variants: an exploration gate that skips early bound updates
//! with probability Gamma^i, deterministic bisection (r fixed at 0.5),
//! ordered linear interpolation, and single-step expert pairs for the
//! one-shot baselines.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::env::{Action, Env, EnvParams, Trajectory};
use crate::policy::TaskPolicy;

/// One adaptation iteration: parameters played, the action, and the rollout
/// in both the played and the target environment under that same action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub eps: EnvParams,
    pub action: Action,
    pub tau_source: Trajectory,
    pub tau_target: Trajectory,
}

/// How a sequence was generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataMode {
    /// Randomized binary search (beta-distributed split points).
    Rbs,
    /// Randomized binary search with the exploration gate enabled.
    RbsExplore,
    /// Ordered linear interpolation between source and target.
    Linterp,
    /// Deterministic bisection: always the midpoint of the bounds.
    Bisect,
    /// Single-iteration expert pairs for the one-shot baselines.
    Expert,
}

impl DataMode {
    pub fn name(&self) -> &'static str {
        match self {
            DataMode::Rbs => "rbs",
            DataMode::RbsExplore => "rbs-explore",
            DataMode::Linterp => "linterp",
            DataMode::Bisect => "bisect",
            DataMode::Expert => "expert",
        }
    }
}

impl std::str::FromStr for DataMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rbs" => Ok(DataMode::Rbs),
            "rbs-explore" => Ok(DataMode::RbsExplore),
            "linterp" => Ok(DataMode::Linterp),
            "bisect" => Ok(DataMode::Bisect),
            "expert" => Ok(DataMode::Expert),
            other => Err(format!("unknown data mode '{other}'")),
        }
    }
}

/// One source-to-target adaptation history: `transitions + 1` records for
/// the search modes, a single record for expert pairs. The ground-truth
/// target is stored for training targets and audits only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionSequence {
    pub mode: DataMode,
    pub seed: u64,
    pub env: String,
    pub transitions: usize,
    pub eps_target: EnvParams,
    pub records: Vec<TransitionRecord>,
}

/// Generation settings. `transitions` is the iteration count L of the
/// search (a sequence stores L+1 records); `alpha` parameterizes the
/// symmetric beta split distribution; `explore` is the exploration
/// parameter Gamma in [0, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub transitions: usize,
    pub alpha: f64,
    pub explore: f64,
    pub base_seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            transitions: 7,
            alpha: 2.0,
            explore: 0.0,
            base_seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.transitions < 1 {
            return Err("transitions must be >= 1".into());
        }
        if !(self.alpha > 0.0) {
            return Err("alpha must be > 0".into());
        }
        if !(0.0..1.0).contains(&self.explore) {
            return Err("explore must lie in [0, 1)".into());
        }
        Ok(())
    }
}

/// Dynamic search bounds, one pair per dimension, always nested inside the
/// space box. The gap is tracked explicitly: midpoint updates halve it
/// exactly instead of recomputing `upper - lower`, which would reintroduce
/// a rounding step and break the exact-halving property of bisection.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundsState {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub gap: Vec<f64>,
}

impl BoundsState {
    pub fn full(env: &Env) -> Self {
        let gap = (0..env.space.dim()).map(|j| env.space.width(j)).collect();
        BoundsState {
            lower: env.space.lower.clone(),
            upper: env.space.upper.clone(),
            gap,
        }
    }

    /// The point a midpoint split plays next in `dim`.
    pub fn midpoint(&self, dim: usize) -> f64 {
        self.lower[dim] + 0.5 * self.gap[dim]
    }

    /// Tighten toward `target` given an arbitrary played point (the
    /// ground-truth comparison of the generation algorithm).
    pub fn update(&mut self, played: &[f64], target: &[f64], dim: usize) {
        if played[dim] < target[dim] {
            self.lower[dim] = played[dim];
        } else {
            self.upper[dim] = played[dim];
        }
        self.gap[dim] = self.upper[dim] - self.lower[dim];
    }

    /// Tighten after playing the exact midpoint: the gap halves exactly.
    pub fn update_midpoint(&mut self, played: &[f64], target: &[f64], dim: usize) {
        if played[dim] < target[dim] {
            self.lower[dim] = played[dim];
        } else {
            self.upper[dim] = played[dim];
        }
        self.gap[dim] *= 0.5;
    }
}

/// How the split point r is drawn for the next query.
enum SplitRule {
    Beta(Beta<f64>),
    Midpoint,
}

impl SplitRule {
    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            SplitRule::Beta(b) => b.sample(rng),
            SplitRule::Midpoint => 0.5,
        }
    }
}

/// Generate one sequence, sampling source and target from the space.
pub fn generate_sequence(
    env: &Env,
    policy: &TaskPolicy,
    cfg: &GenConfig,
    mode: DataMode,
    seed: u64,
) -> TransitionSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let source = env.space.sample(&mut rng);
    let target = env.space.sample(&mut rng);
    generate_sequence_from(env, policy, cfg, mode, &source, &target, &mut rng, seed)
}

/// Generate one sequence from a fixed (source, target) pair. Exposed so
/// tests can hand-trace the search arithmetic.
#[allow(clippy::too_many_arguments)]
pub fn generate_sequence_from(
    env: &Env,
    policy: &TaskPolicy,
    cfg: &GenConfig,
    mode: DataMode,
    source: &EnvParams,
    target: &EnvParams,
    rng: &mut ChaCha8Rng,
    seed: u64,
) -> TransitionSequence {
    match mode {
        DataMode::Rbs | DataMode::RbsExplore | DataMode::Bisect => {
            let split = match mode {
                DataMode::Bisect => SplitRule::Midpoint,
                _ => SplitRule::Beta(Beta::new(cfg.alpha, cfg.alpha).expect("alpha > 0")),
            };
            // Plain mode runs with the gate always open; the exploration
            // variant reduces to it exactly when explore == 0 because the
            // gate then draws nothing from the stream.
            let gamma = match mode {
                DataMode::RbsExplore => cfg.explore,
                _ => 0.0,
            };
            search_sequence(env, policy, cfg, mode, source, target, split, gamma, rng, seed)
        }
        DataMode::Linterp => linterp_sequence(env, policy, cfg, source, target, rng, seed),
        DataMode::Expert => expert_pair(env, policy, source, target, rng, seed),
    }
}

#[allow(clippy::too_many_arguments)]
fn search_sequence(
    env: &Env,
    policy: &TaskPolicy,
    cfg: &GenConfig,
    mode: DataMode,
    source: &EnvParams,
    target: &EnvParams,
    split: SplitRule,
    gamma: f64,
    rng: &mut ChaCha8Rng,
    seed: u64,
) -> TransitionSequence {
    let dim = env.space.dim();
    let mut bounds = BoundsState::full(env);
    let mut eps = source.clone();
    let mut records = Vec::with_capacity(cfg.transitions + 1);

    for i in 0..=cfg.transitions {
        let action = policy.action(env, &eps, rng);
        let tau_source = env.rollout(&eps, &action).expect("eps stays in space");
        let tau_target = env.rollout(target, &action).expect("target in space");
        records.push(TransitionRecord {
            eps: eps.clone(),
            action,
            tau_source,
            tau_target,
        });
        if i == cfg.transitions {
            break;
        }
        let mut next = vec![0.0; dim];
        let midpoint_play = matches!(mode, DataMode::Bisect) && i >= 1;
        for j in 0..dim {
            // Gate convention: with gamma == 0 the gate is always open and
            // consumes no randomness; otherwise the bound update fires when
            // a uniform draw exceeds gamma^i (never at i = 0).
            let open = if gamma == 0.0 {
                true
            } else {
                rng.random::<f64>() > gamma.powi(i as i32)
            };
            if open {
                if midpoint_play {
                    bounds.update_midpoint(&eps.values, &target.values, j);
                } else {
                    bounds.update(&eps.values, &target.values, j);
                }
            }
            let r = split.draw(rng);
            next[j] = r * bounds.gap[j] + bounds.lower[j];
        }
        eps = EnvParams { values: next };
    }

    TransitionSequence {
        mode,
        seed,
        env: env.kind.name().to_string(),
        transitions: cfg.transitions,
        eps_target: target.clone(),
        records,
    }
}

fn linterp_sequence(
    env: &Env,
    policy: &TaskPolicy,
    cfg: &GenConfig,
    source: &EnvParams,
    target: &EnvParams,
    rng: &mut ChaCha8Rng,
    seed: u64,
) -> TransitionSequence {
    let dim = env.space.dim();
    let interior = cfg.transitions.saturating_sub(1);

    // per-dimension draws between source and target, ordered source-first
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(dim);
    for j in 0..dim {
        let (lo, hi) = if source.values[j] <= target.values[j] {
            (source.values[j], target.values[j])
        } else {
            (target.values[j], source.values[j])
        };
        let mut draws: Vec<f64> = (0..interior).map(|_| rng.random_range(lo..=hi)).collect();
        draws.sort_by(|a, b| {
            (a - source.values[j])
                .abs()
                .total_cmp(&(b - source.values[j]).abs())
        });
        columns.push(draws);
    }

    let mut points = Vec::with_capacity(cfg.transitions + 1);
    points.push(source.clone());
    for i in 0..interior {
        points.push(EnvParams {
            values: (0..dim).map(|j| columns[j][i]).collect(),
        });
    }
    points.push(target.clone());

    let records = points
        .into_iter()
        .map(|eps| {
            let action = policy.action(env, &eps, rng);
            let tau_source = env.rollout(&eps, &action).expect("in space");
            let tau_target = env.rollout(target, &action).expect("in space");
            TransitionRecord {
                eps,
                action,
                tau_source,
                tau_target,
            }
        })
        .collect();

    TransitionSequence {
        mode: DataMode::Linterp,
        seed,
        env: env.kind.name().to_string(),
        transitions: cfg.transitions,
        eps_target: target.clone(),
        records,
    }
}

fn expert_pair(
    env: &Env,
    policy: &TaskPolicy,
    source: &EnvParams,
    target: &EnvParams,
    rng: &mut ChaCha8Rng,
    seed: u64,
) -> TransitionSequence {
    let action = policy.action(env, source, rng);
    let tau_source = env.rollout(source, &action).expect("in space");
    let tau_target = env.rollout(target, &action).expect("in space");
    TransitionSequence {
        mode: DataMode::Expert,
        seed,
        env: env.kind.name().to_string(),
        transitions: 0,
        eps_target: target.clone(),
        records: vec![TransitionRecord {
            eps: source.clone(),
            action,
            tau_source,
            tau_target,
        }],
    }
}

/// Generate `count` sequences (per-sequence seed = base_seed + index) and
/// write them with a checksummed manifest.
pub fn build_dataset(
    env: &Env,
    policy: &TaskPolicy,
    cfg: &GenConfig,
    count: usize,
    mode: DataMode,
    path: &std::path::Path,
) -> Result<crate::io::dataset::DatasetManifest, crate::io::IoError> {
    let sequences: Vec<TransitionSequence> = (0..count)
        .map(|i| generate_sequence(env, policy, cfg, mode, cfg.base_seed + i as u64))
        .collect();
    crate::io::dataset::write_dataset(path, &sequences, env.kind.name(), mode, cfg)
}

/// Residual from the first played point to the target (the training target
/// of the residual-head baseline).
pub fn residual_target(seq: &TransitionSequence) -> Vec<f64> {
    seq.eps_target
        .values
        .iter()
        .zip(&seq.records[0].eps.values)
        .map(|(t, s)| t - s)
        .collect()
}

/// Replay a search-mode sequence and verify the bracket invariant: with the
/// gate always open, the dynamic bounds tighten monotonically and bracket
/// the target at every iteration, and every played point lies inside the
/// current bounds. Valid for `Rbs` and `Bisect` sequences (gate-open modes).
pub fn audit_bracket(env: &Env, seq: &TransitionSequence) -> Result<(), String> {
    let dim = env.space.dim();
    let mut bounds = BoundsState::full(env);
    let target = &seq.eps_target.values;
    for (i, rec) in seq.records.iter().enumerate() {
        for j in 0..dim {
            if rec.eps.values[j] < bounds.lower[j] || rec.eps.values[j] > bounds.upper[j] {
                return Err(format!(
                    "iter {i} dim {j}: played {} outside [{}, {}]",
                    rec.eps.values[j], bounds.lower[j], bounds.upper[j]
                ));
            }
            bounds.update(&rec.eps.values, target, j);
            if target[j] < bounds.lower[j] || target[j] > bounds.upper[j] {
                return Err(format!(
                    "iter {i} dim {j}: target {} escaped [{}, {}]",
                    target[j], bounds.lower[j], bounds.upper[j]
                ));
            }
        }
    }
    Ok(())
}

/// Replay a bisect sequence and verify that every played point past the
/// first is the exact midpoint of the replayed bounds and that the bound
/// gap after each iteration i >= 1 is exactly half the previous gap.
pub fn audit_gap_halving(env: &Env, seq: &TransitionSequence) -> Result<(), String> {
    let dim = env.space.dim();
    let mut bounds = BoundsState::full(env);
    let target = &seq.eps_target.values;
    let mut prev_gap: Option<Vec<f64>> = None;
    for (i, rec) in seq.records.iter().enumerate() {
        for j in 0..dim {
            if i >= 1 {
                let m = bounds.midpoint(j);
                if rec.eps.values[j] != m {
                    return Err(format!(
                        "iter {i} dim {j}: played {} is not the midpoint {m}",
                        rec.eps.values[j]
                    ));
                }
                bounds.update_midpoint(&rec.eps.values, target, j);
            } else {
                bounds.update(&rec.eps.values, target, j);
            }
        }
        if i >= 1 {
            if let Some(prev) = &prev_gap {
                for j in 0..dim {
                    if bounds.gap[j] != 0.5 * prev[j] {
                        return Err(format!(
                            "iter {i} dim {j}: gap {} != half of {}",
                            bounds.gap[j], prev[j]
                        ));
                    }
                }
            }
        }
        prev_gap = Some(bounds.gap.clone());
    }
    Ok(())
}
