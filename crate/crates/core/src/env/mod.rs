//! Analytic toy environments: 1-D object scooping (ternary tilt label or
//! distance observation) and two-zone table air hockey, plus parameter-space
//! utilities and trajectory metrics.
//!
//! Both environments keep the parameter semantics, ranges and monotonic
//! structure of their contact-rich counterparts while staying cheap enough
//! to roll out millions of times on one core. All rollouts are pure
//! functions of (parameters, action).

mod hockey;
mod metrics;
mod scoop;
mod space;

pub use hockey::HockeyPhysics;
pub use metrics::{param_error, trajectory_distance, ParamError};
pub use scoop::BALANCE_BAND;
pub use space::{EnvParams, ParamSpace, SpaceError};

use serde::{Deserialize, Serialize};

/// One rollout observation: `traj_len` states of `state_dim` values each,
/// stored row-major. Scooping yields a single 1-D state (the tilt label or
/// the scoop-to-mass distance); hockey yields 32 puck positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub state_dim: usize,
    pub states: Vec<f64>,
}

impl Trajectory {
    pub fn traj_len(&self) -> usize {
        self.states.len() / self.state_dim
    }

    pub fn state(&self, t: usize) -> &[f64] {
        &self.states[t * self.state_dim..(t + 1) * self.state_dim]
    }

    /// The scalar observation of a single-state trajectory.
    pub fn scalar(&self) -> f64 {
        debug_assert_eq!(self.states.len(), 1);
        self.states[0]
    }
}

/// An action in an environment's box; 1-D scoop point for scooping,
/// (strike angle, strike speed) for hockey.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Action(pub Vec<f64>);

/// Target point for the hockey planner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Goal {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnvKind {
    /// Ternary tilt label: -1 tilted left, +1 tilted right, 0 balanced.
    #[serde(rename = "scoop")]
    Scoop,
    /// Non-monotonic variant: observes |x_scoop - X_com| instead of a label.
    #[serde(rename = "scoop-dist")]
    ScoopDistance,
    /// Two-zone air hockey with five tunable parameters.
    #[serde(rename = "hockey")]
    Hockey,
}

impl EnvKind {
    pub fn name(&self) -> &'static str {
        match self {
            EnvKind::Scoop => "scoop",
            EnvKind::ScoopDistance => "scoop-dist",
            EnvKind::Hockey => "hockey",
        }
    }
}

impl std::str::FromStr for EnvKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "scoop" => Ok(EnvKind::Scoop),
            "scoop-dist" => Ok(EnvKind::ScoopDistance),
            "hockey" => Ok(EnvKind::Hockey),
            other => Err(format!("unknown environment '{other}'")),
        }
    }
}

/// A fully-declared environment: kind, tunable parameter space, action box
/// and physics constants. Serializable so an experiment is reproducible from
/// config + seed alone.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Env {
    pub kind: EnvKind,
    pub space: ParamSpace,
    pub action_space: ParamSpace,
    /// Physics constants; only meaningful for hockey.
    pub hockey: Option<HockeyPhysics>,
}

impl Env {
    pub fn new(kind: EnvKind) -> Self {
        match kind {
            EnvKind::Scoop | EnvKind::ScoopDistance => Env {
                kind,
                space: ParamSpace::scoop(),
                action_space: ParamSpace::scoop_actions(),
                hockey: None,
            },
            EnvKind::Hockey => Env {
                kind,
                space: ParamSpace::hockey(),
                action_space: ParamSpace::hockey_actions(),
                hockey: Some(HockeyPhysics::default()),
            },
        }
    }

    /// States per trajectory (T in the token layout).
    pub fn traj_len(&self) -> usize {
        match self.kind {
            EnvKind::Scoop | EnvKind::ScoopDistance => 1,
            EnvKind::Hockey => self.hockey.as_ref().expect("hockey constants").samples,
        }
    }

    pub fn state_dim(&self) -> usize {
        match self.kind {
            EnvKind::Scoop | EnvKind::ScoopDistance => 1,
            EnvKind::Hockey => 2,
        }
    }

    /// Deterministic rollout of `action` under parameters `eps`.
    pub fn rollout(&self, eps: &EnvParams, action: &Action) -> Result<Trajectory, SpaceError> {
        self.space.check(eps)?;
        match self.kind {
            EnvKind::Scoop => Ok(Trajectory {
                state_dim: 1,
                states: vec![scoop::tilt_label(eps.values[0], action.0[0])],
            }),
            EnvKind::ScoopDistance => Ok(Trajectory {
                state_dim: 1,
                states: vec![scoop::scoop_distance(eps.values[0], action.0[0])],
            }),
            EnvKind::Hockey => {
                let phys = self.hockey.as_ref().expect("hockey constants");
                Ok(phys.rollout(eps, action))
            }
        }
    }

    /// Map a raw state vector into [-1, 1] coordinates for model input.
    pub fn normalize_state(&self, state: &[f64]) -> Vec<f64> {
        match self.kind {
            // labels are already in {-1, 0, 1}
            EnvKind::Scoop => state.to_vec(),
            // distances lie in [0, 2]
            EnvKind::ScoopDistance => state.iter().map(|d| d - 1.0).collect(),
            EnvKind::Hockey => {
                let p = self.hockey.as_ref().expect("hockey constants");
                state
                    .chunks(2)
                    .flat_map(|xy| {
                        [
                            xy[0] / p.half_width,
                            2.0 * xy[1] / p.length - 1.0,
                        ]
                    })
                    .collect()
            }
        }
    }

    /// Whether the played action balances the object (task success for the
    /// scooping environments; success is undefined for hockey).
    pub fn scoop_success(&self, eps: &EnvParams, action: &Action) -> Option<bool> {
        match self.kind {
            EnvKind::Scoop | EnvKind::ScoopDistance => {
                Some(scoop::tilt_label(eps.values[0], action.0[0]) == 0.0)
            }
            EnvKind::Hockey => None,
        }
    }
}
