use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    #[default]
    None,
    /// Replace the tilt label with a uniform draw from {-1, 0, 1} on a
    /// fixed schedule.
    Label,
    /// Scale every trajectory coordinate by an independent uniform factor.
    Scale,
}

impl std::str::FromStr for NoiseKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(NoiseKind::None),
            "label" => Ok(NoiseKind::Label),
            "scale" => Ok(NoiseKind::Scale),
            other => Err(format!("unknown noise kind '{other}'")),
        }
    }
}

/// Observation noise applied to the target-environment trajectory before
/// the predictor sees it. Metrics always use the clean rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    /// Corrupt labels at iterations i with i % period == period - 1.
    pub label_period: u32,
    pub scale_lo: f64,
    pub scale_hi: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            kind: NoiseKind::None,
            label_period: 3,
            scale_lo: 0.9,
            scale_hi: 1.1,
        }
    }
}

impl NoiseSpec {
    pub fn label() -> Self {
        NoiseSpec {
            kind: NoiseKind::Label,
            ..NoiseSpec::default()
        }
    }

    pub fn scale() -> Self {
        NoiseSpec {
            kind: NoiseKind::Scale,
            ..NoiseSpec::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.kind == NoiseKind::Scale && !(self.scale_lo <= 1.0 && 1.0 <= self.scale_hi) {
            return Err("scale band must contain 1.0".into());
        }
        if self.kind == NoiseKind::Label && self.label_period == 0 {
            return Err("label period must be >= 1".into());
        }
        Ok(())
    }
}

/// Corrupt one observed trajectory according to `spec` and the iteration
/// index. Draws come from the caller's stream only when noise fires.
pub fn inject_noise(
    traj: &Trajectory,
    spec: &NoiseSpec,
    iter: u32,
    rng: &mut ChaCha8Rng,
) -> Trajectory {
    match spec.kind {
        NoiseKind::None => traj.clone(),
        NoiseKind::Label => {
            if iter % spec.label_period == spec.label_period - 1 {
                let label = [-1.0, 0.0, 1.0][rng.random_range(0..3)];
                Trajectory {
                    state_dim: traj.state_dim,
                    states: vec![label],
                }
            } else {
                traj.clone()
            }
        }
        NoiseKind::Scale => Trajectory {
            state_dim: traj.state_dim,
            states: traj
                .states
                .iter()
                .map(|&v| v * rng.random_range(spec.scale_lo..=spec.scale_hi))
                .collect(),
        },
    }
}
