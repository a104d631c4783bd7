use thiserror::Error;

use super::space::{EnvParams, ParamSpace};
use super::Trajectory;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("trajectory lengths differ: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
}

/// Sum of point-wise L2 distances between two equally-long trajectories.
pub fn trajectory_distance(a: &Trajectory, b: &Trajectory) -> Result<f64, MetricError> {
    if a.states.len() != b.states.len() || a.state_dim != b.state_dim {
        return Err(MetricError::LengthMismatch {
            a: a.states.len(),
            b: b.states.len(),
        });
    }
    let mut total = 0.0;
    for t in 0..a.traj_len() {
        let (sa, sb) = (a.state(t), b.state(t));
        let sq: f64 = sa
            .iter()
            .zip(sb)
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum();
        total += sq.sqrt();
    }
    Ok(total)
}

/// Normalized parameter differences: per-dimension |pred - target| divided
/// by the range width, and their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamError {
    pub per_dim: Vec<f64>,
    pub mean: f64,
}

pub fn param_error(pred: &EnvParams, target: &EnvParams, space: &ParamSpace) -> ParamError {
    let per_dim: Vec<f64> = (0..space.dim())
        .map(|j| (pred.values[j] - target.values[j]).abs() / space.width(j))
        .collect();
    let mean = per_dim.iter().sum::<f64>() / per_dim.len() as f64;
    ParamError { per_dim, mean }
}
