use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpaceError {
    #[error("parameter vector has {got} dims, space has {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("{name}={value} outside [{lower}, {upper}]")]
    OutOfRange {
        name: String,
        value: f64,
        lower: f64,
        upper: f64,
    },
}

/// Bounded box of tunable environment parameters (raw units). Also reused
/// for action boxes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpace {
    pub names: Vec<String>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// A point in a parameter space, raw units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvParams {
    pub values: Vec<f64>,
}

impl ParamSpace {
    pub fn new(names: Vec<String>, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert!(!names.is_empty(), "space must have at least one dimension");
        assert_eq!(names.len(), lower.len());
        assert_eq!(names.len(), upper.len());
        for j in 0..names.len() {
            assert!(
                lower[j] < upper[j],
                "bound order violated for {}",
                names[j]
            );
        }
        ParamSpace {
            names,
            lower,
            upper,
        }
    }

    /// Object center of mass, relative position along the object.
    pub fn scoop() -> Self {
        ParamSpace::new(vec!["x_com".into()], vec![-1.0], vec![1.0])
    }

    pub fn scoop_actions() -> Self {
        ParamSpace::new(vec!["x_scoop".into()], vec![-1.0], vec![1.0])
    }

    /// Two surface frictions, puck drag and two wall dampings.
    pub fn hockey() -> Self {
        ParamSpace::new(
            vec![
                "mu_left".into(),
                "mu_right".into(),
                "zeta_mallet".into(),
                "zeta_left".into(),
                "zeta_right".into(),
            ],
            vec![0.03, 0.03, -15.0, -40.0, -40.0],
            vec![0.07, 0.07, -3.0, -3.0, -3.0],
        )
    }

    /// Strike angle (rad) and strike speed (m/s).
    pub fn hockey_actions() -> Self {
        ParamSpace::new(
            vec!["theta".into(), "v0".into()],
            vec![std::f64::consts::FRAC_PI_6, 0.5],
            vec![5.0 * std::f64::consts::FRAC_PI_6, 3.0],
        )
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn width(&self, j: usize) -> f64 {
        self.upper[j] - self.lower[j]
    }

    pub fn midpoint(&self) -> EnvParams {
        EnvParams {
            values: (0..self.dim())
                .map(|j| 0.5 * (self.lower[j] + self.upper[j]))
                .collect(),
        }
    }

    pub fn check(&self, eps: &EnvParams) -> Result<(), SpaceError> {
        self.check_values(&eps.values)
    }

    pub fn check_values(&self, values: &[f64]) -> Result<(), SpaceError> {
        if values.len() != self.dim() {
            return Err(SpaceError::DimMismatch {
                expected: self.dim(),
                got: values.len(),
            });
        }
        for j in 0..self.dim() {
            if values[j] < self.lower[j] || values[j] > self.upper[j] {
                return Err(SpaceError::OutOfRange {
                    name: self.names[j].clone(),
                    value: values[j],
                    lower: self.lower[j],
                    upper: self.upper[j],
                });
            }
        }
        Ok(())
    }

    /// I.i.d. uniform draw from the box; deterministic given the rng state.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> EnvParams {
        EnvParams {
            values: (0..self.dim())
                .map(|j| rng.random_range(self.lower[j]..=self.upper[j]))
                .collect(),
        }
    }

    /// Affine map lower -> -1, upper -> +1. Errors on out-of-space input.
    pub fn normalize(&self, eps: &EnvParams) -> Result<Vec<f64>, SpaceError> {
        self.check(eps)?;
        Ok(self.normalize_unchecked(&eps.values))
    }

    /// Same affine map without the range check; used on values that are
    /// in-box by construction.
    pub fn normalize_unchecked(&self, values: &[f64]) -> Vec<f64> {
        values
            .iter()
            .enumerate()
            .map(|(j, &v)| 2.0 * (v - self.lower[j]) / self.width(j) - 1.0)
            .collect()
    }

    /// Inverse of [`ParamSpace::normalize`]; does not clamp.
    pub fn denormalize(&self, normalized: &[f64]) -> EnvParams {
        EnvParams {
            values: normalized
                .iter()
                .enumerate()
                .map(|(j, &v)| self.lower[j] + 0.5 * (v + 1.0) * self.width(j))
                .collect(),
        }
    }

    /// Project a raw vector onto the box.
    pub fn clamp(&self, values: &[f64]) -> EnvParams {
        EnvParams {
            values: values
                .iter()
                .enumerate()
                .map(|(j, &v)| v.clamp(self.lower[j], self.upper[j]))
                .collect(),
        }
    }
}
