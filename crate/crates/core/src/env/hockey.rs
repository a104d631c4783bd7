//! Two-zone table air hockey as a point-mass integration. The table is
//! split at x = 0 into halves with independent sliding friction; side walls
//! carry independent damping, and the puck itself is slowed by a global
//! drag tied to the mallet-damping parameter.

use serde::{Deserialize, Serialize};

use super::space::EnvParams;
use super::{Action, Trajectory};

/// Physics constants for the hockey table. All fields are part of the
/// experiment declaration; the defaults are what every shipped config uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HockeyPhysics {
    /// Table half-width: walls at x = +-half_width.
    pub half_width: f64,
    /// Table length: walls at y = 0 and y = length.
    pub length: f64,
    pub start_x: f64,
    pub start_y: f64,
    /// Integration step (s).
    pub dt: f64,
    /// Number of integration steps; dt * steps is the horizon.
    pub steps: usize,
    /// Positions sampled uniformly over the horizon for the trajectory.
    pub samples: usize,
    pub gravity: f64,
    /// The puck clamps to rest below this speed (m/s).
    pub rest_speed: f64,
    /// Wall restitution r(zeta) = exp(zeta / restitution_scale).
    pub restitution_scale: f64,
    /// Per-step velocity factor exp(zeta_mallet * dt / drag_scale).
    pub drag_scale: f64,
}

impl Default for HockeyPhysics {
    fn default() -> Self {
        HockeyPhysics {
            half_width: 0.45,
            length: 1.9,
            start_x: 0.0,
            start_y: 0.2,
            dt: 0.01,
            steps: 200,
            samples: 32,
            gravity: 9.81,
            rest_speed: 1e-3,
            restitution_scale: 60.0,
            drag_scale: 100.0,
        }
    }
}

impl HockeyPhysics {
    /// Integrate one strike: Coulomb deceleration by the local surface
    /// friction, global exponential drag, and restitution bounces at the
    /// walls. Returns `samples` positions taken uniformly over the horizon.
    ///
    /// Parameter order: [mu_left, mu_right, zeta_mallet, zeta_left,
    /// zeta_right].
    pub fn rollout(&self, eps: &EnvParams, action: &Action) -> Trajectory {
        let [mu_left, mu_right, zeta_mallet, zeta_left, zeta_right]: [f64; 5] =
            eps.values.as_slice().try_into().expect("5-d hockey params");
        let (theta, v0) = (action.0[0], action.0[1]);

        let r_left = (zeta_left / self.restitution_scale).exp();
        let r_right = (zeta_right / self.restitution_scale).exp();
        let r_far = (0.5 * (zeta_left + zeta_right) / self.restitution_scale).exp();
        let drag = (zeta_mallet * self.dt / self.drag_scale).exp();

        let (mut x, mut y) = (self.start_x, self.start_y);
        let (mut vx, mut vy) = (v0 * theta.cos(), v0 * theta.sin());

        let mut path = Vec::with_capacity(self.steps);
        for _ in 0..self.steps {
            let speed = (vx * vx + vy * vy).sqrt();
            if speed > 0.0 {
                // Coulomb friction from the surface under the puck
                let mu = if x < 0.0 { mu_left } else { mu_right };
                let dv = mu * self.gravity * self.dt;
                if dv >= speed {
                    vx = 0.0;
                    vy = 0.0;
                } else {
                    let scale = (speed - dv) / speed;
                    vx *= scale;
                    vy *= scale;
                }
                vx *= drag;
                vy *= drag;
                if (vx * vx + vy * vy).sqrt() < self.rest_speed {
                    vx = 0.0;
                    vy = 0.0;
                }
            }
            x += vx * self.dt;
            y += vy * self.dt;

            if x < -self.half_width {
                x = -2.0 * self.half_width - x;
                vx = -r_left * vx;
            } else if x > self.half_width {
                x = 2.0 * self.half_width - x;
                vx = -r_right * vx;
            }
            if y < 0.0 {
                y = -y;
                vy = -r_far * vy;
            } else if y > self.length {
                y = 2.0 * self.length - y;
                vy = -r_far * vy;
            }
            x = x.clamp(-self.half_width, self.half_width);
            y = y.clamp(0.0, self.length);
            path.push((x, y));
        }

        let mut states = Vec::with_capacity(self.samples * 2);
        for j in 0..self.samples {
            let s = (((j + 1) as f64 * self.steps as f64) / self.samples as f64).round() as usize;
            let (px, py) = path[s - 1];
            states.push(px);
            states.push(py);
        }
        Trajectory {
            state_dim: 2,
            states,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::space::ParamSpace;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mid_params() -> EnvParams {
        EnvParams {
            values: vec![0.05, 0.05, -9.0, -21.5, -21.5],
        }
    }

    fn travel(traj: &Trajectory, phys: &HockeyPhysics) -> f64 {
        let last = traj.state(traj.traj_len() - 1);
        ((last[0] - phys.start_x).powi(2) + (last[1] - phys.start_y).powi(2)).sqrt()
    }

    fn path_length(traj: &Trajectory) -> f64 {
        (1..traj.traj_len())
            .map(|t| {
                let (a, b) = (traj.state(t - 1), traj.state(t));
                ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
            })
            .sum()
    }

    /// Left-up shot slow enough to stay in the x < 0 half without bouncing.
    fn confined_left_shot() -> Action {
        Action(vec![2.6, 0.5])
    }

    #[test]
    fn zero_speed_never_moves() {
        // test-only action below the action box: physics accepts any numbers
        let phys = HockeyPhysics::default();
        let traj = phys.rollout(&mid_params(), &Action(vec![1.0, 0.0]));
        assert_eq!(traj.traj_len(), 32);
        for t in 0..32 {
            assert_eq!(traj.state(t), &[0.0, 0.2]);
        }
    }

    #[test]
    fn higher_friction_stops_sooner() {
        let phys = HockeyPhysics::default();
        let a = confined_left_shot();
        let mut low = mid_params();
        low.values[0] = 0.03;
        let mut high = mid_params();
        high.values[0] = 0.07;
        let d_low = travel(&phys.rollout(&low, &a), &phys);
        let d_high = travel(&phys.rollout(&high, &a), &phys);
        // trajectory stays on the left half so only mu_left matters
        assert!(
            d_high < d_low,
            "high friction travelled {d_high} >= low {d_low}"
        );
        assert!(d_low > 0.05, "shot barely moved: {d_low}");
    }

    #[test]
    fn coarse_step_matches_fine_reference_within_2_percent() {
        let coarse = HockeyPhysics::default();
        let fine = HockeyPhysics {
            dt: 1e-4,
            steps: 20_000,
            ..HockeyPhysics::default()
        };
        let eps = mid_params();
        let a = confined_left_shot();
        let d_coarse = travel(&coarse.rollout(&eps, &a), &coarse);
        let d_fine = travel(&fine.rollout(&eps, &a), &fine);
        let rel = (d_coarse - d_fine).abs() / d_fine;
        assert!(rel < 0.02, "coarse {d_coarse} vs fine {d_fine}: rel {rel}");
    }

    #[test]
    fn livelier_walls_give_longer_paths() {
        // hard shot into the left wall; higher (less negative) zeta_left must
        // return more post-bounce motion
        let phys = HockeyPhysics::default();
        let a = Action(vec![2.8, 3.0]);
        let mut lens = Vec::new();
        for zeta in [-40.0, -20.0, -3.0] {
            let mut eps = mid_params();
            eps.values[3] = zeta;
            lens.push(path_length(&phys.rollout(&eps, &a)));
        }
        assert!(lens[0] < lens[1] && lens[1] < lens[2], "{lens:?}");
    }

    #[test]
    fn puck_never_leaves_the_table() {
        let phys = HockeyPhysics::default();
        let space = ParamSpace::hockey();
        let actions = ParamSpace::hockey_actions();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..500 {
            let eps = space.sample(&mut rng);
            let a = Action(vec![
                rng.random_range(actions.lower[0]..=actions.upper[0]),
                rng.random_range(actions.lower[1]..=actions.upper[1]),
            ]);
            let traj = phys.rollout(&eps, &a);
            for t in 0..traj.traj_len() {
                let s = traj.state(t);
                assert!(s[0] >= -phys.half_width && s[0] <= phys.half_width);
                assert!(s[1] >= 0.0 && s[1] <= phys.length);
            }
        }
    }

    #[test]
    fn rollout_is_pure() {
        let phys = HockeyPhysics::default();
        let eps = mid_params();
        let a = Action(vec![1.2, 2.3]);
        assert_eq!(phys.rollout(&eps, &a), phys.rollout(&eps, &a));
    }
}
