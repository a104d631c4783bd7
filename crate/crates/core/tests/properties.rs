//! Property tests over the environment metrics, parameter-space maps and
//! the sequence generators.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sysid_core::datagen::{audit_bracket, generate_sequence, DataMode, GenConfig};
use sysid_core::env::{param_error, trajectory_distance, Env, EnvKind, EnvParams, Trajectory};
use sysid_core::policy::TaskPolicy;

fn traj(points: Vec<(f64, f64)>) -> Trajectory {
    Trajectory {
        state_dim: 2,
        states: points.into_iter().flat_map(|(x, y)| [x, y]).collect(),
    }
}

fn traj_strategy() -> impl Strategy<Value = Trajectory> {
    prop::collection::vec((-0.45f64..0.45, 0.0f64..1.9), 8).prop_map(traj)
}

proptest! {
    #[test]
    fn trajectory_distance_is_a_metric(
        a in traj_strategy(),
        b in traj_strategy(),
        c in traj_strategy(),
    ) {
        let dab = trajectory_distance(&a, &b).unwrap();
        let dba = trajectory_distance(&b, &a).unwrap();
        prop_assert!((dab - dba).abs() < 1e-12, "symmetry");
        prop_assert!(trajectory_distance(&a, &a).unwrap() == 0.0, "identity");
        let dac = trajectory_distance(&a, &c).unwrap();
        let dcb = trajectory_distance(&c, &b).unwrap();
        prop_assert!(dab <= dac + dcb + 1e-9, "triangle");
    }

    #[test]
    fn normalize_round_trips_anywhere_in_the_box(
        mu_l in 0.03f64..0.07,
        mu_r in 0.03f64..0.07,
        zm in -15.0f64..-3.0,
        zl in -40.0f64..-3.0,
        zr in -40.0f64..-3.0,
    ) {
        let env = Env::new(EnvKind::Hockey);
        let eps = EnvParams { values: vec![mu_l, mu_r, zm, zl, zr] };
        let n = env.space.normalize(&eps).unwrap();
        prop_assert!(n.iter().all(|v| (-1.0..=1.0).contains(v)));
        let back = env.space.denormalize(&n);
        for (a, b) in back.values.iter().zip(&eps.values) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn param_error_is_normalized_and_bounded(
        a in -1.0f64..1.0,
        b in -1.0f64..1.0,
    ) {
        let env = Env::new(EnvKind::Scoop);
        let e = param_error(
            &EnvParams { values: vec![a] },
            &EnvParams { values: vec![b] },
            &env.space,
        );
        prop_assert!((0.0..=1.0).contains(&e.mean));
        prop_assert!((e.mean - (a - b).abs() / 2.0).abs() < 1e-12);
    }

    #[test]
    fn generated_sequences_stay_in_space_and_bracket(seed in 0u64..500) {
        let env = Env::new(EnvKind::Scoop);
        let policy = TaskPolicy::default();
        let cfg = GenConfig::default();
        for mode in [DataMode::Rbs, DataMode::Bisect, DataMode::Linterp] {
            let seq = generate_sequence(&env, &policy, &cfg, mode, seed);
            for rec in &seq.records {
                prop_assert!(env.space.check(&rec.eps).is_ok());
            }
            if mode != DataMode::Linterp {
                prop_assert!(audit_bracket(&env, &seq).is_ok());
            }
        }
    }

    #[test]
    fn explore_sequences_stay_in_space(seed in 0u64..200) {
        let env = Env::new(EnvKind::Scoop);
        let policy = TaskPolicy::default();
        let cfg = GenConfig { explore: 0.5, ..GenConfig::default() };
        let seq = generate_sequence(&env, &policy, &cfg, DataMode::RbsExplore, seed);
        for rec in &seq.records {
            prop_assert!(env.space.check(&rec.eps).is_ok());
        }
    }

    #[test]
    fn hockey_rollouts_stay_on_the_table(
        seed in 0u64..200,
        theta in 0.524f64..2.618,
        v0 in 0.5f64..3.0,
    ) {
        let env = Env::new(EnvKind::Hockey);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eps = env.space.sample(&mut rng);
        let t = env.rollout(&eps, &sysid_core::env::Action(vec![theta, v0])).unwrap();
        let phys = env.hockey.as_ref().unwrap();
        for i in 0..t.traj_len() {
            let s = t.state(i);
            prop_assert!(s[0].abs() <= phys.half_width + 1e-12);
            prop_assert!((0.0 - 1e-12..=phys.length + 1e-12).contains(&s[1]));
        }
    }
}
