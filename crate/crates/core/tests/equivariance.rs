use std::f64::consts::PI;

use kaleido_core::geometry::{distance, norm};
use kaleido_core::{store_with_ker, GoalEnv, PointReach, Reflection, ReplayBuffer, Trajectory, Transition};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn env(dim: usize) -> PointReach {
    if dim == 2 {
        PointReach::reach2d()
    } else {
        PointReach::reach3d()
    }
}

fn episode(env: &PointReach, rng: &mut ChaCha8Rng) -> Trajectory {
    let mut s = env.reset(rng);
    let dim = env.spec().action_dim;
    let mut ts = Vec::new();
    loop {
        // actions up to 1.5 a_max per coordinate exercise the clip
        let a: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect();
        let out = env.step(&s, &a).unwrap();
        ts.push(Transition {
            state: s.observation.clone(),
            action: out.executed_action,
            next_state: out.state.observation.clone(),
            achieved_goal: out.state.achieved_goal.clone(),
            desired_goal: s.desired_goal.clone(),
            reward: out.reward,
            step_index: s.steps_elapsed,
        });
        s = out.state;
        if out.done {
            return Trajectory::new(ts).unwrap();
        }
    }
}

#[test]
fn reflected_trajectories_replay_through_the_environment() {
    for dim in [2, 3] {
        let env = env(dim);
        let mut rng = ChaCha8Rng::seed_from_u64(dim as u64);
        let mut buffer = ReplayBuffer::new(1000).unwrap();
        for _ in 0..20 {
            store_with_ker(&mut buffer, episode(&env, &mut rng), 8, &mut rng).unwrap();
        }
        assert_eq!(buffer.len(), 180);
        for (_, traj) in buffer.iter() {
            // chaining and shared goal still hold
            Trajectory::new(traj.transitions().to_vec()).unwrap();
            let mut state = env
                .state_at(traj.initial_state().to_vec(), traj.desired_goal().to_vec())
                .unwrap();
            for t in traj.transitions() {
                assert!(distance(&state.observation, &t.state) <= 1e-9);
                let out = env.step(&state, &t.action).unwrap();
                assert!(distance(&out.state.observation, &t.next_state) <= 1e-9);
                assert_eq!(out.reward, t.reward);
                state = out.state;
            }
        }
    }
}

fn case(dim: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>, f64, bool)> {
    (
        proptest::collection::vec(-1.0f64..1.0, dim),
        proptest::collection::vec(-2.0f64..2.0, dim),
        0.0f64..PI,
        any::<bool>(),
    )
}

fn check_step(dim: usize, pos: Vec<f64>, action: Vec<f64>, theta: f64, on_boundary: bool) -> Result<(), TestCaseError> {
    let env = env(dim);
    let mut pos = pos;
    let n = norm(&pos);
    if n > 1.0 || (on_boundary && n > 0.0) {
        pos.iter_mut().for_each(|x| *x /= n);
    }
    let goal = vec![0.0; dim];
    let r = Reflection::new(theta, dim).unwrap();
    let s = env.state_at(pos.clone(), goal.clone()).unwrap();
    let direct = env.step(&s, &action).unwrap();
    let ms = env
        .state_at(r.reflect_point(&pos).unwrap(), r.reflect_point(&goal).unwrap())
        .unwrap();
    let mirrored = env.step(&ms, &r.reflect_vector(&action).unwrap()).unwrap();
    let expected = r.reflect_point(&direct.state.observation).unwrap();
    prop_assert!(distance(&mirrored.state.observation, &expected) <= 1e-9);
    prop_assert!(
        distance(&mirrored.executed_action, &r.reflect_vector(&direct.executed_action).unwrap()) <= 1e-9
    );
    Ok(())
}

proptest! {
    #[test]
    fn reach2d_step_commutes_with_reflection((pos, action, theta, b) in case(2)) {
        check_step(2, pos, action, theta, b)?;
    }

    #[test]
    fn reach3d_step_commutes_with_reflection((pos, action, theta, b) in case(3)) {
        check_step(3, pos, action, theta, b)?;
    }

    #[test]
    fn reward_is_reflection_invariant(
        a in proptest::collection::vec(-1.0f64..1.0, 3),
        offset in proptest::collection::vec(-0.06f64..0.06, 3),
        theta in 0.0f64..PI,
    ) {
        let env = PointReach::reach3d();
        let d: Vec<f64> = a.iter().zip(&offset).map(|(x, o)| x + o).collect();
        let r = Reflection::new(theta, 3).unwrap();
        let before = env.compute_reward(&a, &d);
        let after = env.compute_reward(&r.reflect_point(&a).unwrap(), &r.reflect_point(&d).unwrap());
        // exact unless the distance sits within rounding of the threshold
        if (distance(&a, &d) - 0.05).abs() > 1e-12 {
            prop_assert_eq!(before, after);
        }
    }
}
