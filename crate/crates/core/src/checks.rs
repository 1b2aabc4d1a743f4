//! Self-checks run by the `check` command: geometric invariants, dynamics
//! equivariance, reward semantics, HER recovery, sampler statistics and
//! gradient correctness. Each check compares the library against an
//! independently written reference (explicit matrices, finite differences,
//! a direct hindsight relabeller).

use std::f64::consts::PI;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{compute_reward, GoalEnv, PointReach};
use crate::geometry::{distance, norm, random_reflection, sample_in_ball, Reflection};
use crate::nn::{AdamState, Dense, Gradients, MlpNet, OutputActivation};
use crate::replay::{ger_relabel, RelabelSpec, ReplayBuffer, Sample, Trajectory, Transition};

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

fn timed(name: &'static str, f: impl FnOnce() -> (bool, String)) -> CheckResult {
    let t = Instant::now();
    let (passed, detail) = f();
    CheckResult {
        name,
        passed,
        detail,
        seconds: t.elapsed().as_secs_f64(),
    }
}

fn householder_matrix(theta: f64, dim: usize) -> Vec<Vec<f64>> {
    let mut n = vec![-theta.sin(), theta.cos()];
    n.resize(dim, 0.0);
    (0..dim)
        .map(|i| (0..dim).map(|j| f64::from(u8::from(i == j)) - 2.0 * n[i] * n[j]).collect())
        .collect()
}

fn random_point(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(-scale..scale)).collect()
}

/// Involution, isometry, plane fixity and matrix agreement over `cases`
/// random inputs each. Returns the worst error seen.
pub fn geometry(cases: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for i in 0..cases {
        let dim = 2 + i % 2;
        let r = random_reflection(dim, &mut rng).unwrap();
        let p = random_point(&mut rng, dim, 5.0);
        let q = random_point(&mut rng, dim, 5.0);
        let rp = r.reflect_point(&p).unwrap();
        let back = r.reflect_point(&rp).unwrap();
        worst = worst.max(distance(&back, &p));
        let rq = r.reflect_point(&q).unwrap();
        worst = worst.max((distance(&rp, &rq) - distance(&p, &q)).abs());
        let (a, b) = (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        let mut on_plane = vec![a * r.theta_z().cos(), a * r.theta_z().sin()];
        if dim == 3 {
            on_plane.push(b);
        }
        worst = worst.max(distance(&r.reflect_point(&on_plane).unwrap(), &on_plane));
        let m = householder_matrix(r.theta_z(), dim);
        let mp: Vec<f64> = m.iter().map(|row| row.iter().zip(&p).map(|(x, y)| x * y).sum()).collect();
        worst = worst.max(distance(&mp, &rp));
    }
    worst
}

/// Largest `|step(reflect(s), reflect(a)) - reflect(step(s, a))|` over random
/// triples, a third of them on the workspace boundary.
pub fn equivariance(env: &PointReach, cases: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = env.spec().state_dim;
    let radius = env.params().workspace_radius;
    let mut worst = 0.0f64;
    for i in 0..cases {
        let mut s = env.reset(&mut rng);
        if i % 3 == 0 {
            let n = norm(&s.observation);
            s.observation.iter_mut().for_each(|x| *x *= radius / n);
            s.achieved_goal = env.project_goal(&s.observation);
        }
        let a = random_point(&mut rng, dim, 1.5 * env.spec().action_bound);
        let r = Reflection::new(rng.random_range(0.0..PI), dim).unwrap();
        let direct = env.step(&s, &a).unwrap();
        let mirrored_state = env
            .state_at(r.reflect_point(&s.observation).unwrap(), r.reflect_point(&s.desired_goal).unwrap())
            .unwrap();
        let mirrored = env.step(&mirrored_state, &r.reflect_vector(&a).unwrap()).unwrap();
        let expected = r.reflect_point(&direct.state.observation).unwrap();
        worst = worst.max(distance(&mirrored.state.observation, &expected));
        if mirrored.reward != direct.reward && (distance(&direct.state.achieved_goal, &s.desired_goal) - env.spec().success_threshold).abs() > 1e-9 {
            worst = f64::INFINITY;
        }
    }
    worst
}

/// Straightforward hindsight "future" relabeller consuming the generator in
/// the documented order (coin, future index).
pub fn her_future_reference(
    batch: &[Sample],
    trajectories: &dyn Fn(u64) -> Trajectory,
    relabel_prob: f64,
    success_threshold: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<Transition> {
    let mut out = Vec::with_capacity(batch.len());
    for s in batch {
        let mut t = s.transition.clone();
        if rng.random_bool(relabel_prob) {
            let traj = trajectories(s.source);
            let j = rng.random_range(t.step_index..traj.len());
            t.desired_goal = traj.transitions()[j].achieved_goal.clone();
        }
        t.reward = if distance(&t.achieved_goal, &t.desired_goal) <= success_threshold { 0.0 } else { -1.0 };
        out.push(t);
    }
    out
}

fn random_trajectory(env: &PointReach, rng: &mut ChaCha8Rng) -> Trajectory {
    let mut s = env.reset(rng);
    let dim = env.spec().action_dim;
    let mut ts = Vec::new();
    loop {
        let a = random_point(rng, dim, 1.0);
        let o = env.step(&s, &a).unwrap();
        ts.push(Transition {
            state: s.observation.clone(),
            action: o.executed_action,
            next_state: o.state.observation.clone(),
            achieved_goal: o.state.achieved_goal.clone(),
            desired_goal: s.desired_goal.clone(),
            reward: o.reward,
            step_index: s.steps_elapsed,
        });
        s = o.state;
        if o.done {
            return Trajectory::new(ts).unwrap();
        }
    }
}

/// Number of batches where zero-radius GER differs from the reference.
pub fn her_recovery(batches: usize, seed: u64) -> usize {
    let env = PointReach::reach2d();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buffer = ReplayBuffer::new(32).unwrap();
    for _ in 0..40 {
        buffer.push(random_trajectory(&env, &mut rng)).unwrap();
    }
    let spec = RelabelSpec::her(0.8, env.spec().success_threshold).unwrap();
    let lookup = |id: u64| buffer.get(id).unwrap().clone();
    let mut mismatches = 0;
    for b in 0..batches {
        let batch = buffer.sample_minibatch(64, &mut rng).unwrap();
        let mut r1 = ChaCha8Rng::seed_from_u64(seed ^ b as u64);
        let mut r2 = r1.clone();
        let got: Vec<Transition> = ger_relabel(&batch, &spec, &buffer, &mut r1)
            .unwrap()
            .into_iter()
            .map(|s| s.transition)
            .collect();
        let want = her_future_reference(&batch, &lookup, 0.8, env.spec().success_threshold, &mut r2);
        if got != want {
            mismatches += 1;
        }
    }
    mismatches
}

/// Worst relative error between backpropagated and central-difference
/// gradients over `shapes` random networks.
pub fn gradient(shapes: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let h = 1e-5;
    for _ in 0..shapes {
        let depth = rng.random_range(1..4);
        let mut sizes = vec![rng.random_range(1..6)];
        for _ in 0..depth {
            sizes.push(rng.random_range(1..8));
        }
        let output = if rng.random_bool(0.5) {
            OutputActivation::Identity
        } else {
            OutputActivation::ScaledTanh(rng.random_range(0.5..2.0))
        };
        let mut net = MlpNet::new(&sizes, output, &mut rng).unwrap();
        let x = Array2::from_shape_fn((2, sizes[0]), |_| rng.random_range(-1.0..1.0));
        let c = Array2::from_shape_fn((2, *sizes.last().unwrap()), |_| rng.random_range(-1.0..1.0));
        let loss = |n: &MlpNet| (n.forward_batch(x.view()).unwrap() * &c).sum();
        let cache = net.forward_cached(x.view()).unwrap();
        let (g, _) = net.backward(&cache, c.view()).unwrap();
        let analytic = g.flat();
        let params = net.params_flat();
        for k in 0..params.len() {
            let mut p = params.clone();
            p[k] += h;
            net.set_params_flat(&p).unwrap();
            let up = loss(&net);
            p[k] -= 2.0 * h;
            net.set_params_flat(&p).unwrap();
            let down = loss(&net);
            let numeric = (up - down) / (2.0 * h);
            let rel = (analytic[k] - numeric).abs() / analytic[k].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    worst
}

/// `|update - lr * g / (|g| + eps)|` after one Adam step from rest.
pub fn adam_first_step() -> f64 {
    let mut net = MlpNet::zeros(&[3, 2], OutputActivation::Identity).unwrap();
    let mut adam = AdamState::new(&net, 1e-3);
    let g = -0.8;
    let grads = Gradients {
        layers: vec![Dense {
            weights: Array2::from_elem((3, 2), g),
            bias: ndarray::Array1::from_elem(2, g),
        }],
    };
    adam.step(&mut net, &grads).unwrap();
    let expected = -1e-3 * g / (g.abs() + adam.eps);
    net.params_flat()
        .iter()
        .map(|p| (p - expected).abs())
        .fold(0.0, f64::max)
}

/// Runs every check.
pub fn run_all() -> Vec<CheckResult> {
    let reach2d = PointReach::reach2d();
    let reach3d = PointReach::reach3d();
    vec![
        timed("geometry invariants (1e4 cases, tol 1e-12)", || {
            let w = geometry(10_000, 1);
            (w <= 1e-12, format!("worst error {w:e}"))
        }),
        timed("dynamics equivariance (1e3 cases per env, tol 1e-9)", || {
            let w = equivariance(&reach2d, 1000, 2).max(equivariance(&reach3d, 1000, 3));
            (w <= 1e-9, format!("worst error {w:e}"))
        }),
        timed("reward semantics", || {
            let eps = reach2d.spec().success_threshold;
            let boundary = compute_reward(&[0.0, 0.0], &[eps, 0.0], eps) == 0.0
                && compute_reward(&[0.0, 0.0], &[eps + 1e-9, 0.0], eps) == -1.0;
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let mut changed = 0;
            for _ in 0..10_000 {
                let a = sample_in_ball(&[0.0, 0.0], 1.0, &mut rng);
                let d = sample_in_ball(&a, 0.1, &mut rng);
                let r = random_reflection(2, &mut rng).unwrap();
                let (ra, rd) = (r.reflect_point(&a).unwrap(), r.reflect_point(&d).unwrap());
                if (distance(&a, &d) - eps).abs() > 1e-12 && compute_reward(&ra, &rd, eps) != compute_reward(&a, &d, eps) {
                    changed += 1;
                }
            }
            (boundary && changed == 0, format!("boundary ok: {boundary}, reflected label changes: {changed}"))
        }),
        timed("HER recovery (k=1, eps=0, 200 batches)", || {
            let m = her_recovery(200, 5);
            (m == 0, format!("{m} mismatching batches"))
        }),
        timed("ball sampler (1e5 samples, d=2,3)", || {
            let mut rng = ChaCha8Rng::seed_from_u64(6);
            let mut ok = true;
            let mut detail = String::new();
            for dim in [2usize, 3] {
                let c = vec![0.3; dim];
                let eps = 0.04;
                let n = 100_000;
                let mut sum = 0.0;
                for _ in 0..n {
                    let g = sample_in_ball(&c, eps, &mut rng);
                    let d = distance(&g, &c);
                    ok &= d <= eps;
                    sum += d;
                }
                let expected = dim as f64 / (dim as f64 + 1.0) * eps;
                let rel = (sum / n as f64 - expected).abs() / expected;
                ok &= rel < 0.01;
                detail += &format!("d={dim}: mean-norm rel err {rel:.2e}; ");
            }
            (ok, detail)
        }),
        timed("gradients vs finite differences (20 nets, rel 1e-4)", || {
            let w = gradient(20, 7);
            (w < 1e-4, format!("worst relative error {w:e}"))
        }),
        timed("Adam step-1 closed form (tol 1e-10)", || {
            let w = adam_first_step();
            (w <= 1e-10, format!("error {w:e}"))
        }),
    ]
}

#[cfg(test)]
mod tests {
    #[test]
    fn all_checks_pass() {
        for c in super::run_all() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
