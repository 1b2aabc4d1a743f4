use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use kaleido_core::harness::rollout;
use kaleido_core::{
    ger_relabel, minibatch_ker, random_reflection, sample_in_ball, AgentConfig, DdpgAgent, GoalEnv, Kaleidoscope,
    KerMode, PlaneSchedule, PointReach, RelabelSpec, ReplayBuffer,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn filled_buffer(episodes: usize, rng: &mut ChaCha8Rng) -> (PointReach, DdpgAgent, ReplayBuffer) {
    let env = PointReach::reach2d();
    let agent = DdpgAgent::new(env.spec(), AgentConfig::default(), rng).unwrap();
    let mut buffer = ReplayBuffer::new(episodes).unwrap();
    for _ in 0..episodes {
        buffer.push(rollout(&env, &agent, true, rng).unwrap().0).unwrap();
    }
    (env, agent, buffer)
}

fn geometry(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let r = random_reflection(3, &mut rng).unwrap();
    let p = [0.3, -0.2, 0.7];
    c.bench_function("reflect_point_3d", |b| b.iter(|| r.reflect_point(black_box(&p)).unwrap()));
    c.bench_function("sample_in_ball_2d", |b| {
        b.iter(|| sample_in_ball(black_box(&[0.1, 0.2]), 0.025, &mut rng))
    });
}

fn buffer_ops(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (env, agent, buffer) = filled_buffer(500, &mut rng);
    let eps = env.spec().success_threshold;

    c.bench_function("sample_minibatch_64", |b| {
        b.iter(|| buffer.sample_minibatch(64, &mut rng).unwrap())
    });

    let batch = buffer.sample_minibatch(64, &mut rng).unwrap();
    let ladder = RelabelSpec::ladder(4, 0.8, eps).unwrap();
    c.bench_function("ger_relabel_k4_batch64", |b| {
        b.iter(|| ger_relabel(black_box(&batch), &ladder, &buffer, &mut rng).unwrap())
    });
    c.bench_function("minibatch_ker_batch64", |b| {
        b.iter(|| minibatch_ker(black_box(&batch), &mut rng).unwrap())
    });

    let ker = Kaleidoscope::new(8, KerMode::Store, PlaneSchedule::Random);
    let traj = rollout(&env, &agent, true, &mut rng).unwrap().0;
    c.bench_function("ker_store_n8", |b| {
        b.iter_batched(
            || (ReplayBuffer::new(16).unwrap(), traj.clone()),
            |(mut buf, t)| ker.store(&mut buf, t, &mut rng).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, geometry, buffer_ops);
criterion_main!(benches);
