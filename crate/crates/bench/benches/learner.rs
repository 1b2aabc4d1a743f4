use criterion::{criterion_group, criterion_main, Criterion};
use kaleido_core::harness::rollout;
use kaleido_core::{ger_relabel, AgentConfig, DdpgAgent, GoalEnv, PointReach, RelabelSpec, ReplayBuffer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn update(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let env = PointReach::reach2d();
    let mut agent = DdpgAgent::new(env.spec(), AgentConfig::default(), &mut rng).unwrap();
    let mut buffer = ReplayBuffer::new(200).unwrap();
    for _ in 0..200 {
        let traj = rollout(&env, &agent, true, &mut rng).unwrap().0;
        agent.observe_trajectory(&traj);
        buffer.push(traj).unwrap();
    }
    let eps = env.spec().success_threshold;
    let batch = buffer.sample_minibatch(64, &mut rng).unwrap();
    let her = ger_relabel(&batch, &RelabelSpec::her(0.8, eps).unwrap(), &buffer, &mut rng).unwrap();
    let ladder = ger_relabel(&batch, &RelabelSpec::ladder(4, 0.8, eps).unwrap(), &buffer, &mut rng).unwrap();

    let mut group = c.benchmark_group("ddpg_update");
    group.bench_function("batch64", |b| b.iter(|| agent.update(&her).unwrap()));
    group.bench_function("batch256", |b| b.iter(|| agent.update(&ladder).unwrap()));
    group.finish();

    let mut group = c.benchmark_group("episode");
    group.bench_function("rollout_explore", |b| {
        b.iter(|| rollout(&env, &agent, true, &mut rng).unwrap())
    });
    group.finish();
}

criterion_group!(benches, update);
criterion_main!(benches);
