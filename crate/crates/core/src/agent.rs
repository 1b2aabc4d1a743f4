//! DDPG learner over goal-conditioned inputs.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{s, Array2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::env::GoalMdpSpec;
use crate::error::{check_dim, Error, Result};
use crate::nn::{AdamState, MlpNet, OutputActivation};
use crate::replay::{Sample, Trajectory};

/// Running per-coordinate mean and standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer {
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    count: f64,
    clip: f64,
    min_std: f64,
}

impl Normalizer {
    pub fn new(dim: usize, clip: f64) -> Self {
        Self {
            sum: vec![0.0; dim],
            sum_sq: vec![0.0; dim],
            count: 0.0,
            clip,
            min_std: 1e-2,
        }
    }

    pub fn dim(&self) -> usize {
        self.sum.len()
    }

    pub fn count(&self) -> f64 {
        self.count
    }

    pub fn update(&mut self, x: &[f64]) {
        debug_assert_eq!(x.len(), self.dim());
        for ((s, q), v) in self.sum.iter_mut().zip(&mut self.sum_sq).zip(x) {
            *s += v;
            *q += v * v;
        }
        self.count += 1.0;
    }

    pub fn mean(&self) -> Vec<f64> {
        if self.count == 0.0 {
            return vec![0.0; self.dim()];
        }
        self.sum.iter().map(|s| s / self.count).collect()
    }

    pub fn std(&self) -> Vec<f64> {
        if self.count == 0.0 {
            return vec![1.0; self.dim()];
        }
        self.sum
            .iter()
            .zip(&self.sum_sq)
            .map(|(s, q)| {
                let m = s / self.count;
                (q / self.count - m * m).max(self.min_std * self.min_std).sqrt()
            })
            .collect()
    }

    /// Writes `clip((x - mean) / std)` into `out`.
    pub fn normalize_into(&self, x: &[f64], out: &mut [f64]) {
        self.snapshot().apply(x, out);
    }

    /// Frozen statistics for normalising many rows.
    pub fn snapshot(&self) -> NormSnapshot {
        NormSnapshot {
            mean: self.mean(),
            std: self.std(),
            clip: self.clip,
        }
    }

    fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(&(self.dim() as u64).to_le_bytes())?;
        for v in [self.count, self.clip, self.min_std]
            .iter()
            .chain(&self.sum)
            .chain(&self.sum_sq)
        {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    fn read<R: Read>(r: &mut R) -> Result<Self> {
        let mut buf = [0u8; 8];
        let mut next = |r: &mut R| -> Result<[u8; 8]> {
            r.read_exact(&mut buf)
                .map_err(|e| Error::Checkpoint(format!("normalizer: {e}")))?;
            Ok(buf)
        };
        let dim = u64::from_le_bytes(next(r)?) as usize;
        if dim > 1 << 16 {
            return Err(Error::Checkpoint(format!("normalizer dim {dim}")));
        }
        let mut f = |r: &mut R| next(r).map(f64::from_le_bytes);
        let count = f(r)?;
        let clip = f(r)?;
        let min_std = f(r)?;
        let sum = (0..dim).map(|_| f(r)).collect::<Result<_>>()?;
        let sum_sq = (0..dim).map(|_| f(r)).collect::<Result<_>>()?;
        Ok(Self {
            sum,
            sum_sq,
            count,
            clip,
            min_std,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormSnapshot {
    mean: Vec<f64>,
    std: Vec<f64>,
    clip: f64,
}

impl NormSnapshot {
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (((o, v), m), s) in out.iter_mut().zip(x).zip(&self.mean).zip(&self.std) {
            *o = ((v - m) / s).clamp(-self.clip, self.clip);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentConfig {
    pub hidden: Vec<usize>,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Polyak coefficient for target networks.
    pub tau: f64,
    /// Gaussian exploration noise, as a fraction of `a_max`.
    pub noise_scale: f64,
    /// Probability of a uniformly random exploratory action.
    pub random_prob: f64,
    /// Weight of the `mean |pi / a_max|^2` penalty in the actor loss.
    pub action_l2: f64,
    pub norm_clip: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            tau: 0.05,
            noise_scale: 0.1,
            random_prob: 0.2,
            action_l2: 0.0,
            norm_clip: 5.0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if self.hidden.contains(&0) {
            return bad("hidden layer widths must be >= 1");
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return bad("learning rates must be > 0");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.random_prob) {
            return bad("random_prob must lie in [0, 1]");
        }
        if !(self.noise_scale >= 0.0 && self.action_l2 >= 0.0 && self.norm_clip > 0.0) {
            return bad("noise_scale and action_l2 must be >= 0, norm_clip > 0");
        }
        Ok(())
    }
}

/// Losses from one update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
}

#[derive(Clone, Debug)]
pub struct DdpgAgent {
    config: AgentConfig,
    state_dim: usize,
    goal_dim: usize,
    action_dim: usize,
    action_bound: f64,
    gamma: f64,
    actor: MlpNet,
    critic: MlpNet,
    target_actor: MlpNet,
    target_critic: MlpNet,
    actor_opt: AdamState,
    critic_opt: AdamState,
    obs_norm: Normalizer,
    goal_norm: Normalizer,
}

impl DdpgAgent {
    pub fn new<R: Rng + ?Sized>(spec: &GoalMdpSpec, config: AgentConfig, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        config.validate()?;
        let input = spec.state_dim + spec.goal_dim;
        let mut actor_sizes = vec![input];
        actor_sizes.extend(&config.hidden);
        actor_sizes.push(spec.action_dim);
        let mut critic_sizes = vec![input + spec.action_dim];
        critic_sizes.extend(&config.hidden);
        critic_sizes.push(1);
        let actor = MlpNet::new(&actor_sizes, OutputActivation::ScaledTanh(spec.action_bound), rng)?;
        let critic = MlpNet::new(&critic_sizes, OutputActivation::Identity, rng)?;
        Ok(Self {
            actor_opt: AdamState::new(&actor, config.actor_lr),
            critic_opt: AdamState::new(&critic, config.critic_lr),
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor,
            critic,
            obs_norm: Normalizer::new(spec.state_dim, config.norm_clip),
            goal_norm: Normalizer::new(spec.goal_dim, config.norm_clip),
            state_dim: spec.state_dim,
            goal_dim: spec.goal_dim,
            action_dim: spec.action_dim,
            action_bound: spec.action_bound,
            gamma: spec.gamma,
            config,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn actor(&self) -> &MlpNet {
        &self.actor
    }

    pub fn critic(&self) -> &MlpNet {
        &self.critic
    }

    pub fn target_actor(&self) -> &MlpNet {
        &self.target_actor
    }

    pub fn target_critic(&self) -> &MlpNet {
        &self.target_critic
    }

    pub fn obs_normalizer(&self) -> &Normalizer {
        &self.obs_norm
    }

    pub fn goal_normalizer(&self) -> &Normalizer {
        &self.goal_norm
    }

    /// Feasible return range `[-1/(1-gamma), 0]` for rewards in `{-1, 0}`.
    pub fn target_bounds(&self) -> (f64, f64) {
        (-1.0 / (1.0 - self.gamma), 0.0)
    }

    pub fn is_finite(&self) -> bool {
        [&self.actor, &self.critic, &self.target_actor, &self.target_critic]
            .iter()
            .all(|n| n.is_finite())
    }

    /// Updates the input statistics from a real (non-augmented) episode.
    pub fn observe_trajectory(&mut self, traj: &Trajectory) {
        for t in traj.transitions() {
            self.obs_norm.update(&t.state);
            self.goal_norm.update(&t.desired_goal);
            self.goal_norm.update(&t.achieved_goal);
        }
        if let Some(last) = traj.transitions().last() {
            self.obs_norm.update(&last.next_state);
        }
    }

    fn policy_inputs<'a>(&self, rows: impl ExactSizeIterator<Item = (&'a [f64], &'a [f64])>) -> Array2<f64> {
        let (sd, gd) = (self.state_dim, self.goal_dim);
        let (obs, goal) = (self.obs_norm.snapshot(), self.goal_norm.snapshot());
        let mut x = Array2::zeros((rows.len(), sd + gd));
        for (mut row, (s, g)) in x.rows_mut().into_iter().zip(rows) {
            let row = row.as_slice_mut().expect("standard layout");
            obs.apply(s, &mut row[..sd]);
            goal.apply(g, &mut row[sd..]);
        }
        x
    }

    fn critic_inputs(&self, policy_in: &Array2<f64>, actions: &Array2<f64>) -> Array2<f64> {
        let width = policy_in.ncols();
        let mut x = Array2::zeros((policy_in.nrows(), width + self.action_dim));
        x.slice_mut(s![.., ..width]).assign(policy_in);
        x.slice_mut(s![.., width..])
            .assign(&(actions / self.action_bound));
        x
    }

    /// Deterministic policy action, or an exploratory one when `explore`.
    pub fn act<R: Rng + ?Sized>(&self, state: &[f64], goal: &[f64], explore: bool, rng: &mut R) -> Result<Vec<f64>> {
        check_dim(self.state_dim, state.len())?;
        check_dim(self.goal_dim, goal.len())?;
        let x = self.policy_inputs(std::iter::once((state, goal)));
        let mut action = self.actor.forward_batch(x.view())?.into_raw_vec_and_offset().0;
        if explore {
            let bound = self.action_bound;
            if rng.random_bool(self.config.random_prob) {
                action.iter_mut().for_each(|a| *a = rng.random_range(-bound..=bound));
            } else {
                for a in &mut action {
                    let noise: f64 = rng.sample(StandardNormal);
                    *a = (*a + self.config.noise_scale * bound * noise).clamp(-bound, bound);
                }
            }
        }
        Ok(action)
    }

    /// One critic step, one actor step, then a soft target update.
    /// Returns `None` for an empty batch.
    pub fn update(&mut self, batch: &[Sample]) -> Result<Option<UpdateStats>> {
        if batch.is_empty() {
            return Ok(None);
        }
        let n = batch.len() as f64;
        let ts = || batch.iter().map(|s| &s.transition);
        let obs = self.policy_inputs(ts().map(|t| (t.state.as_slice(), t.desired_goal.as_slice())));
        let next_obs = self.policy_inputs(ts().map(|t| (t.next_state.as_slice(), t.desired_goal.as_slice())));
        let mut actions = Array2::zeros((batch.len(), self.action_dim));
        for (mut row, t) in actions.rows_mut().into_iter().zip(ts()) {
            check_dim(self.action_dim, t.action.len())?;
            row.iter_mut().zip(&t.action).for_each(|(r, a)| *r = *a);
        }

        // Bootstrapped targets, clipped to the feasible return range.
        let (lo, hi) = self.target_bounds();
        let next_actions = self.target_actor.forward_batch(next_obs.view())?;
        let next_q = self
            .target_critic
            .forward_batch(self.critic_inputs(&next_obs, &next_actions).view())?;
        let targets: Vec<f64> = ts()
            .zip(next_q.column(0))
            .map(|(t, &q)| t.reward + self.gamma * q.clamp(lo, hi))
            .collect();
        if let Some(y) = targets.iter().find(|&&y| !(y >= lo - 1.0 && y <= hi)) {
            return Err(Error::NonFinite(format!("critic target {y} outside [{}, {hi}]", lo - 1.0)));
        }

        let critic_in = self.critic_inputs(&obs, &actions);
        let cache = self.critic.forward_cached(critic_in.view())?;
        let mut critic_grad = Array2::zeros((batch.len(), 1));
        let mut critic_loss = 0.0;
        for ((g, q), y) in critic_grad.iter_mut().zip(cache.output().iter()).zip(&targets) {
            let err = q - y;
            critic_loss += err * err / n;
            *g = 2.0 * err / n;
        }
        let (grads, _) = self.critic.backward(&cache, critic_grad.view())?;
        self.critic_opt.step(&mut self.critic, &grads)?;

        // Actor: minimise -mean Q(s, pi(s, g), g) + l2 * mean |pi / a_max|^2.
        let actor_cache = self.actor.forward_cached(obs.view())?;
        let pi = actor_cache.output().clone();
        let q_in = self.critic_inputs(&obs, &pi);
        let q_cache = self.critic.forward_cached(q_in.view())?;
        let bound = self.action_bound;
        let l2 = self.config.action_l2;
        let actor_loss = -q_cache.output().sum() / n + l2 * pi.iter().map(|a| (a / bound).powi(2)).sum::<f64>() / n;
        let dq = Array2::from_elem((batch.len(), 1), -1.0 / n);
        let (_, dinput) = self.critic.backward(&q_cache, dq.view())?;
        let width = obs.ncols();
        let mut dpi = dinput.slice(s![.., width..]).to_owned() / bound;
        dpi.zip_mut_with(&pi, |d, &a| *d += l2 * 2.0 * a / (bound * bound * n));
        let (actor_grads, _) = self.actor.backward(&actor_cache, dpi.view())?;
        self.actor_opt.step(&mut self.actor, &actor_grads)?;

        let tau = self.config.tau;
        self.target_actor.soft_update_from(&self.actor, tau)?;
        self.target_critic.soft_update_from(&self.critic, tau)?;

        if !critic_loss.is_finite() || !actor_loss.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        Ok(Some(UpdateStats {
            critic_loss,
            actor_loss,
        }))
    }

    /// Writes `actor.bin`, `critic.bin`, `target_actor.bin`,
    /// `target_critic.bin` and `normalizer.bin` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        self.actor.save(dir.join("actor.bin"))?;
        self.critic.save(dir.join("critic.bin"))?;
        self.target_actor.save(dir.join("target_actor.bin"))?;
        self.target_critic.save(dir.join("target_critic.bin"))?;
        let mut w = BufWriter::new(File::create(dir.join("normalizer.bin"))?);
        self.obs_norm.write(&mut w)?;
        self.goal_norm.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Restores networks and normalizers written by [`save`](Self::save).
    /// Optimizer moments are not persisted and restart from zero.
    pub fn load(&mut self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let tanh = OutputActivation::ScaledTanh(self.action_bound);
        let load = |name: &str, out, like: &MlpNet| -> Result<MlpNet> {
            let net = MlpNet::load(dir.join(name), out)?;
            if net.sizes() != like.sizes() {
                return Err(Error::Checkpoint(format!("{name}: shape {:?}", net.sizes())));
            }
            Ok(net)
        };
        let actor = load("actor.bin", tanh, &self.actor)?;
        let critic = load("critic.bin", OutputActivation::Identity, &self.critic)?;
        let target_actor = load("target_actor.bin", tanh, &self.actor)?;
        let target_critic = load("target_critic.bin", OutputActivation::Identity, &self.critic)?;
        let mut r = BufReader::new(File::open(dir.join("normalizer.bin"))?);
        let obs_norm = Normalizer::read(&mut r)?;
        let goal_norm = Normalizer::read(&mut r)?;
        check_dim(self.state_dim, obs_norm.dim())?;
        check_dim(self.goal_dim, goal_norm.dim())?;
        self.actor_opt = AdamState::new(&actor, self.config.actor_lr);
        self.critic_opt = AdamState::new(&critic, self.config.critic_lr);
        self.actor = actor;
        self.critic = critic;
        self.target_actor = target_actor;
        self.target_critic = target_critic;
        self.obs_norm = obs_norm;
        self.goal_norm = goal_norm;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{GoalEnv, PointReach};
    use crate::replay::Transition;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn agent(seed: u64, config: AgentConfig) -> DdpgAgent {
        let env = PointReach::reach2d();
        DdpgAgent::new(env.spec(), config, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn sample(reward: f64) -> Sample {
        Sample {
            source: 0,
            transition: Transition {
                state: vec![0.1, 0.2],
                action: vec![0.5, -0.5],
                next_state: vec![0.125, 0.175],
                achieved_goal: vec![0.125, 0.175],
                desired_goal: vec![0.6, -0.3],
                reward,
                step_index: 0,
            },
        }
    }

    #[test]
    fn target_clip_bounds() {
        let a = agent(0, AgentConfig::default());
        let (lo, hi) = a.target_bounds();
        assert!((lo + 50.0).abs() < 1e-9);
        assert_eq!(hi, 0.0);
    }

    #[test]
    fn greedy_actions_are_deterministic_and_bounded() {
        let a = agent(1, AgentConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = a.act(&[0.3, 0.1], &[-0.2, 0.4], false, &mut rng).unwrap();
        let y = a.act(&[0.3, 0.1], &[-0.2, 0.4], false, &mut rng).unwrap();
        assert_eq!(x, y);
        assert!(x.iter().all(|v| v.abs() <= 1.0));
        assert!(a.act(&[0.3], &[0.0, 0.0], false, &mut rng).is_err());
    }

    #[test]
    fn exploration_is_seeded_and_uniform_when_forced() {
        let a = agent(2, AgentConfig { random_prob: 1.0, ..Default::default() });
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..2000)
                .map(|_| a.act(&[0.0, 0.0], &[0.5, 0.5], true, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        let acts = run(3);
        assert_eq!(acts, run(3));
        let mean = acts.iter().map(|a| a[0]).sum::<f64>() / acts.len() as f64;
        let below = acts.iter().filter(|a| a[1] < -0.5).count() as f64 / acts.len() as f64;
        assert!(mean.abs() < 0.05);
        assert!((below - 0.25).abs() < 0.03);
        assert!(acts.iter().flatten().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn empty_batch_is_noop() {
        let mut a = agent(3, AgentConfig::default());
        let before = a.actor().clone();
        assert_eq!(a.update(&[]).unwrap(), None);
        assert_eq!(a.actor(), &before);
    }

    #[test]
    fn tau_one_copies_online_networks() {
        let mut a = agent(4, AgentConfig { tau: 1.0, ..Default::default() });
        a.update(&[sample(-1.0), sample(0.0)]).unwrap();
        assert_eq!(a.target_actor(), a.actor());
        assert_eq!(a.target_critic(), a.critic());
    }

    #[test]
    fn critic_overfits_single_transition() {
        let mut a = agent(5, AgentConfig::default());
        let batch = vec![sample(-1.0)];
        let first = a.update(&batch).unwrap().unwrap().critic_loss;
        let mut last = first;
        for _ in 0..100 {
            last = a.update(&batch).unwrap().unwrap().critic_loss;
        }
        assert!(last < first, "{first} -> {last}");
    }

    #[test]
    fn soft_update_contracts_with_frozen_online() {
        let mut a = agent(6, AgentConfig::default());
        let online = a.critic().clone();
        let mut target = a.target_critic().clone();
        // perturb the online copy so the distance starts non-zero
        a.update(&[sample(-1.0)]).unwrap();
        let online_after = a.critic().clone();
        let mut last = target.param_distance(&online_after);
        for _ in 0..10 {
            target.soft_update_from(&online_after, 0.05).unwrap();
            let d = target.param_distance(&online_after);
            assert!(d <= last);
            last = d;
        }
        assert_ne!(online, online_after);
    }

    #[test]
    fn normalizer_statistics() {
        let mut n = Normalizer::new(2, 5.0);
        assert_eq!(n.std(), vec![1.0, 1.0]);
        for x in [[1.0, 0.0], [3.0, 0.0]] {
            n.update(&x);
        }
        assert_eq!(n.mean(), vec![2.0, 0.0]);
        assert_eq!(n.std(), vec![1.0, 0.01]);
        let mut out = [0.0; 2];
        n.normalize_into(&[4.0, 1.0], &mut out);
        assert_eq!(out, [2.0, 5.0]);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = agent(7, AgentConfig::default());
        a.obs_norm.update(&[0.3, 0.2]);
        a.update(&[sample(-1.0)]).unwrap();
        a.save(dir.path()).unwrap();
        let mut b = agent(8, AgentConfig::default());
        b.load(dir.path()).unwrap();
        assert_eq!(a.actor(), b.actor());
        assert_eq!(a.target_critic(), b.target_critic());
        assert_eq!(a.obs_normalizer(), b.obs_normalizer());
    }
}
