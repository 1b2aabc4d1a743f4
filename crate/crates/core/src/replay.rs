//! Trajectory replay with write-time reflection augmentation (KER) and
//! sample-time goal relabelling (GER, with HER as its zero-radius case).
//!
//! The pipeline is: every real episode is stored together with `n` mirrored
//! copies; minibatches are then drawn uniformly over `(trajectory, step)`
//! pairs and relabelled `k` times before reaching the learner.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::env::compute_reward;
use crate::error::{check_dim, Error, Result};
use crate::geometry::{random_reflection, sample_in_ball, Reflection};

/// One environment step.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    /// Executed (post-clip) action.
    pub action: Vec<f64>,
    pub next_state: Vec<f64>,
    /// Goal-space projection of `next_state`.
    pub achieved_goal: Vec<f64>,
    pub desired_goal: Vec<f64>,
    pub reward: f64,
    pub step_index: usize,
}

impl Transition {
    /// Mirrors every geometric field. The reward is carried over unchanged:
    /// reflections are isometries, so `d(achieved, desired)` is preserved.
    pub fn reflect(&self, r: &Reflection) -> Result<Transition> {
        Ok(Transition {
            state: r.reflect_point(&self.state)?,
            action: r.reflect_vector(&self.action)?,
            next_state: r.reflect_point(&self.next_state)?,
            achieved_goal: r.reflect_point(&self.achieved_goal)?,
            desired_goal: r.reflect_point(&self.desired_goal)?,
            reward: self.reward,
            step_index: self.step_index,
        })
    }
}

/// An episode: consecutive transitions sharing one desired goal.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    transitions: Vec<Transition>,
}

impl Trajectory {
    /// Checks chaining (`next_state[i] == state[i + 1]`), the shared goal,
    /// and step numbering.
    pub fn new(transitions: Vec<Transition>) -> Result<Self> {
        let first = transitions
            .first()
            .ok_or_else(|| Error::Config("empty trajectory".into()))?;
        let goal = &first.desired_goal;
        for (i, t) in transitions.iter().enumerate() {
            if t.step_index != i {
                return Err(Error::Config(format!(
                    "transition {i} carries step_index {}",
                    t.step_index
                )));
            }
            if &t.desired_goal != goal {
                return Err(Error::Config(format!(
                    "transition {i} has a different desired goal"
                )));
            }
        }
        for (i, w) in transitions.windows(2).enumerate() {
            if w[0].next_state != w[1].state {
                return Err(Error::Config(format!(
                    "trajectory is not chained between steps {i} and {}",
                    i + 1
                )));
            }
        }
        Ok(Self { transitions })
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn get(&self, step: usize) -> Option<&Transition> {
        self.transitions.get(step)
    }

    pub fn desired_goal(&self) -> &[f64] {
        &self.transitions[0].desired_goal
    }

    pub fn initial_state(&self) -> &[f64] {
        &self.transitions[0].state
    }

    pub fn reflect(&self, r: &Reflection) -> Result<Trajectory> {
        let transitions = self
            .transitions
            .iter()
            .map(|t| t.reflect(r))
            .collect::<Result<_>>()?;
        Ok(Self { transitions })
    }
}

/// A transition drawn from the buffer, tagged with the insertion id of its
/// source trajectory so that relabelling can look up later steps.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub source: u64,
    pub transition: Transition,
}

/// Bounded FIFO store of equal-length trajectories.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    slots: Vec<Trajectory>,
    inserted: u64,
    trajectory_len: Option<usize>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("buffer capacity must be >= 1".into()));
        }
        Ok(Self {
            capacity,
            slots: Vec::new(),
            inserted: 0,
            trajectory_len: None,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Total number of trajectories ever inserted.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    /// Returns the insertion id assigned to `traj`. Evicts the oldest
    /// trajectory when full.
    pub fn push(&mut self, traj: Trajectory) -> Result<u64> {
        match self.trajectory_len {
            Some(len) if len != traj.len() => {
                return Err(Error::DimensionMismatch {
                    expected: len,
                    got: traj.len(),
                })
            }
            _ => self.trajectory_len = Some(traj.len()),
        }
        let id = self.inserted;
        let slot = (id % self.capacity as u64) as usize;
        if slot < self.slots.len() {
            self.slots[slot] = traj;
        } else {
            self.slots.push(traj);
        }
        self.inserted += 1;
        Ok(id)
    }

    /// Looks up a trajectory by insertion id; `None` once it has been evicted.
    pub fn get(&self, id: u64) -> Option<&Trajectory> {
        let oldest = self.inserted.saturating_sub(self.slots.len() as u64);
        if id < oldest || id >= self.inserted {
            return None;
        }
        self.slots.get((id % self.capacity as u64) as usize)
    }

    /// Stored trajectories, oldest first.
    pub fn iter(&self) -> impl Iterator<Item = (u64, &Trajectory)> {
        let oldest = self.inserted - self.slots.len() as u64;
        (oldest..self.inserted).map(move |id| (id, self.get(id).expect("live id")))
    }

    /// Draws `batch_size` transitions uniformly over stored `(trajectory,
    /// step)` pairs. Returns `None` when the buffer is empty.
    pub fn sample_minibatch<R: Rng + ?Sized>(
        &self,
        batch_size: usize,
        rng: &mut R,
    ) -> Option<Vec<Sample>> {
        let len = self.trajectory_len?;
        if self.slots.is_empty() {
            return None;
        }
        let oldest = self.inserted - self.slots.len() as u64;
        let batch = (0..batch_size)
            .map(|_| {
                let id = oldest + rng.random_range(0..self.slots.len() as u64);
                let step = rng.random_range(0..len);
                let traj = self.get(id).expect("live id");
                Sample {
                    source: id,
                    transition: traj.transitions[step].clone(),
                }
            })
            .collect();
        Some(batch)
    }
}

/// Where reflections are applied.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum KerMode {
    /// Mirrored copies are written to the buffer next to the original.
    #[default]
    Store,
    /// Only originals are stored; each sampled transition is mirrored.
    Minibatch,
}

impl FromStr for KerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "store" => Ok(KerMode::Store),
            "minibatch" => Ok(KerMode::Minibatch),
            _ => Err(Error::Config(format!(
                "ker_mode must be store or minibatch, got {s:?}"
            ))),
        }
    }
}

impl fmt::Display for KerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KerMode::Store => "store",
            KerMode::Minibatch => "minibatch",
        })
    }
}

/// How the mirror planes are chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PlaneSchedule {
    /// Fresh `theta_z ~ U[0, pi)` for every copy of every trajectory.
    #[default]
    Random,
    /// The same `n` planes `theta_i = i * pi / n` for every trajectory.
    Fixed,
}

impl FromStr for PlaneSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(PlaneSchedule::Random),
            "fixed" => Ok(PlaneSchedule::Fixed),
            _ => Err(Error::Config(format!(
                "ker_planes must be random or fixed, got {s:?}"
            ))),
        }
    }
}

impl fmt::Display for PlaneSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PlaneSchedule::Random => "random",
            PlaneSchedule::Fixed => "fixed",
        })
    }
}

/// Reflection-symmetry augmentation settings.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Kaleidoscope {
    pub n: usize,
    pub mode: KerMode,
    pub planes: PlaneSchedule,
}

impl Kaleidoscope {
    pub fn new(n: usize, mode: KerMode, planes: PlaneSchedule) -> Self {
        Self { n, mode, planes }
    }

    /// The `n` reflections used for one trajectory.
    pub fn reflections<R: Rng + ?Sized>(&self, dim: usize, rng: &mut R) -> Result<Vec<Reflection>> {
        match self.planes {
            PlaneSchedule::Random => (0..self.n).map(|_| random_reflection(dim, rng)).collect(),
            PlaneSchedule::Fixed => (0..self.n)
                .map(|i| Reflection::new(i as f64 * PI / self.n as f64, dim))
                .collect(),
        }
    }

    /// Stores `traj`, followed by its mirrored copies in store mode.
    /// Returns the number of trajectories written.
    pub fn store<R: Rng + ?Sized>(
        &self,
        buffer: &mut ReplayBuffer,
        traj: Trajectory,
        rng: &mut R,
    ) -> Result<usize> {
        match self.mode {
            KerMode::Minibatch => {
                buffer.push(traj)?;
                Ok(1)
            }
            KerMode::Store => {
                let dim = traj.initial_state().len();
                let copies = self
                    .reflections(dim, rng)?
                    .iter()
                    .map(|r| traj.reflect(r))
                    .collect::<Result<Vec<_>>>()?;
                buffer.push(traj)?;
                for c in copies {
                    buffer.push(c)?;
                }
                Ok(self.n + 1)
            }
        }
    }
}

/// Stores `traj` plus `n` copies, each mirrored by a freshly drawn random
/// reflection. The original goes in first.
pub fn store_with_ker<R: Rng + ?Sized>(
    buffer: &mut ReplayBuffer,
    traj: Trajectory,
    n: usize,
    rng: &mut R,
) -> Result<()> {
    Kaleidoscope::new(n, KerMode::Store, PlaneSchedule::Random)
        .store(buffer, traj, rng)
        .map(|_| ())
}

/// Mirrors each sampled transition by its own random reflection.
pub fn minibatch_ker<R: Rng + ?Sized>(batch: &[Sample], rng: &mut R) -> Result<Vec<Sample>> {
    batch
        .iter()
        .map(|s| {
            let r = random_reflection(s.transition.state.len(), rng)?;
            Ok(Sample {
                source: s.source,
                transition: s.transition.reflect(&r)?,
            })
        })
        .collect()
}

/// How the `k` relabelled copies reach the learner.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum GerMode {
    /// One update on the concatenation of all copies.
    #[default]
    Concat,
    /// One update per copy.
    Successive,
}

impl FromStr for GerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concat" => Ok(GerMode::Concat),
            "successive" => Ok(GerMode::Successive),
            _ => Err(Error::Config(format!(
                "ger_mode must be concat or successive, got {s:?}"
            ))),
        }
    }
}

impl fmt::Display for GerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GerMode::Concat => "concat",
            GerMode::Successive => "successive",
        })
    }
}

/// Goal relabelling settings: one ball radius per application.
#[derive(Clone, Debug, PartialEq)]
pub struct RelabelSpec {
    epsilons: Vec<f64>,
    relabel_prob: f64,
    success_threshold: f64,
}

impl RelabelSpec {
    /// Every radius must satisfy `0 <= eps_i < success_threshold`.
    pub fn new(epsilons: Vec<f64>, relabel_prob: f64, success_threshold: f64) -> Result<Self> {
        if epsilons.is_empty() {
            return Err(Error::Config("at least one GER application is required".into()));
        }
        for &e in &epsilons {
            if !(e >= 0.0 && e < success_threshold) {
                return Err(Error::Config(format!(
                    "GER threshold {e} must lie in [0, {success_threshold})"
                )));
            }
        }
        if !(0.0..=1.0).contains(&relabel_prob) {
            return Err(Error::Config(format!(
                "relabel_prob must lie in [0, 1], got {relabel_prob}"
            )));
        }
        Ok(Self {
            epsilons,
            relabel_prob,
            success_threshold,
        })
    }

    /// Evenly spaced radii `i * eps_R / k`, `i = 0..k`; the first is zero.
    pub fn ladder(k: usize, relabel_prob: f64, success_threshold: f64) -> Result<Self> {
        let eps = (0..k)
            .map(|i| i as f64 * success_threshold / k as f64)
            .collect();
        Self::new(eps, relabel_prob, success_threshold)
    }

    /// Plain hindsight relabelling: one application with radius zero.
    pub fn her(relabel_prob: f64, success_threshold: f64) -> Result<Self> {
        Self::new(vec![0.0], relabel_prob, success_threshold)
    }

    pub fn k(&self) -> usize {
        self.epsilons.len()
    }

    pub fn epsilons(&self) -> &[f64] {
        &self.epsilons
    }

    pub fn relabel_prob(&self) -> f64 {
        self.relabel_prob
    }

    pub fn success_threshold(&self) -> f64 {
        self.success_threshold
    }
}

/// Produces the `k` relabelled copies of `batch` separately.
///
/// For copy `i`, each transition is relabelled with probability
/// `relabel_prob`: a step `j` is drawn uniformly from `step..len` of the
/// same trajectory and the new goal is sampled uniformly in the ball of
/// radius `eps_i` around that step's achieved goal. Every reward is then
/// recomputed. Per transition the random draws are: coin, future step, ball.
pub fn ger_relabel_copies<R: Rng + ?Sized>(
    batch: &[Sample],
    spec: &RelabelSpec,
    buffer: &ReplayBuffer,
    rng: &mut R,
) -> Result<Vec<Vec<Sample>>> {
    spec.epsilons
        .iter()
        .map(|&eps| {
            batch
                .iter()
                .map(|s| {
                    let mut t = s.transition.clone();
                    if rng.random_bool(spec.relabel_prob) {
                        let traj = buffer.get(s.source).ok_or_else(|| {
                            Error::Config(format!("trajectory {} was evicted", s.source))
                        })?;
                        let future = rng.random_range(t.step_index..traj.len());
                        let center = &traj.transitions[future].achieved_goal;
                        check_dim(t.desired_goal.len(), center.len())?;
                        t.desired_goal = sample_in_ball(center, eps, rng);
                    }
                    t.reward = compute_reward(&t.achieved_goal, &t.desired_goal, spec.success_threshold);
                    Ok(Sample {
                        source: s.source,
                        transition: t,
                    })
                })
                .collect()
        })
        .collect()
}

/// Concatenation of the `k` relabelled copies; output length is
/// `k * batch.len()`.
pub fn ger_relabel<R: Rng + ?Sized>(
    batch: &[Sample],
    spec: &RelabelSpec,
    buffer: &ReplayBuffer,
    rng: &mut R,
) -> Result<Vec<Sample>> {
    Ok(ger_relabel_copies(batch, spec, buffer, rng)?
        .into_iter()
        .flatten()
        .collect())
}
