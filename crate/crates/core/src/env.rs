//! Multi-goal environments with sparse rewards.
//!
//! The point-mass tasks live in a Euclidean ball centred on the origin. A
//! ball is mapped onto itself by every vertical-plane reflection through the
//! origin, and so is the set of admissible actions (also a ball), which makes
//! the dynamics exactly equivariant under any [`Reflection`].
//!
//! [`Reflection`]: crate::geometry::Reflection

use std::fmt;
use std::str::FromStr;


use crate::error::{check_dim, Error, Result};
use crate::geometry::{distance, norm, sample_in_ball};

/// Static description of a multi-goal MDP.
#[derive(Clone, Debug, PartialEq)]
pub struct GoalMdpSpec {
    pub state_dim: usize,
    pub action_dim: usize,
    pub goal_dim: usize,
    /// `a_max`: bound on every action coordinate.
    pub action_bound: f64,
    /// `eps_R`: a goal counts as reached when `d(achieved, desired) <= eps_R`.
    pub success_threshold: f64,
    pub horizon: usize,
    pub gamma: f64,
}

impl GoalMdpSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.success_threshold > 0.0) {
            return Err(Error::Config("success_threshold must be > 0".into()));
        }
        if self.horizon < 1 {
            return Err(Error::Config("horizon must be >= 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config("gamma must lie in (0, 1)".into()));
        }
        if !(self.action_bound > 0.0) {
            return Err(Error::Config("action_bound must be > 0".into()));
        }
        Ok(())
    }
}

/// Sparse reward: `0` when `achieved` is within `eps_R` of `desired`, else `-1`.
pub fn compute_reward(achieved: &[f64], desired: &[f64], success_threshold: f64) -> f64 {
    debug_assert_eq!(achieved.len(), desired.len());
    if distance(achieved, desired) <= success_threshold {
        0.0
    } else {
        -1.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    pub observation: Vec<f64>,
    pub achieved_goal: Vec<f64>,
    pub desired_goal: Vec<f64>,
    pub steps_elapsed: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub state: EnvState,
    /// Action after clipping, i.e. what the dynamics actually used.
    pub executed_action: Vec<f64>,
    pub reward: f64,
    /// Time-limit signal only.
    pub done: bool,
}

/// A goal-conditioned environment. Implementations are immutable; all
/// episode state lives in [`EnvState`].
pub trait GoalEnv {
    fn spec(&self) -> &GoalMdpSpec;

    fn reset(&self, rng: &mut dyn rand::RngCore) -> EnvState;

    fn step(&self, state: &EnvState, action: &[f64]) -> Result<StepOutcome>;

    /// Maps a full state vector to goal space.
    fn project_goal(&self, state: &[f64]) -> Vec<f64>;

    fn compute_reward(&self, achieved: &[f64], desired: &[f64]) -> f64 {
        compute_reward(achieved, desired, self.spec().success_threshold)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EnvKind {
    Reach2d,
    Reach3d,
}

impl EnvKind {
    pub fn dim(self) -> usize {
        match self {
            EnvKind::Reach2d => 2,
            EnvKind::Reach3d => 3,
        }
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reach2d" => Ok(EnvKind::Reach2d),
            "reach3d" => Ok(EnvKind::Reach3d),
            other => Err(Error::Config(format!(
                "unknown environment {other:?} (expected reach2d or reach3d)"
            ))),
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnvKind::Reach2d => "reach2d",
            EnvKind::Reach3d => "reach3d",
        })
    }
}

/// Tunable parameters of the point-reach tasks.
#[derive(Clone, Debug, PartialEq)]
pub struct PointReachParams {
    pub workspace_radius: f64,
    /// `alpha`: displacement per unit action.
    pub step_size: f64,
    pub action_bound: f64,
    pub success_threshold: f64,
    pub horizon: usize,
    pub gamma: f64,
}

impl Default for PointReachParams {
    fn default() -> Self {
        Self {
            workspace_radius: 1.0,
            step_size: 0.05,
            action_bound: 1.0,
            success_threshold: 0.05,
            horizon: 50,
            gamma: 0.98,
        }
    }
}

/// A point mass moving inside a ball: `x' = proj_ball(x + alpha * a)`.
#[derive(Clone, Debug)]
pub struct PointReach {
    kind: EnvKind,
    params: PointReachParams,
    spec: GoalMdpSpec,
}

impl PointReach {
    pub fn new(kind: EnvKind, params: PointReachParams) -> Result<Self> {
        let dim = kind.dim();
        let spec = GoalMdpSpec {
            state_dim: dim,
            action_dim: dim,
            goal_dim: dim,
            action_bound: params.action_bound,
            success_threshold: params.success_threshold,
            horizon: params.horizon,
            gamma: params.gamma,
        };
        spec.validate()?;
        if !(params.workspace_radius > 0.0) || !(params.step_size > 0.0) {
            return Err(Error::Config(
                "workspace_radius and step_size must be > 0".into(),
            ));
        }
        Ok(Self { kind, params, spec })
    }

    pub fn reach2d() -> Self {
        Self::new(EnvKind::Reach2d, PointReachParams::default()).expect("valid defaults")
    }

    pub fn reach3d() -> Self {
        Self::new(EnvKind::Reach3d, PointReachParams::default()).expect("valid defaults")
    }

    pub fn kind(&self) -> EnvKind {
        self.kind
    }

    pub fn params(&self) -> &PointReachParams {
        &self.params
    }

    /// Builds a state at an explicit position and goal.
    pub fn state_at(&self, position: Vec<f64>, goal: Vec<f64>) -> Result<EnvState> {
        check_dim(self.spec.state_dim, position.len())?;
        check_dim(self.spec.goal_dim, goal.len())?;
        Ok(EnvState {
            achieved_goal: self.project_goal(&position),
            observation: position,
            desired_goal: goal,
            steps_elapsed: 0,
        })
    }

    /// Scales `action` into the Euclidean ball of radius `a_max`; that ball
    /// sits inside the box `|a|_inf <= a_max`.
    pub fn clip_action(&self, action: &[f64]) -> Vec<f64> {
        let bound = self.params.action_bound;
        let n = norm(action);
        if n > bound {
            action.iter().map(|a| a * bound / n).collect()
        } else {
            action.to_vec()
        }
    }

    fn project_to_workspace(&self, p: &mut [f64]) {
        let r = self.params.workspace_radius;
        let n = norm(p);
        if n > r {
            p.iter_mut().for_each(|x| *x *= r / n);
        }
    }
}

impl GoalEnv for PointReach {
    fn spec(&self) -> &GoalMdpSpec {
        &self.spec
    }

    fn reset(&self, rng: &mut dyn rand::RngCore) -> EnvState {
        let origin = vec![0.0; self.spec.state_dim];
        let r = self.params.workspace_radius;
        let position = sample_in_ball(&origin, r, rng);
        let goal = sample_in_ball(&origin, r, rng);
        EnvState {
            achieved_goal: self.project_goal(&position),
            observation: position,
            desired_goal: goal,
            steps_elapsed: 0,
        }
    }

    fn step(&self, state: &EnvState, action: &[f64]) -> Result<StepOutcome> {
        check_dim(self.spec.action_dim, action.len())?;
        check_dim(self.spec.state_dim, state.observation.len())?;
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite("action".into()));
        }
        let executed_action = self.clip_action(action);
        let mut next: Vec<f64> = state
            .observation
            .iter()
            .zip(&executed_action)
            .map(|(x, a)| x + self.params.step_size * a)
            .collect();
        self.project_to_workspace(&mut next);
        let achieved_goal = self.project_goal(&next);
        let reward = self.compute_reward(&achieved_goal, &state.desired_goal);
        let steps_elapsed = state.steps_elapsed + 1;
        Ok(StepOutcome {
            state: EnvState {
                observation: next,
                achieved_goal,
                desired_goal: state.desired_goal.clone(),
                steps_elapsed,
            },
            executed_action,
            reward,
            done: steps_elapsed >= self.spec.horizon,
        })
    }

    fn project_goal(&self, state: &[f64]) -> Vec<f64> {
        state.to_vec()
    }
}
