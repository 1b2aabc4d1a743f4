//! Goal-conditioned reinforcement learning with two replay augmentations:
//!
//! * **Kaleidoscope replay (KER)**: every real episode is stored alongside
//!   copies mirrored across randomly rotated vertical planes.
//! * **Goal-augmented replay (GER)**: sampled transitions are relabelled with
//!   goals drawn uniformly in a small ball around a later achieved goal. A
//!   zero radius reduces to hindsight experience replay (HER).
//!
//! The learner is DDPG on small dense networks with hand-written
//! backpropagation; the environments are point masses in a disk or ball.

pub mod agent;
pub mod checks;
pub mod env;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod nn;
pub mod replay;

pub use agent::{AgentConfig, DdpgAgent, NormSnapshot, Normalizer, UpdateStats};
pub use env::{compute_reward, EnvKind, EnvState, GoalEnv, GoalMdpSpec, PointReach, PointReachParams, StepOutcome};
pub use error::{Error, Result};
pub use geometry::{random_reflection, sample_in_ball, BallSampler, Reflection};
pub use harness::{run_experiment, run_matrix, EpochRecord, MatrixSpec, RunConfig, CSV_HEADER};
pub use nn::{AdamState, Gradients, MlpNet, OutputActivation};
pub use replay::{
    ger_relabel, minibatch_ker, store_with_ker, GerMode, Kaleidoscope, KerMode, PlaneSchedule, RelabelSpec,
    ReplayBuffer, Sample, Trajectory, Transition,
};
