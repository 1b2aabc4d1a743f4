//! Seeded experiment runner.
//!
//! One run alternates rollouts and optimisation cycles: real episodes go
//! through KER into the buffer, each update draws a minibatch, relabels it
//! with GER and hands it to DDPG. After every epoch the greedy policy is
//! evaluated on fresh goals and one CSV row is written.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::agent::{AgentConfig, DdpgAgent};
use crate::env::{EnvKind, GoalEnv, PointReach, PointReachParams};
use crate::error::{Error, Result};
use crate::replay::{
    ger_relabel, ger_relabel_copies, minibatch_ker, GerMode, Kaleidoscope, KerMode, PlaneSchedule, RelabelSpec,
    ReplayBuffer, Trajectory, Transition,
};

/// Header of every per-run CSV file.
pub const CSV_HEADER: &str = "epoch,real_episodes,real_steps,success_rate,critic_loss,actor_loss,wall_seconds";

/// Everything needed to reproduce one run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub env: EnvKind,
    pub env_params: PointReachParams,
    pub seed: u64,
    pub epochs: usize,
    pub episodes_per_epoch: usize,
    /// Each epoch is split into this many rollout/optimisation cycles.
    pub cycles_per_epoch: usize,
    pub updates_per_cycle: usize,
    pub batch_size: usize,
    pub eval_episodes: usize,
    pub ker_n: usize,
    pub ker_mode: KerMode,
    pub ker_planes: PlaneSchedule,
    pub ger_k: usize,
    /// `None` selects the ladder `i * eps_R / k`.
    pub ger_epsilons: Option<Vec<f64>>,
    pub ger_mode: GerMode,
    pub relabel_prob: f64,
    pub buffer_capacity: usize,
    pub agent: AgentConfig,
    pub out: Option<PathBuf>,
    /// Record elapsed time in `wall_seconds`. Off by default so that
    /// repeated runs produce identical bytes.
    pub wall_clock: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: EnvKind::Reach2d,
            env_params: PointReachParams::default(),
            seed: 0,
            epochs: 50,
            episodes_per_epoch: 16,
            cycles_per_epoch: 16,
            updates_per_cycle: 320,
            batch_size: 64,
            eval_episodes: 50,
            ker_n: 8,
            ker_mode: KerMode::Store,
            ker_planes: PlaneSchedule::Random,
            ger_k: 4,
            ger_epsilons: None,
            ger_mode: GerMode::Concat,
            relabel_prob: 0.8,
            buffer_capacity: 10_000,
            agent: AgentConfig::default(),
            out: None,
            wall_clock: false,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|v| parse(key, v))
        .collect()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// Splits `key = value` lines, skipping blanks and `#` comments.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    /// Vanilla HER: no reflections, one zero-radius relabelling.
    pub fn her_baseline() -> Self {
        Self {
            ker_n: 0,
            ger_k: 1,
            ger_epsilons: Some(vec![0.0]),
            ..Self::default()
        }
    }

    /// Sets one configuration key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let p = &mut self.env_params;
        let a = &mut self.agent;
        match key {
            "env" => self.env = value.parse()?,
            "seed" => self.seed = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "episodes_per_epoch" => self.episodes_per_epoch = parse(key, value)?,
            "cycles_per_epoch" => self.cycles_per_epoch = parse(key, value)?,
            "updates_per_cycle" => self.updates_per_cycle = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "eval_episodes" => self.eval_episodes = parse(key, value)?,
            "ker_n" => self.ker_n = parse(key, value)?,
            "ker_mode" => self.ker_mode = value.parse()?,
            "ker_planes" => self.ker_planes = value.parse()?,
            "ger_k" => self.ger_k = parse(key, value)?,
            "ger_epsilons" => {
                self.ger_epsilons = match value {
                    "" | "ladder" => None,
                    v => Some(parse_list(key, v)?),
                }
            }
            "ger_mode" => self.ger_mode = value.parse()?,
            "relabel_prob" => self.relabel_prob = parse(key, value)?,
            "buffer_capacity" => self.buffer_capacity = parse(key, value)?,
            "hidden" => a.hidden = parse_list(key, value)?,
            "actor_lr" => a.actor_lr = parse(key, value)?,
            "critic_lr" => a.critic_lr = parse(key, value)?,
            "tau" => a.tau = parse(key, value)?,
            "noise_scale" => a.noise_scale = parse(key, value)?,
            "random_prob" => a.random_prob = parse(key, value)?,
            "action_l2" => a.action_l2 = parse(key, value)?,
            "norm_clip" => a.norm_clip = parse(key, value)?,
            "horizon" => p.horizon = parse(key, value)?,
            "success_threshold" => p.success_threshold = parse(key, value)?,
            "step_size" => p.step_size = parse(key, value)?,
            "action_bound" => p.action_bound = parse(key, value)?,
            "workspace_radius" => p.workspace_radius = parse(key, value)?,
            "gamma" => p.gamma = parse(key, value)?,
            "out" => self.out = Some(PathBuf::from(value)),
            "wall_clock" => self.wall_clock = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` text on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (k, v) in parse_kv(text)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(&fs::read_to_string(path)?)?;
        Ok(cfg)
    }

    /// Serialises every key; feeding the output to
    /// [`apply_text`](Self::apply_text) reproduces the configuration.
    pub fn to_kv_string(&self) -> String {
        let p = &self.env_params;
        let a = &self.agent;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("env", self.env.to_string());
        kv("seed", self.seed.to_string());
        kv("epochs", self.epochs.to_string());
        kv("episodes_per_epoch", self.episodes_per_epoch.to_string());
        kv("cycles_per_epoch", self.cycles_per_epoch.to_string());
        kv("updates_per_cycle", self.updates_per_cycle.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("eval_episodes", self.eval_episodes.to_string());
        kv("ker_n", self.ker_n.to_string());
        kv("ker_mode", self.ker_mode.to_string());
        kv("ker_planes", self.ker_planes.to_string());
        kv("ger_k", self.ger_k.to_string());
        kv(
            "ger_epsilons",
            self.ger_epsilons.as_deref().map_or("ladder".into(), join),
        );
        kv("ger_mode", self.ger_mode.to_string());
        kv("relabel_prob", self.relabel_prob.to_string());
        kv("buffer_capacity", self.buffer_capacity.to_string());
        kv("hidden", join(&a.hidden));
        kv("actor_lr", a.actor_lr.to_string());
        kv("critic_lr", a.critic_lr.to_string());
        kv("tau", a.tau.to_string());
        kv("noise_scale", a.noise_scale.to_string());
        kv("random_prob", a.random_prob.to_string());
        kv("action_l2", a.action_l2.to_string());
        kv("norm_clip", a.norm_clip.to_string());
        kv("horizon", p.horizon.to_string());
        kv("success_threshold", p.success_threshold.to_string());
        kv("step_size", p.step_size.to_string());
        kv("action_bound", p.action_bound.to_string());
        kv("workspace_radius", p.workspace_radius.to_string());
        kv("gamma", p.gamma.to_string());
        if let Some(out) = &self.out {
            kv("out", out.display().to_string());
        }
        kv("wall_clock", self.wall_clock.to_string());
        s
    }

    pub fn relabel_spec(&self) -> Result<RelabelSpec> {
        let eps_r = self.env_params.success_threshold;
        match &self.ger_epsilons {
            None => RelabelSpec::ladder(self.ger_k, self.relabel_prob, eps_r),
            Some(eps) => {
                if eps.len() != self.ger_k {
                    return Err(Error::Config(format!(
                        "ger_k = {} but {} ger_epsilons given",
                        self.ger_k,
                        eps.len()
                    )));
                }
                RelabelSpec::new(eps.clone(), self.relabel_prob, eps_r)
            }
        }
    }

    pub fn kaleidoscope(&self) -> Kaleidoscope {
        Kaleidoscope::new(self.ker_n, self.ker_mode, self.ker_planes)
    }

    pub fn build_env(&self) -> Result<PointReach> {
        PointReach::new(self.env, self.env_params.clone())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 || self.episodes_per_epoch == 0 || self.eval_episodes == 0 {
            return bad("epochs, episodes_per_epoch and eval_episodes must be >= 1".into());
        }
        if self.cycles_per_epoch == 0 || self.episodes_per_epoch % self.cycles_per_epoch != 0 {
            return bad(format!(
                "cycles_per_epoch ({}) must divide episodes_per_epoch ({})",
                self.cycles_per_epoch, self.episodes_per_epoch
            ));
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 {
            return bad("batch_size and buffer_capacity must be >= 1".into());
        }
        self.build_env()?;
        self.relabel_spec()?;
        self.agent.validate()
    }

    /// Real environment steps per epoch.
    pub fn steps_per_epoch(&self) -> usize {
        self.episodes_per_epoch * self.env_params.horizon
    }
}

/// Progress after one epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub real_episodes: u64,
    pub real_steps: u64,
    pub success_rate: f64,
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub wall_seconds: f64,
    /// Trajectories written to the buffer so far, augmented copies included.
    pub stored_trajectories: u64,
}

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.epoch,
            self.real_episodes,
            self.real_steps,
            self.success_rate,
            self.critic_loss,
            self.actor_loss,
            self.wall_seconds
        )
    }
}

/// Runs one episode, exploring when `explore`.
pub fn rollout<E: GoalEnv>(
    env: &E,
    agent: &DdpgAgent,
    explore: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(Trajectory, f64)> {
    let mut state = env.reset(rng);
    let mut transitions = Vec::with_capacity(env.spec().horizon);
    loop {
        let action = agent.act(&state.observation, &state.desired_goal, explore, rng)?;
        let out = env.step(&state, &action)?;
        transitions.push(Transition {
            state: state.observation,
            action: out.executed_action,
            next_state: out.state.observation.clone(),
            achieved_goal: out.state.achieved_goal.clone(),
            desired_goal: state.desired_goal,
            reward: out.reward,
            step_index: state.steps_elapsed,
        });
        state = out.state;
        if out.done {
            return Ok((Trajectory::new(transitions)?, out.reward));
        }
    }
}

/// Fraction of greedy episodes whose final step earns reward 0.
pub fn evaluate<E: GoalEnv>(env: &E, agent: &DdpgAgent, episodes: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut successes = 0;
    for _ in 0..episodes {
        let (_, final_reward) = rollout(env, agent, false, rng)?;
        if final_reward == 0.0 {
            successes += 1;
        }
    }
    Ok(successes as f64 / episodes as f64)
}

fn open_output(path: &Path) -> Result<BufWriter<File>> {
    let wrap = |source| Error::Output {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(wrap)?;
    }
    File::create(path).map(BufWriter::new).map_err(wrap)
}

/// Runs a full experiment. When `config.out` is set the CSV is opened before
/// training starts and one row is flushed per epoch.
pub fn run_experiment(config: &RunConfig) -> Result<Vec<EpochRecord>> {
    run_experiment_with(config, |_| {})
}

/// Like [`run_experiment`], calling `on_epoch` after each evaluation.
pub fn run_experiment_with(config: &RunConfig, mut on_epoch: impl FnMut(&EpochRecord)) -> Result<Vec<EpochRecord>> {
    config.validate()?;
    let mut csv = match &config.out {
        Some(path) => {
            let mut w = open_output(path)?;
            writeln!(w, "{CSV_HEADER}")?;
            w.flush()?;
            Some(w)
        }
        None => None,
    };

    let env = config.build_env()?;
    let relabel = config.relabel_spec()?;
    let ker = config.kaleidoscope();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut eval_rng = ChaCha8Rng::seed_from_u64(config.seed);
    eval_rng.set_stream(1);
    let mut agent = DdpgAgent::new(env.spec(), config.agent.clone(), &mut rng)?;
    let mut buffer = ReplayBuffer::new(config.buffer_capacity)?;

    let started = Instant::now();
    let episodes_per_cycle = config.episodes_per_epoch / config.cycles_per_epoch;
    let horizon = env.spec().horizon as u64;
    let (mut real_episodes, mut stored) = (0u64, 0u64);
    let mut records = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        let (mut critic_sum, mut actor_sum, mut updates) = (0.0, 0.0, 0usize);
        for _ in 0..config.cycles_per_epoch {
            for _ in 0..episodes_per_cycle {
                let (traj, _) = rollout(&env, &agent, true, &mut rng)?;
                agent.observe_trajectory(&traj);
                stored += ker.store(&mut buffer, traj, &mut rng)? as u64;
                real_episodes += 1;
            }
            for _ in 0..config.updates_per_cycle {
                let Some(batch) = buffer.sample_minibatch(config.batch_size, &mut rng) else {
                    continue;
                };
                let copies = match config.ger_mode {
                    GerMode::Concat => vec![ger_relabel(&batch, &relabel, &buffer, &mut rng)?],
                    GerMode::Successive => ger_relabel_copies(&batch, &relabel, &buffer, &mut rng)?,
                };
                for copy in copies {
                    let copy = match ker.mode {
                        KerMode::Minibatch if ker.n > 0 => minibatch_ker(&copy, &mut rng)?,
                        _ => copy,
                    };
                    if let Some(stats) = agent.update(&copy)? {
                        critic_sum += stats.critic_loss;
                        actor_sum += stats.actor_loss;
                        updates += 1;
                    }
                }
            }
        }
        if !agent.is_finite() {
            return Err(Error::NonFinite(format!("network parameters after epoch {epoch}")));
        }
        let success_rate = evaluate(&env, &agent, config.eval_episodes, &mut eval_rng)?;
        let mean = |s: f64| if updates == 0 { 0.0 } else { s / updates as f64 };
        let record = EpochRecord {
            epoch,
            real_episodes,
            real_steps: real_episodes * horizon,
            success_rate,
            critic_loss: mean(critic_sum),
            actor_loss: mean(actor_sum),
            wall_seconds: if config.wall_clock {
                started.elapsed().as_secs_f64()
            } else {
                0.0
            },
            stored_trajectories: stored,
        };
        if let Some(w) = csv.as_mut() {
            writeln!(w, "{}", record.csv_row())?;
            w.flush()?;
        }
        on_epoch(&record);
        records.push(record);
    }
    Ok(records)
}

/// Normalised area under a success curve: the mean success rate per epoch.
pub fn auc(curve: &[f64]) -> f64 {
    if curve.is_empty() {
        0.0
    } else {
        curve.iter().sum::<f64>() / curve.len() as f64
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

/// Per-epoch median over runs of equal length.
pub fn median_curve(curves: &[Vec<f64>]) -> Vec<f64> {
    let len = curves.iter().map(Vec::len).min().unwrap_or(0);
    (0..len)
        .map(|e| median(&curves.iter().map(|c| c[e]).collect::<Vec<_>>()))
        .collect()
}

/// Real steps at the first epoch whose success reaches `threshold`.
pub fn steps_to_threshold(curve: &[f64], steps: &[u64], threshold: f64) -> Option<u64> {
    curve
        .iter()
        .zip(steps)
        .find(|(s, _)| **s >= threshold)
        .map(|(_, &n)| n)
}

/// A grid of configurations, each run over several seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixSpec {
    pub cells: Vec<(String, RunConfig)>,
    pub seeds: Vec<u64>,
    /// Worker threads; runs are independent so any value gives the same CSVs.
    pub jobs: usize,
}

impl MatrixSpec {
    /// Parses a matrix file. Plain keys set the base configuration;
    /// `seeds = 0,1,2` lists seeds; `jobs = N` sets parallelism;
    /// `variant.<name>.<key> = value` defines named cells; and
    /// `sweep.<key> = a | b | c` multiplies every cell by each value.
    pub fn parse(text: &str) -> Result<Self> {
        let mut base = RunConfig::default();
        let mut seeds = vec![0];
        let mut jobs = 1;
        let mut variants: Vec<(String, Vec<(String, String)>)> = Vec::new();
        let mut sweeps: Vec<(String, Vec<String>)> = Vec::new();
        for (k, v) in parse_kv(text)? {
            if k == "seeds" {
                seeds = parse_list(&k, &v)?;
            } else if k == "jobs" {
                jobs = parse(&k, &v)?;
            } else if let Some(rest) = k.strip_prefix("variant.") {
                let (name, key) = rest
                    .split_once('.')
                    .ok_or_else(|| Error::Config(format!("expected variant.<name>.<key>, got {k}")))?;
                match variants.iter_mut().find(|(n, _)| n == name) {
                    Some((_, kv)) => kv.push((key.to_string(), v)),
                    None => variants.push((name.to_string(), vec![(key.to_string(), v)])),
                }
            } else if let Some(key) = k.strip_prefix("sweep.") {
                let values = v.split('|').map(|s| s.trim().to_string()).collect();
                sweeps.push((key.to_string(), values));
            } else {
                base.set(&k, &v)?;
            }
        }
        if seeds.is_empty() {
            return Err(Error::Config("seeds must list at least one seed".into()));
        }
        if variants.is_empty() {
            variants.push(("base".into(), Vec::new()));
        }
        let mut cells: Vec<(String, RunConfig)> = Vec::new();
        for (name, kv) in &variants {
            let mut cfg = base.clone();
            for (k, v) in kv {
                cfg.set(k, v)?;
            }
            cells.push((name.clone(), cfg));
        }
        for (key, values) in &sweeps {
            let mut next = Vec::new();
            for (name, cfg) in &cells {
                for v in values {
                    let mut c = cfg.clone();
                    c.set(key, v)?;
                    let label = if name == "base" && variants.len() == 1 && variants[0].1.is_empty() {
                        format!("{key}={v}")
                    } else {
                        format!("{name}_{key}={v}")
                    };
                    next.push((label, c));
                }
            }
            cells = next;
        }
        for (name, cfg) in &cells {
            cfg.validate()
                .map_err(|e| Error::Config(format!("cell {name}: {e}")))?;
        }
        Ok(Self {
            cells,
            seeds,
            jobs: jobs.max(1),
        })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }
}

/// Outcome of one configuration across its seeds.
#[derive(Clone, Debug)]
pub struct CellSummary {
    pub name: String,
    /// `(seed, records or failure message)`.
    pub runs: Vec<(u64, std::result::Result<Vec<EpochRecord>, String>)>,
}

impl CellSummary {
    pub fn completed(&self) -> impl Iterator<Item = &Vec<EpochRecord>> {
        self.runs.iter().filter_map(|(_, r)| r.as_ref().ok())
    }

    pub fn failed(&self) -> usize {
        self.runs.iter().filter(|(_, r)| r.is_err()).count()
    }

    pub fn curves(&self) -> Vec<Vec<f64>> {
        self.completed()
            .map(|r| r.iter().map(|e| e.success_rate).collect())
            .collect()
    }

    pub fn median_curve(&self) -> Vec<f64> {
        median_curve(&self.curves())
    }

    /// Median over seeds of each run's AUC.
    pub fn median_auc(&self) -> f64 {
        median(&self.curves().iter().map(|c| auc(c)).collect::<Vec<_>>())
    }

    pub fn real_steps(&self) -> Vec<u64> {
        self.completed()
            .next()
            .map(|r| r.iter().map(|e| e.real_steps).collect())
            .unwrap_or_default()
    }

    /// Real steps at which the median curve first reaches `threshold`.
    pub fn steps_to(&self, threshold: f64) -> Option<u64> {
        steps_to_threshold(&self.median_curve(), &self.real_steps(), threshold)
    }
}

#[derive(Clone, Debug)]
pub struct MatrixReport {
    pub cells: Vec<CellSummary>,
}

impl MatrixReport {
    pub fn cell(&self, name: &str) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.name == name)
    }

    /// Summary CSV: one row per configuration.
    pub fn summary_csv(&self) -> String {
        let mut s = String::from("config,runs_ok,runs_failed,median_auc,steps_to_0.9,median_success_curve\n");
        for c in &self.cells {
            let curve = c
                .median_curve()
                .iter()
                .map(f64::to_string)
                .collect::<Vec<_>>()
                .join(" ");
            let steps = c.steps_to(0.9).map_or(String::new(), |n| n.to_string());
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                c.name,
                c.completed().count(),
                c.failed(),
                c.median_auc(),
                steps,
                curve
            );
        }
        s
    }

    /// Configurations ordered by median AUC, best first.
    pub fn auc_ordering(&self) -> String {
        let mut cells: Vec<_> = self.cells.iter().map(|c| (c.name.as_str(), c.median_auc())).collect();
        cells.sort_by(|a, b| b.1.total_cmp(&a.1));
        let mut s = String::from("median AUC ordering (best first):\n");
        for (name, a) in cells {
            let _ = writeln!(s, "  {a:.4}  {name}");
        }
        s
    }
}

/// Runs every `(cell, seed)` pair, writing `<cell>_seed<seed>.csv` files and
/// `summary.csv` into `out_dir`. A failed run is recorded, not fatal.
pub fn run_matrix(spec: &MatrixSpec, out_dir: impl AsRef<Path>) -> Result<MatrixReport> {
    use rayon::prelude::*;

    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|source| Error::Output {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let jobs: Vec<(usize, u64, RunConfig)> = spec
        .cells
        .iter()
        .enumerate()
        .flat_map(|(i, (name, cfg))| {
            spec.seeds.iter().map(move |&seed| {
                let mut c = cfg.clone();
                c.seed = seed;
                c.out = Some(out_dir.join(format!("{name}_seed{seed}.csv")));
                (i, seed, c)
            })
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results: Vec<_> = pool.install(|| {
        jobs.par_iter()
            .map(|(i, seed, cfg)| (*i, *seed, run_experiment(cfg).map_err(|e| e.to_string())))
            .collect()
    });
    let mut cells: Vec<CellSummary> = spec
        .cells
        .iter()
        .map(|(name, _)| CellSummary {
            name: name.clone(),
            runs: Vec::new(),
        })
        .collect();
    for (i, seed, r) in results {
        cells[i].runs.push((seed, r));
    }
    let report = MatrixReport { cells };
    fs::write(out_dir.join("summary.csv"), report.summary_csv())?;
    Ok(report)
}
