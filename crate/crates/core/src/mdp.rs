//! MDP abstraction, trajectories and rollouts.

use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{self, Error, Result};
use crate::par::{self, Execution};
use crate::seed;

/// Control timestep shared by every environment (seconds).
pub const DT: f64 = 0.02;

/// Version tag written into trajectory and demonstration files.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RewardMode {
    #[default]
    Sparse,
    Shaped,
}

impl std::str::FromStr for RewardMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sparse" => Ok(RewardMode::Sparse),
            "shaped" => Ok(RewardMode::Shaped),
            other => error::config(format!("unknown reward mode `{other}`")),
        }
    }
}

impl std::fmt::Display for RewardMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RewardMode::Sparse => "sparse",
            RewardMode::Shaped => "shaped",
        })
    }
}

/// Static description of an environment's spaces and episode structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub state_dim: usize,
    pub action_dim: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub horizon: usize,
    pub discount: f64,
    pub reward_mode: RewardMode,
}

impl EnvSpec {
    pub fn validate(&self) -> Result<()> {
        if self.state_dim == 0 || self.action_dim == 0 || self.horizon == 0 {
            return error::config("state_dim, action_dim and horizon must be positive");
        }
        if self.action_low.len() != self.action_dim || self.action_high.len() != self.action_dim {
            return error::config("action bounds do not match action_dim");
        }
        if self
            .action_low
            .iter()
            .zip(&self.action_high)
            .any(|(lo, hi)| !(lo < hi))
        {
            return error::config("action_low must be strictly below action_high");
        }
        if !(0.0..1.0).contains(&self.discount) {
            return error::config(format!("discount {} outside [0, 1)", self.discount));
        }
        Ok(())
    }

    /// Clips an action into bounds. Components further than `1e-6` outside
    /// are not rejected here; see [`check_action`].
    pub fn clip_action(&self, action: &[f64]) -> Vec<f64> {
        action
            .iter()
            .zip(self.action_low.iter().zip(&self.action_high))
            .map(|(a, (lo, hi))| a.clamp(*lo, *hi))
            .collect()
    }
}

/// Rejects wrong-length or non-finite actions.
pub fn check_action(spec: &EnvSpec, action: &[f64]) -> Result<()> {
    if action.len() != spec.action_dim {
        return error::input(format!(
            "action has {} entries, expected {}",
            action.len(),
            spec.action_dim
        ));
    }
    if action.iter().any(|a| !a.is_finite()) {
        return error::input("non-finite action");
    }
    Ok(())
}

/// Result of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub success: bool,
}

/// A resettable-by-construction, deterministic control task.
pub trait Environment: Send {
    fn spec(&self) -> &EnvSpec;
    fn observe(&self) -> Vec<f64>;
    /// Advances the dynamics by one control step.
    fn step(&mut self, action: &[f64]) -> Result<StepOutcome>;
    /// Task-completion predicate on the current state.
    fn oracle_success(&self) -> bool;
}

/// A stochastic policy over continuous actions.
pub trait StochasticPolicy: Sync {
    fn obs_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn mean_action(&self, observation: &[f64]) -> Vec<f64>;
    fn log_prob(&self, observation: &[f64], action: &[f64]) -> f64;
    /// Draws an action and returns it with its log-density.
    fn sample<R: Rng + ?Sized>(&self, observation: &[f64], rng: &mut R) -> (Vec<f64>, f64);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub next_state: Vec<f64>,
    pub reward: f64,
    /// `None` for transitions not sampled from a parametric policy.
    pub log_prob: Option<f64>,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub transitions: Vec<Transition>,
    pub success: bool,
    pub seed: u64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn rewards(&self) -> impl DoubleEndedIterator<Item = f64> + '_ {
        self.transitions.iter().map(|t| t.reward)
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards().sum()
    }

    /// Checks that consecutive transitions chain state to state exactly.
    pub fn is_temporally_consistent(&self) -> bool {
        self.transitions
            .windows(2)
            .all(|w| w[0].next_state == w[1].state)
    }
}

/// Runs one episode of `policy` in an already-reset `env`.
///
/// `seed` drives the policy's action noise only; environment randomness is
/// fixed when the environment is constructed. The trajectory stops at
/// `done` or after `horizon` steps.
pub fn rollout<E, P>(
    env: &mut E,
    policy: &P,
    horizon: usize,
    seed: u64,
    deterministic: bool,
) -> Result<Trajectory>
where
    E: Environment + ?Sized,
    P: StochasticPolicy + ?Sized,
{
    let spec = env.spec();
    if policy.obs_dim() != spec.state_dim || policy.action_dim() != spec.action_dim {
        return error::config(format!(
            "policy is {}->{}, environment is {}->{}",
            policy.obs_dim(),
            policy.action_dim(),
            spec.state_dim,
            spec.action_dim
        ));
    }
    let mut rng = seed::rng(seed);
    let mut state = env.observe();
    let mut transitions = Vec::with_capacity(horizon);
    let mut success = false;
    for _ in 0..horizon {
        let (action, log_prob) = if deterministic {
            let mean = policy.mean_action(&state);
            let lp = policy.log_prob(&state, &mean);
            (mean, lp)
        } else {
            policy.sample(&state, &mut rng)
        };
        let out = env.step(&action)?;
        success |= out.success;
        let done = out.done;
        let next_state = out.observation;
        transitions.push(Transition {
            state: std::mem::replace(&mut state, next_state.clone()),
            action,
            next_state,
            reward: out.reward,
            log_prob: Some(log_prob),
            done,
        });
        if done {
            break;
        }
    }
    Ok(Trajectory {
        transitions,
        success,
        seed,
    })
}

/// Builds freshly reset episodes of one task.
pub trait EpisodeSource: Sync {
    type Env: Environment;
    fn spec(&self) -> EnvSpec;
    /// A reset environment for the episode seeded with `episode_seed`.
    fn episode(&self, episode_seed: u64) -> Result<Self::Env>;
    /// Fails when `demos` were recorded on a different task. Sources
    /// without a notion of task identity accept everything.
    fn accepts_demos(&self, demos: &crate::demos::DemoDataset) -> Result<()> {
        let _ = demos;
        Ok(())
    }
}

/// One rollout per seed, run through `exec`, returned in seed order.
///
/// Policy noise for episode `s` is drawn from `derive(s, POLICY_NOISE, 0)`.
pub fn sample_trajectories<S, P>(
    source: &S,
    policy: &P,
    episode_seeds: &[u64],
    deterministic: bool,
    exec: Execution,
) -> Result<Vec<Trajectory>>
where
    S: EpisodeSource + ?Sized,
    P: StochasticPolicy + ?Sized,
{
    let horizon = source.spec().horizon;
    par::map_slice(exec, episode_seeds, |&s| {
        let mut env = source.episode(s)?;
        rollout(&mut env, policy, horizon, seed::derive(s, seed::stream::POLICY_NOISE, 0), deterministic)
    })
    .into_iter()
    .collect()
}

/// Sum of `discount^t * r_t` over the trajectory.
pub fn discounted_return(traj: &Trajectory, discount: f64) -> f64 {
    discounted_sum(traj.rewards(), discount)
}

pub(crate) fn discounted_sum(rewards: impl DoubleEndedIterator<Item = f64>, discount: f64) -> f64 {
    // Horner form from the back keeps the sum exact for γ = 0.
    rewards.rev().fold(0.0, |acc, r| r + discount * acc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TrajectoryHeader {
    state_dim: usize,
    action_dim: usize,
    seed: u64,
    success: bool,
    len: usize,
    format_version: u32,
}

/// Writes a trajectory as JSONL: a header record then one transition per line.
pub fn write_trajectory<W: Write>(mut w: W, traj: &Trajectory) -> Result<()> {
    let (state_dim, action_dim) = traj
        .transitions
        .first()
        .map(|t| (t.state.len(), t.action.len()))
        .unwrap_or((0, 0));
    let header = TrajectoryHeader {
        state_dim,
        action_dim,
        seed: traj.seed,
        success: traj.success,
        len: traj.len(),
        format_version: FORMAT_VERSION,
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for t in &traj.transitions {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads one trajectory written by [`write_trajectory`]. Returns `None` at
/// end of input.
pub fn read_trajectory<R: BufRead>(r: &mut R) -> Result<Option<Trajectory>> {
    let mut line = String::new();
    if r.read_line(&mut line)? == 0 {
        return Ok(None);
    }
    let header: TrajectoryHeader = serde_json::from_str(line.trim_end())?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported trajectory format version {}",
            header.format_version
        )));
    }
    let mut transitions = Vec::with_capacity(header.len);
    for _ in 0..header.len {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(Error::Format("trajectory truncated".into()));
        }
        let t: Transition = serde_json::from_str(line.trim_end())?;
        if t.state.len() != header.state_dim || t.action.len() != header.action_dim {
            return Err(Error::Format("transition dimensions disagree with header".into()));
        }
        transitions.push(t);
    }
    Ok(Some(Trajectory {
        transitions,
        success: header.success,
        seed: header.seed,
    }))
}
