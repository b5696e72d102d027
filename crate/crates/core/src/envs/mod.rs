//! Desk-scale analytic-dynamics manipulation tasks.
//!
//! Each task integrates its dynamics with semi-implicit Euler at
//! [`DT`](crate::mdp::DT), clips actions into bounds, and exposes a success
//! oracle. Episodes end at the first successful step.

mod door;
mod hammer;
mod pen;
mod relocate;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use door::{DoorLatchEnv, DoorParams, LATCH_FRICTION_RANGE};
pub use hammer::{HammerEnv, HammerParams};
pub use pen::{PenOrientEnv, PenParams};
pub use relocate::{RelocateEnv, RelocateParams};

use crate::error::{self, Error, Result};
use crate::mdp::{EnvSpec, Environment, EpisodeSource, RewardMode, StepOutcome};
use crate::seed;

/// Viscous damping coefficient applied to every moving body (1/s).
pub const DAMPING: f64 = 0.1;

/// Default discount factor for all tasks.
pub const DEFAULT_DISCOUNT: f64 = 0.995;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Relocate,
    Pen,
    Door,
    Hammer,
}

impl EnvKind {
    pub const ALL: [EnvKind; 4] = [EnvKind::Relocate, EnvKind::Pen, EnvKind::Door, EnvKind::Hammer];

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Relocate => "relocate",
            EnvKind::Pen => "pen",
            EnvKind::Door => "door",
            EnvKind::Hammer => "hammer",
        }
    }

    pub fn state_dim(self) -> usize {
        match self {
            EnvKind::Relocate => relocate::OBS_DIM,
            EnvKind::Pen => pen::OBS_DIM,
            EnvKind::Door => door::OBS_DIM,
            EnvKind::Hammer => hammer::OBS_DIM,
        }
    }

    pub fn action_dim(self) -> usize {
        match self {
            EnvKind::Relocate => relocate::ACT_DIM,
            EnvKind::Pen => pen::ACT_DIM,
            EnvKind::Door => door::ACT_DIM,
            EnvKind::Hammer => hammer::ACT_DIM,
        }
    }

    /// Episode length used when the configuration does not override it.
    pub fn default_horizon(self) -> usize {
        match self {
            EnvKind::Hammer => 200,
            _ => 100,
        }
    }

    pub fn spec(self, reward_mode: RewardMode, horizon: usize, discount: f64) -> EnvSpec {
        let d = self.action_dim();
        EnvSpec {
            state_dim: self.state_dim(),
            action_dim: d,
            action_low: vec![-1.0; d],
            action_high: vec![1.0; d],
            horizon,
            discount,
            reward_mode,
        }
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EnvKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown env kind `{s}`")))
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Scales applied to the manipulated object's mass and size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectVariation {
    pub mass_scale: f64,
    pub size_scale: f64,
}

impl Default for ObjectVariation {
    fn default() -> Self {
        ObjectVariation {
            mass_scale: 1.0,
            size_scale: 1.0,
        }
    }
}

impl ObjectVariation {
    pub fn new(mass_scale: f64, size_scale: f64) -> Self {
        ObjectVariation {
            mass_scale,
            size_scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite() && x > 0.0;
        if !ok(self.mass_scale) || !ok(self.size_scale) {
            return error::config(format!(
                "variation scales must be positive, got mass {} size {}",
                self.mass_scale, self.size_scale
            ));
        }
        Ok(())
    }
}

/// Uniform ranges for ensemble training over object variations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleRanges {
    pub mass: (f64, f64),
    pub size: (f64, f64),
}

impl EnsembleRanges {
    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [("mass", self.mass), ("size", self.size)] {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return error::config(format!("invalid {name} ensemble range [{lo}, {hi}]"));
            }
        }
        Ok(())
    }
}

/// Draws a variation uniformly from the ensemble ranges.
pub fn sample_env_ensemble(ranges: &EnsembleRanges, seed: u64) -> ObjectVariation {
    let mut rng = seed::rng(seed);
    let mut draw = |(lo, hi): (f64, f64)| if lo == hi { lo } else { rng.gen_range(lo..=hi) };
    let mass_scale = draw(ranges.mass);
    let size_scale = draw(ranges.size);
    ObjectVariation {
        mass_scale,
        size_scale,
    }
}

/// Where each episode's object variation comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum VariationSource {
    Fixed(ObjectVariation),
    Ensemble(EnsembleRanges),
}

impl Default for VariationSource {
    fn default() -> Self {
        VariationSource::Fixed(ObjectVariation::default())
    }
}

/// Everything needed to construct fresh episodes of one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub kind: EnvKind,
    pub reward_mode: RewardMode,
    pub variation: VariationSource,
    pub horizon: usize,
    pub discount: f64,
}

impl EnvConfig {
    pub fn new(kind: EnvKind, reward_mode: RewardMode) -> Self {
        EnvConfig {
            kind,
            reward_mode,
            variation: VariationSource::default(),
            horizon: kind.default_horizon(),
            discount: DEFAULT_DISCOUNT,
        }
    }

    pub fn with_variation(mut self, variation: ObjectVariation) -> Self {
        self.variation = VariationSource::Fixed(variation);
        self
    }

    pub fn spec(&self) -> EnvSpec {
        self.kind.spec(self.reward_mode, self.horizon, self.discount)
    }

    pub fn validate(&self) -> Result<()> {
        match &self.variation {
            VariationSource::Fixed(v) => v.validate()?,
            VariationSource::Ensemble(r) => r.validate()?,
        }
        self.spec().validate()
    }

    /// Variation used for the episode seeded with `episode_seed`.
    pub fn variation_for(&self, episode_seed: u64) -> ObjectVariation {
        match &self.variation {
            VariationSource::Fixed(v) => *v,
            VariationSource::Ensemble(r) => {
                sample_env_ensemble(r, seed::derive(episode_seed, seed::stream::ENSEMBLE, 0))
            }
        }
    }

    /// Builds a freshly reset environment for one episode.
    pub fn make(&self, episode_seed: u64) -> Result<TaskEnv> {
        let variation = self.variation_for(episode_seed);
        let (mut env, _) = reset(self.kind, self.reward_mode, variation, episode_seed)?;
        env.set_horizon_and_discount(self.horizon, self.discount);
        Ok(env)
    }
}

impl EpisodeSource for EnvConfig {
    type Env = TaskEnv;

    fn spec(&self) -> EnvSpec {
        EnvConfig::spec(self)
    }

    fn episode(&self, episode_seed: u64) -> Result<TaskEnv> {
        self.make(episode_seed)
    }

    fn accepts_demos(&self, demos: &crate::demos::DemoDataset) -> Result<()> {
        demos.check_source(self.kind, &self.variation)
    }
}

/// Any of the four tasks behind one concrete type.
#[derive(Debug, Clone)]
pub enum TaskEnv {
    Relocate(RelocateEnv),
    Pen(PenOrientEnv),
    Door(DoorLatchEnv),
    Hammer(HammerEnv),
}

macro_rules! dispatch {
    ($self:expr, $e:ident => $body:expr) => {
        match $self {
            TaskEnv::Relocate($e) => $body,
            TaskEnv::Pen($e) => $body,
            TaskEnv::Door($e) => $body,
            TaskEnv::Hammer($e) => $body,
        }
    };
}

impl TaskEnv {
    pub fn kind(&self) -> EnvKind {
        match self {
            TaskEnv::Relocate(_) => EnvKind::Relocate,
            TaskEnv::Pen(_) => EnvKind::Pen,
            TaskEnv::Door(_) => EnvKind::Door,
            TaskEnv::Hammer(_) => EnvKind::Hammer,
        }
    }

    fn set_horizon_and_discount(&mut self, horizon: usize, discount: f64) {
        dispatch!(self, e => { e.spec.horizon = horizon; e.spec.discount = discount; })
    }

    /// Sum of translational and rotational kinetic energy of all bodies.
    pub fn kinetic_energy(&self) -> f64 {
        dispatch!(self, e => e.kinetic_energy())
    }
}

impl Environment for TaskEnv {
    fn spec(&self) -> &EnvSpec {
        dispatch!(self, e => &e.spec)
    }

    fn observe(&self) -> Vec<f64> {
        dispatch!(self, e => e.observe())
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        dispatch!(self, e => e.step(action))
    }

    fn oracle_success(&self) -> bool {
        dispatch!(self, e => e.oracle_success())
    }
}

/// Constructs a task with its initial state drawn from the task's
/// initial-state distribution.
pub fn reset(
    kind: EnvKind,
    reward_mode: RewardMode,
    variation: ObjectVariation,
    seed: u64,
) -> Result<(TaskEnv, Vec<f64>)> {
    variation.validate()?;
    let mut rng = seed::rng(seed::derive(seed, seed::stream::ENV_RESET, 0));
    let env = match kind {
        EnvKind::Relocate => TaskEnv::Relocate(RelocateEnv::random(reward_mode, variation, &mut rng)),
        EnvKind::Pen => TaskEnv::Pen(PenOrientEnv::random(reward_mode, variation, &mut rng)),
        EnvKind::Door => TaskEnv::Door(DoorLatchEnv::random(reward_mode, variation, &mut rng)),
        EnvKind::Hammer => TaskEnv::Hammer(HammerEnv::random(reward_mode, variation, &mut rng)),
    };
    let obs = env.observe();
    Ok((env, obs))
}

/// Reset by name; unknown names are configuration errors.
pub fn reset_named(
    kind: &str,
    reward_mode: RewardMode,
    variation: ObjectVariation,
    seed: u64,
) -> Result<(TaskEnv, Vec<f64>)> {
    reset(kind.parse()?, reward_mode, variation, seed)
}

/// Wraps an angle into (-π, π].
pub fn wrap_angle(x: f64) -> f64 {
    use std::f64::consts::PI;
    let mut y = x.rem_euclid(2.0 * PI);
    if y > PI {
        y -= 2.0 * PI;
    }
    if y == -PI {
        PI
    } else {
        y
    }
}

pub(crate) fn norm2(x: [f64; 2]) -> f64 {
    x[0].hypot(x[1])
}

pub(crate) fn sub2(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

/// Shared step prologue: validates and clips the action.
pub(crate) fn prepare_action(spec: &EnvSpec, action: &[f64]) -> Result<Vec<f64>> {
    crate::mdp::check_action(spec, action)?;
    Ok(spec.clip_action(action))
}

/// Sparse or shaped reward and the termination flag for a step.
pub(crate) fn finish_step(
    spec: &EnvSpec,
    observation: Vec<f64>,
    success: bool,
    shaped: impl FnOnce() -> f64,
) -> StepOutcome {
    let reward = match spec.reward_mode {
        RewardMode::Sparse => {
            if success {
                1.0
            } else {
                0.0
            }
        }
        RewardMode::Shaped => shaped(),
    };
    StepOutcome {
        observation,
        reward,
        done: success,
        success,
    }
}
