//! Scripted experts, noisy demonstration collection and the demo file format.
//!
//! A demo file is one JSON header line followed by the trajectories in the
//! JSONL layout of [`write_trajectory`]. The header carries a SHA-256 of
//! every byte after the header line.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::envs::{self, EnvKind, ObjectVariation, VariationSource};
use crate::error::{self, Error, Result};
use crate::mdp::{
    read_trajectory, write_trajectory, Environment, RewardMode, StochasticPolicy, Trajectory,
    Transition, FORMAT_VERSION,
};
use crate::par::{self, Execution};
use crate::seed;

/// Demonstrations per task when not configured otherwise.
pub const DEFAULT_DEMO_COUNT: usize = 25;
/// Per-step actuator noise amplitude when not configured otherwise.
pub const DEFAULT_NOISE: f64 = 0.1;

/// A hand-written state-feedback controller for one task.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScriptedExpert {
    kind: EnvKind,
}

pub fn scripted_expert(kind: EnvKind) -> ScriptedExpert {
    ScriptedExpert { kind }
}

impl ScriptedExpert {
    pub fn kind(&self) -> EnvKind {
        self.kind
    }

    /// Noiseless action for an observation of the expert's task.
    pub fn act(&self, obs: &[f64]) -> Vec<f64> {
        let mut a = match self.kind {
            EnvKind::Relocate => relocate_expert(obs),
            EnvKind::Pen => pen_expert(obs),
            EnvKind::Door => door_expert(obs),
            EnvKind::Hammer => hammer_expert(obs),
        };
        for x in &mut a {
            *x = x.clamp(-1.0, 1.0);
        }
        a
    }
}

/// The expert viewed as a deterministic policy (unit density at its action).
impl StochasticPolicy for ScriptedExpert {
    fn obs_dim(&self) -> usize {
        self.kind.state_dim()
    }

    fn action_dim(&self) -> usize {
        self.kind.action_dim()
    }

    fn mean_action(&self, observation: &[f64]) -> Vec<f64> {
        self.act(observation)
    }

    fn log_prob(&self, _observation: &[f64], _action: &[f64]) -> f64 {
        0.0
    }

    fn sample<R: Rng + ?Sized>(&self, observation: &[f64], _rng: &mut R) -> (Vec<f64>, f64) {
        (self.act(observation), 0.0)
    }
}

fn limit_norm(v: [f64; 2], max: f64) -> [f64; 2] {
    let n = v[0].hypot(v[1]);
    if n > max {
        [v[0] * max / n, v[1] * max / n]
    } else {
        v
    }
}

/// Experts close the grip this far out; grasping still needs contact.
const GRIP_ZONE: f64 = 0.25;

fn relocate_expert(o: &[f64]) -> Vec<f64> {
    let vel = [o[2], o[3]];
    let grasped = o[10] > 0.5;
    let (goal, limit) = if grasped {
        ([o[13], o[14]], 0.6)
    } else {
        ([o[11], o[12]], 1.0)
    };
    let cmd = limit_norm([6.0 * goal[0] - 0.8 * vel[0], 6.0 * goal[1] - 0.8 * vel[1]], limit);
    let near = goal[0].hypot(goal[1]) < GRIP_ZONE;
    let grip = if grasped || near { 1.0 } else { -1.0 };
    vec![cmd[0], cmd[1], grip]
}

fn pen_expert(o: &[f64]) -> Vec<f64> {
    let (omega, err) = (o[2], o[5]);
    let u = 2.0 * err - 0.5 * omega;
    vec![u, u]
}

fn door_expert(o: &[f64]) -> Vec<f64> {
    let latch = o[0];
    let push = if latch > 0.7 { 1.0 } else { 0.0 };
    vec![1.0, push]
}

const HOVER: f64 = 0.25;

fn hammer_expert(o: &[f64]) -> Vec<f64> {
    let vel = [o[2], o[3]];
    let wrist = o[4];
    if o[5] < 0.5 {
        let to = [o[6], o[7]];
        let cmd = limit_norm([4.0 * to[0] - 0.6 * vel[0], 4.0 * to[1] - 0.6 * vel[1]], 1.0);
        let grip = if to[0].hypot(to[1]) < GRIP_ZONE { 1.0 } else { -1.0 };
        return vec![cmd[0], cmd[1], grip, 0.0];
    }
    let dx = -o[10];
    let height = o[11];
    let cx = 4.0 * dx - 0.6 * vel[0];
    let cy = if dx.abs() > 0.02 {
        4.0 * (HOVER - height) - 0.6 * vel[1]
    } else if vel[1] < -0.05 || height > HOVER - 0.05 {
        -1.0
    } else {
        1.0
    };
    vec![cx, cy, 1.0, -3.0 * wrist]
}

/// Identity of the task a dataset was recorded on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemoFingerprint {
    pub env_kind: EnvKind,
    pub mass_scale: f64,
    pub size_scale: f64,
    pub format_version: u32,
}

impl DemoFingerprint {
    pub fn new(kind: EnvKind, variation: ObjectVariation) -> Self {
        DemoFingerprint {
            env_kind: kind,
            mass_scale: variation.mass_scale,
            size_scale: variation.size_scale,
            format_version: FORMAT_VERSION,
        }
    }
}

impl std::fmt::Display for DemoFingerprint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}(mass×{}, size×{}, v{})",
            self.env_kind, self.mass_scale, self.size_scale, self.format_version
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoDataset {
    pub fingerprint: DemoFingerprint,
    pub noise_amplitude: f64,
    pub trajectories: Vec<Trajectory>,
}

impl DemoDataset {
    pub fn n_transitions(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    /// All (state, action) pairs in recording order.
    pub fn transitions(&self) -> impl Iterator<Item = &Transition> {
        self.trajectories.iter().flat_map(|t| t.transitions.iter())
    }

    /// Fails unless the dataset was recorded on `kind` under `variation`.
    pub fn check_fingerprint(&self, kind: EnvKind, variation: ObjectVariation) -> Result<()> {
        let expected = DemoFingerprint::new(kind, variation);
        if self.fingerprint != expected {
            return Err(Error::Fingerprint {
                dataset: self.fingerprint.to_string(),
                expected: expected.to_string(),
            });
        }
        Ok(())
    }

    /// Like [`check_fingerprint`](Self::check_fingerprint), but for an
    /// ensemble the recorded variation only has to lie inside the ranges.
    pub fn check_source(&self, kind: EnvKind, source: &VariationSource) -> Result<()> {
        match source {
            VariationSource::Fixed(v) => self.check_fingerprint(kind, *v),
            VariationSource::Ensemble(r) => {
                let fp = &self.fingerprint;
                let inside = |x: f64, (lo, hi): (f64, f64)| lo <= x && x <= hi;
                if fp.env_kind != kind
                    || fp.format_version != FORMAT_VERSION
                    || !inside(fp.mass_scale, r.mass)
                    || !inside(fp.size_scale, r.size)
                {
                    return Err(Error::Fingerprint {
                        dataset: fp.to_string(),
                        expected: format!(
                            "{kind}(mass in [{}, {}], size in [{}, {}], v{FORMAT_VERSION})",
                            r.mass.0, r.mass.1, r.size.0, r.size.1
                        ),
                    });
                }
                Ok(())
            }
        }
    }
}

/// One expert episode with uniform actuator noise of the given amplitude.
pub fn expert_episode(
    kind: EnvKind,
    variation: ObjectVariation,
    noise_amplitude: f64,
    episode_seed: u64,
) -> Result<Trajectory> {
    let expert = scripted_expert(kind);
    let (mut env, mut obs) = envs::reset(kind, RewardMode::Sparse, variation, episode_seed)?;
    let mut rng = seed::rng(seed::derive(episode_seed, seed::stream::EXPERT_NOISE, 0));
    let mut transitions = Vec::new();
    let mut success = false;
    for _ in 0..kind.default_horizon() {
        let clean = expert.act(&obs);
        let action: Vec<f64> = clean
            .iter()
            .map(|a| {
                let n = if noise_amplitude > 0.0 {
                    rng.gen_range(-noise_amplitude..=noise_amplitude)
                } else {
                    0.0
                };
                (a + n).clamp(-1.0, 1.0)
            })
            .collect();
        let out = env.step(&action)?;
        success |= out.success;
        let next = out.observation;
        transitions.push(Transition {
            state: std::mem::replace(&mut obs, next.clone()),
            action,
            next_state: next,
            reward: out.reward,
            log_prob: None,
            done: out.done,
        });
        if out.done {
            break;
        }
    }
    Ok(Trajectory {
        transitions,
        success,
        seed: episode_seed,
    })
}

/// Collects `n` successful noisy expert demonstrations by rejection sampling.
pub fn collect_demos(
    kind: EnvKind,
    variation: ObjectVariation,
    n: usize,
    noise_amplitude: f64,
    seed: u64,
    exec: Execution,
) -> Result<DemoDataset> {
    if n == 0 {
        return error::config("demo count must be at least 1");
    }
    if !(noise_amplitude >= 0.0 && noise_amplitude.is_finite()) {
        return error::config("noise amplitude must be finite and non-negative");
    }
    variation.validate()?;
    let cap = 50 * n;
    let chunk = n.max(8);
    let mut kept = Vec::with_capacity(n);
    let mut attempts = 0;
    while kept.len() < n {
        if attempts >= cap {
            return Err(Error::Collection(format!(
                "only {} of {n} successful demos after {attempts} attempts",
                kept.len()
            )));
        }
        let batch = chunk.min(cap - attempts);
        let start = attempts;
        let results = par::map_indexed(exec, batch, |i| {
            expert_episode(kind, variation, noise_amplitude, seed::derive(seed, seed::stream::DEMOS, (start + i) as u64))
        });
        for r in results {
            let traj = r?;
            attempts += 1;
            if traj.success && kept.len() < n {
                kept.push(traj);
            }
        }
        if attempts >= 20 && (kept.len() as f64) < 0.1 * attempts as f64 {
            return Err(Error::Collection(format!(
                "expert success rate {}/{attempts} is below 10% for {kind} at noise {noise_amplitude}",
                kept.len()
            )));
        }
    }
    Ok(DemoDataset {
        fingerprint: DemoFingerprint::new(kind, variation),
        noise_amplitude,
        trajectories: kept,
    })
}

/// Replays a trajectory's recorded actions from its recorded reset and
/// checks that states match exactly and the final state is a success.
pub fn replay_matches(dataset: &DemoDataset, traj: &Trajectory) -> Result<bool> {
    let variation = ObjectVariation::new(dataset.fingerprint.mass_scale, dataset.fingerprint.size_scale);
    let (mut env, mut obs) = envs::reset(dataset.fingerprint.env_kind, RewardMode::Sparse, variation, traj.seed)?;
    for t in &traj.transitions {
        if t.state != obs {
            return Ok(false);
        }
        obs = env.step(&t.action)?.observation;
        if t.next_state != obs {
            return Ok(false);
        }
    }
    Ok(env.oracle_success())
}

#[derive(Debug, Serialize, Deserialize)]
struct DemoHeader {
    fingerprint: DemoFingerprint,
    noise_amplitude: f64,
    n_trajectories: usize,
    n_transitions: usize,
    checksum: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_demos<W: Write>(mut w: W, dataset: &DemoDataset) -> Result<()> {
    let mut body = Vec::new();
    for t in &dataset.trajectories {
        write_trajectory(&mut body, t)?;
    }
    let header = DemoHeader {
        fingerprint: dataset.fingerprint,
        noise_amplitude: dataset.noise_amplitude,
        n_trajectories: dataset.trajectories.len(),
        n_transitions: dataset.n_transitions(),
        checksum: sha256_hex(&body),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    w.write_all(&body)?;
    Ok(())
}

pub fn read_demos<R: BufRead>(mut r: R) -> Result<DemoDataset> {
    let mut line = String::new();
    if r.read_line(&mut line)? == 0 {
        return Err(Error::Format("empty demo file".into()));
    }
    let header: DemoHeader = serde_json::from_str(line.trim_end())
        .map_err(|e| Error::Format(format!("bad demo header: {e}")))?;
    if header.fingerprint.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported demo format version {}",
            header.fingerprint.format_version
        )));
    }
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    let found = sha256_hex(&body);
    if found != header.checksum {
        return Err(Error::Checksum {
            expected: header.checksum,
            found,
        });
    }
    let mut cursor = body.as_slice();
    let mut trajectories = Vec::with_capacity(header.n_trajectories);
    while let Some(t) = read_trajectory(&mut cursor)? {
        if !t.success {
            return Err(Error::Format("demo file contains an unsuccessful trajectory".into()));
        }
        trajectories.push(t);
    }
    let dataset = DemoDataset {
        fingerprint: header.fingerprint,
        noise_amplitude: header.noise_amplitude,
        trajectories,
    };
    if dataset.trajectories.len() != header.n_trajectories || dataset.n_transitions() != header.n_transitions {
        return Err(Error::Format("demo counts disagree with header".into()));
    }
    Ok(dataset)
}

pub fn save_demos(dataset: &DemoDataset, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_demos(&mut buf, dataset)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_demos(path: &Path) -> Result<DemoDataset> {
    read_demos(BufReader::new(fs::File::open(path)?))
}
