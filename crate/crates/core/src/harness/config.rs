//! Flat `key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Lists are comma
//! separated. Every key is optional; unknown or repeated keys are errors.
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `env` | `relocate` | `relocate`, `pen`, `door` or `hammer` |
//! | `mass_scale`, `size_scale` | `1` | fixed object variation |
//! | `ensemble_mass`, `ensemble_size` | unset | `lo,hi`; either one turns on ensemble mode |
//! | `horizon` | task default | control steps per episode |
//! | `discount` | `0.995` | |
//! | `hidden` | `32,32` | hidden layer widths |
//! | `init_logstd` | `-0.5` | |
//! | `delta` | `0.05` | normalized step size |
//! | `cg_iters`, `cg_residual_tol` | `25`, `1e-10` | |
//! | `fisher_damping` | `0.01` | |
//! | `solver` | `cr` | `cg` or `cr` |
//! | `traj_per_iter`, `max_iters` | `20`, `100` | |
//! | `gae_lambda` | `0.97` | |
//! | `n_eval`, `eval_every` | `100`, `1` | deterministic evaluation rollouts |
//! | `lambda0`, `lambda1` | `0.1`, `0.95` | demo weight schedule |
//! | `bc_epochs`, `bc_step_size`, `bc_batch` | `300`, `0.003`, `64` | |
//! | `bc_optimizer` | `adam` | `adam` or `sgd` |
//! | `bc_train_logstd` | `true` | |
//! | `n_demos`, `demo_noise`, `demo_seed` | `25`, `0.1`, `0` | collected when `demos` is unset |
//! | `demos` | unset | path of a saved demo file |
//! | `conditions` | all four | `npg-sparse,npg-shaped,bc-only,dapg-sparse` |
//! | `seeds` | `0,1,2,3,4` | |
//! | `success_threshold` | `0.9` | |
//! | `traj_seconds` | `horizon·dt` | trajectory length used for robot time |
//! | `output` | `experiment` | run directory below the output root |
//! | `execution` | `parallel` | `parallel` or `sequential` |

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::dapg::{BcConfig, DapgConfig};
use crate::envs::{EnsembleRanges, EnvConfig, EnvKind, ObjectVariation, VariationSource};
use crate::error::{self, Error, Result};
use crate::mdp::{RewardMode, DT};
use crate::npg::NpgConfig;
use crate::par::Execution;
use crate::policy::PolicyManifest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Condition {
    NpgSparse,
    NpgShaped,
    BcOnly,
    DapgSparse,
}

impl Condition {
    pub const ALL: [Condition; 4] = [
        Condition::NpgSparse,
        Condition::NpgShaped,
        Condition::BcOnly,
        Condition::DapgSparse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Condition::NpgSparse => "npg-sparse",
            Condition::NpgShaped => "npg-shaped",
            Condition::BcOnly => "bc-only",
            Condition::DapgSparse => "dapg-sparse",
        }
    }

    pub fn reward_mode(self) -> RewardMode {
        match self {
            Condition::NpgShaped => RewardMode::Shaped,
            _ => RewardMode::Sparse,
        }
    }

    pub fn uses_demos(self) -> bool {
        matches!(self, Condition::BcOnly | Condition::DapgSparse)
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Condition::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown condition '{s}'")))
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub hidden: Vec<usize>,
    pub init_logstd: f64,
    pub dapg: DapgConfig,
    pub n_demos: usize,
    pub demo_noise: f64,
    pub demo_seed: u64,
    pub demo_path: Option<PathBuf>,
    pub conditions: Vec<Condition>,
    pub seeds: Vec<u64>,
    pub success_threshold: f64,
    pub traj_seconds: f64,
    pub output: PathBuf,
    pub execution: Execution,
}

impl ExperimentConfig {
    pub fn new(kind: EnvKind) -> Self {
        let env = EnvConfig::new(kind, RewardMode::Sparse);
        ExperimentConfig {
            traj_seconds: env.horizon as f64 * DT,
            env,
            hidden: vec![32, 32],
            init_logstd: -0.5,
            dapg: DapgConfig::default(),
            n_demos: crate::demos::DEFAULT_DEMO_COUNT,
            demo_noise: crate::demos::DEFAULT_NOISE,
            demo_seed: 0,
            demo_path: None,
            conditions: Condition::ALL.to_vec(),
            seeds: vec![0, 1, 2, 3, 4],
            success_threshold: 0.9,
            output: PathBuf::from("experiment"),
            execution: Execution::default(),
        }
    }

    pub fn npg(&self) -> &NpgConfig {
        &self.dapg.npg
    }

    pub fn manifest(&self) -> PolicyManifest {
        PolicyManifest::new(self.env.kind.state_dim(), self.hidden.clone(), self.env.kind.action_dim())
    }

    /// The environment as trained under `condition`.
    pub fn env_for(&self, condition: Condition) -> EnvConfig {
        EnvConfig {
            reward_mode: condition.reward_mode(),
            ..self.env.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.dapg.validate()?;
        if self.hidden.contains(&0) {
            return error::config("hidden layer widths must be positive");
        }
        if self.seeds.is_empty() {
            return error::config("at least one seed is required");
        }
        if self.conditions.is_empty() {
            return error::config("at least one condition is required");
        }
        if !(self.success_threshold > 0.0 && self.success_threshold <= 1.0) {
            return error::config("success_threshold must lie in (0, 1]");
        }
        if self.n_demos == 0 {
            return error::config("n_demos must be at least 1");
        }
        if !(self.demo_noise >= 0.0) {
            return error::config("demo_noise must be non-negative");
        }
        if !(self.traj_seconds >= 0.0) {
            return error::config("traj_seconds must be non-negative");
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        let mut seen = HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return error::config(format!("line {}: expected key = value", lineno + 1));
            };
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) {
                return error::config(format!("line {}: duplicate key '{k}'", lineno + 1));
            }
            pairs.push((k.to_string(), v.to_string()));
        }

        let env_kind = match pairs.iter().find(|(k, _)| k == "env") {
            Some((_, v)) => v.parse()?,
            None => EnvKind::Relocate,
        };
        let mut cfg = ExperimentConfig::new(env_kind);
        let mut variation = ObjectVariation::default();
        let mut ensemble_mass = None;
        let mut ensemble_size = None;
        let mut traj_seconds = None;
        for (k, v) in &pairs {
            let npg = &mut cfg.dapg.npg;
            let bc: &mut BcConfig = &mut cfg.dapg.bc;
            match k.as_str() {
                "env" => {}
                "mass_scale" => variation.mass_scale = num(k, v)?,
                "size_scale" => variation.size_scale = num(k, v)?,
                "ensemble_mass" => ensemble_mass = Some(pair(k, v)?),
                "ensemble_size" => ensemble_size = Some(pair(k, v)?),
                "horizon" => cfg.env.horizon = num(k, v)?,
                "discount" => cfg.env.discount = num(k, v)?,
                "hidden" => cfg.hidden = list(k, v)?,
                "init_logstd" => cfg.init_logstd = num(k, v)?,
                "delta" => npg.delta = num(k, v)?,
                "cg_iters" => npg.cg_iters = num(k, v)?,
                "cg_residual_tol" => npg.cg_residual_tol = num(k, v)?,
                "fisher_damping" => npg.fisher_damping = num(k, v)?,
                "solver" => npg.solver = v.parse()?,
                "traj_per_iter" => npg.traj_per_iter = num(k, v)?,
                "max_iters" => npg.max_iters = num(k, v)?,
                "gae_lambda" => npg.gae_lambda = num(k, v)?,
                "n_eval" => npg.n_eval = num(k, v)?,
                "eval_every" => npg.eval_every = num(k, v)?,
                "lambda0" => cfg.dapg.lambda0 = num(k, v)?,
                "lambda1" => cfg.dapg.lambda1 = num(k, v)?,
                "bc_epochs" => bc.epochs = num(k, v)?,
                "bc_step_size" => bc.step_size = num(k, v)?,
                "bc_batch" => bc.batch_size = num(k, v)?,
                "bc_optimizer" => bc.optimizer = v.parse()?,
                "bc_train_logstd" => bc.train_logstd = num(k, v)?,
                "n_demos" => cfg.n_demos = num(k, v)?,
                "demo_noise" => cfg.demo_noise = num(k, v)?,
                "demo_seed" => cfg.demo_seed = num(k, v)?,
                "demos" => cfg.demo_path = Some(PathBuf::from(v)),
                "conditions" => {
                    cfg.conditions = v
                        .split(',')
                        .map(|c| c.trim().parse())
                        .collect::<Result<Vec<Condition>>>()?
                }
                "seeds" => cfg.seeds = list(k, v)?,
                "success_threshold" => cfg.success_threshold = num(k, v)?,
                "traj_seconds" => traj_seconds = Some(num(k, v)?),
                "output" => cfg.output = PathBuf::from(v),
                "execution" => {
                    cfg.execution = match v.as_str() {
                        "parallel" => Execution::Parallel,
                        "sequential" => Execution::Sequential,
                        _ => return error::config(format!("execution: unknown mode '{v}'")),
                    }
                }
                _ => return error::config(format!("unknown key '{k}'")),
            }
        }
        cfg.env.variation = match (ensemble_mass, ensemble_size) {
            (None, None) => VariationSource::Fixed(variation),
            (m, s) => VariationSource::Ensemble(EnsembleRanges {
                mass: m.unwrap_or((variation.mass_scale, variation.mass_scale)),
                size: s.unwrap_or((variation.size_scale, variation.size_scale)),
            }),
        };
        cfg.traj_seconds = traj_seconds.unwrap_or(cfg.env.horizon as f64 * DT);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Renders the configuration back into the file format.
    pub fn to_text(&self) -> String {
        let npg = self.npg();
        let bc = &self.dapg.bc;
        let join = |xs: &[String]| xs.join(",");
        let mut lines = vec![format!("env = {}", self.env.kind)];
        match &self.env.variation {
            VariationSource::Fixed(v) => {
                lines.push(format!("mass_scale = {}", v.mass_scale));
                lines.push(format!("size_scale = {}", v.size_scale));
            }
            VariationSource::Ensemble(r) => {
                lines.push(format!("ensemble_mass = {},{}", r.mass.0, r.mass.1));
                lines.push(format!("ensemble_size = {},{}", r.size.0, r.size.1));
            }
        }
        lines.extend([
            format!("horizon = {}", self.env.horizon),
            format!("discount = {}", self.env.discount),
            format!("hidden = {}", join(&self.hidden.iter().map(usize::to_string).collect::<Vec<_>>())),
            format!("init_logstd = {}", self.init_logstd),
            format!("delta = {}", npg.delta),
            format!("cg_iters = {}", npg.cg_iters),
            format!("cg_residual_tol = {:e}", npg.cg_residual_tol),
            format!("fisher_damping = {:e}", npg.fisher_damping),
            format!(
                "solver = {}",
                match npg.solver {
                    crate::npg::KrylovSolver::ConjugateGradient => "cg",
                    crate::npg::KrylovSolver::ConjugateResidual => "cr",
                }
            ),
            format!("traj_per_iter = {}", npg.traj_per_iter),
            format!("max_iters = {}", npg.max_iters),
            format!("gae_lambda = {}", npg.gae_lambda),
            format!("n_eval = {}", npg.n_eval),
            format!("eval_every = {}", npg.eval_every),
            format!("lambda0 = {}", self.dapg.lambda0),
            format!("lambda1 = {}", self.dapg.lambda1),
            format!("bc_epochs = {}", bc.epochs),
            format!("bc_step_size = {}", bc.step_size),
            format!("bc_batch = {}", bc.batch_size),
            format!(
                "bc_optimizer = {}",
                match bc.optimizer {
                    crate::dapg::BcOptimizer::Sgd => "sgd",
                    crate::dapg::BcOptimizer::Adam => "adam",
                }
            ),
            format!("bc_train_logstd = {}", bc.train_logstd),
            format!("n_demos = {}", self.n_demos),
            format!("demo_noise = {}", self.demo_noise),
            format!("demo_seed = {}", self.demo_seed),
        ]);
        if let Some(p) = &self.demo_path {
            lines.push(format!("demos = {}", p.display()));
        }
        lines.extend([
            format!(
                "conditions = {}",
                join(&self.conditions.iter().map(|c| c.name().to_string()).collect::<Vec<_>>())
            ),
            format!("seeds = {}", join(&self.seeds.iter().map(u64::to_string).collect::<Vec<_>>())),
            format!("success_threshold = {}", self.success_threshold),
            format!("traj_seconds = {}", self.traj_seconds),
            format!("output = {}", self.output.display()),
            format!(
                "execution = {}",
                if self.execution.is_parallel() { "parallel" } else { "sequential" }
            ),
        ]);
        let mut s = lines.join("\n");
        s.push('\n');
        s
    }
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{v}'")))
}

fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|x| num(key, x.trim())).collect()
}

fn pair(key: &str, v: &str) -> Result<(f64, f64)> {
    match list::<f64>(key, v)?.as_slice() {
        [lo, hi] => Ok((*lo, *hi)),
        _ => error::config(format!("{key}: expected 'lo,hi'")),
    }
}
