//! Behavior-cloning pretraining and the demo-augmented policy gradient.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::demos::DemoDataset;
use crate::error::{self, Result};
use crate::mdp::{EpisodeSource, StochasticPolicy};
use crate::npg::{self, vanilla_policy_gradient, Augmentation, NpgConfig, TrainOutcome};
use crate::par::Execution;
use crate::policy::{GradientVector, PolicyParams, SampleBatch, ScoreMatrix};
use crate::seed::{self, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BcOptimizer {
    Sgd,
    Adam,
}

impl std::str::FromStr for BcOptimizer {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(BcOptimizer::Sgd),
            "adam" => Ok(BcOptimizer::Adam),
            _ => error::config(format!("unknown optimizer '{s}' (expected sgd or adam)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BcConfig {
    pub epochs: usize,
    pub step_size: f64,
    /// Mini-batch size; `0` means full batch.
    pub batch_size: usize,
    pub optimizer: BcOptimizer,
    /// Also fit the log-stds (otherwise they keep their initial values).
    pub train_logstd: bool,
}

impl Default for BcConfig {
    fn default() -> Self {
        BcConfig {
            epochs: 300,
            step_size: 3e-3,
            batch_size: 64,
            optimizer: BcOptimizer::Adam,
            train_logstd: true,
        }
    }
}

impl BcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return error::config("bc_epochs must be at least 1");
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return error::config("bc_step_size must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DapgConfig {
    pub npg: NpgConfig,
    pub lambda0: f64,
    pub lambda1: f64,
    pub bc: BcConfig,
}

impl Default for DapgConfig {
    fn default() -> Self {
        DapgConfig {
            npg: NpgConfig::default(),
            lambda0: 0.1,
            lambda1: 0.95,
            bc: BcConfig::default(),
        }
    }
}

impl DapgConfig {
    pub fn validate(&self) -> Result<()> {
        self.npg.validate()?;
        self.bc.validate()?;
        if !(self.lambda0 >= 0.0 && self.lambda0.is_finite()) {
            return error::config("lambda0 must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.lambda1) {
            return error::config("lambda1 must lie in [0, 1]");
        }
        Ok(())
    }
}

/// `λ0 · λ1^k · max Â`, clamped at zero.
pub fn demo_weight(k: usize, max_advantage: f64, lambda0: f64, lambda1: f64) -> f64 {
    let exp = i32::try_from(k).unwrap_or(i32::MAX);
    (lambda0 * lambda1.powi(exp) * max_advantage).max(0.0)
}

/// Mean on-policy term plus `w` times the mean demo score.
///
/// With `w == 0` the demo term is skipped entirely, so the result is the
/// vanilla gradient bit for bit.
pub fn augmented_gradient(
    on_policy: &ScoreMatrix,
    advantages: &[f64],
    demos: Option<&ScoreMatrix>,
    w: f64,
) -> GradientVector {
    let mut g = vanilla_policy_gradient(on_policy, advantages);
    if w != 0.0 {
        if let Some(d) = demos.filter(|d| d.rows() > 0) {
            for (g, m) in g.iter_mut().zip(d.mean()) {
                *g += w * m;
            }
        }
    }
    g
}

/// `(s, a)` pairs of every demonstration transition.
pub fn demo_batch(demos: &DemoDataset) -> SampleBatch {
    let mut b = SampleBatch::default();
    for t in demos.transitions() {
        b.push(t.state.clone(), t.action.clone());
    }
    b
}

/// Mean negative log-likelihood of the batch under `params`.
pub fn mean_nll(params: &PolicyParams, batch: &SampleBatch) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    let total: f64 = batch
        .observations
        .iter()
        .zip(&batch.actions)
        .map(|(o, a)| params.log_prob(o, a))
        .sum();
    -total / batch.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct BcReport {
    pub params: PolicyParams,
    pub initial_nll: f64,
    pub final_nll: f64,
    /// Mean NLL over the whole batch after each epoch.
    pub epoch_nll: Vec<f64>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// Ascent direction for gradient `g`, already scaled by `lr`.
    fn direction(&mut self, g: &[f64], lr: f64) -> Vec<f64> {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        g.iter()
            .enumerate()
            .map(|(i, g)| {
                self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * g;
                self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * g * g;
                lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS)
            })
            .collect()
    }
}

/// Maximum-likelihood fit of the policy to `batch` by mini-batch ascent.
pub fn behavior_clone(
    init: &PolicyParams,
    batch: &SampleBatch,
    cfg: &BcConfig,
    seed: u64,
    exec: Execution,
) -> Result<BcReport> {
    cfg.validate()?;
    if batch.is_empty() {
        return error::config("behavior cloning needs at least one demonstration sample");
    }
    let m = &init.manifest;
    if batch.observations.iter().any(|o| o.len() != m.obs_dim) || batch.actions.iter().any(|a| a.len() != m.action_dim)
    {
        return error::config(format!(
            "demonstrations do not match the {}->{} policy",
            m.obs_dim, m.action_dim
        ));
    }
    let mut params = init.clone();
    let initial_nll = mean_nll(&params, batch);
    let size = if cfg.batch_size == 0 { batch.len() } else { cfg.batch_size.min(batch.len()) };
    let logstd_at = m.logstd_offset();
    let mut adam = Adam::new(params.len());
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let mut epoch_nll = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        if size < batch.len() {
            order.shuffle(&mut seed::rng(seed::derive(seed, stream::BC_SHUFFLE, epoch as u64)));
        }
        for chunk in order.chunks(size) {
            let mut mb = SampleBatch::default();
            for &i in chunk {
                mb.push(batch.observations[i].clone(), batch.actions[i].clone());
            }
            let mut g = ScoreMatrix::build(&params, &mb, exec)?.mean();
            if !cfg.train_logstd {
                g[logstd_at..].fill(0.0);
            }
            let step = match cfg.optimizer {
                BcOptimizer::Sgd => g.iter().map(|g| cfg.step_size * g).collect(),
                BcOptimizer::Adam => adam.direction(&g, cfg.step_size),
            };
            params = params.stepped(&step);
        }
        epoch_nll.push(mean_nll(&params, batch));
    }
    let final_nll = *epoch_nll.last().expect("at least one epoch");
    Ok(BcReport {
        params,
        initial_nll,
        final_nll,
        epoch_nll,
    })
}

#[derive(Debug, Clone)]
pub struct DapgOutcome {
    pub bc: BcReport,
    pub train: TrainOutcome,
}

/// Behavior cloning on `demos`, then natural-gradient fine-tuning with the
/// decaying demonstration term.
pub fn train_dapg<S: EpisodeSource + ?Sized>(
    source: &S,
    demos: &DemoDataset,
    init: PolicyParams,
    cfg: &DapgConfig,
    seed: u64,
    exec: Execution,
) -> Result<DapgOutcome> {
    cfg.validate()?;
    source.accepts_demos(demos)?;
    let batch = demo_batch(demos);
    let bc = behavior_clone(&init, &batch, &cfg.bc, seed, exec)?;
    log::info!("behavior cloning: NLL {:.4} -> {:.4}", bc.initial_nll, bc.final_nll);
    fine_tune(source, &batch, bc, cfg, seed, exec)
}

/// The fine-tuning phase of [`train_dapg`], starting from a finished
/// behavior-cloning report.
pub fn fine_tune<S: EpisodeSource + ?Sized>(
    source: &S,
    demos: &SampleBatch,
    bc: BcReport,
    cfg: &DapgConfig,
    seed: u64,
    exec: Execution,
) -> Result<DapgOutcome> {
    cfg.validate()?;
    let aug = Augmentation {
        demos,
        lambda0: cfg.lambda0,
        lambda1: cfg.lambda1,
        bc_final_nll: Some(bc.final_nll),
    };
    let train = npg::train_loop(source, bc.params.clone(), &cfg.npg, seed, exec, Some(aug))?;
    Ok(DapgOutcome { bc, train })
}
