//! Natural policy gradient: score-function gradient, Fisher preconditioning
//! by a Krylov solver, and the normalized update.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::baseline::{compute_advantages, fit_baseline, ValueFunction};
use crate::error::{self, Result};
use crate::mdp::{sample_trajectories, EpisodeSource, Trajectory, DT};
use crate::par::Execution;
use crate::policy::{GradientVector, PolicyParams, SampleBatch, ScoreMatrix};
use crate::seed::{self, stream};

/// Steps with `gᵀx` at or below this are skipped.
pub const DEGENERATE_GFX: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KrylovSolver {
    /// Classic conjugate gradient.
    ConjugateGradient,
    /// Conjugate residual: same cost per iteration, and the residual norm
    /// never increases.
    ConjugateResidual,
}

impl std::str::FromStr for KrylovSolver {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cg" | "conjugate-gradient" => Ok(KrylovSolver::ConjugateGradient),
            "cr" | "conjugate-residual" => Ok(KrylovSolver::ConjugateResidual),
            _ => error::config(format!("unknown solver '{s}' (expected cg or cr)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NpgConfig {
    /// Normalized step size.
    pub delta: f64,
    pub cg_iters: usize,
    pub cg_residual_tol: f64,
    pub fisher_damping: f64,
    pub solver: KrylovSolver,
    /// Trajectories sampled per iteration.
    pub traj_per_iter: usize,
    pub max_iters: usize,
    pub gae_lambda: f64,
    /// Deterministic evaluation rollouts per evaluated iteration.
    pub n_eval: usize,
    /// Evaluate every this many iterations (and always at the last one).
    pub eval_every: usize,
}

impl Default for NpgConfig {
    fn default() -> Self {
        NpgConfig {
            delta: 0.05,
            cg_iters: 25,
            cg_residual_tol: 1e-10,
            fisher_damping: 1e-2,
            solver: KrylovSolver::ConjugateResidual,
            traj_per_iter: 20,
            max_iters: 100,
            gae_lambda: 0.97,
            n_eval: 100,
            eval_every: 1,
        }
    }
}

impl NpgConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return error::config("delta must be positive");
        }
        if self.cg_iters == 0 {
            return error::config("cg_iters must be at least 1");
        }
        if !(self.cg_residual_tol > 0.0) {
            return error::config("cg_residual_tol must be positive");
        }
        if !(self.fisher_damping >= 0.0) {
            return error::config("fisher_damping must be non-negative");
        }
        if self.traj_per_iter == 0 {
            return error::config("traj_per_iter must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return error::config("gae_lambda must lie in [0, 1]");
        }
        if self.n_eval == 0 || self.eval_every == 0 {
            return error::config("n_eval and eval_every must be at least 1");
        }
        Ok(())
    }
}

/// `(1/n) Σ_i ∇ln π(a_i|s_i) · Â_i` over every sample in the batch.
pub fn vanilla_policy_gradient(scores: &ScoreMatrix, advantages: &[f64]) -> GradientVector {
    scores.weighted_mean(advantages)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub x: Vec<f64>,
    /// Residual norm before the first iteration and after each one.
    pub residual_norms: Vec<f64>,
}

impl SolveResult {
    pub fn residual(&self) -> f64 {
        *self.residual_norms.last().expect("initial residual recorded")
    }

    pub fn iterations(&self) -> usize {
        self.residual_norms.len() - 1
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += a * x);
}

/// Solves `A x = b` for symmetric positive-definite `A` given as a
/// matrix-vector product, starting from zero.
pub fn solve<F>(solver: KrylovSolver, avp: F, b: &[f64], max_iters: usize, tol: f64) -> SolveResult
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    match solver {
        KrylovSolver::ConjugateGradient => conjugate_gradient(avp, b, max_iters, tol),
        KrylovSolver::ConjugateResidual => conjugate_residual(avp, b, max_iters, tol),
    }
}

pub fn conjugate_gradient<F>(avp: F, b: &[f64], max_iters: usize, tol: f64) -> SolveResult
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let mut x = vec![0.0; b.len()];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut residual_norms = vec![rr.sqrt()];
    for _ in 0..max_iters {
        if rr.sqrt() <= tol {
            break;
        }
        let ap = avp(&p);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rr / pap;
        axpy(&mut x, alpha, &p);
        axpy(&mut r, -alpha, &ap);
        let rr_next = dot(&r, &r);
        residual_norms.push(rr_next.sqrt());
        let beta = rr_next / rr;
        rr = rr_next;
        p.iter_mut().zip(&r).for_each(|(p, r)| *p = r + beta * *p);
    }
    SolveResult { x, residual_norms }
}

pub fn conjugate_residual<F>(avp: F, b: &[f64], max_iters: usize, tol: f64) -> SolveResult
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let mut x = vec![0.0; b.len()];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut ar = avp(&r);
    let mut ap = ar.clone();
    let mut rar = dot(&r, &ar);
    let mut residual_norms = vec![dot(&r, &r).sqrt()];
    for _ in 0..max_iters {
        if residual_norms.last().copied().unwrap_or(0.0) <= tol {
            break;
        }
        let apap = dot(&ap, &ap);
        if apap <= 0.0 || rar <= 0.0 {
            break;
        }
        let alpha = rar / apap;
        axpy(&mut x, alpha, &p);
        axpy(&mut r, -alpha, &ap);
        residual_norms.push(dot(&r, &r).sqrt());
        ar = avp(&r);
        let rar_next = dot(&r, &ar);
        let beta = rar_next / rar;
        rar = rar_next;
        p.iter_mut().zip(&r).for_each(|(p, r)| *p = r + beta * *p);
        ap.iter_mut().zip(&ar).for_each(|(ap, ar)| *ap = ar + beta * *ap);
    }
    SolveResult { x, residual_norms }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub g_norm: f64,
    /// `gᵀx` with `x` the (damped) solve.
    pub g_fx: f64,
    pub cg_residual: f64,
    pub cg_iters: usize,
    /// `ΔθᵀFΔθ` under the undamped Fisher.
    pub kl_proxy: f64,
    pub step_norm: f64,
    pub skipped: bool,
}

/// One normalized natural-gradient step from on-policy scores and `g`.
pub fn natural_gradient_step(
    params: &PolicyParams,
    scores: &ScoreMatrix,
    g: &[f64],
    cfg: &NpgConfig,
) -> Result<(PolicyParams, StepDiagnostics)> {
    if g.len() != params.len() || scores.cols() != params.len() {
        return error::input("gradient and scores must match the parameter count");
    }
    let g_norm = dot(g, g).sqrt();
    if scores.rows() == 0 {
        log::warn!("empty on-policy batch; skipping update");
        return Ok((params.clone(), StepDiagnostics { g_norm, skipped: true, ..Default::default() }));
    }
    let sol = solve(
        cfg.solver,
        |v| scores.fvp(v, cfg.fisher_damping),
        g,
        cfg.cg_iters,
        cfg.cg_residual_tol,
    );
    let g_fx = dot(g, &sol.x);
    let mut diag = StepDiagnostics {
        g_norm,
        g_fx,
        cg_residual: sol.residual(),
        cg_iters: sol.iterations(),
        ..Default::default()
    };
    if !(g_fx > DEGENERATE_GFX) {
        log::warn!("degenerate natural-gradient step (gᵀx = {g_fx:e}); skipping update");
        diag.skipped = true;
        return Ok((params.clone(), diag));
    }
    let scale = (cfg.delta / g_fx).sqrt();
    let step: Vec<f64> = sol.x.iter().map(|x| scale * x).collect();
    diag.kl_proxy = dot(&step, &scores.fvp(&step, 0.0));
    diag.step_norm = dot(&step, &step).sqrt();
    Ok((params.stepped(&step), diag))
}

/// One line of a learning curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    /// Mean undiscounted return of the training batch.
    pub mean_return: f64,
    /// Mean-action success over fresh evaluation rollouts, when evaluated.
    pub success_rate: Option<f64>,
    /// Success fraction of the (stochastic) training batch.
    pub stochastic_success_rate: f64,
    pub g_norm: f64,
    #[serde(rename = "gFx")]
    pub g_fx: f64,
    pub kl_proxy: f64,
    pub cg_residual: f64,
    pub cg_iters: usize,
    pub skipped: bool,
    /// Cumulative simulated robot time of all training rollouts (s).
    pub wall_time: f64,
    pub samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_advantage: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_k: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bc_final_nll: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LearningCurve {
    pub records: Vec<IterationRecord>,
}

impl LearningCurve {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// First iteration whose evaluated success reaches `threshold`.
    pub fn iterations_to_threshold(&self, threshold: f64) -> Option<usize> {
        self.records
            .iter()
            .find(|r| r.success_rate.is_some_and(|s| s >= threshold))
            .map(|r| r.iter)
    }

    pub fn final_success(&self) -> Option<f64> {
        self.records.iter().rev().find_map(|r| r.success_rate)
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut records = Vec::new();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line)?);
        }
        Ok(LearningCurve { records })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub curve: LearningCurve,
    pub params: PolicyParams,
}

/// Episode seeds of training batch `iter`.
pub fn train_seeds(run_seed: u64, iter: usize, n: usize) -> Vec<u64> {
    let batch = seed::derive(run_seed, stream::TRAIN_BATCH, iter as u64);
    (0..n as u64).map(|i| seed::derive(batch, stream::TRAIN_BATCH, i)).collect()
}

/// Episode seeds of the evaluation after iteration `iter`.
pub fn eval_seeds(run_seed: u64, iter: usize, n: usize) -> Vec<u64> {
    let batch = seed::derive(run_seed, stream::EVAL, iter as u64);
    (0..n as u64).map(|i| seed::derive(batch, stream::EVAL, i)).collect()
}

/// Mean-action success rate over rollouts from `seeds`.
pub fn deterministic_success<S: EpisodeSource + ?Sized>(
    source: &S,
    params: &PolicyParams,
    seeds: &[u64],
    exec: Execution,
) -> Result<f64> {
    let trajs = sample_trajectories(source, params, seeds, true, exec)?;
    Ok(success_fraction(&trajs))
}

pub(crate) fn success_fraction(trajs: &[Trajectory]) -> f64 {
    if trajs.is_empty() {
        return 0.0;
    }
    trajs.iter().filter(|t| t.success).count() as f64 / trajs.len() as f64
}

pub(crate) fn batch_of(trajs: &[Trajectory]) -> SampleBatch {
    let mut b = SampleBatch::default();
    for t in trajs.iter().flat_map(|t| &t.transitions) {
        b.push(t.state.clone(), t.action.clone());
    }
    b
}

/// Demonstration term added to every iteration's gradient.
pub(crate) struct Augmentation<'a> {
    pub demos: &'a SampleBatch,
    pub lambda0: f64,
    pub lambda1: f64,
    pub bc_final_nll: Option<f64>,
}

/// Runs `cfg.max_iters` iterations of sample, advantage, step.
pub fn train_npg<S: EpisodeSource + ?Sized>(
    source: &S,
    init: PolicyParams,
    cfg: &NpgConfig,
    seed: u64,
    exec: Execution,
) -> Result<TrainOutcome> {
    train_loop(source, init, cfg, seed, exec, None)
}

pub(crate) fn train_loop<S: EpisodeSource + ?Sized>(
    source: &S,
    init: PolicyParams,
    cfg: &NpgConfig,
    seed: u64,
    exec: Execution,
    aug: Option<Augmentation<'_>>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let spec = source.spec();
    spec.validate()?;
    if init.manifest.obs_dim != spec.state_dim || init.manifest.action_dim != spec.action_dim {
        return error::config("policy dimensions do not match the environment");
    }
    let mut params = init;
    let mut value_fn = ValueFunction::Zero;
    let mut robot_time = 0.0;
    let mut curve = LearningCurve::default();
    for iter in 1..=cfg.max_iters {
        let trajs = sample_trajectories(source, &params, &train_seeds(seed, iter, cfg.traj_per_iter), false, exec)?;
        let samples: usize = trajs.iter().map(Trajectory::len).sum();
        robot_time += samples as f64 * DT;
        let adv = compute_advantages(&trajs, &value_fn, spec.discount, cfg.gae_lambda);
        value_fn = fit_baseline(&trajs, spec.discount, spec.horizon);
        let scores = ScoreMatrix::build(&params, &batch_of(&trajs), exec)?;

        let (g, w_k, max_advantage) = match &aug {
            None => (vanilla_policy_gradient(&scores, &adv.normalized), None, None),
            Some(a) => {
                let max_adv = adv.max_normalized().unwrap_or(0.0);
                let w = crate::dapg::demo_weight(iter - 1, max_adv, a.lambda0, a.lambda1);
                let demo_scores = if w != 0.0 {
                    Some(ScoreMatrix::build(&params, a.demos, exec)?)
                } else {
                    None
                };
                let g = crate::dapg::augmented_gradient(&scores, &adv.normalized, demo_scores.as_ref(), w);
                (g, Some(w), Some(max_adv))
            }
        };
        let (next, diag) = natural_gradient_step(&params, &scores, &g, cfg)?;
        params = next;

        let success_rate = if iter % cfg.eval_every == 0 || iter == cfg.max_iters {
            Some(deterministic_success(source, &params, &eval_seeds(seed, iter, cfg.n_eval), exec)?)
        } else {
            None
        };
        let mean_return = if trajs.is_empty() {
            0.0
        } else {
            trajs.iter().map(Trajectory::total_reward).sum::<f64>() / trajs.len() as f64
        };
        let record = IterationRecord {
            iter,
            mean_return,
            success_rate,
            stochastic_success_rate: success_fraction(&trajs),
            g_norm: diag.g_norm,
            g_fx: diag.g_fx,
            kl_proxy: diag.kl_proxy,
            cg_residual: diag.cg_residual,
            cg_iters: diag.cg_iters,
            skipped: diag.skipped,
            wall_time: robot_time,
            samples,
            max_advantage,
            w_k,
            bc_final_nll: aug.as_ref().and_then(|a| a.bc_final_nll),
        };
        log::debug!(
            "iter {iter}: return {:.3} success {:?} stochastic {:.2}",
            record.mean_return,
            record.success_rate,
            record.stochastic_success_rate
        );
        curve.records.push(record);
    }
    Ok(TrainOutcome { curve, params })
}
