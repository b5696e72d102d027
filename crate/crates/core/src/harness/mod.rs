//! Experiment protocol: runs conditions across seeds, evaluates policies and
//! writes curves, summaries and robustness grids.
//!
//! A run directory looks like
//!
//! ```text
//! <root>/<output>/config.txt
//! <root>/<output>/demos.jsonl
//! <root>/<output>/summary.csv            one row per condition and seed
//! <root>/<output>/table.csv              one row per condition
//! <root>/<output>/<condition>/mean_curve.csv
//! <root>/<output>/<condition>/seed_<s>/curve.jsonl
//! <root>/<output>/<condition>/seed_<s>/policy.ckpt
//! <root>/<output>/<condition>/seed_<s>/bc.json   (bc-only, dapg-sparse)
//! <root>/<output>/<condition>/seed_<s>/error.txt (failed runs only)
//! ```
//!
//! Every file is a deterministic function of the configuration. Wall-clock
//! timings are logged and returned but never written.

pub mod config;

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use config::{Condition, ExperimentConfig};

use crate::dapg::{behavior_clone, demo_batch, fine_tune, BcReport};
use crate::demos::{collect_demos, load_demos, save_demos, DemoDataset};
use crate::envs::{EnvConfig, EnvKind, ObjectVariation, VariationSource};
use crate::error::{self, Error, Result};
use crate::mdp::{sample_trajectories, StochasticPolicy, Trajectory};
use crate::npg::{eval_seeds, train_npg, IterationRecord, LearningCurve};
use crate::par::Execution;
use crate::policy::PolicyParams;

/// Environment variable naming the directory that run outputs go under.
pub const OUTPUT_ROOT_VAR: &str = "DAPG_OUTPUT_ROOT";

/// `$DAPG_OUTPUT_ROOT`, or `runs` when unset.
pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_VAR)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// Resolves `path` against `root` unless it is already absolute.
pub fn under_root(root: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        root.join(path)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuccessReport {
    /// Success fraction when acting with the mean action.
    pub deterministic: f64,
    /// Success fraction when sampling actions.
    pub stochastic: f64,
    pub n_eval: usize,
}

/// Success rates over `n_eval` fresh resets of `env`.
///
/// Both modes use the same reset seeds.
pub fn evaluate_success<P: StochasticPolicy + ?Sized>(
    policy: &P,
    env: &EnvConfig,
    n_eval: usize,
    seed: u64,
    exec: Execution,
) -> Result<SuccessReport> {
    if n_eval == 0 {
        return error::config("n_eval must be at least 1");
    }
    check_dims(policy, env.kind)?;
    let seeds = eval_seeds(seed, 0, n_eval);
    let rate = |deterministic| -> Result<f64> {
        let trajs = sample_trajectories(env, policy, &seeds, deterministic, exec)?;
        Ok(fraction(&trajs))
    };
    Ok(SuccessReport {
        deterministic: rate(true)?,
        stochastic: rate(false)?,
        n_eval,
    })
}

fn fraction(trajs: &[Trajectory]) -> f64 {
    trajs.iter().filter(|t| t.success).count() as f64 / trajs.len().max(1) as f64
}

fn check_dims<P: StochasticPolicy + ?Sized>(policy: &P, kind: EnvKind) -> Result<()> {
    if policy.obs_dim() != kind.state_dim() || policy.action_dim() != kind.action_dim() {
        return error::input(format!(
            "policy is {}->{} but {kind} needs {}->{}",
            policy.obs_dim(),
            policy.action_dim(),
            kind.state_dim(),
            kind.action_dim()
        ));
    }
    Ok(())
}

/// Mean-action success over a mass × size grid of object variations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessGrid {
    pub masses: Vec<f64>,
    pub sizes: Vec<f64>,
    /// `success[i][j]` is the rate at `masses[i]`, `sizes[j]`.
    pub success: Vec<Vec<f64>>,
}

impl RobustnessGrid {
    pub fn mean(&self) -> f64 {
        let n = self.masses.len() * self.sizes.len();
        self.success.iter().flatten().sum::<f64>() / n as f64
    }

    /// Heatmap layout: a header row of sizes, then one row per mass.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "mass\\size")?;
        for s in &self.sizes {
            write!(w, ",{s}")?;
        }
        writeln!(w)?;
        for (m, row) in self.masses.iter().zip(&self.success) {
            write!(w, "{m}")?;
            for x in row {
                write!(w, ",{x}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Evaluates `policy` at every (mass, size) cell with `n_eval` rollouts.
///
/// Every cell uses the same reset seeds, so cells differ only through the
/// object variation. Axes are sorted and must be nonempty.
pub fn robustness_sweep<P: StochasticPolicy + ?Sized>(
    policy: &P,
    env: &EnvConfig,
    masses: &[f64],
    sizes: &[f64],
    n_eval: usize,
    seed: u64,
    exec: Execution,
) -> Result<RobustnessGrid> {
    if masses.is_empty() || sizes.is_empty() {
        return error::config("robustness grid axes must be nonempty");
    }
    if n_eval == 0 {
        return error::config("n_eval must be at least 1");
    }
    check_dims(policy, env.kind)?;
    let sorted = |xs: &[f64]| {
        let mut v = xs.to_vec();
        v.sort_by(f64::total_cmp);
        v
    };
    let (masses, sizes) = (sorted(masses), sorted(sizes));
    let seeds = eval_seeds(seed, 0, n_eval);
    let mut success = Vec::with_capacity(masses.len());
    for &m in &masses {
        let mut row = Vec::with_capacity(sizes.len());
        for &s in &sizes {
            let v = ObjectVariation::new(m, s);
            v.validate()?;
            let cell = env.clone().with_variation(v);
            row.push(fraction(&sample_trajectories(&cell, policy, &seeds, true, exec)?));
        }
        success.push(row);
    }
    Ok(RobustnessGrid {
        masses,
        sizes,
        success,
    })
}

/// Robot hours spent before reaching threshold at iteration `n`.
///
/// `None` (never reached) maps to infinity.
pub fn robot_hours(n: Option<usize>, traj_per_iter: usize, traj_seconds: f64) -> f64 {
    match n {
        Some(n) => n as f64 * traj_per_iter as f64 * traj_seconds / 3600.0,
        None => f64::INFINITY,
    }
}

/// Robot hours to threshold for one learning curve under `cfg`.
pub fn robot_time_report(curve: &LearningCurve, cfg: &ExperimentConfig) -> f64 {
    robot_hours(
        curve.iterations_to_threshold(cfg.success_threshold),
        cfg.npg().traj_per_iter,
        cfg.traj_seconds,
    )
}

/// Outcome of one condition on one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedResult {
    pub condition: Condition,
    pub seed: u64,
    /// First iteration at or above the threshold; `None` is the ∞ sentinel.
    pub n_to_threshold: Option<usize>,
    pub final_success: Option<f64>,
    pub robot_hours: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunTiming {
    pub condition: Condition,
    pub seed: u64,
    pub bc_seconds: Option<f64>,
    pub total_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSummary {
    pub rundir: PathBuf,
    pub results: Vec<SeedResult>,
    /// Wall-clock timings; empty when the summary was rebuilt from disk.
    pub timings: Vec<RunTiming>,
}

impl ExperimentSummary {
    pub fn get(&self, condition: Condition, seed: u64) -> Option<&SeedResult> {
        self.results.iter().find(|r| r.condition == condition && r.seed == seed)
    }

    pub fn curve_path(&self, condition: Condition, seed: u64) -> PathBuf {
        seed_dir(&self.rundir, condition, seed).join("curve.jsonl")
    }

    pub fn checkpoint_path(&self, condition: Condition, seed: u64) -> PathBuf {
        seed_dir(&self.rundir, condition, seed).join("policy.ckpt")
    }

    pub fn load_curve(&self, condition: Condition, seed: u64) -> Result<LearningCurve> {
        read_curve(&self.curve_path(condition, seed))
    }

    pub fn load_policy(&self, condition: Condition, seed: u64) -> Result<PolicyParams> {
        PolicyParams::load(&self.checkpoint_path(condition, seed))
    }
}

/// Behavior-cloning statistics saved next to a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BcSummary {
    pub initial_nll: f64,
    pub final_nll: f64,
    pub epochs: usize,
}

fn seed_dir(rundir: &Path, condition: Condition, seed: u64) -> PathBuf {
    rundir.join(condition.name()).join(format!("seed_{seed}"))
}

fn read_curve(path: &Path) -> Result<LearningCurve> {
    LearningCurve::read_jsonl(BufReader::new(fs::File::open(path)?))
}

/// Variation the demonstrations are recorded under: the fixed variation, or
/// the nominal object clamped into the ensemble ranges.
pub fn demo_variation(source: &VariationSource) -> ObjectVariation {
    match source {
        VariationSource::Fixed(v) => *v,
        VariationSource::Ensemble(r) => ObjectVariation::new(1.0_f64.clamp(r.mass.0, r.mass.1), 1.0_f64.clamp(r.size.0, r.size.1)),
    }
}

fn prepare_demos(cfg: &ExperimentConfig, rundir: &Path) -> Result<DemoDataset> {
    let demos = match &cfg.demo_path {
        Some(p) => load_demos(p)?,
        None => {
            let d = collect_demos(
                cfg.env.kind,
                demo_variation(&cfg.env.variation),
                cfg.n_demos,
                cfg.demo_noise,
                cfg.demo_seed,
                cfg.execution,
            )?;
            save_demos(&d, &rundir.join("demos.jsonl"))?;
            d
        }
    };
    demos.check_source(cfg.env.kind, &cfg.env.variation)?;
    Ok(demos)
}

struct SeedRun {
    curve: LearningCurve,
    params: PolicyParams,
    bc: Option<BcReport>,
    bc_seconds: Option<f64>,
}

fn run_seed(cfg: &ExperimentConfig, condition: Condition, seed: u64, demos: Option<&DemoDataset>) -> Result<SeedRun> {
    let env = cfg.env_for(condition);
    let init = PolicyParams::init(cfg.manifest(), cfg.init_logstd, seed);
    let exec = cfg.execution;
    let need_demos = || demos.ok_or_else(|| Error::Config("demonstrations are unavailable".into()));
    match condition {
        Condition::NpgSparse | Condition::NpgShaped => {
            let out = train_npg(&env, init, cfg.npg(), seed, exec)?;
            Ok(SeedRun {
                curve: out.curve,
                params: out.params,
                bc: None,
                bc_seconds: None,
            })
        }
        Condition::DapgSparse => {
            let t = Instant::now();
            let batch = demo_batch(need_demos()?);
            let bc = behavior_clone(&init, &batch, &cfg.dapg.bc, seed, exec)?;
            let bc_seconds = t.elapsed().as_secs_f64();
            let out = fine_tune(&env, &batch, bc, &cfg.dapg, seed, exec)?;
            Ok(SeedRun {
                curve: out.train.curve,
                params: out.train.params,
                bc: Some(out.bc),
                bc_seconds: Some(bc_seconds),
            })
        }
        Condition::BcOnly => {
            let t = Instant::now();
            let bc = behavior_clone(&init, &demo_batch(need_demos()?), &cfg.dapg.bc, seed, exec)?;
            let bc_seconds = t.elapsed().as_secs_f64();
            let record = bc_only_record(&env, &bc.params, cfg, seed, bc.final_nll)?;
            Ok(SeedRun {
                curve: LearningCurve { records: vec![record] },
                params: bc.params.clone(),
                bc: Some(bc),
                bc_seconds: Some(bc_seconds),
            })
        }
    }
}

/// The single iteration-0 entry of a behavior-cloning-only curve.
fn bc_only_record(
    env: &EnvConfig,
    params: &PolicyParams,
    cfg: &ExperimentConfig,
    seed: u64,
    bc_final_nll: f64,
) -> Result<IterationRecord> {
    let seeds = eval_seeds(seed, 0, cfg.npg().n_eval);
    let det = sample_trajectories(env, params, &seeds, true, cfg.execution)?;
    let stoch = sample_trajectories(env, params, &seeds, false, cfg.execution)?;
    let mean_return = stoch.iter().map(Trajectory::total_reward).sum::<f64>() / stoch.len() as f64;
    Ok(IterationRecord {
        iter: 0,
        mean_return,
        success_rate: Some(fraction(&det)),
        stochastic_success_rate: fraction(&stoch),
        g_norm: 0.0,
        g_fx: 0.0,
        kl_proxy: 0.0,
        cg_residual: 0.0,
        cg_iters: 0,
        skipped: true,
        wall_time: 0.0,
        samples: 0,
        max_advantage: None,
        w_k: None,
        bc_final_nll: Some(bc_final_nll),
    })
}

fn write_seed(dir: &Path, run: &SeedRun) -> Result<()> {
    let mut buf = Vec::new();
    run.curve.write_jsonl(&mut buf)?;
    fs::write(dir.join("curve.jsonl"), buf)?;
    run.params.save(&dir.join("policy.ckpt"))?;
    if let Some(bc) = &run.bc {
        let s = BcSummary {
            initial_nll: bc.initial_nll,
            final_nll: bc.final_nll,
            epochs: bc.epoch_nll.len(),
        };
        fs::write(dir.join("bc.json"), serde_json::to_string_pretty(&s)? + "\n")?;
    }
    Ok(())
}

fn remove_if_present(path: &Path) -> Result<()> {
    match fs::remove_file(path) {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(e.into()),
        _ => Ok(()),
    }
}

/// Runs every configured condition on every seed below `root`.
///
/// A failing condition or seed is recorded in its `error.txt` and the
/// remaining runs continue. Errors that prevent any output (bad config,
/// unwritable directory) are returned.
pub fn run_experiment(cfg: &ExperimentConfig, root: &Path) -> Result<ExperimentSummary> {
    cfg.validate()?;
    let rundir = under_root(root, &cfg.output);
    fs::create_dir_all(&rundir)?;
    fs::write(rundir.join("config.txt"), cfg.to_text())?;

    let demos = if cfg.conditions.iter().any(|c| c.uses_demos()) {
        let d = prepare_demos(cfg, &rundir);
        if let Err(e) = &d {
            log::error!("demonstrations: {e}");
        }
        Some(d.map_err(|e| e.to_string()))
    } else {
        None
    };

    let mut timings = Vec::new();
    for &condition in &cfg.conditions {
        for &seed in &cfg.seeds {
            let dir = seed_dir(&rundir, condition, seed);
            fs::create_dir_all(&dir)?;
            log::info!("{condition} seed {seed}: start");
            let t = Instant::now();
            let outcome = match (&demos, condition.uses_demos()) {
                (Some(Err(msg)), true) => Err(Error::Collection(msg.clone())),
                (Some(Ok(d)), true) => run_seed(cfg, condition, seed, Some(d)),
                _ => run_seed(cfg, condition, seed, None),
            };
            let total_seconds = t.elapsed().as_secs_f64();
            match outcome {
                Ok(run) => {
                    write_seed(&dir, &run)?;
                    remove_if_present(&dir.join("error.txt"))?;
                    log::info!(
                        "{condition} seed {seed}: N = {:?}, final success {:?}, {total_seconds:.1}s",
                        run.curve.iterations_to_threshold(cfg.success_threshold),
                        run.curve.final_success()
                    );
                    timings.push(RunTiming {
                        condition,
                        seed,
                        bc_seconds: run.bc_seconds,
                        total_seconds,
                    });
                }
                Err(e) => {
                    log::error!("{condition} seed {seed}: {e}");
                    for f in ["curve.jsonl", "policy.ckpt", "bc.json"] {
                        remove_if_present(&dir.join(f))?;
                    }
                    fs::write(dir.join("error.txt"), format!("{e}\n"))?;
                }
            }
        }
    }
    let mut summary = summarize(cfg, &rundir)?;
    summary.timings = timings;
    Ok(summary)
}

/// Rebuilds `summary.csv`, `table.csv` and the mean curves of a run
/// directory from its stored config and curves.
pub fn report(rundir: &Path) -> Result<ExperimentSummary> {
    let cfg = ExperimentConfig::load(&rundir.join("config.txt"))?;
    summarize(&cfg, rundir)
}

fn summarize(cfg: &ExperimentConfig, rundir: &Path) -> Result<ExperimentSummary> {
    let mut results = Vec::new();
    let mut curves: BTreeMap<&'static str, Vec<LearningCurve>> = BTreeMap::new();
    for &condition in &cfg.conditions {
        for &seed in &cfg.seeds {
            let dir = seed_dir(rundir, condition, seed);
            let curve_path = dir.join("curve.jsonl");
            let loaded = if curve_path.exists() {
                read_curve(&curve_path).map_err(|e| e.to_string())
            } else {
                match fs::read_to_string(dir.join("error.txt")) {
                    Ok(msg) => Err(msg.trim().to_string()),
                    Err(_) => Err("missing curve".to_string()),
                }
            };
            let result = match loaded {
                Ok(curve) => {
                    let n = curve.iterations_to_threshold(cfg.success_threshold);
                    let r = SeedResult {
                        condition,
                        seed,
                        n_to_threshold: n,
                        final_success: curve.final_success(),
                        robot_hours: robot_hours(n, cfg.npg().traj_per_iter, cfg.traj_seconds),
                        error: None,
                    };
                    curves.entry(condition.name()).or_default().push(curve);
                    r
                }
                Err(msg) => SeedResult {
                    condition,
                    seed,
                    n_to_threshold: None,
                    final_success: None,
                    robot_hours: f64::INFINITY,
                    error: Some(msg),
                },
            };
            results.push(result);
        }
    }

    let mut csv = String::from("condition,seed,status,n_to_threshold,robot_hours,final_success\n");
    for r in &results {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.condition,
            r.seed,
            if r.error.is_some() { "error" } else { "ok" },
            fmt_n(r.n_to_threshold),
            r.robot_hours,
            r.final_success.map(|s| s.to_string()).unwrap_or_default()
        ));
    }
    fs::write(rundir.join("summary.csv"), csv)?;

    let mut table = String::from("condition,seeds,ok,reached,median_n,median_robot_hours\n");
    for &condition in &cfg.conditions {
        let rows: Vec<&SeedResult> = results.iter().filter(|r| r.condition == condition).collect();
        let ok = rows.iter().filter(|r| r.error.is_none()).count();
        let reached = rows.iter().filter(|r| r.n_to_threshold.is_some()).count();
        let median = median_n(rows.iter().map(|r| r.n_to_threshold));
        table.push_str(&format!(
            "{condition},{},{ok},{reached},{},{}\n",
            rows.len(),
            fmt_n(median),
            robot_hours(median, cfg.npg().traj_per_iter, cfg.traj_seconds)
        ));
    }
    fs::write(rundir.join("table.csv"), table)?;

    for &condition in &cfg.conditions {
        if let Some(cs) = curves.get(condition.name()) {
            fs::write(rundir.join(condition.name()).join("mean_curve.csv"), mean_curve_csv(cs))?;
        }
    }
    Ok(ExperimentSummary {
        rundir: rundir.to_path_buf(),
        results,
        timings: Vec::new(),
    })
}

fn fmt_n(n: Option<usize>) -> String {
    n.map(|n| n.to_string()).unwrap_or_else(|| "inf".into())
}

/// Lower median with never-reached runs ordered last.
fn median_n(ns: impl Iterator<Item = Option<usize>>) -> Option<usize> {
    let mut v: Vec<Option<usize>> = ns.collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by_key(|n| n.unwrap_or(usize::MAX));
    v[(v.len() - 1) / 2]
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-iteration mean and population std across seeds.
fn mean_curve_csv(curves: &[LearningCurve]) -> String {
    let mut by_iter: BTreeMap<usize, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for c in curves {
        for r in &c.records {
            let e = by_iter.entry(r.iter).or_default();
            e.0.push(r.mean_return);
            if let Some(s) = r.success_rate {
                e.1.push(s);
            }
        }
    }
    let mut out = String::from("iter,seeds,return_mean,return_std,success_mean,success_std\n");
    for (iter, (ret, succ)) in by_iter {
        let (rm, rs) = mean_std(&ret);
        let (sm, ss) = if succ.is_empty() {
            (String::new(), String::new())
        } else {
            let (m, s) = mean_std(&succ);
            (m.to_string(), s.to_string())
        };
        out.push_str(&format!("{iter},{},{rm},{rs},{sm},{ss}\n", ret.len()));
    }
    out
}
