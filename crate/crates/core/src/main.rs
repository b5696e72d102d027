use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dapg::demos::{collect_demos, save_demos};
use dapg::envs::{EnvConfig, EnvKind, ObjectVariation};
use dapg::harness::{
    self, evaluate_success, output_root, robustness_sweep, under_root, Condition, ExperimentConfig,
    ExperimentSummary,
};
use dapg::mdp::RewardMode;
use dapg::par::Execution;
use dapg::policy::PolicyParams;
use dapg::{Error, Result};

/// Natural policy gradient and demo-augmented training on manipulation tasks.
///
/// Outputs are written below $DAPG_OUTPUT_ROOT (default ./runs).
#[derive(Parser)]
#[command(name = "dapg", version)]
struct Cli {
    /// Run batch work on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a key = value config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Restrict to these conditions (repeatable).
        #[arg(long = "condition")]
        conditions: Vec<Condition>,
        /// Restrict to these seeds (repeatable).
        #[arg(long = "seed")]
        seeds: Vec<u64>,
    },
    /// Demonstration utilities.
    Demos {
        #[command(subcommand)]
        command: DemosCommand,
    },
    /// Success rates of a saved policy.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        task: TaskArgs,
        #[arg(long, default_value_t = 100)]
        n_eval: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Success over a mass × size grid, written as a CSV heatmap.
    Sweep {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        task: TaskArgs,
        /// Mass scales and size scales, e.g. `0.5,1,2:0.8,1,1.2`.
        #[arg(long)]
        grid: String,
        #[arg(long, default_value_t = 50)]
        n_eval: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV destination below the output root; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rebuild summaries and mean curves from a run directory.
    Report {
        /// Run directory, relative to the output root unless absolute.
        #[arg(long)]
        rundir: PathBuf,
    },
}

#[derive(Subcommand)]
enum DemosCommand {
    /// Record successful noisy expert demonstrations.
    Collect {
        #[arg(long)]
        env: EnvKind,
        #[arg(long, default_value_t = dapg::demos::DEFAULT_DEMO_COUNT)]
        n: usize,
        #[arg(long, default_value_t = dapg::demos::DEFAULT_NOISE)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        mass: f64,
        #[arg(long, default_value_t = 1.0)]
        size: f64,
        /// Destination below the output root.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct TaskArgs {
    #[arg(long)]
    env: EnvKind,
    #[arg(long, default_value = "sparse")]
    reward: RewardMode,
    #[arg(long, default_value_t = 1.0)]
    mass: f64,
    #[arg(long, default_value_t = 1.0)]
    size: f64,
    #[arg(long)]
    horizon: Option<usize>,
}

impl TaskArgs {
    fn env(&self) -> Result<EnvConfig> {
        let mut env = EnvConfig::new(self.env, self.reward).with_variation(ObjectVariation::new(self.mass, self.size));
        if let Some(h) = self.horizon {
            env.horizon = h;
        }
        env.validate()?;
        Ok(env)
    }
}

fn parse_axis(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad grid value '{x}'")))
        })
        .collect()
}

fn parse_grid(s: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let (m, z) = s
        .split_once(':')
        .ok_or_else(|| Error::Config("grid must look like 'm1,m2,..:s1,s2,..'".into()))?;
    Ok((parse_axis(m)?, parse_axis(z)?))
}

fn print_summary(summary: &ExperimentSummary) {
    println!("condition      seed  N        hours     final");
    for r in &summary.results {
        let n = r.n_to_threshold.map_or("inf".to_string(), |n| n.to_string());
        match &r.error {
            None => println!(
                "{:<14} {:<5} {:<8} {:<9.3} {}",
                r.condition.name(),
                r.seed,
                n,
                r.robot_hours,
                r.final_success.map_or("-".to_string(), |s| format!("{s:.2}"))
            ),
            Some(e) => println!("{:<14} {:<5} error: {e}", r.condition.name(), r.seed),
        }
    }
    for t in &summary.timings {
        if let Some(bc) = t.bc_seconds {
            println!("{} seed {}: behavior cloning took {bc:.1}s of {:.1}s", t.condition, t.seed, t.total_seconds);
        }
    }
    println!("results in {}", summary.rundir.display());
}

fn run(cli: Cli) -> Result<bool> {
    let exec = if cli.sequential { Execution::Sequential } else { Execution::Parallel };
    let root = output_root();
    match cli.command {
        Command::Train {
            config,
            conditions,
            seeds,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if !conditions.is_empty() {
                cfg.conditions = conditions;
            }
            if !seeds.is_empty() {
                cfg.seeds = seeds;
            }
            if cli.sequential {
                cfg.execution = Execution::Sequential;
            }
            let summary = harness::run_experiment(&cfg, &root)?;
            print_summary(&summary);
            Ok(summary.results.iter().all(|r| r.error.is_none()))
        }
        Command::Demos {
            command:
                DemosCommand::Collect {
                    env,
                    n,
                    noise,
                    seed,
                    mass,
                    size,
                    out,
                },
        } => {
            let data = collect_demos(env, ObjectVariation::new(mass, size), n, noise, seed, exec)?;
            let path = under_root(&root, &out);
            create_parent(&path)?;
            save_demos(&data, &path)?;
            println!(
                "{} demos ({} transitions) of {} written to {}",
                data.trajectories.len(),
                data.n_transitions(),
                data.fingerprint,
                path.display()
            );
            Ok(true)
        }
        Command::Eval {
            checkpoint,
            task,
            n_eval,
            seed,
        } => {
            let policy = PolicyParams::load(&checkpoint)?;
            let r = evaluate_success(&policy, &task.env()?, n_eval, seed, exec)?;
            println!("mean-action success {:.3}", r.deterministic);
            println!("stochastic success  {:.3}", r.stochastic);
            println!("rollouts            {}", r.n_eval);
            Ok(true)
        }
        Command::Sweep {
            checkpoint,
            task,
            grid,
            n_eval,
            seed,
            out,
        } => {
            let policy = PolicyParams::load(&checkpoint)?;
            let (masses, sizes) = parse_grid(&grid)?;
            let g = robustness_sweep(&policy, &task.env()?, &masses, &sizes, n_eval, seed, exec)?;
            match out {
                Some(p) => {
                    let path = under_root(&root, &p);
                    create_parent(&path)?;
                    let mut buf = Vec::new();
                    g.write_csv(&mut buf)?;
                    std::fs::write(&path, buf)?;
                    println!("grid mean {:.3}, written to {}", g.mean(), path.display());
                }
                None => g.write_csv(std::io::stdout().lock())?,
            }
            Ok(true)
        }
        Command::Report { rundir } => {
            let summary = harness::report(&under_root(&root, &rundir))?;
            print_summary(&summary);
            Ok(true)
        }
    }
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent() {
        std::fs::create_dir_all(p)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("some runs failed; see error.txt in their directories");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
