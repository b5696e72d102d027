use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use dapg::demos::scripted_expert;
use dapg::envs::{EnvConfig, EnvKind, ObjectVariation};
use dapg::harness::{
    evaluate_success, report, robot_time_report, robustness_sweep, run_experiment, Condition, ExperimentConfig,
};
use dapg::mdp::RewardMode;
use dapg::par::Execution;
use dapg::policy::{PolicyManifest, PolicyParams};
use dapg::Error;

const EXEC: Execution = Execution::Parallel;

fn random_policy(kind: EnvKind) -> PolicyParams {
    PolicyParams::init(PolicyManifest::new(kind.state_dim(), vec![32, 32], kind.action_dim()), -0.5, 0)
}

fn tiny(extra: &str) -> ExperimentConfig {
    ExperimentConfig::parse(&format!(
        "env = pen\nhidden = 8\nmax_iters = 2\ntraj_per_iter = 4\nn_eval = 5\nbc_epochs = 5\nn_demos = 3\nseeds = 0\n{extra}"
    ))
    .unwrap()
}

/// Every file below `dir`, keyed by relative path.
fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn scripted_experts_pass_evaluation() {
    for kind in EnvKind::ALL {
        let env = EnvConfig::new(kind, RewardMode::Sparse);
        let r = evaluate_success(&scripted_expert(kind), &env, 100, 0, EXEC).unwrap();
        assert!(r.deterministic >= 0.95, "{kind}: {r:?}");
    }
}

#[test]
fn random_policy_fails_sparse_relocate() {
    let env = EnvConfig::new(EnvKind::Relocate, RewardMode::Sparse);
    let r = evaluate_success(&random_policy(EnvKind::Relocate), &env, 100, 1, EXEC).unwrap();
    assert!(r.deterministic <= 0.05 && r.stochastic <= 0.05, "{r:?}");
}

#[test]
fn evaluation_sample_size_edges() {
    let env = EnvConfig::new(EnvKind::Pen, RewardMode::Sparse);
    let p = random_policy(EnvKind::Pen);
    let r = evaluate_success(&p, &env, 1, 2, EXEC).unwrap();
    assert!(r.deterministic == 0.0 || r.deterministic == 1.0);
    assert!(r.stochastic == 0.0 || r.stochastic == 1.0);
    assert!(matches!(evaluate_success(&p, &env, 0, 2, EXEC), Err(Error::Config(_))));
    let wrong = EnvConfig::new(EnvKind::Relocate, RewardMode::Sparse);
    assert!(matches!(evaluate_success(&p, &wrong, 5, 2, EXEC), Err(Error::Input(_))));
}

#[test]
fn sweep_at_a_cell_matches_direct_evaluation() {
    let kind = EnvKind::Relocate;
    let expert = scripted_expert(kind);
    let env = EnvConfig::new(kind, RewardMode::Sparse);
    let grid = robustness_sweep(&expert, &env, &[2.0, 0.5, 1.0], &[1.2, 0.8], 40, 3, EXEC).unwrap();
    assert_eq!(grid.masses, vec![0.5, 1.0, 2.0]);
    assert_eq!(grid.sizes, vec![0.8, 1.2]);
    assert_eq!(grid.success.len(), 3);
    assert!(grid.success.iter().all(|row| row.len() == 2));
    assert!(grid.success.iter().flatten().all(|x| (0.0..=1.0).contains(x)));
    for (i, &m) in grid.masses.iter().enumerate() {
        for (j, &s) in grid.sizes.iter().enumerate() {
            let cell = env.clone().with_variation(ObjectVariation::new(m, s));
            let direct = evaluate_success(&expert, &cell, 40, 3, EXEC).unwrap().deterministic;
            assert_eq!(grid.success[i][j], direct);
        }
    }
}

#[test]
fn sweep_shapes_and_errors() {
    let kind = EnvKind::Door;
    let env = EnvConfig::new(kind, RewardMode::Sparse);
    let g = robustness_sweep(&scripted_expert(kind), &env, &[1.0], &[1.0], 5, 0, EXEC).unwrap();
    assert_eq!(g.success.len(), 1);
    assert_eq!(g.success[0].len(), 1);
    let mut csv = Vec::new();
    g.write_csv(&mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 2);
    assert!(matches!(
        robustness_sweep(&scripted_expert(kind), &env, &[], &[1.0], 5, 0, EXEC),
        Err(Error::Config(_))
    ));
    assert!(robustness_sweep(&scripted_expert(kind), &env, &[-1.0], &[1.0], 5, 0, EXEC).is_err());
}

#[test]
fn one_iteration_run_has_infinite_n() {
    let root = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::parse("env = relocate\nmax_iters = 1\ntraj_per_iter = 4\nn_eval = 10\nseeds = 7\nconditions = npg-sparse\n").unwrap();
    let summary = run_experiment(&cfg, root.path()).unwrap();
    let r = summary.get(Condition::NpgSparse, 7).unwrap();
    assert_eq!(r.n_to_threshold, None);
    assert_eq!(r.robot_hours, f64::INFINITY);
    let curve = summary.load_curve(Condition::NpgSparse, 7).unwrap();
    assert_eq!(curve.len(), 1);
    assert_eq!(robot_time_report(&curve, &cfg), f64::INFINITY);
    let csv = fs::read_to_string(summary.rundir.join("summary.csv")).unwrap();
    assert!(csv.contains("npg-sparse,7,ok,inf,inf,0"), "{csv}");
}

#[test]
fn failing_condition_does_not_stop_the_others() {
    let root = tempfile::tempdir().unwrap();
    let cfg = tiny("conditions = npg-sparse,dapg-sparse,bc-only\ndemos = /nonexistent/demos.jsonl\n");
    let summary = run_experiment(&cfg, root.path()).unwrap();
    assert!(summary.get(Condition::NpgSparse, 0).unwrap().error.is_none());
    for c in [Condition::DapgSparse, Condition::BcOnly] {
        assert!(summary.get(c, 0).unwrap().error.is_some());
        assert!(summary.rundir.join(c.name()).join("seed_0/error.txt").exists());
    }
    let rebuilt = report(&summary.rundir).unwrap();
    assert_eq!(rebuilt.results, summary.results);
}

#[test]
fn wrong_task_demo_file_is_recorded_as_a_fingerprint_failure() {
    let root = tempfile::tempdir().unwrap();
    let door = dapg::demos::collect_demos(EnvKind::Door, ObjectVariation::default(), 2, 0.1, 0, EXEC).unwrap();
    let path = root.path().join("door.jsonl");
    dapg::demos::save_demos(&door, &path).unwrap();
    let cfg = tiny(&format!("conditions = dapg-sparse\ndemos = {}\n", path.display()));
    let summary = run_experiment(&cfg, root.path()).unwrap();
    let err = summary.get(Condition::DapgSparse, 0).unwrap().error.clone().unwrap();
    assert!(err.contains("fingerprint"), "{err}");
}

#[test]
fn bc_only_curve_is_a_single_iteration_zero_entry() {
    let root = tempfile::tempdir().unwrap();
    let summary = run_experiment(&tiny("conditions = bc-only\n"), root.path()).unwrap();
    let curve = summary.load_curve(Condition::BcOnly, 0).unwrap();
    assert_eq!(curve.len(), 1);
    assert_eq!(curve.records[0].iter, 0);
    assert!(curve.records[0].bc_final_nll.is_some());
    assert!(summary.rundir.join("demos.jsonl").exists());
}

#[test]
fn outputs_are_deterministic_and_report_is_idempotent() {
    let mut cfg = tiny("");
    cfg.seeds = vec![0, 1];
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let sa = run_experiment(&cfg, a.path()).unwrap();
    run_experiment(&cfg, b.path()).unwrap();
    let snap = snapshot(&sa.rundir);
    assert_eq!(snap, snapshot(&b.path().join("experiment")));
    for c in Condition::ALL {
        assert!(snap.contains_key(&format!("{}/mean_curve.csv", c.name())));
        assert!(snap.contains_key(&format!("{}/seed_1/policy.ckpt", c.name())));
    }
    report(&sa.rundir).unwrap();
    report(&sa.rundir).unwrap();
    assert_eq!(snapshot(&sa.rundir), snap);
}

#[test]
fn invalid_config_is_rejected_before_any_output() {
    let root = tempfile::tempdir().unwrap();
    let mut cfg = tiny("");
    cfg.seeds.clear();
    assert!(matches!(run_experiment(&cfg, root.path()), Err(Error::Config(_))));
    assert!(fs::read_dir(root.path()).unwrap().next().is_none());
}
