use super::*;

fn small(dir: &Path) -> ExperimentConfig {
    ExperimentConfig {
        iterations: 3,
        trajectories: 20,
        out: dir.to_path_buf(),
        ..ExperimentConfig::default()
    }
}

fn dir_bytes(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn defaults_match_documented_values() {
    let c = ExperimentConfig::default();
    assert_eq!(c.env.name, "target_matching");
    assert_eq!(c.env.params["m"], 12);
    assert_eq!(c.arms.len(), 2);
    assert!(!c.arms[0].baseline.is_action_dependent());
    assert!(c.arms[1].baseline.is_action_dependent());
    assert_eq!(c.trajectories, 150);
    assert_eq!(c.gamma, 0.995);
    assert_eq!(c.gae_lambda, Some(0.97));
    assert_eq!(c.seeds, vec![0, 1, 2, 3, 4]);
    c.validate().unwrap();
}

#[test]
fn empty_json_is_the_default_and_round_trips() {
    let c = ExperimentConfig::from_json("{}").unwrap();
    assert_eq!(c, ExperimentConfig::default());
    let text = serde_json::to_string(&c).unwrap();
    assert_eq!(ExperimentConfig::from_json(&text).unwrap(), c);
}

#[test]
fn unknown_fields_are_rejected() {
    assert!(ExperimentConfig::from_json(r#"{"iteratons": 5}"#).is_err());
}

#[test]
fn unknown_env_lists_valid_names() {
    let c = ExperimentConfig {
        env: EnvConfig {
            name: "cheetah".into(),
            params: empty_object(),
        },
        ..ExperimentConfig::default()
    };
    let msg = c.build_env(0).err().unwrap().to_string();
    for name in ["target_matching", "point_mass", "communicate_target_lite", "tabular"] {
        assert!(msg.contains(name), "{msg}");
    }
}

#[test]
fn validation_rejects_bad_configs() {
    let base = ExperimentConfig::default();
    let mut c = base.clone();
    c.seeds.clear();
    assert!(c.validate().is_err());
    let mut c = base.clone();
    c.seeds = vec![1, 1];
    assert!(c.validate().is_err());
    let mut c = base.clone();
    c.arms[1].name = "state".into();
    assert!(c.validate().is_err());
    let mut c = base.clone();
    c.arms[0].name = "a/b".into();
    assert!(c.validate().is_err());
    let mut c = base;
    c.arms.clear();
    assert!(c.validate().is_err());
}

#[test]
fn select_arms_keeps_named_and_rejects_unknown() {
    let mut c = ExperimentConfig::default();
    assert!(c.select_arms(&["nope".into()]).is_err());
    c.select_arms(&["action".into()]).unwrap();
    assert_eq!(c.arms.len(), 1);
    assert_eq!(c.arms[0].name, "action");
}

#[test]
fn horizon_override_reaches_the_env() {
    let c = ExperimentConfig {
        env: EnvConfig {
            name: "point_mass".into(),
            params: empty_object(),
        },
        horizon: Some(7),
        ..ExperimentConfig::default()
    };
    assert_eq!(c.build_env(0).unwrap().spec().horizon, 7);
}

#[test]
fn run_writes_one_curve_per_arm_and_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let c = small(tmp.path());
    let summary = run_experiment(&c).unwrap();
    let csvs = fs::read_dir(tmp.path().join("curves")).unwrap().count();
    assert_eq!(csvs, 10);
    let ckpts = fs::read_dir(tmp.path().join("checkpoints")).unwrap().count();
    assert_eq!(ckpts, 10);
    assert!(tmp.path().join("summary.json").is_file());
    assert!(tmp.path().join("config.json").is_file());
    assert_eq!(summary.action_dim, 12);
    for a in &summary.arms {
        assert_eq!(a.seeds.len(), 5);
        assert_eq!(a.mean_curve.len(), 3);
    }
    let rows = read_curve(&tmp.path().join("curves").join(curve_file_name("state", 2))).unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.seed == 2 && r.arm == "state"));
    assert_eq!(rows.iter().map(|r| r.iteration).collect::<Vec<_>>(), vec![1, 2, 3]);
}

#[test]
fn intermediate_checkpoints_follow_the_interval() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = small(tmp.path());
    c.iterations = 5;
    c.seeds = vec![0];
    c.arms.truncate(1);
    c.checkpoint_every = 2;
    run_experiment(&c).unwrap();
    let mut names: Vec<String> = fs::read_dir(tmp.path().join("checkpoints"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["state_seed0.json", "state_seed0_it2.json", "state_seed0_it4.json"]);
}

#[test]
fn rerun_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut ca = small(a.path());
    ca.seeds = vec![3, 4];
    let mut cb = ca.clone();
    cb.out = b.path().to_path_buf();
    run_experiment(&ca).unwrap();
    run_experiment(&cb).unwrap();
    let (mut da, db) = (dir_bytes(a.path()), dir_bytes(b.path()));
    // config.json records the output path itself
    let cfg = PathBuf::from("config.json");
    let (ja, jb) = (da.remove(&cfg).unwrap(), db.get(&cfg).unwrap().clone());
    let mut db = db;
    db.remove(&cfg);
    assert_eq!(da, db);
    let strip = |bytes: &[u8]| {
        let mut v: serde_json::Value = serde_json::from_slice(bytes).unwrap();
        v.as_object_mut().unwrap().remove("out");
        v
    };
    assert_eq!(strip(&ja), strip(&jb));
}

#[test]
fn summary_recomputes_from_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let c = small(tmp.path());
    let summary = run_experiment(&c).unwrap();
    let run = RunDir::load(tmp.path()).unwrap();
    assert_eq!(run.config, c);
    assert_eq!(run.summary, summary);
    assert_eq!(run.recompute_summary().unwrap(), summary);
}

#[test]
fn summarize_reports_missing_curves() {
    let c = ExperimentConfig::default();
    assert!(summarize(&c, 12, None, &BTreeMap::new()).is_err());
}

#[test]
fn solve_iteration_is_one_based_and_strict() {
    assert_eq!(solve_iteration(&[-1.0, -0.25, -0.2], -0.25), Some(3));
    assert_eq!(solve_iteration(&[0.0], -0.25), Some(1));
    assert_eq!(solve_iteration(&[-1.0, -0.5], -0.25), None);
}

#[test]
fn identical_curves_give_zero_improvement() {
    let curves = vec![vec![-1.0, -0.5, -0.1], vec![-1.0, -0.2, -0.1]];
    let row = solve_time_row(12, -0.25, 3, &curves, &curves).unwrap();
    assert_eq!(row.state_mean, 2.5);
    assert_eq!(row.improvement_percent, 0.0);
    assert_eq!(row.delta, 0.0);
}

#[test]
fn improvement_arithmetic() {
    assert!((improvement_percent(100.0, 90.0) - 10.0).abs() < 1e-12);
    assert!((improvement_percent(150.0, 136.0) - 9.333333333333334).abs() < 1e-12);
    assert!(improvement_percent(90.0, 100.0) < 0.0);
}

#[test]
fn unsolved_seeds_count_as_the_budget() {
    let state = vec![vec![-1.0; 10], vec![-1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]];
    let action = vec![vec![0.0; 10], vec![0.0; 10]];
    let row = solve_time_row(12, -0.25, 10, &state, &action).unwrap();
    assert_eq!(row.state_unsolved, 1);
    assert_eq!(row.action_unsolved, 0);
    assert_eq!(row.state_mean, 6.0);
    assert_eq!(row.action_mean, 1.0);
    assert_eq!(row.state_curve_crossing, None);
    assert_eq!(row.action_curve_crossing, Some(1));
}

#[test]
fn solve_time_row_rejects_mismatched_arms() {
    assert!(solve_time_row(12, -0.25, 5, &[], &[vec![0.0]]).is_err());
    assert!(solve_time_row(12, -0.25, 5, &[vec![0.0]], &[vec![0.0], vec![0.0]]).is_err());
}

#[test]
fn table1_needs_both_arms() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = small(tmp.path());
    c.seeds = vec![0];
    c.select_arms(&["state".into()]).unwrap();
    run_experiment(&c).unwrap();
    let err = table1_report(&[tmp.path().to_path_buf()]).err().unwrap().to_string();
    assert!(err.contains("action-dependent"), "{err}");
}

#[test]
fn table1_report_reads_a_run() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = table1_config(12, 4, &[0, 1], tmp.path());
    c.trajectories = 20;
    run_experiment(&c).unwrap();
    let rows = table1_report(&[tmp.path().to_path_buf()]).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].m, 12);
    assert_eq!(rows[0].seeds, 2);
    assert_eq!(rows[0].budget, 4);
    assert_eq!(rows[0].threshold, crate::env::solve_threshold_for(12));
    let md = table1_markdown(&rows);
    assert_eq!(md.lines().count(), 3);
}

#[test]
fn lambda_outside_unit_interval_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let c = small(tmp.path());
    assert!(lambda_sweep(&c, &[0.5, 1.5]).is_err());
    assert!(lambda_sweep(&c, &[-0.1]).is_err());
    assert!(lambda_sweep(&c, &[]).is_err());
    assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 0);
}

#[test]
fn lambda_sweep_writes_one_run_per_value() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = small(tmp.path());
    c.seeds = vec![0, 1];
    let out = lambda_sweep(&c, &[0.0, 0.5, 1.0]).unwrap();
    assert_eq!(out.len(), 3);
    for l in ["0", "0.5", "1"] {
        let d = tmp.path().join(format!("lambda_{l}"));
        assert_eq!(fs::read_dir(d.join("curves")).unwrap().count(), 4);
    }
    let sweep: serde_json::Value =
        serde_json::from_slice(&fs::read(tmp.path().join("sweep.json")).unwrap()).unwrap();
    assert_eq!(sweep.as_array().unwrap().len(), 3);
}

#[test]
fn lambda_one_without_baseline_equals_returns_to_go() {
    let run = |gae: Option<f64>, dir: &Path| {
        let c = ExperimentConfig {
            env: EnvConfig {
                name: "point_mass".into(),
                params: serde_json::json!({ "horizon": 10 }),
            },
            arms: vec![Arm::new("plain", BaselineKind::None)],
            iterations: 3,
            trajectories: 8,
            gae_lambda: gae,
            seeds: vec![0, 1],
            out: dir.to_path_buf(),
            ..ExperimentConfig::default()
        };
        run_experiment(&c).unwrap();
        (0..2u64)
            .map(|s| fs::read(dir.join("curves").join(curve_file_name("plain", s))).unwrap())
            .collect::<Vec<_>>()
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(run(Some(1.0), a.path()), run(None, b.path()));
}
