//! Two agents, each with a velocity and a message channel, trained with
//! per-agent action-dependent baselines.

use action_baselines::baselines::FeatureSpec;
use action_baselines::harness::{Arm, EnvConfig, ExperimentConfig, run_experiment};
use action_baselines::BaselineKind;

fn main() -> action_baselines::Result<()> {
    let config = ExperimentConfig {
        env: EnvConfig {
            name: "communicate_target_lite".into(),
            params: serde_json::json!({ "horizon": 50 }),
        },
        arms: vec![
            Arm::new("state", BaselineKind::StateValue),
            Arm::new("action", BaselineKind::McMarginalized {
                samples: 4,
                exact: false,
                aggregate: Default::default(),
            }),
        ],
        features: FeatureSpec::Rff {
            features: 100,
            bandwidth: None,
        },
        iterations: 25,
        trajectories: 30,
        seeds: vec![0, 1],
        out: std::env::temp_dir().join("adb-communicate"),
        ..ExperimentConfig::default()
    };
    let summary = run_experiment(&config)?;
    for a in &summary.arms {
        let first = a.mean_curve.first().copied().unwrap_or(f64::NAN);
        println!(
            "{:<8} return {:>9.2} -> {:>9.2}",
            a.arm, first, a.mean_final_return
        );
    }
    println!("curves in {}", config.out.display());
    Ok(())
}
