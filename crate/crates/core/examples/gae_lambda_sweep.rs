//! Bias/variance trade-off of GAE λ on the point-mass task.
//!
//! cargo run --release --example gae_lambda_sweep -- [out_dir]

use action_baselines::baselines::FeatureSpec;
use action_baselines::harness::{lambda_sweep, Arm, EnvConfig, ExperimentConfig};
use action_baselines::BaselineKind;

fn main() -> action_baselines::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("adb-lambda-sweep"));
    let config = ExperimentConfig {
        env: EnvConfig {
            name: "point_mass".into(),
            params: serde_json::json!({}),
        },
        arms: vec![
            Arm::new("state", BaselineKind::StateValue),
            Arm::new("action", BaselineKind::MeanMarginalized),
        ],
        features: FeatureSpec::Quadratic,
        iterations: 30,
        trajectories: 20,
        out,
        ..ExperimentConfig::default()
    };
    let runs = lambda_sweep(&config, &[0.0, 0.5, 0.9, 0.97, 1.0])?;
    println!("{:>6} {:>10} {:>14} {:>14}", "λ", "arm", "final return", "grad variance");
    for (l, summary) in &runs {
        for a in &summary.arms {
            let gv = a.seeds.iter().map(|s| s.mean_grad_variance).sum::<f64>() / a.seeds.len() as f64;
            println!("{l:>6} {:>10} {:>14.3} {:>14.4e}", a.arm, a.mean_final_return, gv);
        }
    }
    println!("curves under {}", config.out.display());
    Ok(())
}
