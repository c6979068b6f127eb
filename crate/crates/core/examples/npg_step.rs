//! One natural gradient step by hand: gradient, Fisher-vector products,
//! conjugate gradient, and the KL actually realized.

use action_baselines::baselines::ZeroBaseline;
use action_baselines::env::build;
use action_baselines::estimator::{pg_estimate, EstimatorOptions};
use action_baselines::optimizer::{collect, realized_kl, npg_step, FisherKind, NpgConfig};
use action_baselines::policy::Factorization;
use action_baselines::FactoredPolicy;

fn main() -> action_baselines::Result<()> {
    let env = build("target_matching", &serde_json::json!({ "m": 6 }), 3)?;
    let policy = FactoredPolicy::for_spec(env.spec(), Factorization::Independent, env.factor_inputs())?;
    let batch = collect(env.as_ref(), &policy, 1.0, 200, 3, 1)?;
    let g = pg_estimate(&batch, &policy, &ZeroBaseline, EstimatorOptions::default())?;
    println!("mean return {:.3}, |g| = {:.3}", batch.mean_return(), g.norm());

    for fisher in [FisherKind::BlockDiagonal, FisherKind::Joint] {
        for kl in [0.01, 0.025, 0.1] {
            let config = NpgConfig {
                kl_desired: kl,
                fisher,
                ..NpgConfig::default()
            };
            let (theta, step) = npg_step(&policy, &g.gradient, &batch, &config)?;
            let next = policy.with_params(&theta)?;
            println!(
                "{fisher:?} kl_desired {kl:<6} xᵀFx {:>9.4}  realized KL {:.5}  fallback {}",
                step.curvature,
                realized_kl(&policy, &next, &batch)?,
                step.fallback
            );
        }
    }
    Ok(())
}
