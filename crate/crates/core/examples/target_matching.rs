//! State-value vs mean-marginalized baseline on target matching.
//!
//! cargo run --release --example target_matching -- [m] [iterations]

use action_baselines::harness::table1_config;
use action_baselines::optimizer::train;

fn main() -> action_baselines::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("integer argument"));
    let m = args.next().unwrap_or(12);
    let iterations = args.next().unwrap_or(120);
    let seed = 0;
    let config = table1_config(m, iterations, &[seed], "runs/example".as_ref());
    let env = config.build_env(seed)?;
    let threshold = env.solve_threshold().unwrap_or(f64::NEG_INFINITY);

    for arm in &config.arms {
        let policy = config.policy.build(env.as_ref())?;
        let out = train(env.as_ref(), policy, &config.train_config(arm), seed, &mut |_, _| Ok(()))?;
        let solved = out.curve.iter().find(|l| l.mean_return > threshold).map(|l| l.iteration);
        let last = out.curve.last().expect("at least one iteration");
        println!(
            "{:<18} final return {:>9.4}  grad variance {:>10.3e}  solved at {:?}",
            arm.baseline.label(),
            last.mean_return,
            last.grad_variance,
            solved
        );
    }
    Ok(())
}
