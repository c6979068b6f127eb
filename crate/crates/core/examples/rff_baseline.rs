//! Random Fourier features vs raw features: a nonlinear regression target,
//! then held-out state-value fits on point-mass rollouts.

use action_baselines::baselines::fit_state_value;
use action_baselines::env::build;
use action_baselines::features::{median_bandwidth, FeatureMap, Regressor, Ridge, RffMap};
use action_baselines::optimizer::collect;
use action_baselines::policy::Factorization;
use action_baselines::rng::{stream, Stream};
use action_baselines::FactoredPolicy;
use rand::Rng;

fn target(x: &[f64]) -> f64 {
    (2.0 * x[0]).sin() + x[1] * x[1]
}

fn main() -> action_baselines::Result<()> {
    let mut rng = stream(0, Stream::Features, &[]);
    let mut draw = |n: usize| -> Vec<Vec<f64>> {
        (0..n).map(|_| vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]).collect()
    };
    let (train, test) = (draw(400), draw(200));
    let y: Vec<f64> = train.iter().map(|x| target(x)).collect();

    let bandwidth = median_bandwidth(&train, 400);
    let mut feat_rng = stream(1, Stream::Features, &[]);
    let maps = [
        ("linear", FeatureMap::Linear { input_dim: 2 }),
        ("rff-250", FeatureMap::Rff(RffMap::new(2, 250, bandwidth, &mut feat_rng)?)),
    ];
    println!("median bandwidth {bandwidth:.3}");
    for (name, map) in maps {
        let fit = Regressor::fit(map, &train, &y, Ridge::default(), None)?;
        let mse = test
            .iter()
            .map(|x| Ok((fit.predict(x)? - target(x)).powi(2)))
            .sum::<action_baselines::Result<f64>>()?
            / test.len() as f64;
        println!("{name:<8} held-out mse {mse:.4}");
    }

    // state values of the point mass under its initial policy, out of sample
    let env = build("point_mass", &serde_json::json!({}), 0)?;
    let policy = FactoredPolicy::for_spec(env.spec(), Factorization::Independent, env.factor_inputs())?;
    let fit_batch = collect(env.as_ref(), &policy, 0.995, 200, 0, 1)?;
    let eval_batch = collect(env.as_ref(), &policy, 0.995, 200, 0, 2)?;
    let h = env.spec().horizon as f64;
    let inputs: Vec<Vec<f64>> = fit_batch
        .samples()
        .map(|(_, t, s, _, _)| s.iter().copied().chain([t as f64 / h]).collect())
        .collect();
    let bandwidth = median_bandwidth(&inputs, 400);
    let mut feat_rng = stream(2, Stream::Features, &[]);
    let maps = [
        ("linear", FeatureMap::Linear { input_dim: 5 }),
        ("quadratic", FeatureMap::Quadratic { input_dim: 5 }),
        ("rff-100", FeatureMap::Rff(RffMap::new(5, 100, bandwidth, &mut feat_rng)?)),
    ];
    let total: Vec<f64> = eval_batch.samples().map(|(_, _, _, _, q)| q).collect();
    let mean = total.iter().sum::<f64>() / total.len() as f64;
    let sst: f64 = total.iter().map(|q| (q - mean).powi(2)).sum();
    for (name, map) in maps {
        let model = fit_state_value(&fit_batch, map, Ridge::default(), Some(1.0 / h))?;
        let sse: f64 = eval_batch
            .samples()
            .map(|(_, t, s, _, q)| Ok((model.predict(t, s)? - q).powi(2)))
            .sum::<action_baselines::Result<f64>>()?;
        println!("point mass {name:<9} held-out R² {:.3}", 1.0 - sse / sst);
    }
    Ok(())
}
