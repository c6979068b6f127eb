//! Chain-factored policy on a tabular problem: per-factor baselines that
//! read only non-descendant factors keep the estimator unbiased.

use action_baselines::baselines::{BaselineFitter, FeatureSpec};
use action_baselines::features::Ridge;
use action_baselines::oracle::{fixture, EnumerableProblem};
use action_baselines::policy::Factorization;
use action_baselines::{BaselineKind, Environment, FactoredPolicy};

fn main() -> action_baselines::Result<()> {
    let problem = EnumerableProblem::with_mdp_discount(fixture("two_state_h2")?)?;
    let spec = problem.mdp().spec().clone();
    let mut policy = FactoredPolicy::for_spec(&spec, Factorization::chain(spec.num_factors()), None)?;
    let theta: Vec<f64> = (0..policy.num_params()).map(|k| 0.5 * (k as f64 * 0.9).sin()).collect();
    policy.set_params(&theta)?;
    for i in 0..policy.num_factors() {
        println!("factor {i}: descendants {:?}", policy.descendants(i));
    }

    let exact = problem.exact_gradient(&policy)?;
    let batch = problem.batch(&policy)?;
    for kind in [BaselineKind::None, BaselineKind::StateValue, BaselineKind::DagPerFactor] {
        let mut fitter = BaselineFitter::new(kind.clone(), FeatureSpec::Linear, Ridge::default(), spec.horizon, 0)?;
        fitter.fit(&batch, &policy)?;
        let b = fitter.current(0);
        let expected = problem.expected_estimate(&policy, b.as_ref())?;
        let bias = expected.iter().zip(&exact).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let var = problem.exact_variance(&policy, b.as_ref())?.total;
        println!("{:<16} max |E[g] - ∇η| = {bias:.2e}  variance {var:.5}", kind.label());
    }
    Ok(())
}
