//! Exact estimator variance of every baseline on the bundled tabular
//! problems, with the gaps to the optimal action-dependent baseline.

use action_baselines::baselines::{BaselineFitter, FeatureSpec};
use action_baselines::features::Ridge;
use action_baselines::oracle::{fixture, fixture_names, variance_report, EnumerableProblem};
use action_baselines::policy::Factorization;
use action_baselines::{BaselineKind, Environment, FactoredPolicy};

fn main() -> action_baselines::Result<()> {
    for name in fixture_names() {
        let problem = EnumerableProblem::with_mdp_discount(fixture(name)?)?;
        let mut policy =
            FactoredPolicy::for_spec(problem.mdp().spec(), Factorization::Independent, None)?;
        let theta: Vec<f64> = (0..policy.num_params()).map(|k| 0.4 * (k as f64 * 1.7).cos()).collect();
        policy.set_params(&theta)?;
        let batch = problem.batch(&policy)?;
        let opt = problem.exact_optimal_baselines(&policy)?;
        let star = problem.exact_variance(&policy, &opt.action_baseline())?.total;
        let state = problem.exact_variance(&policy, &opt.state_baseline())?.total;

        println!("{name}: {} paths", problem.num_paths());
        println!("  {:<26} {:>12.6}", "optimal action-dependent", star);
        println!("  {:<26} {:>12.6}", "optimal state", state);
        for kind in [BaselineKind::None, BaselineKind::StateValue, BaselineKind::MeanMarginalized] {
            let mut fitter =
                BaselineFitter::new(kind.clone(), FeatureSpec::Linear, Ridge::default(), problem.mdp().horizon, 0)?;
            fitter.fit(&batch, &policy)?;
            let b = fitter.current(0);
            let report = variance_report(&problem, &policy, b.as_ref())?;
            let terms = report.terms.expect("exact terms");
            println!(
                "  {:<26} {:>12.6}  I_b = {:.6} (direct {:.6})",
                kind.label(),
                star + terms.i_b,
                terms.i_b,
                terms.i_b_direct.unwrap_or(f64::NAN)
            );
        }
        let terms = variance_report(&problem, &policy, &opt.action_baseline())?.terms.expect("exact terms");
        println!("  I_state = {:.6} (direct {:.6})", terms.i_state, state - star);
    }
    Ok(())
}
