use super::*;
use crate::baselines::ZeroBaseline;
use crate::env::Environment;
use crate::policy::Factorization;
use crate::rng::StreamRng;
use rand::{Rng, SeedableRng};

fn bandit(rewards: Vec<f64>) -> TabularMdp {
    let k = rewards.len();
    TabularMdp::new(1, vec![k], 1, 1.0, vec![1.0], vec![vec![vec![1.0]; k]], vec![rewards]).unwrap()
}

fn policy_for(mdp: &TabularMdp, factorization: Factorization) -> FactoredPolicy {
    FactoredPolicy::for_spec(mdp.spec(), factorization, None).unwrap()
}

fn randomized(mdp: &TabularMdp, rng: &mut StreamRng, scale: f64) -> FactoredPolicy {
    let mut p = policy_for(mdp, Factorization::Independent);
    let theta: Vec<f64> = (0..p.num_params()).map(|_| rng.random_range(-scale..scale)).collect();
    p.set_params(&theta).unwrap();
    p
}

fn problem(name: &str) -> EnumerableProblem {
    EnumerableProblem::with_mdp_discount(fixture(name).unwrap()).unwrap()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn bandit_eta_is_probability_of_the_rewarding_arm() {
    let pr = EnumerableProblem::with_mdp_discount(bandit(vec![1.0, 0.0])).unwrap();
    let mut p = policy_for(pr.mdp(), Factorization::Independent);
    assert!((pr.exact_eta(&p).unwrap() - 0.5).abs() < 1e-15);
    // block [W (2x1), b (2)]: logits (0.7, 0)
    p.set_params(&[0.0, 0.0, 0.7, 0.0]).unwrap();
    let prob = 1.0 / (1.0 + (-0.7f64).exp());
    assert!((pr.exact_eta(&p).unwrap() - prob).abs() < 1e-15);
}

#[test]
fn bandit_gradient_is_p_times_one_minus_p() {
    let pr = EnumerableProblem::with_mdp_discount(bandit(vec![1.0, 0.0])).unwrap();
    let mut p = policy_for(pr.mdp(), Factorization::Independent);
    p.set_params(&[0.0, 0.0, 0.3, -0.2]).unwrap();
    let prob = 1.0 / (1.0 + (-0.5f64).exp());
    let g = pr.exact_gradient(&p).unwrap();
    let fd = pr.fd_gradient(&p, 1e-6).unwrap();
    // bias of the first logit
    assert!((g[2] - prob * (1.0 - prob)).abs() < 1e-12);
    assert!((fd[2] - prob * (1.0 - prob)).abs() < 1e-8);
    assert!((g[3] + prob * (1.0 - prob)).abs() < 1e-12);
}

#[test]
fn saturated_policy_is_stationary() {
    let pr = EnumerableProblem::with_mdp_discount(bandit(vec![1.0, 0.0])).unwrap();
    let mut p = policy_for(pr.mdp(), Factorization::Independent);
    p.set_params(&[0.0, 0.0, 30.0, 0.0]).unwrap();
    assert!(pr.exact_gradient(&p).unwrap().iter().all(|g| g.abs() < 1e-6));
    let v = pr.exact_variance(&p, &ZeroBaseline).unwrap();
    assert!(v.total.abs() < 1e-6);
}

#[test]
fn two_step_eta_matches_hand_enumeration() {
    let mdp = fixture("two_state_h2").unwrap();
    let pr = EnumerableProblem::with_mdp_discount(mdp.clone()).unwrap();
    let mut rng = StreamRng::seed_from_u64(3);
    let p = randomized(&mdp, &mut rng, 1.0);
    let pi = |s: usize, j: usize| {
        let a = mdp.joint_action(j);
        p.log_prob(&mdp.one_hot(s), &[a[0] as f64, a[1] as f64]).unwrap().exp()
    };
    let mut eta = 0.0;
    for s0 in 0..2 {
        for j0 in 0..4 {
            for s1 in 0..2 {
                for j1 in 0..4 {
                    let prob = mdp.initial[s0] * pi(s0, j0) * mdp.transitions[s0][j0][s1] * pi(s1, j1);
                    eta += prob * (mdp.rewards[s0][j0] + mdp.rewards[s1][j1]);
                }
            }
        }
    }
    assert!((pr.exact_eta(&p).unwrap() - eta).abs() < 1e-12);
}

#[test]
fn exact_gradient_matches_finite_differences() {
    let mut rng = StreamRng::seed_from_u64(4);
    for name in fixture_names() {
        let pr = problem(name);
        for _ in 0..20 {
            let p = randomized(pr.mdp(), &mut rng, 1.5);
            let g = pr.exact_gradient(&p).unwrap();
            let fd = pr.fd_gradient(&p, 1e-6).unwrap();
            let scale = g.iter().map(|x| x.abs()).fold(0.0, f64::max).max(1e-3);
            assert!(max_abs_diff(&g, &fd) / scale < 1e-6, "{name}");
        }
    }
}

#[test]
fn dag_policy_gradient_matches_finite_differences() {
    let pr = problem("three_state_h3");
    let mut p = policy_for(pr.mdp(), Factorization::chain(2));
    let mut rng = StreamRng::seed_from_u64(5);
    let theta: Vec<f64> = (0..p.num_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
    p.set_params(&theta).unwrap();
    let g = pr.exact_gradient(&p).unwrap();
    let fd = pr.fd_gradient(&p, 1e-6).unwrap();
    let scale = g.iter().map(|x| x.abs()).fold(0.0, f64::max);
    assert!(max_abs_diff(&g, &fd) / scale < 1e-6);
}

#[test]
fn q_table_matches_enumerated_conditional_returns() {
    let pr = problem("three_state_h3");
    let p = randomized(pr.mdp(), &mut StreamRng::seed_from_u64(6), 1.0);
    let q = pr.q_table(&p).unwrap();
    let batch = pr.batch(&p).unwrap();
    // E[Q̂_t | s_t, a_t] by grouping the enumeration.
    let mut acc: HashMap<(usize, usize, Vec<usize>), (f64, f64)> = HashMap::new();
    for (k, t, s, a, ret) in batch.samples() {
        let key = (t, pr.mdp().state_index(s).unwrap(), pr.mdp().action_indices(a).unwrap());
        let e = acc.entry(key).or_default();
        e.0 += batch.weight(k) * ret;
        e.1 += batch.weight(k);
    }
    for ((t, s, a), (num, den)) in acc {
        if den > 1e-300 {
            assert!((num / den - q.get(t, s, &a)).abs() < 1e-10);
        }
    }
}

#[test]
fn q_table_is_multilinear_in_encoded_factors() {
    let pr = problem("bandit_2factor");
    let p = policy_for(pr.mdp(), Factorization::Independent);
    let q = pr.q_table(&p).unwrap();
    let s = [1.0];
    // factor 0 = 2, factor 1 = 1: reward 4·2 − 3 + 2·2 = 9
    assert_eq!(q.q_encoded(0, &s, &[0.0, 0.0, 1.0, 0.0, 1.0]).unwrap(), 9.0);
    // factor 0 averaged over {0, 2}, factor 1 = 0: (0 + 8) / 2
    assert_eq!(q.q_encoded(0, &s, &[0.5, 0.0, 0.5, 1.0, 0.0]).unwrap(), 4.0);
}

#[test]
fn variance_is_zero_when_baseline_equals_returns() {
    let pr = problem("bandit_2factor");
    let p = randomized(pr.mdp(), &mut StreamRng::seed_from_u64(7), 1.0);
    let mdp = pr.mdp().clone();
    let oracle_b = FnBaseline::new("q_hat", move |_, _s, a, _| {
        let idx = mdp.action_indices(a)?;
        Ok(mdp.rewards[0][mdp.joint_index(&idx)])
    });
    let v = pr.exact_variance(&p, &oracle_b).unwrap();
    assert!(v.total.abs() < 1e-12);
    let b = crate::estimator::pg_estimate(&pr.batch(&p).unwrap(), &p, &oracle_b, Default::default()).unwrap();
    assert!(b.gradient.iter().all(|g| g.abs() < 1e-15));
}

#[test]
fn direct_variance_matches_decomposition() {
    let mut rng = StreamRng::seed_from_u64(8);
    for name in fixture_names() {
        let pr = problem(name);
        let p = randomized(pr.mdp(), &mut rng, 1.0);
        let opt = pr.exact_optimal_baselines(&p).unwrap();
        for b in [
            &ZeroBaseline as &dyn FactorBaseline,
            &opt.state_baseline(),
            &opt.action_baseline(),
        ] {
            let v = pr.exact_variance(&p, b).unwrap();
            assert!((v.total - v.decomposition).abs() < 1e-10, "{name}: {v:?}");
            // disjoint blocks: no mean correction between factors
            assert!(v.cross.abs() < 1e-12);
        }
    }
}

#[test]
fn constant_q_gives_constant_optimal_baselines() {
    let pr = EnumerableProblem::with_mdp_discount(
        TabularMdp::new(1, vec![2, 3], 1, 1.0, vec![1.0], vec![vec![vec![1.0]; 6]], vec![vec![2.5; 6]])
            .unwrap(),
    )
    .unwrap();
    let p = randomized(pr.mdp(), &mut StreamRng::seed_from_u64(9), 1.0);
    let opt = pr.exact_optimal_baselines(&p).unwrap();
    assert!((opt.state[0][0] - 2.5).abs() < 1e-14);
    for j in 0..6 {
        let a = pr.mdp().joint_action(j);
        for i in 0..2 {
            assert!((opt.action_value(0, 0, &a, i) - 2.5).abs() < 1e-14);
        }
    }
}

#[test]
fn single_factor_optimal_baselines_coincide() {
    let mdp = TabularMdp::new(
        2,
        vec![3],
        2,
        1.0,
        vec![0.5, 0.5],
        vec![
            vec![vec![0.2, 0.8], vec![1.0, 0.0], vec![0.5, 0.5]],
            vec![vec![0.7, 0.3], vec![0.1, 0.9], vec![0.0, 1.0]],
        ],
        vec![vec![1.0, -2.0, 0.5], vec![3.0, 0.0, -1.0]],
    )
    .unwrap();
    let pr = EnumerableProblem::with_mdp_discount(mdp).unwrap();
    let p = randomized(pr.mdp(), &mut StreamRng::seed_from_u64(10), 1.0);
    let opt = pr.exact_optimal_baselines(&p).unwrap();
    for t in 0..2 {
        for s in 0..2 {
            for v in 0..3 {
                assert!((opt.action_value(t, s, &[v], 0) - opt.state[t][s]).abs() < 1e-12);
            }
        }
    }
    let terms = pr.closed_form_terms(&p, &ZeroBaseline).unwrap();
    assert!(terms.i_state.abs() < 1e-12);
}

#[test]
fn optimal_baseline_beats_random_alternatives() {
    let pr = problem("bandit_2factor");
    let p = randomized(pr.mdp(), &mut StreamRng::seed_from_u64(11), 1.0);
    let opt = pr.exact_optimal_baselines(&p).unwrap();
    let best = pr.exact_variance(&p, &opt.action_baseline()).unwrap().total;
    let mut rng = StreamRng::seed_from_u64(12);
    for _ in 0..100 {
        // a random table over (factor, other factor's value)
        let table: Vec<Vec<f64>> = (0..2).map(|_| (0..3).map(|_| rng.random_range(-10.0..10.0)).collect()).collect();
        let b = FnBaseline::new("random", move |_, _, a, i| Ok(table[i][a[1 - i] as usize]));
        assert!(pr.exact_variance(&p, &b).unwrap().total >= best - 1e-10);
    }
}

#[test]
fn optimum_is_quadratic_in_perturbations() {
    let pr = problem("two_state_h2");
    let p = randomized(pr.mdp(), &mut StreamRng::seed_from_u64(13), 1.0);
    let opt = pr.exact_optimal_baselines(&p).unwrap();
    let star = opt.action_baseline();
    let best = pr.exact_variance(&p, &star).unwrap().total;
    for eps in [0.1, -0.1, 0.01, -0.01] {
        let shifted = FnBaseline::new("shifted", |t, s, a, i| Ok(star.value(&p, t, s, a, i)? + eps));
        let v = pr.exact_variance(&p, &shifted).unwrap().total;
        assert!(v > best);
        // I_b for a constant shift is ε²·Σ_i E[Z_i]
        let terms = pr.closed_form_terms(&p, &shifted).unwrap();
        let expected = eps * eps * terms.z.iter().sum::<f64>();
        assert!((v - best - expected).abs() < 1e-10);
    }
}

#[test]
fn closed_form_gaps_match_direct_differences() {
    let mut rng = StreamRng::seed_from_u64(14);
    for name in fixture_names() {
        let pr = problem(name);
        let p = randomized(pr.mdp(), &mut rng, 1.0);
        let opt = pr.exact_optimal_baselines(&p).unwrap();
        let report = variance_report(&pr, &p, &opt.action_baseline()).unwrap();
        let terms = report.terms.unwrap();
        assert!(terms.i_b.abs() < 1e-10);
        assert!(terms.i_b_direct.unwrap().abs() < 1e-10);
        assert!((terms.i_state - terms.i_state_direct.unwrap()).abs() < 1e-10, "{name}");

        let report = variance_report(&pr, &p, &ZeroBaseline).unwrap();
        let terms = report.terms.unwrap();
        assert!((terms.i_b - terms.i_b_direct.unwrap()).abs() < 1e-10, "{name}");
        assert!(terms.i_b >= terms.i_state);
    }
}

#[test]
fn expected_estimate_is_unbiased_for_optimal_baselines() {
    let mut rng = StreamRng::seed_from_u64(15);
    for name in fixture_names() {
        let pr = problem(name);
        let p = randomized(pr.mdp(), &mut rng, 1.0);
        let g = pr.exact_gradient(&p).unwrap();
        let opt = pr.exact_optimal_baselines(&p).unwrap();
        for b in [&opt.state_baseline() as &dyn FactorBaseline, &opt.action_baseline()] {
            assert!(max_abs_diff(&pr.expected_estimate(&p, b).unwrap(), &g) < 1e-10);
        }
    }
}

#[test]
fn rejects_oversized_and_continuous_problems() {
    let big = TabularMdp::new(
        1,
        vec![5],
        1,
        1.0,
        vec![1.0],
        vec![vec![vec![1.0]; 5]],
        vec![vec![0.0; 5]],
    )
    .unwrap();
    assert!(EnumerableProblem::with_mdp_discount(big).is_err());
    let tm = crate::env::TargetMatching::new(vec![0.0]).unwrap();
    assert!(matches!(EnumerableProblem::new(&tm, 1.0), Err(Error::Unsupported(_))));
    assert!(fixture("nope").is_err());
    let pr = problem("bandit_2factor");
    assert!(pr.mdp().spec().horizon == 1);
    let _: &dyn Environment = pr.mdp();
}
