use super::*;
use crate::env::{Environment, FactorDescriptor, Step, TabularMdp, Trajectory};
use crate::oracle::{fixture, fixture_names, EnumerableProblem};
use crate::policy::Factorization;
use rand_distr::{Distribution, StandardNormal};

fn one_step(state: Vec<f64>, action: Vec<f64>, reward: f64) -> Trajectory {
    Trajectory::new(
        vec![Step {
            state,
            action,
            reward,
            terminal: true,
        }],
        1.0,
    )
}

fn gaussian_policy(state_dim: usize, dims: &[usize]) -> FactoredPolicy {
    let f: Vec<FactorDescriptor> = dims.iter().map(|&d| FactorDescriptor::Continuous { dim: d }).collect();
    FactoredPolicy::new(state_dim, &f, Factorization::Independent, None).unwrap()
}

fn categorical_policy(state_dim: usize, cards: &[usize], factorization: Factorization) -> FactoredPolicy {
    let f: Vec<FactorDescriptor> = cards.iter().map(|&k| FactorDescriptor::Categorical { cardinality: k }).collect();
    FactoredPolicy::new(state_dim, &f, factorization, None).unwrap()
}

fn randomize(p: &mut FactoredPolicy, seed: u64, scale: f64) {
    let mut rng = StreamRng::seed_from_u64(seed);
    let theta: Vec<f64> = (0..p.num_params()).map(|_| rng.random_range(-scale..scale)).collect();
    p.set_params(&theta).unwrap();
}

fn linear_q(w: Vec<f64>, c: f64) -> Arc<dyn QFunction> {
    Arc::new(FnQ(move |_, _: &[f64], enc: &[f64]| c + w.iter().zip(enc).map(|(a, b)| a * b).sum::<f64>()))
}

fn bandit2(logit: f64) -> (EnumerableProblem, FactoredPolicy) {
    let mdp = TabularMdp::new(1, vec![2], 1, 1.0, vec![1.0], vec![vec![vec![1.0]; 2]], vec![vec![3.0, -1.0]])
        .unwrap();
    let pr = EnumerableProblem::with_mdp_discount(mdp).unwrap();
    let mut p = categorical_policy(1, &[2], Factorization::Independent);
    p.set_params(&[0.0, 0.0, logit, 0.0]).unwrap();
    (pr, p)
}

#[test]
fn q_fit_of_constant_returns_is_constant() {
    let mut rng = StreamRng::seed_from_u64(1);
    let p = gaussian_policy(2, &[1, 1]);
    let trajs: Vec<Trajectory> = (0..30)
        .map(|_| {
            let s = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let a = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            one_step(s, a, 5.0)
        })
        .collect();
    let batch = Batch::new(trajs);
    let q = fit_q(&batch, &p, FeatureMap::Linear { input_dim: 4 }, Ridge::default(), None).unwrap();
    for (_, t, s, a, _) in batch.samples() {
        assert!((q.q_encoded(t, s, &p.encode_action(a)).unwrap() - 5.0).abs() < 1e-6);
    }
}

#[test]
fn q_fit_recovers_linear_returns() {
    let mut rng = StreamRng::seed_from_u64(2);
    let p = gaussian_policy(1, &[2, 1]);
    let trajs: Vec<Trajectory> = (0..20)
        .map(|_| {
            let a: Vec<f64> = (0..3).map(|_| StandardNormal.sample(&mut rng)).collect();
            let s = vec![StandardNormal.sample(&mut rng)];
            let r = a.iter().sum();
            one_step(s, a, r)
        })
        .collect();
    let q = fit_q(&Batch::new(trajs), &p, FeatureMap::Linear { input_dim: 4 }, Ridge::Absolute(0.0), None).unwrap();
    let w = &q.regressor.model.weights;
    assert!(w[0].abs() < 1e-8);
    assert!(w[1..].iter().all(|x| (x - 1.0).abs() < 1e-8));
    assert!(q.regressor.model.bias.abs() < 1e-8);
}

#[test]
fn fits_reject_empty_batches() {
    let p = gaussian_policy(1, &[1]);
    let empty = Batch::new(vec![]);
    assert!(fit_q(&empty, &p, FeatureMap::Linear { input_dim: 2 }, Ridge::default(), None).is_err());
    assert!(fit_state_value(&empty, FeatureMap::Linear { input_dim: 1 }, Ridge::default(), None).is_err());
    let mut f = BaselineFitter::new(BaselineKind::StateValue, FeatureSpec::Linear, Ridge::default(), 1, 0).unwrap();
    assert!(f.fit(&empty, &p).is_err());
}

#[test]
fn single_state_value_is_batch_mean() {
    let mut rng = StreamRng::seed_from_u64(3);
    let returns: Vec<f64> = (0..50).map(|_| rng.random_range(-3.0..1.0)).collect();
    let batch = Batch::new(returns.iter().map(|&r| one_step(vec![0.0], vec![0.0], r)).collect());
    let m = fit_state_value(&batch, FeatureMap::Linear { input_dim: 1 }, Ridge::default(), None).unwrap();
    let mean = returns.iter().sum::<f64>() / returns.len() as f64;
    assert!((m.predict(0, &[0.0]).unwrap() - mean).abs() < 1e-8);

    let centered = Batch::new(returns.iter().map(|&r| one_step(vec![0.0], vec![0.0], r - mean)).collect());
    let m = fit_state_value(&centered, FeatureMap::Linear { input_dim: 1 }, Ridge::default(), None).unwrap();
    assert!(m.predict(0, &[0.0]).unwrap().abs() < 1e-8);
}

#[test]
fn indicator_state_value_gives_per_state_means() {
    let rows = [([1.0, 0.0], 2.0), ([1.0, 0.0], 4.0), ([0.0, 1.0], -1.0), ([0.0, 1.0], -5.0), ([0.0, 1.0], 0.0)];
    let batch = Batch::new(rows.iter().map(|(s, r)| one_step(s.to_vec(), vec![0.0], *r)).collect());
    let m = fit_state_value(&batch, FeatureMap::Linear { input_dim: 2 }, Ridge::Absolute(1e-9), None).unwrap();
    assert!((m.predict(0, &[1.0, 0.0]).unwrap() - 3.0).abs() < 1e-6);
    assert!((m.predict(0, &[0.0, 1.0]).unwrap() + 2.0).abs() < 1e-6);
}

#[test]
fn optimal_state_examples() {
    // constant returns
    let (pr, p) = bandit2(0.4);
    let batch = pr.batch(&p).unwrap();
    let constant = Batch::weighted(
        batch.trajectories.iter().map(|t| one_step(t.steps[0].state.clone(), t.steps[0].action.clone(), 7.0)).collect(),
        batch.weights.clone().unwrap(),
    )
    .unwrap();
    let tab = optimal_state_table(&constant, &p).unwrap();
    assert!((tab.get(0, &[1.0]).unwrap() - 7.0).abs() < 1e-14);

    // 2-action softmax: ‖z(v)‖² ∝ (1 − p_v)², so b* = p_1·Q_0 + p_0·Q_1.
    let p0 = 1.0 / (1.0 + (-0.4f64).exp());
    let expected = (1.0 - p0) * 3.0 + -p0;
    let tab = optimal_state_table(&batch, &p).unwrap();
    assert!((tab.get(0, &[1.0]).unwrap() - expected).abs() < 1e-12);
    let opt = pr.exact_optimal_baselines(&p).unwrap();
    assert!((opt.state[0][0] - expected).abs() < 1e-12);
    let fit = fit_optimal_state(&batch, &p, FeatureMap::Linear { input_dim: 1 }, Ridge::default(), None).unwrap();
    assert!((fit.predict(0, &[1.0]).unwrap() - expected).abs() < 1e-8);

    // uniform 2-action policy: equal score norms, b* = V(s)
    let (pr, p) = bandit2(0.0);
    let tab = optimal_state_table(&pr.batch(&p).unwrap(), &p).unwrap();
    assert!((tab.get(0, &[1.0]).unwrap() - 1.0).abs() < 1e-14);
}

#[test]
fn optimal_state_needs_nonzero_scores() {
    let mdp = TabularMdp::new(1, vec![1], 1, 1.0, vec![1.0], vec![vec![vec![1.0]]], vec![vec![2.0]]).unwrap();
    let pr = EnumerableProblem::with_mdp_discount(mdp).unwrap();
    let p = categorical_policy(1, &[1], Factorization::Independent);
    let batch = pr.batch(&p).unwrap();
    assert!(matches!(optimal_state_table(&batch, &p), Err(Error::ZeroDenominator(_))));
    assert!(matches!(
        fit_optimal_state(&batch, &p, FeatureMap::Linear { input_dim: 1 }, Ridge::default(), None),
        Err(Error::ZeroDenominator(_))
    ));
}

#[test]
fn mc_marginalized_ignores_absent_coordinate() {
    let p = gaussian_policy(1, &[1, 1]);
    let q = linear_q(vec![2.0, 0.0], 1.0);
    for samples in [1, 7, 100] {
        let b = McMarginalized { q: q.clone(), samples, exact: false, aggregate: Aggregate::Mean, seed: 3 };
        assert_eq!(b.value(&p, 0, &[0.5], &[1.5, -0.3], 1).unwrap(), 4.0);
    }
}

#[test]
fn mc_marginalized_converges_to_mean_substitution() {
    let mut p = gaussian_policy(1, &[1, 1]);
    randomize(&mut p, 4, 0.5);
    let (w, c) = (vec![1.5, -2.0], 0.3);
    let q = linear_q(w.clone(), c);
    let (s, a) = ([0.8], [0.4, 1.1]);
    let (mean, std) = p.gaussian_params(&s, &a, 1).unwrap();
    let analytic = c + w[0] * a[0] + w[1] * mean[0];
    let b = McMarginalized { q, samples: 1000, exact: false, aggregate: Aggregate::Mean, seed: 5 };
    let est = b.value(&p, 0, &s, &a, 1).unwrap();
    let se = w[1].abs() * std[0] / (1000f64).sqrt();
    assert!((est - analytic).abs() <= 3.0 * se, "{est} vs {analytic} (se {se})");
}

#[test]
fn exact_categorical_marginalization_is_a_weighted_sum() {
    let mut p = categorical_policy(1, &[2, 3], Factorization::Independent);
    randomize(&mut p, 6, 1.0);
    let table = [[1.0, -2.0, 0.5], [4.0, 3.0, -1.0]];
    let q: Arc<dyn QFunction> = Arc::new(FnQ(move |_, _: &[f64], e: &[f64]| {
        let mut v = 0.0;
        for x in 0..2 {
            for y in 0..3 {
                v += e[x] * e[2 + y] * table[x][y];
            }
        }
        v
    }));
    let b = McMarginalized { q, samples: 1, exact: true, aggregate: Aggregate::Mean, seed: 0 };
    let (s, a) = ([1.0], [1.0, 2.0]);
    let probs = p.categorical_probs(&s, &a, 0).unwrap();
    let hand = probs[0] * table[0][2] + probs[1] * table[1][2];
    assert_eq!(b.value(&p, 0, &s, &a, 0).unwrap(), hand);
}

#[test]
fn mean_marginalized_examples() {
    let p = gaussian_policy(1, &[1, 1]);
    let sum = linear_q(vec![1.0, 1.0], 0.0);
    let b = MeanMarginalized { q: sum };
    // zero parameters: ā = 0 for both factors
    assert_eq!(b.value(&p, 0, &[0.0], &[2.0, 3.0], 0).unwrap(), 3.0);
    assert_eq!(b.value(&p, 0, &[0.0], &[0.0, 3.0], 0).unwrap(), 3.0);
    let constant = MeanMarginalized { q: linear_q(vec![0.0, 0.0], -4.0) };
    assert_eq!(constant.values(&p, 0, &[0.0], &[2.0, 3.0]).unwrap(), vec![-4.0, -4.0]);
}

#[test]
fn optimal_action_dependent_examples() {
    let mut p = categorical_policy(1, &[2, 2], Factorization::Independent);
    let q_const = OptimalActionDependent { q: linear_q(vec![0.0; 4], 2.5), samples: 10, seed: 0 };
    randomize(&mut p, 7, 1.0);
    assert!((q_const.value(&p, 0, &[1.0], &[0.0, 1.0], 0).unwrap() - 2.5).abs() < 1e-14);

    // factor 0 logits (0.9, 0): b_0 = p_1·Q(0, ·) + p_0·Q(1, ·)
    p.set_params(&[0.0, 0.0, 0.9, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
    let q = linear_q(vec![3.0, -1.0, 0.5, 2.0], 0.0);
    let b = OptimalActionDependent { q: q.clone(), samples: 10, seed: 0 };
    let p0 = 1.0 / (1.0 + (-0.9f64).exp());
    let (q0, q1) = (3.0 + 2.0, -1.0 + 2.0);
    assert!((b.value(&p, 0, &[1.0], &[0.0, 1.0], 0).unwrap() - ((1.0 - p0) * q0 + p0 * q1)).abs() < 1e-12);

    // factor 1 is uniform, so its score norm is constant and b* is the marginal
    let marg = McMarginalized { q, samples: 1, exact: true, aggregate: Aggregate::Mean, seed: 0 };
    let (x, y) = (b.value(&p, 0, &[1.0], &[1.0, 0.0], 1).unwrap(), marg.value(&p, 0, &[1.0], &[1.0, 0.0], 1).unwrap());
    assert!((x - y).abs() < 1e-12);
}

#[test]
fn optimal_action_dependent_gaussian_uses_shared_draws() {
    let mut p = gaussian_policy(1, &[1, 1]);
    randomize(&mut p, 8, 0.5);
    let b = OptimalActionDependent { q: linear_q(vec![0.0, 0.0], 1.25), samples: 5, seed: 9 };
    // numerator and denominator share draws, so a constant Q is reproduced exactly
    assert!((b.value(&p, 0, &[0.3], &[0.1, 0.2], 0).unwrap() - 1.25).abs() < 1e-14);
    let b = OptimalActionDependent { q: linear_q(vec![1.0, 1.0], 0.0), samples: 50, seed: 9 };
    let v1 = b.value(&p, 0, &[0.3], &[0.1, 0.2], 0).unwrap();
    let v2 = b.value(&p, 0, &[0.3], &[5.0, 0.2], 0).unwrap();
    assert_eq!(v1, v2);
}

#[test]
fn marginalizing_baselines_refuse_descendants() {
    let p = categorical_policy(1, &[2, 2], Factorization::chain(2));
    let b = MeanMarginalized { q: linear_q(vec![0.0; 4], 0.0) };
    assert!(matches!(b.value(&p, 0, &[1.0], &[0.0, 0.0], 0), Err(Error::Unsupported(_))));
    assert!(b.value(&p, 0, &[1.0], &[0.0, 0.0], 1).is_ok());
}

#[test]
fn dag_input_sets() {
    let ind = categorical_policy(1, &[2, 2, 2], Factorization::Independent);
    assert_eq!(DagPerFactor::input_sets(&ind), vec![vec![1, 2], vec![0, 2], vec![0, 1]]);
    let chain = categorical_policy(1, &[2, 2, 2], Factorization::chain(3));
    assert_eq!(DagPerFactor::input_sets(&chain), vec![vec![], vec![0], vec![0, 1]]);
}

#[test]
fn first_chain_baseline_is_the_state_value_fit() {
    let mdp = fixture("three_state_h3").unwrap();
    let mut p = categorical_policy(3, &[2, 3], Factorization::chain(2));
    randomize(&mut p, 10, 1.0);
    let pr = EnumerableProblem::with_mdp_discount(mdp).unwrap();
    let batch = pr.batch(&p).unwrap();
    let ts = Some(1.0 / 3.0);
    let dag = fit_dag_baselines(
        &batch,
        &p,
        &[FeatureMap::Linear { input_dim: 4 }, FeatureMap::Linear { input_dim: 6 }],
        Ridge::default(),
        ts,
    )
    .unwrap();
    let sv = fit_state_value(&batch, FeatureMap::Linear { input_dim: 4 }, Ridge::default(), ts).unwrap();
    for (_, t, s, a, _) in batch.samples().take(50) {
        let d = dag.value(&p, t, s, a, 0).unwrap();
        assert!((d - sv.predict(t, s).unwrap()).abs() < 1e-10);
    }
}

/// Every kind of baseline, built from an exact batch of `problem`.
fn all_baselines(pr: &EnumerableProblem, p: &FactoredPolicy) -> Vec<Arc<dyn FactorBaseline>> {
    let batch = pr.batch(p).unwrap();
    let horizon = pr.mdp().horizon;
    let kinds = [
        BaselineKind::None,
        BaselineKind::StateValue,
        BaselineKind::OptimalState,
        BaselineKind::McMarginalized { samples: 3, exact: false, aggregate: Aggregate::Mean },
        BaselineKind::McMarginalized { samples: 1, exact: true, aggregate: Aggregate::Mean },
        BaselineKind::McMarginalized { samples: 4, exact: false, aggregate: Aggregate::Max },
        BaselineKind::MeanMarginalized,
        BaselineKind::OptimalActionDependent { samples: 1 },
        BaselineKind::DagPerFactor,
    ];
    kinds
        .iter()
        .map(|k| {
            let mut f = BaselineFitter::new(k.clone(), FeatureSpec::Linear, Ridge::default(), horizon, 1).unwrap();
            f.fit(&batch, p).unwrap();
            f.current(11)
        })
        .collect()
}

#[test]
fn every_baseline_is_bias_free_on_categorical_factors() {
    for name in fixture_names() {
        let pr = EnumerableProblem::with_mdp_discount(fixture(name).unwrap()).unwrap();
        let mut p = FactoredPolicy::for_spec(pr.mdp().spec(), Factorization::Independent, None).unwrap();
        randomize(&mut p, 12, 1.0);
        let batch = pr.batch(&p).unwrap();
        for b in all_baselines(&pr, &p) {
            for (_, t, s, a, _) in batch.samples() {
                for i in 0..p.num_factors() {
                    let probs = p.categorical_probs(s, a, i).unwrap();
                    let mut acc = vec![0.0; p.num_params()];
                    for (v, pv) in probs.iter().enumerate() {
                        let av = p.replace_factor(a, i, &[v as f64]);
                        let bv = b.value(&p, t, s, &av, i).unwrap();
                        p.score_factor(s, &av, i).unwrap().add_scaled_into(&mut acc, pv * bv);
                    }
                    assert!(acc.iter().all(|x| x.abs() < 1e-12), "{name} {}: {acc:?}", b.label());
                }
            }
        }
    }
}

#[test]
fn fitter_starts_from_zero_and_freezes_features() {
    let env = crate::env::TargetMatching::new(vec![1.0, -1.0]).unwrap();
    let p = FactoredPolicy::for_spec(env.spec(), Factorization::Independent, None).unwrap();
    let mut f = BaselineFitter::new(
        BaselineKind::McMarginalized { samples: 2, exact: false, aggregate: Aggregate::Mean },
        FeatureSpec::Rff { features: 16, bandwidth: None },
        Ridge::default(),
        1,
        3,
    )
    .unwrap();
    assert_eq!(f.current(0).values(&p, 0, &[0.0], &[0.3, 0.4]).unwrap(), vec![0.0, 0.0]);
    let batch = crate::optimizer::collect(&env, &p, 1.0, 40, 1, 1).unwrap();
    f.fit(&batch, &p).unwrap();
    let first = f.fitted().q.clone().unwrap().regressor.features;
    let batch2 = crate::optimizer::collect(&env, &p, 1.0, 40, 1, 2).unwrap();
    f.fit(&batch2, &p).unwrap();
    assert_eq!(f.fitted().q.as_ref().unwrap().regressor.features, first);
    assert!(BaselineKind::McMarginalized { samples: 0, exact: false, aggregate: Aggregate::Mean }.validate().is_err());
}

#[test]
fn rff_substitution_matches_full_evaluation() {
    let env = crate::env::TargetMatching::new(vec![0.5, -1.0, 2.0]).unwrap();
    let mut p = FactoredPolicy::for_spec(env.spec(), Factorization::Independent, None).unwrap();
    randomize(&mut p, 13, 0.3);
    let batch = crate::optimizer::collect(&env, &p, 1.0, 60, 2, 1).unwrap();
    let mut rng = StreamRng::seed_from_u64(4);
    let map = FeatureMap::Rff(RffMap::new(4, 32, 1.5, &mut rng).unwrap());
    let q = fit_q(&batch, &p, map, Ridge::default(), None).unwrap();
    let enc = p.encode_action(&[0.2, 0.1, -0.4]);
    let cands = vec![vec![1.0], vec![-0.7]];
    let fast = q.q_substituted(0, &[0.0], &enc, 1..2, &cands).unwrap();
    for (c, f) in cands.iter().zip(fast) {
        let mut e = enc.clone();
        e[1] = c[0];
        assert!((q.q_encoded(0, &[0.0], &e).unwrap() - f).abs() < 1e-12);
    }
}

#[test]
fn baseline_kind_json_defaults() {
    let k: BaselineKind = serde_json::from_str(r#"{"kind": "mc_marginalized"}"#).unwrap();
    assert_eq!(k, BaselineKind::McMarginalized { samples: 10, exact: false, aggregate: Aggregate::Mean });
    let k: BaselineKind = serde_json::from_str(r#"{"kind": "state_value"}"#).unwrap();
    assert!(!k.is_action_dependent());
}
