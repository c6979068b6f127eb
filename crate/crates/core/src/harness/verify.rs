//! The oracle and property suite behind `adb verify`. Each check returns a
//! [`CriterionOutcome`] instead of panicking so callers can report all of
//! them.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};

use super::{run_experiment, table1_config, ExperimentConfig, EnvConfig, SolveTimeRow};
use crate::baselines::{
    Aggregate, BaselineFitter, BaselineKind, FactorBaseline, FeatureSpec, FnQ, McMarginalized,
    MeanMarginalized, QFunction, ZeroBaseline,
};
use crate::env::{Environment, FactorDescriptor, Step, Trajectory};
use crate::estimator::{gae_advantages, returns_to_go, Batch, GaeConfig};
use crate::features::Ridge;
use crate::oracle::{fixture, fixture_names, variance_report, EnumerableProblem};
use crate::policy::{FactoredPolicy, Factorization};
use crate::rng::StreamRng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionOutcome {
    pub id: u8,
    pub title: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl fmt::Display for CriterionOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {}. {}: {} ({:.2} s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.title,
            self.detail,
            self.seconds
        )
    }
}

fn timed(id: u8, title: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> CriterionOutcome {
    let start = Instant::now();
    let (passed, detail) = match f() {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    CriterionOutcome {
        id,
        title,
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    /// Scratch space for the determinism and solve-time runs.
    pub work_dir: PathBuf,
    /// Include the target-matching solve-time comparison (minutes).
    pub table1: bool,
    /// Iteration budgets for `m = 12` and `m = 100`.
    pub table1_budgets: (usize, usize),
}

impl VerifyOptions {
    pub fn new(work_dir: &Path) -> Self {
        VerifyOptions {
            work_dir: work_dir.to_path_buf(),
            table1: false,
            table1_budgets: (150, 400),
        }
    }
}

/// Runs every check in order.
pub fn run_suite(opts: &VerifyOptions) -> Vec<CriterionOutcome> {
    let mut out = vec![unbiasedness(), variance_ordering(), gap_identities()];
    if opts.table1 {
        out.push(solve_times(&opts.work_dir.join("table1"), opts.table1_budgets).0);
    }
    out.extend([
        gae_telescoping(),
        gradient_correctness(),
        bias_free_identity(),
        marginalization_consistency(),
        determinism(&opts.work_dir.join("determinism")),
    ]);
    out
}

fn problems() -> Result<Vec<(&'static str, EnumerableProblem)>> {
    fixture_names()
        .into_iter()
        .map(|n| Ok((n, EnumerableProblem::with_mdp_discount(fixture(n)?)?)))
        .collect()
}

fn random_policy(pr: &EnumerableProblem, factorization: Factorization, seed: u64) -> Result<FactoredPolicy> {
    let mut p = FactoredPolicy::for_spec(pr.mdp().spec(), factorization, None)?;
    let mut rng = StreamRng::seed_from_u64(seed);
    let theta: Vec<f64> = (0..p.num_params()).map(|_| rng.random_range(-1.5..1.5)).collect();
    p.set_params(&theta)?;
    Ok(p)
}

/// Every fitted baseline kind applicable to `policy`, fit on the exact batch.
fn fitted_baselines(pr: &EnumerableProblem, p: &FactoredPolicy) -> Result<Vec<Arc<dyn FactorBaseline>>> {
    let batch = pr.batch(p)?;
    let mut kinds = vec![
        BaselineKind::None,
        BaselineKind::StateValue,
        BaselineKind::OptimalState,
        BaselineKind::DagPerFactor,
    ];
    if p.is_independent() {
        kinds.extend([
            BaselineKind::McMarginalized { samples: 3, exact: false, aggregate: Aggregate::Mean },
            BaselineKind::McMarginalized { samples: 1, exact: true, aggregate: Aggregate::Mean },
            BaselineKind::McMarginalized { samples: 4, exact: false, aggregate: Aggregate::Max },
            BaselineKind::MeanMarginalized,
            BaselineKind::OptimalActionDependent { samples: 1 },
        ]);
    }
    kinds
        .into_iter()
        .map(|k| {
            let mut f = BaselineFitter::new(k, FeatureSpec::Linear, Ridge::default(), pr.mdp().horizon, 7)?;
            f.fit(&batch, p)?;
            Ok(f.current(13))
        })
        .collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Exact expectation of the estimator equals the exact gradient for every
/// baseline kind.
pub fn unbiasedness() -> CriterionOutcome {
    timed(1, "exact unbiasedness", || {
        let mut worst: f64 = 0.0;
        let mut count = 0;
        for (_, pr) in problems()? {
            let m = pr.mdp().spec().num_factors();
            for (k, fact) in [Factorization::Independent, Factorization::Independent, Factorization::chain(m)]
                .into_iter()
                .enumerate()
            {
                let p = random_policy(&pr, fact, 100 + k as u64)?;
                let exact = pr.exact_gradient(&p)?;
                for b in fitted_baselines(&pr, &p)? {
                    worst = worst.max(max_abs_diff(&pr.expected_estimate(&p, b.as_ref())?, &exact));
                    count += 1;
                }
                if p.is_independent() {
                    let opt = pr.exact_optimal_baselines(&p)?;
                    worst = worst.max(max_abs_diff(&pr.expected_estimate(&p, &opt.state_baseline())?, &exact));
                    worst = worst.max(max_abs_diff(&pr.expected_estimate(&p, &opt.action_baseline())?, &exact));
                    count += 2;
                }
            }
        }
        Ok((worst <= 1e-10, format!("{count} (fixture, policy, baseline) cases, max |error| {worst:.2e}")))
    })
}

/// `Var(b*) ≤ Var(b*(s)) ≤ Var(fitted state value), Var(none)`, strict on
/// some fixture.
pub fn variance_ordering() -> CriterionOutcome {
    timed(2, "variance ordering", || {
        const TOL: f64 = 1e-10;
        let mut ok = true;
        let mut strict = false;
        let mut parts = Vec::new();
        for (name, pr) in problems()? {
            let p = random_policy(&pr, Factorization::Independent, 200)?;
            let opt = pr.exact_optimal_baselines(&p)?;
            let v_ad = pr.exact_variance(&p, &opt.action_baseline())?.total;
            let v_state = pr.exact_variance(&p, &opt.state_baseline())?.total;
            let mut fitter =
                BaselineFitter::new(BaselineKind::StateValue, FeatureSpec::Linear, Ridge::default(), pr.mdp().horizon, 0)?;
            fitter.fit(&pr.batch(&p)?, &p)?;
            let v_fit = pr.exact_variance(&p, fitter.current(0).as_ref())?.total;
            let v_none = pr.exact_variance(&p, &ZeroBaseline)?.total;
            ok &= v_ad <= v_state + TOL && v_state <= v_fit + TOL && v_state <= v_none + TOL;
            strict |= v_state - v_ad > TOL;
            parts.push(format!(
                "{name}: {v_ad:.4} <= {v_state:.4} <= ({v_fit:.4}, {v_none:.4})"
            ));
        }
        Ok((ok && strict, format!("{}; strict gap seen: {strict}", parts.join("; "))))
    })
}

/// Closed-form excess variances match direct differences; the optimal
/// baseline has zero excess.
pub fn gap_identities() -> CriterionOutcome {
    timed(3, "variance gap identities", || {
        let mut worst: f64 = 0.0;
        for (_, pr) in problems()? {
            for seed in [300, 301] {
                let p = random_policy(&pr, Factorization::Independent, seed)?;
                let opt = pr.exact_optimal_baselines(&p)?;
                let rep = variance_report(&pr, &p, &opt.state_baseline())?;
                let t = rep.terms.expect("exact terms");
                worst = worst.max((t.i_b - t.i_b_direct.unwrap_or(f64::NAN)).abs());
                worst = worst.max((t.i_state - t.i_state_direct.unwrap_or(f64::NAN)).abs());
                let rep = variance_report(&pr, &p, &opt.action_baseline())?;
                let t = rep.terms.expect("exact terms");
                worst = worst.max(t.i_b.abs()).max(t.i_b_direct.unwrap_or(f64::NAN).abs());
            }
        }
        Ok((worst <= 1e-10, format!("max deviation {worst:.2e} over 3 fixtures x 2 policies")))
    })
}

fn random_batch(rng: &mut StreamRng, n: usize, m: usize) -> (Batch, Vec<Vec<Vec<f64>>>, f64) {
    let gamma = rng.random_range(0.5..=1.0);
    let mut trajs = Vec::with_capacity(n);
    let mut baselines = Vec::with_capacity(n);
    for _ in 0..n {
        let h = rng.random_range(1..16);
        let steps = (0..h)
            .map(|t| Step {
                state: vec![0.0],
                action: vec![0.0; m],
                reward: rng.random_range(-3.0..3.0),
                terminal: t + 1 == h,
            })
            .collect();
        trajs.push(Trajectory::new(steps, gamma));
        baselines.push((0..h).map(|_| (0..m).map(|_| rng.random_range(-2.0..2.0)).collect()).collect());
    }
    (Batch::new(trajs), baselines, gamma)
}

/// λ = 1 gives `Q̂ − b_i`; λ = 0 gives the one-step TD error.
pub fn gae_telescoping() -> CriterionOutcome {
    timed(5, "GAE telescoping", || {
        let mut rng = StreamRng::seed_from_u64(5);
        let (mut worst1, mut worst0): (f64, f64) = (0.0, 0.0);
        for _ in 0..50 {
            let (batch, b, gamma) = random_batch(&mut rng, 8, 3);
            let one = gae_advantages(&batch, &b, &GaeConfig::new(1.0, gamma)?)?;
            let zero = gae_advantages(&batch, &b, &GaeConfig::new(0.0, gamma)?)?;
            for (k, tr) in batch.trajectories.iter().enumerate() {
                let rewards: Vec<f64> = tr.steps.iter().map(|s| s.reward).collect();
                let q = returns_to_go(&rewards, gamma);
                for t in 0..tr.len() {
                    for i in 0..3 {
                        worst1 = worst1.max((one.values[k][t][i] - (q[t] - b[k][t][i])).abs());
                        let next = if t + 1 < tr.len() { b[k][t + 1][i] } else { 0.0 };
                        let td = rewards[t] + gamma * next - b[k][t][i];
                        worst0 = worst0.max((zero.values[k][t][i] - td).abs());
                    }
                }
            }
        }
        Ok((
            worst1 <= 1e-12 && worst0 <= 1e-12,
            format!("λ=1 max error {worst1:.2e}, λ=0 max error {worst0:.2e}"),
        ))
    })
}

fn mixed_policies() -> Result<Vec<FactoredPolicy>> {
    use FactorDescriptor::*;
    Ok(vec![
        FactoredPolicy::new(3, &[Continuous { dim: 1 }, Continuous { dim: 2 }], Factorization::Independent, None)?,
        FactoredPolicy::new(2, &[Categorical { cardinality: 3 }, Categorical { cardinality: 2 }], Factorization::Independent, None)?,
        FactoredPolicy::new(
            2,
            &[Categorical { cardinality: 3 }, Continuous { dim: 2 }, Categorical { cardinality: 2 }],
            Factorization::chain(3),
            None,
        )?,
    ])
}

/// Analytic per-factor scores against central differences, and the exact
/// gradient against differences of the exact return.
pub fn gradient_correctness() -> CriterionOutcome {
    timed(6, "gradient correctness", || {
        const H: f64 = 1e-6;
        let mut rng = StreamRng::seed_from_u64(6);
        let templates = mixed_policies()?;
        let mut worst_score: f64 = 0.0;
        for trial in 0..50 {
            let mut p = templates[trial % templates.len()].clone();
            let theta: Vec<f64> = (0..p.num_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
            p.set_params(&theta)?;
            let s: Vec<f64> = (0..p.state_dim()).map(|_| StandardNormal.sample(&mut rng)).collect();
            let a = p.sample(&s, &mut rng)?;
            for i in 0..p.num_factors() {
                let analytic = p.score_factor(&s, &a, i)?.to_dense(p.num_params());
                let mut fd = vec![0.0; p.num_params()];
                for (k, slot) in fd.iter_mut().enumerate() {
                    let (mut up, mut down) = (theta.clone(), theta.clone());
                    up[k] += H;
                    down[k] -= H;
                    let lp = p.with_params(&up)?.factor_log_prob(&s, &a, i)?;
                    let lm = p.with_params(&down)?.factor_log_prob(&s, &a, i)?;
                    *slot = (lp - lm) / (2.0 * H);
                }
                let err = max_abs_diff(&analytic, &fd);
                let scale = fd.iter().map(|x| x * x).sum::<f64>().sqrt();
                worst_score = worst_score.max(if scale > 1e-12 { err / scale } else { err });
            }
        }
        let mut worst_grad: f64 = 0.0;
        for (_, pr) in problems()? {
            for seed in 0..3 {
                let p = random_policy(&pr, Factorization::Independent, 600 + seed)?;
                let exact = pr.exact_gradient(&p)?;
                let fd = pr.fd_gradient(&p, H)?;
                let scale = fd.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                worst_grad = worst_grad.max(max_abs_diff(&exact, &fd) / scale);
            }
        }
        Ok((
            worst_score <= 1e-5 && worst_grad <= 1e-6,
            format!("score relative error {worst_score:.2e} (50 triples), exact gradient relative error {worst_grad:.2e}"),
        ))
    })
}

/// `Σ_v π(v) z_i(v) b_i(s, a^{-i}) = 0` for every baseline kind.
pub fn bias_free_identity() -> CriterionOutcome {
    timed(7, "bias-free baseline identity", || {
        let mut worst: f64 = 0.0;
        let mut cases = 0;
        for (_, pr) in problems()? {
            let m = pr.mdp().spec().num_factors();
            for fact in [Factorization::Independent, Factorization::chain(m)] {
                let p = random_policy(&pr, fact, 700)?;
                let batch = pr.batch(&p)?;
                let mut baselines = fitted_baselines(&pr, &p)?;
                let opt = if p.is_independent() { Some(pr.exact_optimal_baselines(&p)?) } else { None };
                let mut exact: Vec<&dyn FactorBaseline> = Vec::new();
                let (sb, ab) = match &opt {
                    Some(o) => (Some(o.state_baseline()), Some(o.action_baseline())),
                    None => (None, None),
                };
                if let (Some(s), Some(a)) = (&sb, &ab) {
                    exact.push(s);
                    exact.push(a);
                }
                let all: Vec<&dyn FactorBaseline> =
                    baselines.iter().map(|b| b.as_ref()).chain(exact.iter().copied()).collect();
                for b in all {
                    cases += 1;
                    for (_, t, s, a, _) in batch.samples() {
                        for i in 0..p.num_factors() {
                            let probs = p.categorical_probs(s, a, i)?;
                            let mut acc = vec![0.0; p.num_params()];
                            for (v, pv) in probs.iter().enumerate() {
                                let av = p.replace_factor(a, i, &[v as f64]);
                                let bv = b.value(&p, t, s, &av, i)?;
                                p.score_factor(s, &av, i)?.add_scaled_into(&mut acc, pv * bv);
                            }
                            worst = worst.max(acc.iter().fold(0.0, |m, x| m.max(x.abs())));
                        }
                    }
                }
                baselines.clear();
            }
        }
        Ok((worst <= 1e-12, format!("{cases} baselines, max |E[z_i b_i]| {worst:.2e}")))
    })
}

/// Exact and sampled marginalization against closed forms.
pub fn marginalization_consistency() -> CriterionOutcome {
    timed(8, "marginalization consistency", || {
        use FactorDescriptor::*;
        let mut rng = StreamRng::seed_from_u64(8);
        // categorical: exact flag equals the weighted sum
        let mut pc = FactoredPolicy::new(1, &[Categorical { cardinality: 3 }, Categorical { cardinality: 2 }], Factorization::Independent, None)?;
        let theta: Vec<f64> = (0..pc.num_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
        pc.set_params(&theta)?;
        let table = [[1.0, -2.0], [0.5, 4.0], [3.0, -1.5]];
        let qc: Arc<dyn QFunction> = Arc::new(FnQ(move |_, _: &[f64], e: &[f64]| {
            let mut v = 0.0;
            for x in 0..3 {
                for y in 0..2 {
                    v += e[x] * e[3 + y] * table[x][y];
                }
            }
            v
        }));
        let exact = McMarginalized { q: qc, samples: 1, exact: true, aggregate: Aggregate::Mean, seed: 0 };
        let mut worst_exact: f64 = 0.0;
        for (a0, a1) in [(0usize, 0usize), (1, 1), (2, 0)] {
            for i in 0..2 {
                let a = [a0 as f64, a1 as f64];
                let probs = pc.categorical_probs(&[1.0], &a, i)?;
                let hand: f64 = probs
                    .iter()
                    .enumerate()
                    .map(|(v, pv)| pv * if i == 0 { table[v][a1] } else { table[a0][v] })
                    .sum();
                worst_exact = worst_exact.max((exact.value(&pc, 0, &[1.0], &a, i)? - hand).abs());
            }
        }

        // Gaussian, linear Q: sampled converges within 3 SE; mean substitution is exact
        let mut pg = FactoredPolicy::new(2, &[Continuous { dim: 1 }, Continuous { dim: 2 }], Factorization::Independent, None)?;
        let theta: Vec<f64> = (0..pg.num_params()).map(|_| rng.random_range(-0.5..0.5)).collect();
        pg.set_params(&theta)?;
        let w = [1.5, -2.0, 0.7];
        let c = 0.25;
        let q: Arc<dyn QFunction> =
            Arc::new(FnQ(move |_, _: &[f64], e: &[f64]| c + w.iter().zip(e).map(|(a, b)| a * b).sum::<f64>()));
        let sampled = McMarginalized { q: q.clone(), samples: 1000, exact: false, aggregate: Aggregate::Mean, seed: 21 };
        let mean_sub = MeanMarginalized { q };
        let (mut worst_z, mut worst_mean): (f64, f64) = (0.0, 0.0);
        for _ in 0..5 {
            let s: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
            let a = pg.sample(&s, &mut rng)?;
            for i in 0..2 {
                let (mu, sd) = pg.gaussian_params(&s, &a, i)?;
                let range = pg.action_range(i);
                let mut analytic = c;
                let mut var = 0.0;
                for k in 0..3 {
                    if range.contains(&k) {
                        analytic += w[k] * mu[k - range.start];
                        var += (w[k] * sd[k - range.start]).powi(2);
                    } else {
                        analytic += w[k] * a[k];
                    }
                }
                let se = (var / 1000.0).sqrt();
                worst_z = worst_z.max((sampled.value(&pg, 0, &s, &a, i)? - analytic).abs() / se);
                worst_mean = worst_mean.max((mean_sub.value(&pg, 0, &s, &a, i)? - analytic).abs());
            }
        }
        Ok((
            worst_exact <= 1e-12 && worst_z <= 3.0 && worst_mean <= 1e-12,
            format!(
                "exact sum error {worst_exact:.2e}, sampled worst {worst_z:.2} SE at M=1000, mean substitution error {worst_mean:.2e}"
            ),
        ))
    })
}

fn determinism_configs(dir: &Path) -> Vec<ExperimentConfig> {
    let tm = ExperimentConfig {
        iterations: 4,
        trajectories: 20,
        seeds: vec![0, 1],
        out: dir.join("tm"),
        arms: vec![
            super::Arm::new("state", BaselineKind::StateValue),
            super::Arm::new(
                "mc",
                BaselineKind::McMarginalized { samples: 4, exact: false, aggregate: Aggregate::Mean },
            ),
        ],
        env: EnvConfig {
            name: "target_matching".into(),
            params: serde_json::json!({ "m": 6 }),
        },
        ..ExperimentConfig::default()
    };
    let pm = ExperimentConfig {
        env: EnvConfig {
            name: "point_mass".into(),
            params: serde_json::json!({}),
        },
        horizon: Some(20),
        iterations: 3,
        trajectories: 10,
        seeds: vec![3],
        features: FeatureSpec::Rff { features: 16, bandwidth: None },
        out: dir.join("pm"),
        arms: vec![super::Arm::new(
            "opt",
            BaselineKind::OptimalActionDependent { samples: 3 },
        )],
        ..ExperimentConfig::default()
    };
    vec![tm, pm]
}

fn csv_bytes(dir: &Path) -> Result<Vec<(String, Vec<u8>)>> {
    let curves = dir.join("curves");
    let mut out = Vec::new();
    for entry in fs::read_dir(&curves).map_err(|e| Error::io(&curves, e))? {
        let path = entry.map_err(|e| Error::io(&curves, e))?.path();
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        out.push((path.file_name().unwrap_or_default().to_string_lossy().into_owned(), bytes));
    }
    out.sort();
    Ok(out)
}

/// Two runs of the same configs produce byte-identical CSVs.
pub fn determinism(dir: &Path) -> CriterionOutcome {
    timed(9, "determinism", || {
        let mut files = 0;
        for c in determinism_configs(dir) {
            let mut first = c.clone();
            first.out = c.out.join("a");
            let mut second = c.clone();
            second.out = c.out.join("b");
            run_experiment(&first)?;
            run_experiment(&second)?;
            let (a, b) = (csv_bytes(&first.out)?, csv_bytes(&second.out)?);
            if a != b || a.is_empty() {
                return Ok((false, format!("CSV output of {} differs between runs", c.env.name)));
            }
            files += a.len();
        }
        Ok((true, format!("{files} CSV files byte-identical across reruns")))
    })
}

/// Target matching at `m ∈ {12, 100}` over 5 seeds, both arms.
pub fn solve_times(dir: &Path, budgets: (usize, usize)) -> (CriterionOutcome, Vec<SolveTimeRow>) {
    let mut rows = Vec::new();
    let mut outcome = timed(4, "solve-time comparison", || {
        let seeds: Vec<u64> = (0..5).collect();
        for (m, budget) in [(12, budgets.0), (100, budgets.1)] {
            let c = table1_config(m, budget, &seeds, &dir.join(format!("m{m}")));
            run_experiment(&c)?;
            rows.extend(super::table1_report(std::slice::from_ref(&c.out))?);
        }
        let small = &rows[0];
        let large = &rows[1];
        let passed = small.improvement_percent.abs() < 5.0 && large.improvement_percent >= 4.0;
        Ok((
            passed,
            format!(
                "m=12: {:.1} vs {:.1} ({:+.1}%), m=100: {:.1} vs {:.1} ({:+.1}%)",
                small.state_mean,
                small.action_mean,
                small.improvement_percent,
                large.state_mean,
                large.action_mean,
                large.improvement_percent
            ),
        ))
    });
    if outcome.seconds > 600.0 {
        outcome.passed = false;
        outcome.detail.push_str(", over the 10 min budget");
    }
    (outcome, rows)
}
