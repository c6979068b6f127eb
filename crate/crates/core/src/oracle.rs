//! Exact expectations on small enumerable problems, used as ground truth.
//!
//! Exact variances treat one `(t, τ)` pair as the sampling unit, drawn with
//! probability `p(τ)·ρ(t)` where `ρ(t) ∝ γ^t` over the horizon. The estimator
//! random variable is `Σ_i z_i(s_t, a_t)·(Q̂_t − b_i)`, so optimal baselines
//! are keyed by `(t, s)` and the closed-form gaps hold exactly.

use std::collections::HashMap;

use crate::baselines::{FactorBaseline, FnBaseline, QFunction};
use crate::env::{EnumeratedPath, TabularMdp};
use crate::env::Environment;
use crate::estimator::{
    gap, gradient_from_advantages, AdvantageSet, Batch, EstimatorOptions, GradientReport,
    VarianceTerms,
};
use crate::policy::{FactoredPolicy, HeadKind};
use crate::{Error, Result};

pub const MAX_HORIZON: usize = 4;
pub const MAX_STATES: usize = 8;
pub const MAX_CARDINALITY: usize = 4;

const FIXTURES: [(&str, &str); 3] = [
    ("bandit_2factor", include_str!("../fixtures/bandit_2factor.json")),
    ("two_state_h2", include_str!("../fixtures/two_state_h2.json")),
    ("three_state_h3", include_str!("../fixtures/three_state_h3.json")),
];

/// Names of the bundled fixture problems.
pub fn fixture_names() -> Vec<&'static str> {
    FIXTURES.iter().map(|f| f.0).collect()
}

/// A bundled fixture problem by name.
pub fn fixture(name: &str) -> Result<TabularMdp> {
    let (_, text) = FIXTURES.iter().find(|f| f.0 == name).ok_or_else(|| {
        Error::Config(format!(
            "unknown fixture `{name}`; valid names: {}",
            fixture_names().join(", ")
        ))
    })?;
    let mdp: TabularMdp = serde_json::from_str(text)?;
    mdp.validated()
}

/// A tabular MDP with its trajectories expanded once.
#[derive(Debug, Clone)]
pub struct EnumerableProblem {
    mdp: TabularMdp,
    gamma: f64,
    paths: Vec<EnumeratedPath>,
}

impl EnumerableProblem {
    pub fn new(env: &dyn Environment, gamma: f64) -> Result<Self> {
        let mdp = env.as_tabular().ok_or_else(|| {
            Error::Unsupported(format!(
                "environment `{}` is not enumerable; use sampled diagnostics",
                env.name()
            ))
        })?;
        EnumerableProblem::from_mdp(mdp.clone(), gamma)
    }

    pub fn from_mdp(mdp: TabularMdp, gamma: f64) -> Result<Self> {
        if mdp.horizon > MAX_HORIZON
            || mdp.num_states > MAX_STATES
            || mdp.factor_cardinalities.iter().any(|&k| k > MAX_CARDINALITY)
        {
            return Err(Error::InvalidInput(format!(
                "oracle problems need horizon <= {MAX_HORIZON}, <= {MAX_STATES} states and \
                 cardinalities <= {MAX_CARDINALITY}"
            )));
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::InvalidInput(format!("γ = {gamma} outside (0, 1]")));
        }
        let paths = mdp.enumerate()?;
        Ok(EnumerableProblem { mdp, gamma, paths })
    }

    /// Uses the MDP's own discount.
    pub fn with_mdp_discount(mdp: TabularMdp) -> Result<Self> {
        let g = mdp.discount;
        EnumerableProblem::from_mdp(mdp, g)
    }

    pub fn mdp(&self) -> &TabularMdp {
        &self.mdp
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn num_paths(&self) -> usize {
        self.paths.len()
    }

    fn check_policy(&self, policy: &FactoredPolicy) -> Result<()> {
        if policy.state_dim() != self.mdp.num_states {
            return Err(Error::dims(self.mdp.num_states, policy.state_dim(), "oracle policy state"));
        }
        let cards: Vec<usize> = policy
            .heads()
            .iter()
            .map(|h| match h.kind {
                HeadKind::Categorical { cardinality } => Ok(cardinality),
                HeadKind::Gaussian { .. } => Err(Error::Unsupported(
                    "the oracle only handles categorical factors".into(),
                )),
            })
            .collect::<Result<_>>()?;
        if cards != self.mdp.factor_cardinalities {
            return Err(Error::InvalidInput("policy factors do not match the MDP".into()));
        }
        Ok(())
    }

    /// Every trajectory weighted by its probability under `policy`.
    pub fn batch(&self, policy: &FactoredPolicy) -> Result<Batch> {
        self.check_policy(policy)?;
        let trajs = self
            .paths
            .iter()
            .map(|p| p.to_trajectory(&self.mdp, self.gamma))
            .collect();
        let probs = self
            .paths
            .iter()
            .map(|p| p.probability(&self.mdp, policy))
            .collect::<Result<Vec<_>>>()?;
        Batch::weighted(trajs, probs)
    }

    /// `η = Σ_τ p(τ)·Σ_t γ^t r_t`.
    pub fn exact_eta(&self, policy: &FactoredPolicy) -> Result<f64> {
        let batch = self.batch(policy)?;
        Ok((0..batch.len())
            .map(|k| batch.weight(k) * batch.trajectories[k].discounted_return())
            .sum())
    }

    /// `∇η = Σ_τ p(τ)·Σ_t γ^t ∇log π(a_t|s_t)·Q̂_t`.
    pub fn exact_gradient(&self, policy: &FactoredPolicy) -> Result<Vec<f64>> {
        let batch = self.batch(policy)?;
        let adv = AdvantageSet::returns(&batch, policy.num_factors());
        Ok(gradient_from_advantages(&batch, policy, &adv, discounted())?.gradient)
    }

    /// Central finite differences of [`exact_eta`](Self::exact_eta).
    pub fn fd_gradient(&self, policy: &FactoredPolicy, h: f64) -> Result<Vec<f64>> {
        let theta = policy.params().to_vec();
        (0..theta.len())
            .map(|k| {
                let mut tp = theta.clone();
                let mut tm = theta.clone();
                tp[k] += h;
                tm[k] -= h;
                let fp = self.exact_eta(&policy.with_params(&tp)?)?;
                let fm = self.exact_eta(&policy.with_params(&tm)?)?;
                Ok((fp - fm) / (2.0 * h))
            })
            .collect()
    }

    /// Exact expectation of the baselined estimator, with scores weighted by
    /// `γ^t` so it targets `∇η`.
    pub fn expected_estimate(
        &self,
        policy: &FactoredPolicy,
        baseline: &dyn FactorBaseline,
    ) -> Result<Vec<f64>> {
        let batch = self.batch(policy)?;
        let b = crate::estimator::baseline_values(&batch, policy, baseline)?;
        let adv = AdvantageSet::monte_carlo(&batch, &b, baseline.label())?;
        Ok(gradient_from_advantages(&batch, policy, &adv, discounted())?.gradient)
    }

    /// `ρ(t) = γ^t / Σ_{k<H} γ^k`.
    pub fn time_weights(&self) -> Vec<f64> {
        let w: Vec<f64> = (0..self.mdp.horizon)
            .map(|t| self.gamma.powi(t as i32))
            .collect();
        let total: f64 = w.iter().sum();
        w.into_iter().map(|x| x / total).collect()
    }

    fn joint_probs(&self, policy: &FactoredPolicy, s: usize) -> Result<Vec<f64>> {
        let state = self.mdp.one_hot(s);
        (0..self.mdp.num_joint_actions())
            .map(|j| Ok(policy.log_prob(&state, &self.action(j))?.exp()))
            .collect()
    }

    fn action(&self, j: usize) -> Vec<f64> {
        self.mdp.joint_action(j).into_iter().map(|v| v as f64).collect()
    }

    /// `Q_t(s, a)` by backward induction, `[t][s][joint]`.
    pub fn q_table(&self, policy: &FactoredPolicy) -> Result<QTable> {
        self.check_policy(policy)?;
        let (h, ns, na) = (self.mdp.horizon, self.mdp.num_states, self.mdp.num_joint_actions());
        let pi: Vec<Vec<f64>> = (0..ns).map(|s| self.joint_probs(policy, s)).collect::<Result<_>>()?;
        let mut q = vec![vec![vec![0.0; na]; ns]; h];
        let mut v_next = vec![0.0; ns];
        for t in (0..h).rev() {
            for s in 0..ns {
                for j in 0..na {
                    let future: f64 = self.mdp.transitions[s][j]
                        .iter()
                        .zip(&v_next)
                        .map(|(p, v)| p * v)
                        .sum();
                    let cont = if t + 1 < h { self.gamma * future } else { 0.0 };
                    q[t][s][j] = self.mdp.rewards[s][j] + cont;
                }
            }
            v_next = (0..ns)
                .map(|s| pi[s].iter().zip(&q[t][s]).map(|(p, qv)| p * qv).sum())
                .collect();
        }
        Ok(QTable {
            mdp: self.mdp.clone(),
            values: q,
        })
    }

    /// Marginal state distributions `d_t(s)` by forward propagation.
    pub fn state_distribution(&self, policy: &FactoredPolicy) -> Result<Vec<Vec<f64>>> {
        self.check_policy(policy)?;
        let ns = self.mdp.num_states;
        let pi: Vec<Vec<f64>> = (0..ns).map(|s| self.joint_probs(policy, s)).collect::<Result<_>>()?;
        let mut d = vec![self.mdp.initial.clone()];
        for _ in 1..self.mdp.horizon {
            let prev = d.last().expect("nonempty");
            let mut next = vec![0.0; ns];
            for s in 0..ns {
                for (j, pj) in pi[s].iter().enumerate() {
                    for (s2, p) in self.mdp.transitions[s][j].iter().enumerate() {
                        next[s2] += prev[s] * pj * p;
                    }
                }
            }
            d.push(next);
        }
        Ok(d)
    }

    /// Per-sample variance of the estimator under `baseline`, directly by
    /// enumeration, together with the per-factor decomposition.
    pub fn exact_variance(
        &self,
        policy: &FactoredPolicy,
        baseline: &dyn FactorBaseline,
    ) -> Result<ExactVariance> {
        let batch = self.batch(policy)?;
        let rho = self.time_weights();
        let (m, n) = (policy.num_factors(), policy.num_params());
        let mut mean = vec![0.0; n];
        let mut mean_i = vec![vec![0.0; n]; m];
        let mut mean_q = vec![vec![0.0; n]; m];
        let mut second = 0.0;
        let mut second_i = vec![0.0; m];
        for (k, t, s, a, q) in batch.samples() {
            let w = batch.weight(k) * rho[t];
            if w == 0.0 {
                continue;
            }
            let b = baseline.values(policy, t, s, a)?;
            let mut x = vec![0.0; n];
            for i in 0..m {
                let z = policy.score_factor(s, a, i)?;
                let adv = q - b[i];
                let mut gi = vec![0.0; n];
                z.add_scaled_into(&mut gi, adv);
                z.add_scaled_into(&mut mean_q[i], w * q);
                second_i[i] += w * gi.iter().map(|v| v * v).sum::<f64>();
                for c in 0..n {
                    mean_i[i][c] += w * gi[c];
                    x[c] += gi[c];
                }
            }
            second += w * x.iter().map(|v| v * v).sum::<f64>();
            for c in 0..n {
                mean[c] += w * x[c];
            }
        }
        let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let total = second - sq(&mean);
        let per_factor: Vec<f64> = (0..m).map(|i| second_i[i] - sq(&mean_i[i])).collect();
        let mut cross = 0.0;
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    cross += dot(&mean_q[i], &mean_q[j]);
                }
            }
        }
        Ok(ExactVariance {
            total,
            decomposition: per_factor.iter().sum::<f64>() - cross,
            per_factor,
            cross,
            mean,
        })
    }

    /// `Z_i` and `Y_i` for every `(t, s, i, a^{-i})`, with `a^{-i}` carried
    /// as the joint index whose factor `i` is zero.
    fn moments(&self, policy: &FactoredPolicy, q: &QTable) -> Result<HashMap<Key, (f64, f64)>> {
        require_independent(policy)?;
        let mut out = HashMap::new();
        for t in 0..self.mdp.horizon {
            for s in 0..self.mdp.num_states {
                let state = self.mdp.one_hot(s);
                for j in 0..self.mdp.num_joint_actions() {
                    let a = self.mdp.joint_action(j);
                    for i in 0..policy.num_factors() {
                        if a[i] != 0 {
                            continue;
                        }
                        let action = self.action(j);
                        let probs = policy.categorical_probs(&state, &action, i)?;
                        let (mut z, mut y) = (0.0, 0.0);
                        for (v, p) in probs.iter().enumerate() {
                            let mut av = a.clone();
                            av[i] = v;
                            let alt = policy.replace_factor(&action, i, &[v as f64]);
                            let w = p * policy.score_factor(&state, &alt, i)?.norm_sq();
                            z += w;
                            y += w * q.values[t][s][self.mdp.joint_index(&av)];
                        }
                        out.insert((t, s, i, j), (z, y));
                    }
                }
            }
        }
        Ok(out)
    }

    /// Exact `b*(t, s)` and `b_i*(t, s, a^{-i})` tables.
    pub fn exact_optimal_baselines(&self, policy: &FactoredPolicy) -> Result<OptimalBaselines> {
        let q = self.q_table(policy)?;
        let moments = self.moments(policy, &q)?;
        let mut action = HashMap::with_capacity(moments.len());
        for (&key, &(z, y)) in &moments {
            if z <= 0.0 {
                return Err(Error::ZeroDenominator(format!(
                    "factor {} has a vanishing score norm at t = {}, s = {}",
                    key.2, key.0, key.1
                )));
            }
            action.insert(key, y / z);
        }
        let mut state = vec![vec![0.0; self.mdp.num_states]; self.mdp.horizon];
        for (t, row) in state.iter_mut().enumerate() {
            for (s, b) in row.iter_mut().enumerate() {
                let oh = self.mdp.one_hot(s);
                let pi = self.joint_probs(policy, s)?;
                let (mut num, mut den) = (0.0, 0.0);
                for (j, p) in pi.iter().enumerate() {
                    let w = p * crate::baselines::score_norm_sq(policy, &oh, &self.action(j))?;
                    num += w * q.values[t][s][j];
                    den += w;
                }
                if den <= 0.0 {
                    return Err(Error::ZeroDenominator(format!(
                        "joint score norm vanishes at t = {t}, s = {s}"
                    )));
                }
                *b = num / den;
            }
        }
        Ok(OptimalBaselines {
            mdp: self.mdp.clone(),
            state,
            action,
        })
    }

    /// Closed-form gaps `I_b = Σ_i E[Z_i (b_i − Y_i/Z_i)²]` and
    /// `I_{b*(s)} = Σ_i E[Z_i (b*(s) − Y_i/Z_i)²]`, with expectations over
    /// `ρ(t)·d_t(s)·π(a^{-i}|s)`.
    pub fn closed_form_terms(
        &self,
        policy: &FactoredPolicy,
        baseline: &dyn FactorBaseline,
    ) -> Result<VarianceTerms> {
        let q = self.q_table(policy)?;
        let moments = self.moments(policy, &q)?;
        let opt = self.exact_optimal_baselines(policy)?;
        let d = self.state_distribution(policy)?;
        let rho = self.time_weights();
        let m = policy.num_factors();
        let (mut zs, mut ys) = (vec![0.0; m], vec![0.0; m]);
        let (mut i_b, mut i_state) = (0.0, 0.0);
        for (&(t, s, i, j), &(z, y)) in &moments {
            let state = self.mdp.one_hot(s);
            let action = self.action(j);
            // π(a^{-i}|s): product over the other factors.
            let mut p_rest = 1.0;
            for k in 0..m {
                if k != i {
                    p_rest *= policy.categorical_probs(&state, &action, k)?[action[k] as usize];
                }
            }
            let w = rho[t] * d[t][s] * p_rest;
            if w == 0.0 {
                continue;
            }
            zs[i] += w * z;
            ys[i] += w * y;
            let b = baseline.value(policy, t, &state, &action, i)?;
            i_b += w * gap(z, y, b);
            i_state += w * gap(z, y, opt.state[t][s]);
        }
        Ok(VarianceTerms {
            exact: true,
            z: zs,
            y: ys,
            i_b,
            i_state,
            i_b_se: None,
            i_state_se: None,
            i_b_direct: None,
            i_state_direct: None,
        })
    }
}

type Key = (usize, usize, usize, usize);

fn discounted() -> EstimatorOptions {
    EstimatorOptions {
        discount_scores: true,
    }
}

fn require_independent(policy: &FactoredPolicy) -> Result<()> {
    if !policy.is_independent() {
        return Err(Error::Unsupported(
            "exact optimal baselines are implemented for independent factors".into(),
        ));
    }
    Ok(())
}

/// Direct enumeration of the estimator's variance.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactVariance {
    /// Trace covariance of `Σ_i g_i`.
    pub total: f64,
    /// `Var(g_i)` per factor.
    pub per_factor: Vec<f64>,
    /// `Σ_i Σ_{j≠i} M_ij`, with `M_ij = E[z_i Q̂]ᵀE[z_j Q̂]`.
    pub cross: f64,
    /// `Σ_i Var(g_i) − Σ_i Σ_{j≠i} M_ij`.
    pub decomposition: f64,
    /// Mean of the per-sample estimator.
    pub mean: Vec<f64>,
}

/// Exact `Q_t(s, a)` as a function over encoded actions. Encoded categorical
/// slots are treated multilinearly, so a probability vector gives the
/// expectation of `Q` over that factor.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    mdp: TabularMdp,
    /// `[t][s][joint]`.
    pub values: Vec<Vec<Vec<f64>>>,
}

impl QTable {
    pub fn get(&self, t: usize, s: usize, action: &[usize]) -> f64 {
        self.values[t][s][self.mdp.joint_index(action)]
    }
}

impl QFunction for QTable {
    fn q_encoded(&self, t: usize, state: &[f64], encoded: &[f64]) -> Result<f64> {
        let s = self.mdp.state_index(state)?;
        let cards = &self.mdp.factor_cardinalities;
        let total: usize = cards.iter().sum();
        if encoded.len() != total {
            return Err(Error::dims(total, encoded.len(), "encoded tabular action"));
        }
        if t >= self.values.len() {
            return Err(Error::InvalidInput(format!("t = {t} beyond the horizon")));
        }
        let mut q = 0.0;
        for j in 0..self.mdp.num_joint_actions() {
            let a = self.mdp.joint_action(j);
            let mut w = 1.0;
            let mut off = 0;
            for (f, &k) in cards.iter().enumerate() {
                w *= encoded[off + a[f]];
                off += k;
            }
            if w != 0.0 {
                q += w * self.values[t][s][j];
            }
        }
        Ok(q)
    }
}

/// Exact optimal baselines of an independent categorical policy.
#[derive(Debug, Clone)]
pub struct OptimalBaselines {
    mdp: TabularMdp,
    /// `b*(t, s)`, indexed `[t][s]`.
    pub state: Vec<Vec<f64>>,
    action: HashMap<Key, f64>,
}

impl OptimalBaselines {
    /// `b_i*(t, s, a^{-i})`; factor `i`'s entry of `action` is ignored.
    pub fn action_value(&self, t: usize, s: usize, action: &[usize], i: usize) -> f64 {
        let mut a = action.to_vec();
        a[i] = 0;
        self.action[&(t, s, i, self.mdp.joint_index(&a))]
    }

    pub fn state_baseline(&self) -> impl FactorBaseline + '_ {
        FnBaseline::new("optimal_state_exact", move |t, s, _a, _i| {
            Ok(self.state[t][self.mdp.state_index(s)?])
        })
    }

    pub fn action_baseline(&self) -> impl FactorBaseline + '_ {
        FnBaseline::new("optimal_action_dependent_exact", move |t, s, a, i| {
            let idx = self.mdp.action_indices(a)?;
            Ok(self.action_value(t, self.mdp.state_index(s)?, &idx, i))
        })
    }
}

/// Exact gradient, per-sample variance, closed-form gaps and their direct
/// counterparts computed by enumeration.
pub fn variance_report(
    problem: &EnumerableProblem,
    policy: &FactoredPolicy,
    baseline: &dyn FactorBaseline,
) -> Result<GradientReport> {
    let gradient = problem.expected_estimate(policy, baseline)?;
    let var_b = problem.exact_variance(policy, baseline)?;
    let opt = problem.exact_optimal_baselines(policy)?;
    let var_star = problem.exact_variance(policy, &opt.action_baseline())?;
    let var_state = problem.exact_variance(policy, &opt.state_baseline())?;
    let mut terms = problem.closed_form_terms(policy, baseline)?;
    terms.i_b_direct = Some(var_b.total - var_star.total);
    terms.i_state_direct = Some(var_state.total - var_star.total);
    Ok(GradientReport {
        gradient,
        variance: var_b.total,
        num_trajectories: problem.num_paths(),
        terms: Some(terms),
    })
}

#[cfg(test)]
mod tests;
