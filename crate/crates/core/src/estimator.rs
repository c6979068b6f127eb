//! Returns, advantages and score-function gradient estimates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{FactorBaseline, QFunction};
use crate::env::{Environment, Trajectory};
use crate::policy::FactoredPolicy;
use crate::{oracle, Error, Result};

/// `Q̂_t = r_t + γ·Q̂_{t+1}` with `Q̂` at the last step equal to its reward.
pub fn returns_to_go(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// A set of trajectories, optionally with probability weights (used when the
/// batch is a full enumeration rather than a sample).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    pub trajectories: Vec<Trajectory>,
    pub weights: Option<Vec<f64>>,
}

impl Batch {
    pub fn new(trajectories: Vec<Trajectory>) -> Self {
        Batch {
            trajectories,
            weights: None,
        }
    }

    pub fn weighted(trajectories: Vec<Trajectory>, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != trajectories.len() {
            return Err(Error::dims(trajectories.len(), weights.len(), "batch weights"));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidInput("batch weights must be finite and >= 0".into()));
        }
        Ok(Batch {
            trajectories,
            weights: Some(weights),
        })
    }

    /// Every trajectory of an enumerable environment, weighted by its
    /// probability under `policy`.
    pub fn enumerate(env: &dyn Environment, policy: &FactoredPolicy, gamma: f64) -> Result<Self> {
        let (trajs, probs) = crate::env::enumerate_trajectories(env, policy, gamma)?
            .into_iter()
            .unzip();
        Batch::weighted(trajs, probs)
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn num_steps(&self) -> usize {
        self.trajectories.iter().map(|t| t.len()).sum()
    }

    /// Weight of trajectory `k`; `1/N` for an unweighted batch.
    pub fn weight(&self, k: usize) -> f64 {
        match &self.weights {
            Some(w) => w[k],
            None => 1.0 / self.trajectories.len() as f64,
        }
    }

    /// Weighted mean of undiscounted episode returns.
    pub fn mean_return(&self) -> f64 {
        (0..self.len())
            .map(|k| self.weight(k) * self.trajectories[k].total_reward())
            .sum()
    }

    /// Standard deviation of undiscounted episode returns (population form).
    pub fn sd_return(&self) -> f64 {
        let mean = self.mean_return();
        (0..self.len())
            .map(|k| self.weight(k) * (self.trajectories[k].total_reward() - mean).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// `(trajectory index, t, state, action, Q̂)` for every step, in order.
    pub fn samples(&self) -> impl Iterator<Item = (usize, usize, &[f64], &[f64], f64)> + '_ {
        self.trajectories.iter().enumerate().flat_map(|(k, tr)| {
            tr.steps
                .iter()
                .zip(tr.returns())
                .enumerate()
                .map(move |(t, (s, &q))| (k, t, s.state.as_slice(), s.action.as_slice(), q))
        })
    }
}

/// Baseline values `b_i(s_t, ·)` indexed `[trajectory][t][factor]`.
pub type BaselineValues = Vec<Vec<Vec<f64>>>;

/// Evaluates `baseline` at every step of every trajectory.
pub fn baseline_values(
    batch: &Batch,
    policy: &FactoredPolicy,
    baseline: &dyn FactorBaseline,
) -> Result<BaselineValues> {
    batch
        .trajectories
        .par_iter()
        .map(|tr| {
            tr.steps
                .iter()
                .enumerate()
                .map(|(t, s)| baseline.values(policy, t, &s.state, &s.action))
                .collect::<Result<Vec<_>>>()
        })
        .collect()
}

/// Per-step, per-factor advantages `Â_i(s_t, a_t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageSet {
    /// `[trajectory][t][factor]`.
    pub values: Vec<Vec<Vec<f64>>>,
    /// Label of the baseline that produced the set.
    pub source: String,
}

impl AdvantageSet {
    /// `Â_i = Q̂_t − b_i`.
    pub fn monte_carlo(batch: &Batch, baselines: &BaselineValues, source: &str) -> Result<Self> {
        check_shape(batch, baselines)?;
        let values = batch
            .trajectories
            .iter()
            .zip(baselines)
            .map(|(tr, b)| {
                tr.returns()
                    .iter()
                    .zip(b)
                    .map(|(q, bt)| bt.iter().map(|bi| q - bi).collect())
                    .collect()
            })
            .collect();
        let set = AdvantageSet {
            values,
            source: source.to_string(),
        };
        set.check_finite()?;
        Ok(set)
    }

    /// Advantages that ignore baselines entirely: `Â_i = Q̂_t` for `m` factors.
    pub fn returns(batch: &Batch, m: usize) -> Self {
        AdvantageSet {
            values: batch
                .trajectories
                .iter()
                .map(|tr| tr.returns().iter().map(|&q| vec![q; m]).collect())
                .collect(),
            source: "none".into(),
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.values.iter().flatten().flatten().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("non-finite advantage from `{}`", self.source)))
        }
    }

    /// Shifts and scales every entry to zero mean and unit variance across
    /// the whole batch. A constant set is only centered.
    pub fn whiten(&mut self) {
        let all: Vec<f64> = self.values.iter().flatten().flatten().copied().collect();
        if all.is_empty() {
            return;
        }
        let n = all.len() as f64;
        let mean = all.iter().sum::<f64>() / n;
        let var = all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let scale = if var > 1e-16 { 1.0 / var.sqrt() } else { 1.0 };
        for v in self.values.iter_mut().flatten().flatten() {
            *v = (*v - mean) * scale;
        }
    }
}

fn check_shape(batch: &Batch, baselines: &BaselineValues) -> Result<()> {
    if baselines.len() != batch.len() {
        return Err(Error::dims(batch.len(), baselines.len(), "baseline trajectories"));
    }
    for (tr, b) in batch.trajectories.iter().zip(baselines) {
        if b.len() != tr.len() {
            return Err(Error::dims(tr.len(), b.len(), "baseline steps"));
        }
    }
    Ok(())
}

/// Parameters of generalized advantage estimation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaeConfig {
    pub lambda: f64,
    pub gamma: f64,
}

impl GaeConfig {
    pub fn new(lambda: f64, gamma: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::InvalidInput(format!("GAE λ = {lambda} outside [0, 1]")));
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::InvalidInput(format!("γ = {gamma} outside (0, 1]")));
        }
        Ok(GaeConfig { lambda, gamma })
    }
}

/// `δ_t^i = r_t + γ·b_i(t+1) − b_i(t)` with a zero bootstrap after the last
/// step, and `Â_t^i = Σ_k (γλ)^k δ_{t+k}^i`.
pub fn gae_advantages(
    batch: &Batch,
    baselines: &BaselineValues,
    config: &GaeConfig,
) -> Result<AdvantageSet> {
    check_shape(batch, baselines)?;
    let GaeConfig { lambda, gamma } = GaeConfig::new(config.lambda, config.gamma)?;
    let values = batch
        .trajectories
        .iter()
        .zip(baselines)
        .map(|(tr, b)| {
            let h = tr.len();
            let m = b.first().map_or(0, |v| v.len());
            let mut out = vec![vec![0.0; m]; h];
            let mut acc = vec![0.0; m];
            for t in (0..h).rev() {
                let r = tr.steps[t].reward;
                for i in 0..m {
                    let next = if t + 1 < h { b[t + 1][i] } else { 0.0 };
                    let delta = r + gamma * next - b[t][i];
                    acc[i] = delta + gamma * lambda * acc[i];
                    out[t][i] = acc[i];
                }
            }
            out
        })
        .collect();
    let set = AdvantageSet {
        values,
        source: format!("gae(λ={lambda})"),
    };
    set.check_finite()?;
    Ok(set)
}

/// Estimator switches.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EstimatorOptions {
    /// Weight step `t` by `γ^t`, which makes the estimate unbiased for the
    /// discounted objective when `γ < 1`.
    #[serde(default)]
    pub discount_scores: bool,
}

/// Diagnostic terms of the variance decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceTerms {
    /// Whether the terms are exact expectations or Monte Carlo estimates.
    pub exact: bool,
    /// `E[Z_i]` per factor.
    pub z: Vec<f64>,
    /// `E[Y_i]` per factor.
    pub y: Vec<f64>,
    /// Excess variance of the evaluated baseline over the optimal
    /// action-dependent one.
    pub i_b: f64,
    /// Excess variance of the optimal state baseline over the optimal
    /// action-dependent one.
    pub i_state: f64,
    /// Standard errors of the two gaps (Monte Carlo mode only).
    pub i_b_se: Option<f64>,
    pub i_state_se: Option<f64>,
    /// `Var(b) − Var(b*)` computed directly by enumeration (exact mode only).
    pub i_b_direct: Option<f64>,
    pub i_state_direct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientReport {
    pub gradient: Vec<f64>,
    /// Trace of the covariance of per-trajectory contributions.
    pub variance: f64,
    pub num_trajectories: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub terms: Option<VarianceTerms>,
}

impl GradientReport {
    pub fn norm(&self) -> f64 {
        self.gradient.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// Contribution `Σ_t Σ_i w_t·z_i(s_t, a_t)·Â_t^i` of every trajectory.
pub fn trajectory_contributions(
    batch: &Batch,
    policy: &FactoredPolicy,
    advantages: &AdvantageSet,
    options: EstimatorOptions,
) -> Result<Vec<Vec<f64>>> {
    if advantages.values.len() != batch.len() {
        return Err(Error::dims(batch.len(), advantages.values.len(), "advantage trajectories"));
    }
    let m = policy.num_factors();
    let n = policy.num_params();
    batch
        .trajectories
        .par_iter()
        .zip(&advantages.values)
        .map(|(tr, adv)| {
            if adv.len() != tr.len() {
                return Err(Error::dims(tr.len(), adv.len(), "advantage steps"));
            }
            let mut g = vec![0.0; n];
            let mut discount = 1.0;
            for (step, a) in tr.steps.iter().zip(adv) {
                if a.len() != m {
                    return Err(Error::dims(m, a.len(), "advantage factors"));
                }
                let w = if options.discount_scores { discount } else { 1.0 };
                for (i, ai) in a.iter().enumerate() {
                    policy
                        .score_factor(&step.state, &step.action, i)?
                        .add_scaled_into(&mut g, w * ai);
                }
                discount *= tr.gamma();
            }
            Ok(g)
        })
        .collect()
}

/// Weighted mean and trace covariance of per-trajectory contributions. An
/// unweighted batch uses the unbiased `N − 1` normalization.
pub fn reduce_contributions(batch: &Batch, contributions: &[Vec<f64>], dim: usize) -> (Vec<f64>, f64) {
    let mut mean = vec![0.0; dim];
    for (k, g) in contributions.iter().enumerate() {
        let w = batch.weight(k);
        for (m, gi) in mean.iter_mut().zip(g) {
            *m += w * gi;
        }
    }
    let ss: f64 = contributions
        .iter()
        .enumerate()
        .map(|(k, g)| {
            batch.weight(k) * g.iter().zip(&mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
        })
        .sum();
    let variance = match batch.weights {
        Some(_) => ss,
        None if contributions.len() > 1 => {
            let n = contributions.len() as f64;
            ss * n / (n - 1.0)
        }
        None => 0.0,
    };
    (mean, variance)
}

/// Gradient estimate from precomputed advantages.
pub fn gradient_from_advantages(
    batch: &Batch,
    policy: &FactoredPolicy,
    advantages: &AdvantageSet,
    options: EstimatorOptions,
) -> Result<GradientReport> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let contributions = trajectory_contributions(batch, policy, advantages, options)?;
    let (gradient, variance) = reduce_contributions(batch, &contributions, policy.num_params());
    Ok(GradientReport {
        gradient,
        variance,
        num_trajectories: batch.len(),
        terms: None,
    })
}

/// `g = mean_τ Σ_t Σ_i z_i·(Q̂_t − b_i(s_t, a_t^{-i}))`.
pub fn pg_estimate(
    batch: &Batch,
    policy: &FactoredPolicy,
    baseline: &dyn FactorBaseline,
    options: EstimatorOptions,
) -> Result<GradientReport> {
    let b = baseline_values(batch, policy, baseline)?;
    let adv = AdvantageSet::monte_carlo(batch, &b, baseline.label())?;
    gradient_from_advantages(batch, policy, &adv, options)
}

/// Same estimator for a DAG-factorized policy: scores are conditioned on
/// parents and each `b_i` must only read non-descendants of factor `i`.
pub fn pg_estimate_dag(
    batch: &Batch,
    policy: &FactoredPolicy,
    baseline: &dyn FactorBaseline,
    options: EstimatorOptions,
) -> Result<GradientReport> {
    pg_estimate(batch, policy, baseline, options)
}

/// Where variance diagnostics are computed.
pub enum VarianceSource<'a> {
    /// Exact expectations over every trajectory of an enumerable environment.
    Exact { env: &'a dyn Environment, gamma: f64 },
    /// Monte Carlo over a sampled batch, marginalizing each factor with
    /// `samples` draws through `q`.
    Sampled {
        batch: &'a Batch,
        q: &'a dyn QFunction,
        samples: usize,
        seed: u64,
    },
}

/// Gradient report with the `Z_i`, `Y_i` aggregates and the variance gaps
/// `I_b` and `I_{b*(s)}`.
pub fn variance_report(
    policy: &FactoredPolicy,
    source: VarianceSource<'_>,
    baseline: &dyn FactorBaseline,
) -> Result<GradientReport> {
    match source {
        VarianceSource::Exact { env, gamma } => {
            let problem = oracle::EnumerableProblem::new(env, gamma)?;
            oracle::variance_report(&problem, policy, baseline)
        }
        VarianceSource::Sampled {
            batch,
            q,
            samples,
            seed,
        } => sampled_variance_report(policy, batch, q, baseline, samples, seed),
    }
}

fn sampled_variance_report(
    policy: &FactoredPolicy,
    batch: &Batch,
    q: &dyn QFunction,
    baseline: &dyn FactorBaseline,
    samples: usize,
    seed: u64,
) -> Result<GradientReport> {
    use crate::rng::{hash_f64s, StreamRng};
    use rand::SeedableRng;

    if samples == 0 {
        return Err(Error::InvalidInput("need at least one marginalization sample".into()));
    }
    let mut report = pg_estimate(batch, policy, baseline, EstimatorOptions::default())?;
    let m = policy.num_factors();
    let steps: Vec<_> = batch.samples().collect();
    let per_step = steps
        .par_iter()
        .map(|&(k, t, s, a, _)| {
            let mut rng = StreamRng::seed_from_u64(hash_f64s(seed ^ (t as u64), s) ^ hash_f64s(k as u64, a));
            let mut z = vec![0.0; m];
            let mut y = vec![0.0; m];
            for i in 0..m {
                let (zi, yi) = crate::baselines::score_weighted_moments(policy, q, t, s, a, i, samples, &mut rng)?;
                z[i] = zi;
                y[i] = yi;
            }
            // b*(s): ratio over joint draws.
            let (mut num, mut den) = (0.0, 0.0);
            for _ in 0..samples {
                let alt = policy.sample(s, &mut rng)?;
                let w = norm_sq_joint(policy, s, &alt)?;
                num += w * q.q_encoded(t, s, &policy.encode_action(&alt))?;
                den += w;
            }
            let b_state = if den > 0.0 { num / den } else { 0.0 };
            let b = baseline.values(policy, t, s, a)?;
            let gap_b: f64 = (0..m).map(|i| gap(z[i], y[i], b[i])).sum();
            let gap_s: f64 = (0..m).map(|i| gap(z[i], y[i], b_state)).sum();
            Ok((k, z, y, gap_b, gap_s))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = per_step.len() as f64;
    let mut z = vec![0.0; m];
    let mut y = vec![0.0; m];
    for (_, zs, ys, _, _) in &per_step {
        for i in 0..m {
            z[i] += zs[i] / n;
            y[i] += ys[i] / n;
        }
    }
    let mean_se = |f: &dyn Fn(&(usize, Vec<f64>, Vec<f64>, f64, f64)) -> f64| {
        let mean = per_step.iter().map(f).sum::<f64>() / n;
        let var = per_step.iter().map(|r| (f(r) - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        (mean, (var / n).sqrt())
    };
    let (i_b, i_b_se) = mean_se(&|r| r.3);
    let (i_state, i_state_se) = mean_se(&|r| r.4);
    report.terms = Some(VarianceTerms {
        exact: false,
        z,
        y,
        i_b,
        i_state,
        i_b_se: Some(i_b_se),
        i_state_se: Some(i_state_se),
        i_b_direct: None,
        i_state_direct: None,
    });
    Ok(report)
}

/// `Z·(b − Y/Z)²`, zero when `Z` vanishes.
pub(crate) fn gap(z: f64, y: f64, b: f64) -> f64 {
    if z > 0.0 {
        z * (b - y / z).powi(2)
    } else {
        0.0
    }
}

fn norm_sq_joint(policy: &FactoredPolicy, state: &[f64], action: &[f64]) -> Result<f64> {
    (0..policy.num_factors())
        .map(|i| Ok(policy.score_factor(state, action, i)?.norm_sq()))
        .sum()
}
