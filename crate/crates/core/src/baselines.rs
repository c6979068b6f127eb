//! Baselines: state-value, optimal state, marginalized Q, optimal
//! action-dependent and per-factor DAG baselines.
//!
//! Every baseline for factor `i` is a deterministic function of
//! `(t, s, a^{-i})` (or of the non-descendants of `i` for DAG policies), so
//! subtracting it never biases the gradient. Monte Carlo marginalization draws
//! from a generator keyed on exactly those inputs.

use std::collections::HashMap;
use std::ops::Range;
use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::estimator::Batch;
use crate::features::{median_bandwidth, FeatureMap, Regressor, Ridge, RffMap};
use crate::policy::{FactorSupport, FactoredPolicy, HeadKind};
use crate::rng::{derive_seed, hash_f64s, stream, Stream, StreamRng};
use crate::{Error, Result};

/// An action-value function over encoded actions.
pub trait QFunction: Send + Sync {
    /// `Q(t, s, a)` with `a` in encoded form. Categorical slots may hold any
    /// probability vector, not only one-hot rows.
    fn q_encoded(&self, t: usize, state: &[f64], encoded: &[f64]) -> Result<f64>;

    /// Values with encoded slots `range` replaced by each candidate in turn.
    fn q_substituted(
        &self,
        t: usize,
        state: &[f64],
        encoded: &[f64],
        range: Range<usize>,
        candidates: &[Vec<f64>],
    ) -> Result<Vec<f64>> {
        let mut x = encoded.to_vec();
        candidates
            .iter()
            .map(|c| {
                x[range.clone()].copy_from_slice(c);
                self.q_encoded(t, state, &x)
            })
            .collect()
    }
}

/// Baseline values for one factor at a time.
pub trait FactorBaseline: Send + Sync {
    fn label(&self) -> &str;

    /// `b_i` at step `t`. Implementations must not read factor `i`'s slots
    /// of `action`, nor those of its descendants.
    fn value(
        &self,
        policy: &FactoredPolicy,
        t: usize,
        state: &[f64],
        action: &[f64],
        factor: usize,
    ) -> Result<f64>;

    fn values(
        &self,
        policy: &FactoredPolicy,
        t: usize,
        state: &[f64],
        action: &[f64],
    ) -> Result<Vec<f64>> {
        (0..policy.num_factors())
            .map(|i| self.value(policy, t, state, action, i))
            .collect()
    }
}

/// How marginalization samples are combined.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregate {
    #[default]
    Mean,
    /// Experimental: the sample maximum. Still bias-free, but no longer an
    /// estimate of the marginal.
    Max,
}

fn default_samples() -> usize {
    10
}

/// Which baseline an experiment arm uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaselineKind {
    None,
    StateValue,
    OptimalState,
    McMarginalized {
        #[serde(default = "default_samples")]
        samples: usize,
        /// Enumerate categorical factors instead of sampling them.
        #[serde(default)]
        exact: bool,
        #[serde(default)]
        aggregate: Aggregate,
    },
    MeanMarginalized,
    OptimalActionDependent {
        #[serde(default = "default_samples")]
        samples: usize,
    },
    DagPerFactor,
}

impl BaselineKind {
    pub fn validate(&self) -> Result<()> {
        match self {
            BaselineKind::McMarginalized { samples: 0, .. }
            | BaselineKind::OptimalActionDependent { samples: 0 } => Err(Error::Config(
                "marginalization needs at least one sample".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            BaselineKind::None => "none",
            BaselineKind::StateValue => "state_value",
            BaselineKind::OptimalState => "optimal_state",
            BaselineKind::McMarginalized { .. } => "mc_marginalized",
            BaselineKind::MeanMarginalized => "mean_marginalized",
            BaselineKind::OptimalActionDependent { .. } => "optimal_action_dependent",
            BaselineKind::DagPerFactor => "dag_per_factor",
        }
    }

    /// Whether the baseline reads other factors' actions.
    pub fn is_action_dependent(&self) -> bool {
        matches!(
            self,
            BaselineKind::McMarginalized { .. }
                | BaselineKind::MeanMarginalized
                | BaselineKind::OptimalActionDependent { .. }
                | BaselineKind::DagPerFactor
        )
    }

    fn uses_q(&self) -> bool {
        matches!(
            self,
            BaselineKind::McMarginalized { .. }
                | BaselineKind::MeanMarginalized
                | BaselineKind::OptimalActionDependent { .. }
        )
    }
}

fn with_time(mut x: Vec<f64>, t: usize, time_scale: Option<f64>) -> Vec<f64> {
    if let Some(c) = time_scale {
        x.push(t as f64 * c);
    }
    x
}

/// `b ≡ 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroBaseline;

impl FactorBaseline for ZeroBaseline {
    fn label(&self) -> &str {
        "none"
    }

    fn value(&self, _: &FactoredPolicy, _: usize, _: &[f64], _: &[f64], _: usize) -> Result<f64> {
        Ok(0.0)
    }
}

/// A baseline from an arbitrary function of `(t, s, a, i)`. The caller is
/// responsible for not reading factor `i`'s action.
pub struct FnBaseline<F> {
    label: String,
    f: F,
}

impl<F> FnBaseline<F>
where
    F: Fn(usize, &[f64], &[f64], usize) -> Result<f64> + Send + Sync,
{
    pub fn new(label: impl Into<String>, f: F) -> Self {
        FnBaseline {
            label: label.into(),
            f,
        }
    }
}

impl<F> FactorBaseline for FnBaseline<F>
where
    F: Fn(usize, &[f64], &[f64], usize) -> Result<f64> + Send + Sync,
{
    fn label(&self) -> &str {
        &self.label
    }

    fn value(&self, _: &FactoredPolicy, t: usize, s: &[f64], a: &[f64], i: usize) -> Result<f64> {
        (self.f)(t, s, a, i)
    }
}

/// A regression on `(s, t)` shared by all factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateModel {
    pub regressor: Regressor,
    pub time_scale: Option<f64>,
    pub label: String,
}

impl StateModel {
    pub fn predict(&self, t: usize, state: &[f64]) -> Result<f64> {
        self.regressor
            .predict(&with_time(state.to_vec(), t, self.time_scale))
    }
}

impl FactorBaseline for StateModel {
    fn label(&self) -> &str {
        &self.label
    }

    fn value(&self, _: &FactoredPolicy, t: usize, s: &[f64], _: &[f64], _: usize) -> Result<f64> {
        self.predict(t, s)
    }

    fn values(&self, p: &FactoredPolicy, t: usize, s: &[f64], _: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![self.predict(t, s)?; p.num_factors()])
    }
}

/// Ridge fit of `Q̂` on features of `(s, t)`.
pub fn fit_state_value(
    batch: &Batch,
    features: FeatureMap,
    ridge: Ridge,
    time_scale: Option<f64>,
) -> Result<StateModel> {
    let (inputs, targets, weights) = state_rows(batch, time_scale, |_, _, _| Ok(1.0))?;
    let weights = batch.weights.is_some().then_some(weights);
    Ok(StateModel {
        regressor: Regressor::fit(features, &inputs, &targets, ridge, weights.as_deref())?,
        time_scale,
        label: "state_value".into(),
    })
}

/// Regression estimate of `b*(s) = E[zᵀz·Q̂] / E[zᵀz]`: a ridge fit of `Q̂`
/// with sample weights `zᵀz`.
pub fn fit_optimal_state(
    batch: &Batch,
    policy: &FactoredPolicy,
    features: FeatureMap,
    ridge: Ridge,
    time_scale: Option<f64>,
) -> Result<StateModel> {
    let (inputs, targets, weights) =
        state_rows(batch, time_scale, |_, s, a| score_norm_sq(policy, s, a))?;
    if weights.iter().sum::<f64>() <= 0.0 {
        return Err(Error::ZeroDenominator(
            "every score vanishes; the optimal state baseline is undefined".into(),
        ));
    }
    Ok(StateModel {
        regressor: Regressor::fit(features, &inputs, &targets, ridge, Some(&weights))?,
        time_scale,
        label: "optimal_state".into(),
    })
}

type Rows = (Vec<Vec<f64>>, Vec<f64>, Vec<f64>);

/// Inputs, targets and sample weights (batch weight times `weight`).
fn state_rows(
    batch: &Batch,
    time_scale: Option<f64>,
    weight: impl Fn(usize, &[f64], &[f64]) -> Result<f64>,
) -> Result<Rows> {
    if batch.num_steps() == 0 {
        return Err(Error::InvalidInput("cannot fit a baseline on an empty batch".into()));
    }
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    let mut weights = Vec::new();
    for (k, t, s, a, q) in batch.samples() {
        inputs.push(with_time(s.to_vec(), t, time_scale));
        targets.push(q);
        weights.push(weight(t, s, a)? * batch.weights.as_ref().map_or(1.0, |bw| bw[k]));
    }
    Ok((inputs, targets, weights))
}

/// `Σ_i ‖z_i‖²`, equal to `zᵀz` because factor blocks are disjoint.
pub fn score_norm_sq(policy: &FactoredPolicy, state: &[f64], action: &[f64]) -> Result<f64> {
    (0..policy.num_factors())
        .map(|i| Ok(policy.score_factor(state, action, i)?.norm_sq()))
        .sum()
}

/// Exact `b*(t, s)` tables from a weighted or sampled batch: per `(t, s)`
/// group, `Σ w·zᵀz·Q̂ / Σ w·zᵀz`.
pub fn optimal_state_table(batch: &Batch, policy: &FactoredPolicy) -> Result<TableBaseline> {
    let mut acc: HashMap<(usize, Vec<u64>), (f64, f64)> = HashMap::new();
    for (k, t, s, a, q) in batch.samples() {
        let w = batch.weight(k) * score_norm_sq(policy, s, a)?;
        let e = acc.entry((t, bits(s))).or_default();
        e.0 += w * q;
        e.1 += w;
    }
    let mut table = HashMap::with_capacity(acc.len());
    for (key, (num, den)) in acc {
        if den <= 0.0 {
            return Err(Error::ZeroDenominator(format!(
                "zero score norm at t = {}",
                key.0
            )));
        }
        table.insert(key, num / den);
    }
    Ok(TableBaseline {
        label: "optimal_state".into(),
        table,
    })
}

fn bits(x: &[f64]) -> Vec<u64> {
    x.iter().map(|v| v.to_bits()).collect()
}

/// A baseline looked up by `(t, s)`; unseen keys evaluate to 0.
#[derive(Debug, Clone, PartialEq)]
pub struct TableBaseline {
    label: String,
    table: HashMap<(usize, Vec<u64>), f64>,
}

impl TableBaseline {
    pub fn get(&self, t: usize, state: &[f64]) -> Option<f64> {
        self.table.get(&(t, bits(state))).copied()
    }
}

impl FactorBaseline for TableBaseline {
    fn label(&self) -> &str {
        &self.label
    }

    fn value(&self, _: &FactoredPolicy, t: usize, s: &[f64], _: &[f64], _: usize) -> Result<f64> {
        Ok(self.get(t, s).unwrap_or(0.0))
    }
}

/// A fitted `Q(s, a)` on features of `(s, encoded a, t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QModel {
    pub regressor: Regressor,
    pub state_dim: usize,
    pub encoded_dim: usize,
    pub time_scale: Option<f64>,
}

impl QModel {
    fn input(&self, t: usize, state: &[f64], encoded: &[f64]) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.state_dim + self.encoded_dim + 1);
        x.extend_from_slice(state);
        x.extend_from_slice(encoded);
        with_time(x, t, self.time_scale)
    }
}

impl QFunction for QModel {
    fn q_encoded(&self, t: usize, state: &[f64], encoded: &[f64]) -> Result<f64> {
        if state.len() != self.state_dim || encoded.len() != self.encoded_dim {
            return Err(Error::dims(
                self.state_dim + self.encoded_dim,
                state.len() + encoded.len(),
                "Q input",
            ));
        }
        self.regressor.predict(&self.input(t, state, encoded))
    }

    fn q_substituted(
        &self,
        t: usize,
        state: &[f64],
        encoded: &[f64],
        range: Range<usize>,
        candidates: &[Vec<f64>],
    ) -> Result<Vec<f64>> {
        if state.len() != self.state_dim || encoded.len() != self.encoded_dim {
            return Err(Error::dims(
                self.state_dim + self.encoded_dim,
                state.len() + encoded.len(),
                "Q input",
            ));
        }
        let start = self.state_dim + range.start;
        let base_slots = &encoded[range.clone()];
        let x = self.input(t, state, encoded);
        let model = &self.regressor.model;
        let delta = |c: &[f64]| -> Vec<f64> { c.iter().zip(base_slots).map(|(a, b)| a - b).collect() };
        match &self.regressor.features {
            FeatureMap::Linear { .. } => {
                let base = model.predict(&x);
                let w = &model.weights[start..start + range.len()];
                Ok(candidates
                    .iter()
                    .map(|c| base + w.iter().zip(delta(c)).map(|(wi, d)| wi * d).sum::<f64>())
                    .collect())
            }
            FeatureMap::Quadratic { input_dim } => {
                let base = model.predict(&self.regressor.features.map(&x)?);
                let w = &model.weights[start..start + range.len()];
                let w2 = &model.weights[input_dim + start..input_dim + start + range.len()];
                Ok(candidates
                    .iter()
                    .map(|c| {
                        base + c
                            .iter()
                            .zip(base_slots)
                            .zip(w.iter().zip(w2))
                            .map(|((ci, bi), (wl, ws))| wl * (ci - bi) + ws * (ci * ci - bi * bi))
                            .sum::<f64>()
                    })
                    .collect())
            }
            FeatureMap::Rff(map) => {
                let u = map.preactivations(&x)?;
                Ok(candidates
                    .iter()
                    .map(|c| {
                        let shifted = map.shift_preactivations(&u, start, &delta(c));
                        let y: Vec<f64> = shifted.into_iter().map(f64::sin).collect();
                        model.predict(&y)
                    })
                    .collect())
            }
        }
    }
}

/// A `Q` given by a closure over `(t, s, encoded a)`.
pub struct FnQ<F>(pub F);

impl<F> QFunction for FnQ<F>
where
    F: Fn(usize, &[f64], &[f64]) -> f64 + Send + Sync,
{
    fn q_encoded(&self, t: usize, state: &[f64], encoded: &[f64]) -> Result<f64> {
        Ok((self.0)(t, state, encoded))
    }
}

/// A function that is zero everywhere, standing in for the initial `Q ≡ 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroQ;

impl QFunction for ZeroQ {
    fn q_encoded(&self, _: usize, _: &[f64], _: &[f64]) -> Result<f64> {
        Ok(0.0)
    }
}

/// Ridge fit of `Q̂` on features of `(s, encoded a, t)`.
pub fn fit_q(
    batch: &Batch,
    policy: &FactoredPolicy,
    features: FeatureMap,
    ridge: Ridge,
    time_scale: Option<f64>,
) -> Result<QModel> {
    if batch.num_steps() == 0 {
        return Err(Error::InvalidInput("cannot fit Q on an empty batch".into()));
    }
    let shell = QModel {
        regressor: Regressor::zero(FeatureMap::Linear { input_dim: 0 }),
        state_dim: policy.state_dim(),
        encoded_dim: policy.encoded_dim(),
        time_scale,
    };
    let mut inputs = Vec::with_capacity(batch.num_steps());
    let mut targets = Vec::with_capacity(batch.num_steps());
    for (_, t, s, a, q) in batch.samples() {
        inputs.push(shell.input(t, s, &policy.encode_action(a)));
        targets.push(q);
    }
    let weights = batch.weights.as_ref().map(|w| {
        batch
            .samples()
            .map(|(k, ..)| w[k])
            .collect::<Vec<_>>()
    });
    Ok(QModel {
        regressor: Regressor::fit(features, &inputs, &targets, ridge, weights.as_deref())?,
        ..shell
    })
}

fn require_leaf(policy: &FactoredPolicy, i: usize, what: &str) -> Result<()> {
    if policy.descendants(i).len() > 1 {
        return Err(Error::Unsupported(format!(
            "{what} baseline would read descendants of factor {i}; use per-factor DAG baselines"
        )));
    }
    Ok(())
}

/// Generator for factor `i`'s marginalization draws, keyed on `(t, s, a^{-i})`.
pub fn keyed_rng(
    seed: u64,
    policy: &FactoredPolicy,
    t: usize,
    state: &[f64],
    action: &[f64],
    i: usize,
) -> StreamRng {
    let mut masked = action.to_vec();
    masked[policy.action_range(i)].fill(0.0);
    StreamRng::seed_from_u64(derive_seed(
        seed,
        &[t as u64, i as u64, hash_f64s(1, state), hash_f64s(2, &masked)],
    ))
}

fn one_hot(k: usize, v: usize) -> Vec<f64> {
    let mut e = vec![0.0; k];
    e[v] = 1.0;
    e
}

fn draw_category(probs: &[f64], rng: &mut dyn RngCore) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (v, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return v;
        }
    }
    probs.len() - 1
}

/// `samples` encoded draws of factor `i` and the raw values they encode.
fn draw_factor(
    policy: &FactoredPolicy,
    state: &[f64],
    action: &[f64],
    i: usize,
    samples: usize,
    rng: &mut dyn RngCore,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    match policy.factor_support(state, action, i)? {
        FactorSupport::Finite(values) => {
            let probs = policy.categorical_probs(state, action, i)?;
            let draws: Vec<usize> = (0..samples).map(|_| draw_category(&probs, rng)).collect();
            Ok((
                draws.iter().map(|&v| one_hot(values.len(), v)).collect(),
                draws.iter().map(|&v| vec![v as f64]).collect(),
            ))
        }
        support @ FactorSupport::Gaussian { .. } => {
            let raw: Vec<Vec<f64>> = (0..samples)
                .map(|_| support.draw(rng).expect("Gaussian support"))
                .collect();
            Ok((raw.clone(), raw))
        }
    }
}

fn is_categorical(policy: &FactoredPolicy, i: usize) -> bool {
    matches!(policy.heads()[i].kind, HeadKind::Categorical { .. })
}

/// `b_i = (1/M)·Σ_j Q(s, (a^{-i}, α_j))` with `α_j ∼ π(aⁱ | s)`, or the exact
/// expectation for categorical factors when `exact` is set.
#[derive(Clone)]
pub struct McMarginalized {
    pub q: Arc<dyn QFunction>,
    pub samples: usize,
    pub exact: bool,
    pub aggregate: Aggregate,
    pub seed: u64,
}

impl FactorBaseline for McMarginalized {
    fn label(&self) -> &str {
        "mc_marginalized"
    }

    fn value(&self, policy: &FactoredPolicy, t: usize, s: &[f64], a: &[f64], i: usize) -> Result<f64> {
        require_leaf(policy, i, "marginalized Q")?;
        let enc = policy.encode_action(a);
        let range = policy.encoded_range(i);
        if self.exact && is_categorical(policy, i) {
            let probs = policy.categorical_probs(s, a, i)?;
            let cands: Vec<Vec<f64>> = (0..probs.len()).map(|v| one_hot(probs.len(), v)).collect();
            let qs = self.q.q_substituted(t, s, &enc, range, &cands)?;
            return Ok(match self.aggregate {
                Aggregate::Mean => probs.iter().zip(&qs).map(|(p, q)| p * q).sum(),
                Aggregate::Max => probs
                    .iter()
                    .zip(&qs)
                    .filter(|(p, _)| **p > 0.0)
                    .map(|(_, q)| *q)
                    .fold(f64::NEG_INFINITY, f64::max),
            });
        }
        if self.samples == 0 {
            return Err(Error::InvalidInput("marginalization needs M >= 1".into()));
        }
        let mut rng = keyed_rng(self.seed, policy, t, s, a, i);
        let (cands, _) = draw_factor(policy, s, a, i, self.samples, &mut rng)?;
        let qs = self.q.q_substituted(t, s, &enc, range, &cands)?;
        Ok(match self.aggregate {
            Aggregate::Mean => qs.iter().sum::<f64>() / qs.len() as f64,
            Aggregate::Max => qs.into_iter().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

/// `b_i = Q(s, (a^{-i}, āⁱ))` with `āⁱ = E[aⁱ]` (a probability vector for
/// categorical factors).
#[derive(Clone)]
pub struct MeanMarginalized {
    pub q: Arc<dyn QFunction>,
}

impl FactorBaseline for MeanMarginalized {
    fn label(&self) -> &str {
        "mean_marginalized"
    }

    fn value(&self, policy: &FactoredPolicy, t: usize, s: &[f64], a: &[f64], i: usize) -> Result<f64> {
        require_leaf(policy, i, "mean-marginalized Q")?;
        let enc = policy.encode_action(a);
        let mean = policy.conditional_mean(s, a, i)?;
        Ok(self
            .q
            .q_substituted(t, s, &enc, policy.encoded_range(i), &[mean])?[0])
    }
}

/// `(Z_i, Y_i) = (E_{aⁱ}[zᵢᵀzᵢ], E_{aⁱ}[zᵢᵀzᵢ·Q])`: exact sums for
/// categorical factors, shared-draw Monte Carlo means otherwise.
#[allow(clippy::too_many_arguments)]
pub fn score_weighted_moments(
    policy: &FactoredPolicy,
    q: &dyn QFunction,
    t: usize,
    s: &[f64],
    a: &[f64],
    i: usize,
    samples: usize,
    rng: &mut dyn RngCore,
) -> Result<(f64, f64)> {
    let enc = policy.encode_action(a);
    let range = policy.encoded_range(i);
    let (cands, raw, probs) = if is_categorical(policy, i) {
        let probs = policy.categorical_probs(s, a, i)?;
        let k = probs.len();
        (
            (0..k).map(|v| one_hot(k, v)).collect::<Vec<_>>(),
            (0..k).map(|v| vec![v as f64]).collect::<Vec<_>>(),
            probs,
        )
    } else {
        if samples == 0 {
            return Err(Error::InvalidInput("marginalization needs M >= 1".into()));
        }
        let (c, r) = draw_factor(policy, s, a, i, samples, rng)?;
        (c, r, vec![1.0 / samples as f64; samples])
    };
    let qs = q.q_substituted(t, s, &enc, range, &cands)?;
    let (mut z, mut y) = (0.0, 0.0);
    for ((v, p), qv) in raw.iter().zip(&probs).zip(&qs) {
        let w = p * policy
            .score_factor(s, &policy.replace_factor(a, i, v), i)?
            .norm_sq();
        z += w;
        y += w * qv;
    }
    Ok((z, y))
}

/// `b_i* = E_{aⁱ}[zᵢᵀzᵢ·Q] / E_{aⁱ}[zᵢᵀzᵢ]`.
#[derive(Clone)]
pub struct OptimalActionDependent {
    pub q: Arc<dyn QFunction>,
    pub samples: usize,
    pub seed: u64,
}

impl FactorBaseline for OptimalActionDependent {
    fn label(&self) -> &str {
        "optimal_action_dependent"
    }

    fn value(&self, policy: &FactoredPolicy, t: usize, s: &[f64], a: &[f64], i: usize) -> Result<f64> {
        require_leaf(policy, i, "optimal action-dependent")?;
        let mut rng = keyed_rng(self.seed, policy, t, s, a, i);
        let (z, y) = score_weighted_moments(policy, self.q.as_ref(), t, s, a, i, self.samples, &mut rng)?;
        if z <= 0.0 {
            return Err(Error::ZeroDenominator(format!(
                "factor {i} has a vanishing score norm"
            )));
        }
        Ok(y / z)
    }
}

/// Per-factor regressions `b_i(s, a^{[m]∖D(i)})` for DAG policies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DagPerFactor {
    pub models: Vec<Regressor>,
    /// Factors each model reads: the non-descendants of `i`.
    pub inputs: Vec<Vec<usize>>,
    pub time_scale: Option<f64>,
}

impl DagPerFactor {
    pub fn input(
        policy: &FactoredPolicy,
        factors: &[usize],
        t: usize,
        state: &[f64],
        action: &[f64],
        time_scale: Option<f64>,
    ) -> Vec<f64> {
        let mut x = state.to_vec();
        for &j in factors {
            x.extend(policy.encode_factor(action, j));
        }
        with_time(x, t, time_scale)
    }

    pub fn input_sets(policy: &FactoredPolicy) -> Vec<Vec<usize>> {
        (0..policy.num_factors())
            .map(|i| policy.non_descendants(i))
            .collect()
    }
}

impl FactorBaseline for DagPerFactor {
    fn label(&self) -> &str {
        "dag_per_factor"
    }

    fn value(&self, policy: &FactoredPolicy, t: usize, s: &[f64], a: &[f64], i: usize) -> Result<f64> {
        let x = DagPerFactor::input(policy, &self.inputs[i], t, s, a, self.time_scale);
        self.models[i].predict(&x)
    }
}

/// `m` ridge fits of `Q̂`, the `i`-th on features of `(s, a^{[m]∖D(i)}, t)`.
pub fn fit_dag_baselines(
    batch: &Batch,
    policy: &FactoredPolicy,
    features: &[FeatureMap],
    ridge: Ridge,
    time_scale: Option<f64>,
) -> Result<DagPerFactor> {
    if batch.num_steps() == 0 {
        return Err(Error::InvalidInput("cannot fit baselines on an empty batch".into()));
    }
    let inputs = DagPerFactor::input_sets(policy);
    if features.len() != inputs.len() {
        return Err(Error::dims(inputs.len(), features.len(), "DAG feature maps"));
    }
    let targets: Vec<f64> = batch.samples().map(|s| s.4).collect();
    let weights = batch
        .weights
        .as_ref()
        .map(|w| batch.samples().map(|(k, ..)| w[k]).collect::<Vec<_>>());
    let models = inputs
        .iter()
        .zip(features)
        .map(|(factors, map)| {
            let rows: Vec<Vec<f64>> = batch
                .samples()
                .map(|(_, t, s, a, _)| DagPerFactor::input(policy, factors, t, s, a, time_scale))
                .collect();
            Regressor::fit(map.clone(), &rows, &targets, ridge, weights.as_deref())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DagPerFactor {
        models,
        inputs,
        time_scale,
    })
}

/// Feature family for fitted baselines.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureSpec {
    #[default]
    Linear,
    /// Inputs and their squares.
    Quadratic,
    Rff {
        features: usize,
        /// Median pairwise distance of the first batch when absent.
        #[serde(default)]
        bandwidth: Option<f64>,
    },
}


/// Fitted models carried between iterations.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FittedModels {
    pub q: Option<QModel>,
    pub state: Option<StateModel>,
    pub dag: Option<DagPerFactor>,
}

/// Refits one arm's baseline each iteration. Feature maps are drawn once,
/// on the first fit, and then frozen.
#[derive(Debug, Clone)]
pub struct BaselineFitter {
    kind: BaselineKind,
    features: FeatureSpec,
    ridge: Ridge,
    time_scale: Option<f64>,
    seed: u64,
    maps: HashMap<usize, FeatureMap>,
    fitted: FittedModels,
}

impl BaselineFitter {
    /// `horizon > 1` adds the scaled time index `t / horizon` as an input.
    pub fn new(
        kind: BaselineKind,
        features: FeatureSpec,
        ridge: Ridge,
        horizon: usize,
        seed: u64,
    ) -> Result<Self> {
        kind.validate()?;
        Ok(BaselineFitter {
            kind,
            features,
            ridge,
            time_scale: (horizon > 1).then(|| 1.0 / horizon as f64),
            seed,
            maps: HashMap::new(),
            fitted: FittedModels::default(),
        })
    }

    pub fn kind(&self) -> &BaselineKind {
        &self.kind
    }

    pub fn fitted(&self) -> &FittedModels {
        &self.fitted
    }

    pub fn time_scale(&self) -> Option<f64> {
        self.time_scale
    }

    /// The baseline from the latest fit (zero before the first one).
    /// `draw_seed` keys Monte Carlo marginalization draws.
    pub fn current(&self, draw_seed: u64) -> Arc<dyn FactorBaseline> {
        let q: Arc<dyn QFunction> = match &self.fitted.q {
            Some(m) => Arc::new(m.clone()),
            None => Arc::new(ZeroQ),
        };
        match &self.kind {
            BaselineKind::None => Arc::new(ZeroBaseline),
            BaselineKind::StateValue | BaselineKind::OptimalState => match &self.fitted.state {
                Some(m) => Arc::new(m.clone()),
                None => Arc::new(ZeroBaseline),
            },
            BaselineKind::McMarginalized {
                samples,
                exact,
                aggregate,
            } => Arc::new(McMarginalized {
                q,
                samples: *samples,
                exact: *exact,
                aggregate: *aggregate,
                seed: draw_seed,
            }),
            BaselineKind::MeanMarginalized => Arc::new(MeanMarginalized { q }),
            BaselineKind::OptimalActionDependent { samples } => Arc::new(OptimalActionDependent {
                q,
                samples: *samples,
                seed: draw_seed,
            }),
            BaselineKind::DagPerFactor => match &self.fitted.dag {
                Some(m) => Arc::new(m.clone()),
                None => Arc::new(ZeroBaseline),
            },
        }
    }

    fn map(&mut self, slot: usize, inputs: &[Vec<f64>]) -> Result<FeatureMap> {
        if let Some(m) = self.maps.get(&slot) {
            return Ok(m.clone());
        }
        let dim = inputs.first().map_or(0, |x| x.len());
        let map = match self.features {
            FeatureSpec::Linear => FeatureMap::Linear { input_dim: dim },
            FeatureSpec::Quadratic => FeatureMap::Quadratic { input_dim: dim },
            FeatureSpec::Rff {
                features,
                bandwidth,
            } => {
                let nu = bandwidth.unwrap_or_else(|| median_bandwidth(inputs, 256));
                let mut rng = stream(self.seed, Stream::Features, &[slot as u64]);
                FeatureMap::Rff(RffMap::new(dim, features, nu, &mut rng)?)
            }
        };
        self.maps.insert(slot, map.clone());
        Ok(map)
    }

    /// Refits on the current batch.
    pub fn fit(&mut self, batch: &Batch, policy: &FactoredPolicy) -> Result<()> {
        if batch.num_steps() == 0 {
            return Err(Error::InvalidInput("cannot fit a baseline on an empty batch".into()));
        }
        let ts = self.time_scale;
        match self.kind.clone() {
            BaselineKind::None => {}
            BaselineKind::StateValue | BaselineKind::OptimalState => {
                let probe: Vec<Vec<f64>> = batch
                    .samples()
                    .take(256)
                    .map(|(_, t, s, ..)| with_time(s.to_vec(), t, ts))
                    .collect();
                let map = self.map(0, &probe)?;
                self.fitted.state = Some(if self.kind == BaselineKind::StateValue {
                    fit_state_value(batch, map, self.ridge, ts)?
                } else {
                    fit_optimal_state(batch, policy, map, self.ridge, ts)?
                });
            }
            kind if kind.uses_q() => {
                let probe: Vec<Vec<f64>> = batch
                    .samples()
                    .take(256)
                    .map(|(_, t, s, a, _)| {
                        let mut x = s.to_vec();
                        x.extend(policy.encode_action(a));
                        with_time(x, t, ts)
                    })
                    .collect();
                let map = self.map(1, &probe)?;
                self.fitted.q = Some(fit_q(batch, policy, map, self.ridge, ts)?);
            }
            _ => {
                let sets = DagPerFactor::input_sets(policy);
                let mut maps = Vec::with_capacity(sets.len());
                for (i, factors) in sets.iter().enumerate() {
                    let probe: Vec<Vec<f64>> = batch
                        .samples()
                        .take(256)
                        .map(|(_, t, s, a, _)| DagPerFactor::input(policy, factors, t, s, a, ts))
                        .collect();
                    maps.push(self.map(2 + i, &probe)?);
                }
                self.fitted.dag = Some(fit_dag_baselines(batch, policy, &maps, self.ridge, ts)?);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
