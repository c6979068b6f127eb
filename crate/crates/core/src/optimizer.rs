//! Policy updates (vanilla and natural gradient) and the training loop.

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{BaselineFitter, BaselineKind, FeatureSpec, FittedModels};
use crate::env::{rollout, Environment};
use crate::estimator::{
    baseline_values, gae_advantages, gradient_from_advantages, AdvantageSet, Batch,
    EstimatorOptions, GaeConfig,
};
use crate::features::Ridge;
use crate::policy::{FactoredPolicy, PolicyDescriptor};
use crate::rng::{derive_seed, stream, Stream};
use crate::{Error, Result};

/// Guards the step-size denominator against `xᵀFx → 0`.
pub const STEP_EPSILON: f64 = 1e-8;

fn default_kl() -> f64 {
    0.025
}
fn default_cg_iters() -> usize {
    10
}
fn default_damping() -> f64 {
    1e-4
}
fn default_lr() -> f64 {
    0.05
}

/// Which empirical Fisher the natural gradient preconditions with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FisherKind {
    /// Mean of `z zᵀ` over the joint score.
    Joint,
    /// Mean of `z_i z_iᵀ` per factor block. Cross-factor blocks of the exact
    /// Fisher vanish for any factorized policy, so this drops terms whose
    /// expectation is zero; it stays full rank when samples are fewer than
    /// parameters.
    #[default]
    BlockDiagonal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NpgConfig {
    #[serde(default = "default_kl")]
    pub kl_desired: f64,
    #[serde(default = "default_cg_iters")]
    pub cg_iters: usize,
    #[serde(default = "default_damping")]
    pub cg_damping: f64,
    #[serde(default)]
    pub fisher: FisherKind,
}

impl Default for NpgConfig {
    fn default() -> Self {
        NpgConfig {
            kl_desired: default_kl(),
            cg_iters: default_cg_iters(),
            cg_damping: default_damping(),
            fisher: FisherKind::default(),
        }
    }
}

impl NpgConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kl_desired > 0.0) || !(self.cg_damping >= 0.0) || self.cg_iters == 0 {
            return Err(Error::Config(format!("invalid NPG settings {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerSpec {
    Npg(NpgConfig),
    Vanilla {
        #[serde(default = "default_lr")]
        learning_rate: f64,
    },
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        OptimizerSpec::Npg(NpgConfig::default())
    }
}

impl OptimizerSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            OptimizerSpec::Npg(c) => c.validate(),
            OptimizerSpec::Vanilla { learning_rate } if learning_rate > 0.0 => Ok(()),
            OptimizerSpec::Vanilla { learning_rate } => Err(Error::Config(format!(
                "learning rate {learning_rate} must be positive"
            ))),
        }
    }
}

pub trait LinearOperator {
    fn apply(&self, v: &[f64]) -> Vec<f64>;
}

/// `v ↦ F·v + damping·v` with `F` the weighted mean of `z zᵀ` over samples,
/// or of `Σ_i z_i z_iᵀ` when parameter blocks are given.
pub struct EmpiricalFisher {
    scores: Vec<Vec<f64>>,
    weights: Vec<f64>,
    damping: f64,
    blocks: Option<Vec<Range<usize>>>,
}

impl EmpiricalFisher {
    pub fn new(scores: Vec<Vec<f64>>, weights: Vec<f64>, damping: f64) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::InvalidInput("Fisher estimate needs samples".into()));
        }
        if weights.len() != scores.len() {
            return Err(Error::dims(scores.len(), weights.len(), "Fisher weights"));
        }
        Ok(EmpiricalFisher {
            scores,
            weights,
            damping,
            blocks: None,
        })
    }

    /// Restricts the outer products to the given disjoint blocks.
    pub fn with_blocks(mut self, blocks: Vec<Range<usize>>) -> Self {
        self.blocks = Some(blocks);
        self
    }

    pub fn from_batch_kind(
        policy: &FactoredPolicy,
        batch: &Batch,
        damping: f64,
        kind: FisherKind,
    ) -> Result<Self> {
        let f = Self::from_batch(policy, batch, damping)?;
        Ok(match kind {
            FisherKind::Joint => f,
            FisherKind::BlockDiagonal => {
                f.with_blocks((0..policy.num_factors()).map(|i| policy.block(i)).collect())
            }
        })
    }

    /// Joint scores at every step of `batch`; each step of trajectory `k`
    /// gets weight `w_k`, normalized to sum to one.
    pub fn from_batch(policy: &FactoredPolicy, batch: &Batch, damping: f64) -> Result<Self> {
        let rows: Vec<(f64, Vec<f64>)> = batch
            .samples()
            .collect::<Vec<_>>()
            .par_iter()
            .map(|&(k, _, s, a, _)| Ok((batch.weight(k), policy.score(s, a)?)))
            .collect::<Result<_>>()?;
        let total: f64 = rows.iter().map(|r| r.0).sum();
        if !(total > 0.0) {
            return Err(Error::InvalidInput("Fisher estimate needs positive weight".into()));
        }
        let (weights, scores) = rows.into_iter().map(|(w, z)| (w / total, z)).unzip();
        EmpiricalFisher::new(scores, weights, damping)
    }
}

impl LinearOperator for EmpiricalFisher {
    fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = v.iter().map(|x| self.damping * x).collect();
        let all = 0..v.len();
        let blocks = self.blocks.as_deref().unwrap_or(std::slice::from_ref(&all));
        for (z, w) in self.scores.iter().zip(&self.weights) {
            for r in blocks {
                let c = w * dot(&z[r.clone()], &v[r.clone()]);
                for (o, zi) in out[r.clone()].iter_mut().zip(&z[r.clone()]) {
                    *o += c * zi;
                }
            }
        }
        out
    }
}

/// The identity scaled by `scale`, for tests and synthetic checks.
pub struct ScaledIdentity(pub f64);

impl LinearOperator for ScaledIdentity {
    fn apply(&self, v: &[f64]) -> Vec<f64> {
        v.iter().map(|x| self.0 * x).collect()
    }
}

/// `F·v + damping·v` over the batch's states and actions.
pub fn fisher_vector_product(
    policy: &FactoredPolicy,
    batch: &Batch,
    v: &[f64],
    damping: f64,
) -> Result<Vec<f64>> {
    if v.len() != policy.num_params() {
        return Err(Error::dims(policy.num_params(), v.len(), "Fisher vector"));
    }
    Ok(EmpiricalFisher::from_batch(policy, batch, damping)?.apply(v))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Approximately solves `A·x = b` with at most `iters` conjugate gradient
/// iterations from `x = 0`.
pub fn conjugate_gradient(op: &dyn LinearOperator, b: &[f64], iters: usize) -> Vec<f64> {
    let mut x = vec![0.0; b.len()];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    for _ in 0..iters {
        if rr < 1e-20 {
            break;
        }
        let ap = op.apply(&p);
        let alpha = rr / dot(&p, &ap);
        for k in 0..x.len() {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        for k in 0..p.len() {
            p[k] = r[k] + beta * p[k];
        }
        rr = rr_new;
    }
    x
}

/// A parameter update and how it was obtained.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub delta: Vec<f64>,
    /// `xᵀF·x` of the solved direction.
    pub curvature: f64,
    /// Set when the natural direction was unusable and a normalized vanilla
    /// step was taken instead.
    pub fallback: bool,
}

/// `x ≈ F⁻¹g`, scaled to `sqrt(2·kl / (xᵀF·x + ε))·x`.
pub fn npg_direction(op: &dyn LinearOperator, g: &[f64], config: &NpgConfig) -> Result<Step> {
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite gradient".into()));
    }
    let x = conjugate_gradient(op, g, config.cg_iters);
    let curvature = dot(&x, &op.apply(&x));
    if x.iter().all(|v| v.is_finite()) && curvature.is_finite() && curvature >= 0.0 {
        let scale = (2.0 * config.kl_desired / (curvature + STEP_EPSILON)).sqrt();
        return Ok(Step {
            delta: x.iter().map(|v| scale * v).collect(),
            curvature,
            fallback: false,
        });
    }
    log::warn!("natural gradient solve failed; taking a normalized vanilla step");
    let norm = dot(g, g).sqrt();
    let scale = if norm > 0.0 {
        (2.0 * config.kl_desired).sqrt() / norm
    } else {
        0.0
    };
    Ok(Step {
        delta: g.iter().map(|v| scale * v).collect(),
        curvature: f64::NAN,
        fallback: true,
    })
}

/// New parameters after one natural gradient step with the batch Fisher.
pub fn npg_step(
    policy: &FactoredPolicy,
    gradient: &[f64],
    batch: &Batch,
    config: &NpgConfig,
) -> Result<(Vec<f64>, Step)> {
    config.validate()?;
    if gradient.len() != policy.num_params() {
        return Err(Error::dims(policy.num_params(), gradient.len(), "gradient"));
    }
    let fisher = EmpiricalFisher::from_batch_kind(policy, batch, config.cg_damping, config.fisher)?;
    let step = npg_direction(&fisher, gradient, config)?;
    let theta = policy
        .params()
        .iter()
        .zip(&step.delta)
        .map(|(t, d)| t + d)
        .collect();
    Ok((theta, step))
}

/// `θ + lr·g`.
pub fn vanilla_step(theta: &[f64], gradient: &[f64], learning_rate: f64) -> Vec<f64> {
    theta
        .iter()
        .zip(gradient)
        .map(|(t, g)| t + learning_rate * g)
        .collect()
}

/// Mean `KL(π_old ‖ π_new)` over the batch's states (with parents taken from
/// the recorded actions).
pub fn realized_kl(old: &FactoredPolicy, new: &FactoredPolicy, batch: &Batch) -> Result<f64> {
    let mut total = 0.0;
    let mut weight = 0.0;
    for (k, _, s, a, _) in batch.samples() {
        let w = batch.weight(k);
        total += w * old.kl(new, s, a)?;
        weight += w;
    }
    Ok(if weight > 0.0 { total / weight } else { 0.0 })
}

/// Settings of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub baseline: BaselineKind,
    pub features: FeatureSpec,
    pub ridge: Ridge,
    pub optimizer: OptimizerSpec,
    pub iterations: usize,
    pub trajectories: usize,
    pub gamma: f64,
    /// GAE λ; Monte Carlo advantages when absent.
    pub gae_lambda: Option<f64>,
    pub normalize_advantages: bool,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.baseline.validate()?;
        self.optimizer.validate()?;
        if self.trajectories == 0 {
            return Err(Error::Config("need at least one trajectory per iteration".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("γ = {} outside (0, 1]", self.gamma)));
        }
        if let Some(l) = self.gae_lambda {
            GaeConfig::new(l, self.gamma).map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }
}

/// One row of a learning curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    /// 1-based.
    pub iteration: usize,
    /// Mean undiscounted return of the batch collected this iteration.
    pub mean_return: f64,
    pub sd_return: f64,
    /// Trace covariance of per-trajectory gradient contributions.
    pub grad_variance: f64,
    pub realized_kl: f64,
}

/// Everything needed to resume a run. Random streams are pure functions of
/// `(seed, iteration)`, so those two values are the generator state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub iteration: usize,
    pub seed: u64,
    pub policy: PolicyDescriptor,
    pub params: Vec<f64>,
    pub baselines: FittedModels,
}

pub struct TrainState {
    pub iteration: usize,
    pub seed: u64,
    pub policy: FactoredPolicy,
    pub fitter: BaselineFitter,
}

impl TrainState {
    pub fn new(policy: FactoredPolicy, config: &TrainConfig, horizon: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(TrainState {
            iteration: 0,
            seed,
            policy,
            fitter: BaselineFitter::new(
                config.baseline.clone(),
                config.features,
                config.ridge,
                horizon,
                derive_seed(seed, &[0x0066_6974]),
            )?,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            iteration: self.iteration,
            seed: self.seed,
            policy: self.policy.descriptor(),
            params: self.policy.params().to_vec(),
            baselines: self.fitter.fitted().clone(),
        }
    }
}

/// Collects `n` trajectories; trajectory `k` of iteration `it` draws from its
/// own environment and policy substreams.
pub fn collect(
    env: &dyn Environment,
    policy: &FactoredPolicy,
    gamma: f64,
    n: usize,
    seed: u64,
    it: usize,
) -> Result<Batch> {
    let trajs = (0..n)
        .into_par_iter()
        .map(|k| {
            let path = [it as u64, k as u64];
            let mut env_rng = stream(seed, Stream::Environment, &path);
            let mut pol_rng = stream(seed, Stream::Policy, &path);
            rollout(env, policy, gamma, &mut env_rng, &mut pol_rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Batch::new(trajs))
}

/// One iteration: collect, evaluate the previous baseline, form advantages,
/// update the policy, refit the baseline on the new batch.
pub fn train_iteration(
    env: &dyn Environment,
    state: &mut TrainState,
    config: &TrainConfig,
) -> Result<IterationLog> {
    let it = state.iteration + 1;
    let batch = collect(env, &state.policy, config.gamma, config.trajectories, state.seed, it)?;
    let draw_seed = derive_seed(state.seed, &[0x6261_7365, it as u64]);
    let baseline = state.fitter.current(draw_seed);
    let b = baseline_values(&batch, &state.policy, baseline.as_ref())?;
    let mut adv = match config.gae_lambda {
        Some(lambda) => gae_advantages(&batch, &b, &GaeConfig::new(lambda, config.gamma)?)?,
        None => AdvantageSet::monte_carlo(&batch, &b, baseline.label())?,
    };
    if config.normalize_advantages {
        adv.whiten();
    }
    let report = gradient_from_advantages(&batch, &state.policy, &adv, EstimatorOptions::default())?;
    let theta = match config.optimizer {
        OptimizerSpec::Npg(npg) => npg_step(&state.policy, &report.gradient, &batch, &npg)?.0,
        OptimizerSpec::Vanilla { learning_rate } => {
            vanilla_step(state.policy.params(), &report.gradient, learning_rate)
        }
    };
    let new_policy = state.policy.with_params(&theta)?;
    let kl = realized_kl(&state.policy, &new_policy, &batch)?;
    if let OptimizerSpec::Npg(npg) = config.optimizer {
        if kl > 2.0 * npg.kl_desired {
            log::debug!("iteration {it}: realized KL {kl:.4} exceeds twice the target");
        }
    }
    state.policy = new_policy;
    state.fitter.fit(&batch, &state.policy)?;
    state.iteration = it;
    Ok(IterationLog {
        iteration: it,
        mean_return: batch.mean_return(),
        sd_return: batch.sd_return(),
        grad_variance: report.variance,
        realized_kl: kl,
    })
}

/// Result of [`train`].
pub struct TrainOutcome {
    pub state: TrainState,
    pub curve: Vec<IterationLog>,
}

/// Runs `config.iterations` iterations from `policy`. `on_iteration` sees the
/// state after every iteration (for checkpointing or early logging).
pub fn train(
    env: &dyn Environment,
    policy: FactoredPolicy,
    config: &TrainConfig,
    seed: u64,
    on_iteration: &mut dyn FnMut(&TrainState, &IterationLog) -> Result<()>,
) -> Result<TrainOutcome> {
    let spec = env.spec();
    if policy.state_dim() != spec.state_dim || policy.action_dim() != spec.action_dim() {
        return Err(Error::Config(format!(
            "policy ({} state, {} action) does not fit environment `{}` ({} state, {} action)",
            policy.state_dim(),
            policy.action_dim(),
            env.name(),
            spec.state_dim,
            spec.action_dim()
        )));
    }
    let mut state = TrainState::new(policy, config, spec.horizon, seed)?;
    let mut curve = Vec::with_capacity(config.iterations);
    for _ in 0..config.iterations {
        let row = train_iteration(env, &mut state, config)?;
        on_iteration(&state, &row)?;
        curve.push(row);
    }
    Ok(TrainOutcome { state, curve })
}
