//! Factored stochastic policies.
//!
//! A [`FactoredPolicy`] is a product of per-factor conditionals
//! `π(aⁱ | s, a^{f(i)})`, each a linear Gaussian or softmax head with its own
//! parameter block. Blocks never share weights, so the scores of two
//! different factors are always orthogonal.

mod head;
mod score;

pub use head::{FactorHead, HeadKind};
pub use score::ScoreVector;

use std::ops::Range;

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::env::{FactorDescriptor, MdpSpec};
use crate::{Error, Result};

/// How factors depend on one another given the state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Factorization {
    Independent,
    /// `parents[i]` lists the factors `aⁱ` is conditioned on.
    Dag { parents: Vec<Vec<usize>> },
}

impl Factorization {
    /// Fully dependent chain: factor `i` conditions on `0..i`.
    pub fn chain(m: usize) -> Self {
        Factorization::Dag {
            parents: (0..m).map(|i| (0..i).collect()).collect(),
        }
    }
}

/// Serializable layout of a policy's parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyDescriptor {
    pub state_dim: usize,
    pub factorization: Factorization,
    pub heads: Vec<FactorHead>,
    pub num_params: usize,
}

/// What values factor `i` can take at a given state.
#[derive(Debug, Clone, PartialEq)]
pub enum FactorSupport {
    /// Every category index.
    Finite(Vec<usize>),
    /// Conditional Gaussian to draw from.
    Gaussian { mean: Vec<f64>, std: Vec<f64> },
}

impl FactorSupport {
    /// One draw from a Gaussian support; `None` for finite supports, which
    /// are meant to be enumerated.
    pub fn draw(&self, rng: &mut dyn RngCore) -> Option<Vec<f64>> {
        match self {
            FactorSupport::Finite(_) => None,
            FactorSupport::Gaussian { mean, std } => Some(
                mean.iter()
                    .zip(std)
                    .map(|(m, s)| {
                        let e: f64 = StandardNormal.sample(rng);
                        m + s * e
                    })
                    .collect(),
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactoredPolicy {
    state_dim: usize,
    factorization: Factorization,
    heads: Vec<FactorHead>,
    params: Vec<f64>,
    order: Vec<usize>,
    descendants: Vec<Vec<usize>>,
    action_offsets: Vec<usize>,
    encoded_offsets: Vec<usize>,
    action_dim: usize,
    encoded_dim: usize,
}

impl FactoredPolicy {
    /// Builds a zero-initialized policy (unit standard deviations, uniform
    /// categoricals).
    ///
    /// `inputs[i]`, when given, restricts factor `i` to those state indices.
    pub fn new(
        state_dim: usize,
        factors: &[FactorDescriptor],
        factorization: Factorization,
        inputs: Option<Vec<Vec<usize>>>,
    ) -> Result<Self> {
        let m = factors.len();
        if m == 0 {
            return Err(Error::InvalidInput("policy needs at least one factor".into()));
        }
        let parents = match &factorization {
            Factorization::Independent => vec![Vec::new(); m],
            Factorization::Dag { parents } => {
                if parents.len() != m {
                    return Err(Error::dims(m, parents.len(), "DAG parent lists"));
                }
                parents.clone()
            }
        };
        let order = topological_order(&parents)?;
        let inputs = match inputs {
            Some(v) => {
                if v.len() != m {
                    return Err(Error::dims(m, v.len(), "per-factor input lists"));
                }
                if v.iter().flatten().any(|&k| k >= state_dim) {
                    return Err(Error::InvalidInput("factor input index out of range".into()));
                }
                v
            }
            None => vec![(0..state_dim).collect(); m],
        };

        let mut action_offsets = Vec::with_capacity(m);
        let mut encoded_offsets = Vec::with_capacity(m);
        let (mut ao, mut eo) = (0, 0);
        for f in factors {
            action_offsets.push(ao);
            encoded_offsets.push(eo);
            ao += f.action_len();
            eo += f.encoded_len();
        }

        let mut heads = Vec::with_capacity(m);
        let mut offset = 0;
        for i in 0..m {
            let kind = HeadKind::from_descriptor(factors[i]);
            if kind.outputs() == 0 {
                return Err(Error::InvalidInput(format!("factor {i} has no outputs")));
            }
            let input_dim = inputs[i].len()
                + parents[i]
                    .iter()
                    .map(|&p| factors[p].encoded_len())
                    .sum::<usize>();
            let len = kind.param_len(input_dim);
            heads.push(FactorHead {
                kind,
                state_inputs: inputs[i].clone(),
                parents: parents[i].clone(),
                input_dim,
                offset,
                len,
            });
            offset += len;
        }

        let descendants = descendant_sets(&parents);
        Ok(FactoredPolicy {
            state_dim,
            factorization,
            heads,
            params: vec![0.0; offset],
            order,
            descendants,
            action_offsets,
            encoded_offsets,
            action_dim: ao,
            encoded_dim: eo,
        })
    }

    /// Policy matching an environment's action layout.
    pub fn for_spec(
        spec: &MdpSpec,
        factorization: Factorization,
        inputs: Option<Vec<Vec<usize>>>,
    ) -> Result<Self> {
        Self::new(spec.state_dim, &spec.action_factors, factorization, inputs)
    }

    pub fn from_descriptor(desc: &PolicyDescriptor, params: &[f64]) -> Result<Self> {
        let factors: Vec<FactorDescriptor> = desc.heads.iter().map(|h| h.kind.descriptor()).collect();
        let inputs = desc.heads.iter().map(|h| h.state_inputs.clone()).collect();
        let mut p = Self::new(desc.state_dim, &factors, desc.factorization.clone(), Some(inputs))?;
        if p.heads != desc.heads {
            return Err(Error::InvalidInput("descriptor layout is inconsistent".into()));
        }
        p.set_params(params)?;
        Ok(p)
    }

    pub fn descriptor(&self) -> PolicyDescriptor {
        PolicyDescriptor {
            state_dim: self.state_dim,
            factorization: self.factorization.clone(),
            heads: self.heads.clone(),
            num_params: self.params.len(),
        }
    }

    pub fn num_factors(&self) -> usize {
        self.heads.len()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn encoded_dim(&self) -> usize {
        self.encoded_dim
    }

    pub fn heads(&self) -> &[FactorHead] {
        &self.heads
    }

    pub fn factorization(&self) -> &Factorization {
        &self.factorization
    }

    pub fn is_independent(&self) -> bool {
        self.heads.iter().all(|h| h.parents.is_empty())
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::dims(self.params.len(), params.len(), "policy parameters"));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    pub fn with_params(&self, params: &[f64]) -> Result<Self> {
        let mut p = self.clone();
        p.set_params(params)?;
        Ok(p)
    }

    /// Parameter block of factor `i`.
    pub fn block(&self, i: usize) -> Range<usize> {
        let h = &self.heads[i];
        h.offset..h.offset + h.len
    }

    /// Slots of factor `i` in an action vector.
    pub fn action_range(&self, i: usize) -> Range<usize> {
        let start = self.action_offsets[i];
        start..start + self.heads[i].kind.descriptor().action_len()
    }

    /// Slots of factor `i` in an encoded action vector.
    pub fn encoded_range(&self, i: usize) -> Range<usize> {
        let start = self.encoded_offsets[i];
        start..start + self.heads[i].kind.descriptor().encoded_len()
    }

    /// Factors in an order where parents precede children.
    pub fn topological_order(&self) -> &[usize] {
        &self.order
    }

    /// `D(i)`: factor `i` and every factor downstream of it.
    pub fn descendants(&self, i: usize) -> &[usize] {
        &self.descendants[i]
    }

    /// `[m] \ D(i)`: the factors a baseline for factor `i` may depend on.
    pub fn non_descendants(&self, i: usize) -> Vec<usize> {
        (0..self.num_factors())
            .filter(|j| !self.descendants[i].contains(j))
            .collect()
    }

    fn check_state(&self, state: &[f64]) -> Result<()> {
        if state.len() != self.state_dim {
            return Err(Error::dims(self.state_dim, state.len(), "policy state"));
        }
        Ok(())
    }

    fn check_action(&self, action: &[f64]) -> Result<()> {
        if action.len() != self.action_dim {
            return Err(Error::dims(self.action_dim, action.len(), "policy action"));
        }
        for (i, h) in self.heads.iter().enumerate() {
            if let HeadKind::Categorical { cardinality } = h.kind {
                let v = action[self.action_offsets[i]];
                if !(v >= 0.0 && v.fract() == 0.0 && (v as usize) < cardinality) {
                    return Err(Error::InvalidInput(format!(
                        "factor {i}: category {v} not in 0..{cardinality}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Encoding of factor `i`'s value: one-hot for categoricals.
    pub fn encode_factor(&self, action: &[f64], i: usize) -> Vec<f64> {
        let slots = &action[self.action_range(i)];
        match self.heads[i].kind {
            HeadKind::Gaussian { .. } => slots.to_vec(),
            HeadKind::Categorical { cardinality } => {
                let mut v = vec![0.0; cardinality];
                v[slots[0] as usize] = 1.0;
                v
            }
        }
    }

    /// Concatenated per-factor encodings.
    pub fn encode_action(&self, action: &[f64]) -> Vec<f64> {
        (0..self.num_factors())
            .flat_map(|i| self.encode_factor(action, i))
            .collect()
    }

    /// Input vector of head `i`: selected state entries, then encoded parents.
    pub fn head_input(&self, state: &[f64], action: &[f64], i: usize) -> Vec<f64> {
        let h = &self.heads[i];
        let mut x = Vec::with_capacity(h.input_dim);
        x.extend(h.state_inputs.iter().map(|&k| state[k]));
        for &p in &h.parents {
            x.extend(self.encode_factor(action, p));
        }
        x
    }

    pub fn sample(&self, state: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        self.check_state(state)?;
        let mut action = vec![0.0; self.action_dim];
        for &i in &self.order {
            let x = self.head_input(state, &action, i);
            let v = self.heads[i].sample(&self.params[self.block(i)], &x, rng);
            action[self.action_range(i)].copy_from_slice(&v);
        }
        Ok(action)
    }

    /// `log π(aⁱ | s, a^{f(i)})`.
    pub fn factor_log_prob(&self, state: &[f64], action: &[f64], i: usize) -> Result<f64> {
        self.check_state(state)?;
        self.check_action(action)?;
        let x = self.head_input(state, action, i);
        Ok(self.heads[i].log_density(&self.params[self.block(i)], &x, &action[self.action_range(i)]))
    }

    /// `Σᵢ log π(aⁱ | s, a^{f(i)})`.
    pub fn log_prob(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        (0..self.num_factors())
            .map(|i| self.factor_log_prob(state, action, i))
            .sum()
    }

    /// `zᵢ = ∇_θ log π(aⁱ | s, a^{f(i)})`, nonzero only on block `i`.
    pub fn score_factor(&self, state: &[f64], action: &[f64], i: usize) -> Result<ScoreVector> {
        self.check_state(state)?;
        self.check_action(action)?;
        let x = self.head_input(state, action, i);
        let values =
            self.heads[i].score(&self.params[self.block(i)], &x, &action[self.action_range(i)]);
        Ok(ScoreVector {
            factor: i,
            offset: self.heads[i].offset,
            values,
        })
    }

    /// Dense joint score `Σᵢ zᵢ`.
    pub fn score(&self, state: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.num_params()];
        for i in 0..self.num_factors() {
            self.score_factor(state, action, i)?.add_scaled_into(&mut out, 1.0);
        }
        Ok(out)
    }

    /// Probabilities of categorical factor `i` given its parents in `action`.
    pub fn categorical_probs(&self, state: &[f64], action: &[f64], i: usize) -> Result<Vec<f64>> {
        self.check_state(state)?;
        let h = &self.heads[i];
        if !matches!(h.kind, HeadKind::Categorical { .. }) {
            return Err(Error::InvalidInput(format!("factor {i} is not categorical")));
        }
        let x = self.head_input(state, action, i);
        Ok(h.mean(&self.params[self.block(i)], &x))
    }

    /// Mean and standard deviation of Gaussian factor `i` given its parents.
    pub fn gaussian_params(
        &self,
        state: &[f64],
        action: &[f64],
        i: usize,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_state(state)?;
        let h = &self.heads[i];
        if !matches!(h.kind, HeadKind::Gaussian { .. }) {
            return Err(Error::InvalidInput(format!("factor {i} is not Gaussian")));
        }
        let block = &self.params[self.block(i)];
        let x = self.head_input(state, action, i);
        let std = h.log_stds(block).iter().map(|l| l.exp()).collect();
        Ok((h.outputs(block, &x), std))
    }

    /// Encoded conditional mean of factor `i` given the parent values found
    /// in `action`.
    pub fn conditional_mean(&self, state: &[f64], action: &[f64], i: usize) -> Result<Vec<f64>> {
        self.check_state(state)?;
        let x = self.head_input(state, action, i);
        Ok(self.heads[i].mean(&self.params[self.block(i)], &x))
    }

    /// Encoded mean action. For a DAG policy, each factor's conditional mean
    /// is taken given parents sampled from the policy, so the expectation of
    /// the result over `rng` is the marginal mean.
    pub fn mean_action(&self, state: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        self.check_state(state)?;
        let mut encoded = vec![0.0; self.encoded_dim];
        let mut action = vec![0.0; self.action_dim];
        for &i in &self.order {
            let x = self.head_input(state, &action, i);
            let block = &self.params[self.block(i)];
            encoded[self.encoded_range(i)].copy_from_slice(&self.heads[i].mean(block, &x));
            if !self.descendants[i].iter().all(|&d| d == i) {
                let v = self.heads[i].sample(block, &x, rng);
                action[self.action_range(i)].copy_from_slice(&v);
            }
        }
        Ok(encoded)
    }

    /// Values factor `i` can take at `state` given the parents in `action`.
    pub fn factor_support(&self, state: &[f64], action: &[f64], i: usize) -> Result<FactorSupport> {
        match self.heads[i].kind {
            HeadKind::Categorical { cardinality } => {
                Ok(FactorSupport::Finite((0..cardinality).collect()))
            }
            HeadKind::Gaussian { .. } => {
                let (mean, std) = self.gaussian_params(state, action, i)?;
                Ok(FactorSupport::Gaussian { mean, std })
            }
        }
    }

    /// Returns `action` with factor `i`'s slots replaced by `value`.
    pub fn replace_factor(&self, action: &[f64], i: usize, value: &[f64]) -> Vec<f64> {
        let mut a = action.to_vec();
        a[self.action_range(i)].copy_from_slice(value);
        a
    }

    /// `Σᵢ KL(π_self(·|s, a^{f(i)}) ‖ π_other(·|s, a^{f(i)}))` with parents
    /// taken from `action`. Averaged over on-policy actions this is the joint KL.
    pub fn kl(&self, other: &FactoredPolicy, state: &[f64], action: &[f64]) -> Result<f64> {
        if other.params.len() != self.params.len() {
            return Err(Error::dims(self.params.len(), other.params.len(), "KL parameters"));
        }
        self.check_state(state)?;
        Ok((0..self.num_factors())
            .map(|i| {
                let x = self.head_input(state, action, i);
                self.heads[i].kl(&self.params[self.block(i)], &other.params[self.block(i)], &x)
            })
            .sum())
    }

    /// Sets every Gaussian log-std parameter.
    pub fn set_log_std(&mut self, log_std: f64) {
        for h in &self.heads {
            if let HeadKind::Gaussian { dim } = h.kind {
                let start = h.offset + dim * (h.input_dim + 1);
                self.params[start..start + dim].fill(log_std);
            }
        }
    }
}

fn topological_order(parents: &[Vec<usize>]) -> Result<Vec<usize>> {
    let m = parents.len();
    for (i, ps) in parents.iter().enumerate() {
        if ps.iter().any(|&p| p >= m) {
            return Err(Error::InvalidInput(format!("factor {i} has an out-of-range parent")));
        }
        if ps.contains(&i) {
            return Err(Error::InvalidInput(format!("factor {i} is its own parent")));
        }
    }
    let mut indegree: Vec<usize> = parents.iter().map(|p| p.len()).collect();
    let mut ready: Vec<usize> = (0..m).filter(|&i| indegree[i] == 0).rev().collect();
    let mut order = Vec::with_capacity(m);
    while let Some(i) = ready.pop() {
        order.push(i);
        for (c, ps) in parents.iter().enumerate() {
            if ps.contains(&i) {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    ready.push(c);
                }
            }
        }
    }
    if order.len() != m {
        return Err(Error::InvalidInput("factor dependency graph has a cycle".into()));
    }
    Ok(order)
}

fn descendant_sets(parents: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let m = parents.len();
    (0..m)
        .map(|i| {
            let mut seen = vec![false; m];
            let mut stack = vec![i];
            seen[i] = true;
            while let Some(j) = stack.pop() {
                for (c, ps) in parents.iter().enumerate() {
                    if ps.contains(&j) && !seen[c] {
                        seen[c] = true;
                        stack.push(c);
                    }
                }
            }
            (0..m).filter(|&k| seen[k]).collect()
        })
        .collect()
}
