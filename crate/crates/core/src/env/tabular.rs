use std::path::Path;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{Environment, FactorDescriptor, MdpSpec, Step, Trajectory, Transition};
use crate::policy::FactoredPolicy;
use crate::{Error, Result};

/// Upper bound on the number of outcomes [`TabularMdp::enumerate`] will expand.
pub const MAX_OUTCOMES: u128 = 1_000_000;

/// Finite MDP over categorical action factors, stored as explicit tables.
///
/// States are presented to policies as one-hot vectors of length
/// `num_states`. Joint actions are indexed row-major over the factors (the
/// last factor varies fastest). `transitions[s][j][s']` and `rewards[s][j]`
/// are indexed by state and joint action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    #[serde(default)]
    pub name: Option<String>,
    pub num_states: usize,
    pub factor_cardinalities: Vec<usize>,
    pub horizon: usize,
    pub discount: f64,
    pub initial: Vec<f64>,
    pub transitions: Vec<Vec<Vec<f64>>>,
    pub rewards: Vec<Vec<f64>>,
    #[serde(skip)]
    spec: Option<MdpSpec>,
}

/// A trajectory skeleton from enumeration: state indices, joint actions and
/// the policy-independent part of its probability.
#[derive(Debug, Clone, PartialEq)]
pub struct EnumeratedPath {
    pub states: Vec<usize>,
    pub actions: Vec<Vec<usize>>,
    pub rewards: Vec<f64>,
    /// `ρ0(s_0) · ∏ P(s_{t+1} | s_t, a_t)`.
    pub env_probability: f64,
}

impl EnumeratedPath {
    /// Full occurrence probability under `policy`.
    pub fn probability(&self, mdp: &TabularMdp, policy: &FactoredPolicy) -> Result<f64> {
        let mut p = self.env_probability;
        for (s, a) in self.states.iter().zip(&self.actions) {
            let action: Vec<f64> = a.iter().map(|&v| v as f64).collect();
            p *= policy.log_prob(&mdp.one_hot(*s), &action)?.exp();
        }
        Ok(p)
    }

    pub fn to_trajectory(&self, mdp: &TabularMdp, gamma: f64) -> Trajectory {
        let h = self.states.len();
        let steps = (0..h)
            .map(|t| Step {
                state: mdp.one_hot(self.states[t]),
                action: self.actions[t].iter().map(|&v| v as f64).collect(),
                reward: self.rewards[t],
                terminal: t + 1 == h,
            })
            .collect();
        Trajectory::new(steps, gamma)
    }
}

impl TabularMdp {
    pub fn new(
        num_states: usize,
        factor_cardinalities: Vec<usize>,
        horizon: usize,
        discount: f64,
        initial: Vec<f64>,
        transitions: Vec<Vec<Vec<f64>>>,
        rewards: Vec<Vec<f64>>,
    ) -> Result<Self> {
        TabularMdp {
            name: None,
            num_states,
            factor_cardinalities,
            horizon,
            discount,
            initial,
            transitions,
            rewards,
            spec: None,
        }
        .validated()
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mdp: TabularMdp = serde_json::from_str(&text)?;
        mdp.validated()
    }

    /// Checks table shapes and stochasticity, then caches the spec.
    pub fn validated(mut self) -> Result<Self> {
        let n = self.num_states;
        if n == 0 {
            return Err(Error::InvalidInput("tabular MDP needs at least one state".into()));
        }
        if self.factor_cardinalities.contains(&0) {
            return Err(Error::InvalidInput("factor with zero cardinality".into()));
        }
        let joint = self.num_joint_actions();
        let is_dist = |row: &[f64]| {
            row.len() == n
                && row.iter().all(|&p| (0.0..=1.0).contains(&p))
                && (row.iter().sum::<f64>() - 1.0).abs() < 1e-9
        };
        if !is_dist(&self.initial) {
            return Err(Error::InvalidInput("initial distribution is not a distribution over states".into()));
        }
        if self.transitions.len() != n || self.rewards.len() != n {
            return Err(Error::InvalidInput("transition/reward tables must have one row per state".into()));
        }
        for s in 0..n {
            if self.transitions[s].len() != joint || self.rewards[s].len() != joint {
                return Err(Error::InvalidInput(format!(
                    "state {s}: expected {joint} joint actions"
                )));
            }
            if let Some(j) = (0..joint).find(|&j| !is_dist(&self.transitions[s][j])) {
                return Err(Error::InvalidInput(format!(
                    "transition row ({s}, {j}) is not a distribution"
                )));
            }
            if self.rewards[s].iter().any(|r| !r.is_finite()) {
                return Err(Error::InvalidInput("non-finite reward".into()));
            }
        }
        let factors = self
            .factor_cardinalities
            .iter()
            .map(|&k| FactorDescriptor::Categorical { cardinality: k })
            .collect();
        self.spec = Some(MdpSpec::new(n, factors, self.horizon, self.discount)?);
        Ok(self)
    }

    pub fn num_joint_actions(&self) -> usize {
        self.factor_cardinalities.iter().product()
    }

    pub fn joint_index(&self, action: &[usize]) -> usize {
        action
            .iter()
            .zip(&self.factor_cardinalities)
            .fold(0, |acc, (&a, &k)| acc * k + a)
    }

    pub fn joint_action(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.factor_cardinalities.len()];
        for (slot, &k) in out.iter_mut().zip(&self.factor_cardinalities).rev() {
            *slot = index % k;
            index /= k;
        }
        out
    }

    pub fn one_hot(&self, s: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.num_states];
        v[s] = 1.0;
        v
    }

    /// Index of a one-hot state vector.
    pub fn state_index(&self, state: &[f64]) -> Result<usize> {
        if state.len() != self.num_states {
            return Err(Error::dims(self.num_states, state.len(), "tabular state"));
        }
        state
            .iter()
            .position(|&x| x == 1.0)
            .filter(|&i| state.iter().enumerate().all(|(j, &x)| j == i || x == 0.0))
            .ok_or_else(|| Error::InvalidInput("state is not one-hot".into()))
    }

    /// Decodes an action vector of category indices.
    pub fn action_indices(&self, action: &[f64]) -> Result<Vec<usize>> {
        let m = self.factor_cardinalities.len();
        if action.len() != m {
            return Err(Error::dims(m, action.len(), "tabular action"));
        }
        action
            .iter()
            .zip(&self.factor_cardinalities)
            .map(|(&a, &k)| {
                if a >= 0.0 && a.fract() == 0.0 && (a as usize) < k {
                    Ok(a as usize)
                } else {
                    Err(Error::InvalidInput(format!("action value {a} not in 0..{k}")))
                }
            })
            .collect()
    }

    /// Worst-case number of outcomes a full expansion could visit.
    pub fn outcome_bound(&self) -> u128 {
        let s = self.num_states as u128;
        let a = self.num_joint_actions() as u128;
        let mut total = s * a;
        for _ in 1..self.horizon {
            total = total.saturating_mul(s * a);
        }
        total
    }

    /// Exhaustively expands every trajectory with nonzero environment
    /// probability.
    pub fn enumerate(&self) -> Result<Vec<EnumeratedPath>> {
        let bound = self.outcome_bound();
        if bound > MAX_OUTCOMES {
            return Err(Error::EnumerationTooLarge {
                outcomes: bound,
                limit: MAX_OUTCOMES,
            });
        }
        let mut out = Vec::new();
        let mut path = EnumeratedPath {
            states: Vec::with_capacity(self.horizon),
            actions: Vec::with_capacity(self.horizon),
            rewards: Vec::with_capacity(self.horizon),
            env_probability: 1.0,
        };
        for s0 in 0..self.num_states {
            let p0 = self.initial[s0];
            if p0 > 0.0 {
                self.expand(s0, p0, &mut path, &mut out);
            }
        }
        Ok(out)
    }

    fn expand(&self, s: usize, prob: f64, path: &mut EnumeratedPath, out: &mut Vec<EnumeratedPath>) {
        for j in 0..self.num_joint_actions() {
            path.states.push(s);
            path.actions.push(self.joint_action(j));
            path.rewards.push(self.rewards[s][j]);
            if path.states.len() == self.horizon {
                out.push(EnumeratedPath {
                    env_probability: prob,
                    ..path.clone()
                });
            } else {
                for (s2, &p) in self.transitions[s][j].iter().enumerate() {
                    if p > 0.0 {
                        self.expand(s2, prob * p, path, out);
                    }
                }
            }
            path.states.pop();
            path.actions.pop();
            path.rewards.pop();
        }
    }

    fn sample_index(dist: &[f64], rng: &mut dyn RngCore) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, &p) in dist.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        dist.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }
}

impl Environment for TabularMdp {
    fn name(&self) -> &str {
        self.name.as_deref().unwrap_or("tabular")
    }

    fn spec(&self) -> &MdpSpec {
        self.spec
            .as_ref()
            .expect("TabularMdp used before validation")
    }

    fn reset(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.one_hot(Self::sample_index(&self.initial, rng))
    }

    fn step(&self, state: &[f64], action: &[f64], rng: &mut dyn RngCore) -> Result<Transition> {
        let s = self.state_index(state)?;
        let a = self.action_indices(action)?;
        let j = self.joint_index(&a);
        let next = Self::sample_index(&self.transitions[s][j], rng);
        Ok(Transition {
            next_state: self.one_hot(next),
            reward: self.rewards[s][j],
            terminal: false,
        })
    }

    fn as_tabular(&self) -> Option<&TabularMdp> {
        Some(self)
    }
}
