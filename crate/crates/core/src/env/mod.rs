//! Episodic environments with a uniform interface.
//!
//! States and actions are flat `f64` vectors. A categorical action factor
//! occupies one slot holding the chosen index; a continuous factor of
//! dimension `d` occupies `d` slots. Factors are laid out in order.

mod communicate;
mod point_mass;
mod tabular;
mod target_matching;

pub use communicate::CommunicateTargetLite;
pub use point_mass::PointMass;
pub use tabular::{EnumeratedPath, TabularMdp};
pub use target_matching::{solve_threshold_for, TargetMatching};

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::estimator::returns_to_go;
use crate::policy::FactoredPolicy;
use crate::{Error, Result};

/// One factor of the action space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FactorDescriptor {
    Continuous { dim: usize },
    Categorical { cardinality: usize },
}

impl FactorDescriptor {
    /// Number of slots the factor occupies in an action vector.
    pub fn action_len(&self) -> usize {
        match *self {
            FactorDescriptor::Continuous { dim } => dim,
            FactorDescriptor::Categorical { .. } => 1,
        }
    }

    /// Number of slots the factor occupies in an encoded (one-hot) action.
    pub fn encoded_len(&self) -> usize {
        match *self {
            FactorDescriptor::Continuous { dim } => dim,
            FactorDescriptor::Categorical { cardinality } => cardinality,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpSpec {
    pub state_dim: usize,
    pub action_factors: Vec<FactorDescriptor>,
    pub horizon: usize,
    pub discount: f64,
}

impl MdpSpec {
    pub fn new(
        state_dim: usize,
        action_factors: Vec<FactorDescriptor>,
        horizon: usize,
        discount: f64,
    ) -> Result<Self> {
        let spec = MdpSpec {
            state_dim,
            action_factors,
            horizon,
            discount,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.action_dim() == 0 {
            return Err(Error::InvalidInput("action dimension must be at least 1".into()));
        }
        for f in &self.action_factors {
            match *f {
                FactorDescriptor::Continuous { dim: 0 } => {
                    return Err(Error::InvalidInput("continuous factor with dim 0".into()))
                }
                FactorDescriptor::Categorical { cardinality } if cardinality < 1 => {
                    return Err(Error::InvalidInput("categorical factor with no values".into()))
                }
                _ => {}
            }
        }
        if self.horizon == 0 {
            return Err(Error::InvalidInput("horizon must be at least 1".into()));
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "discount {} outside (0, 1]",
                self.discount
            )));
        }
        Ok(())
    }

    /// Total action dimension `m`.
    pub fn action_dim(&self) -> usize {
        self.action_factors.iter().map(|f| f.action_len()).sum()
    }

    pub fn num_factors(&self) -> usize {
        self.action_factors.len()
    }
}

/// A recorded step: the state acted in, the action taken and its outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
}

/// Result of applying an action to a state.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
}

/// A finite episode with its per-step discounted returns-to-go cached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    returns: Vec<f64>,
    gamma: f64,
}

impl Trajectory {
    pub fn new(steps: Vec<Step>, gamma: f64) -> Self {
        let rewards: Vec<f64> = steps.iter().map(|s| s.reward).collect();
        let returns = returns_to_go(&rewards, gamma);
        Trajectory {
            steps,
            returns,
            gamma,
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Empirical `Q̂(s_t, a_t)` for every step.
    pub fn returns(&self) -> &[f64] {
        &self.returns
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Undiscounted sum of rewards.
    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    /// `Σ γ^t r_t`, equal to the first cached return.
    pub fn discounted_return(&self) -> f64 {
        self.returns.first().copied().unwrap_or(0.0)
    }
}

pub trait Environment: Send + Sync {
    fn name(&self) -> &str;

    fn spec(&self) -> &MdpSpec;

    /// Draws an initial state from ρ0.
    fn reset(&self, rng: &mut dyn RngCore) -> Vec<f64>;

    fn step(&self, state: &[f64], action: &[f64], rng: &mut dyn RngCore) -> Result<Transition>;

    /// Present when the environment supports exhaustive enumeration.
    fn as_tabular(&self) -> Option<&TabularMdp> {
        None
    }

    /// Return level at which the task counts as solved, if it has one.
    fn solve_threshold(&self) -> Option<f64> {
        None
    }

    /// Per-factor subsets of state indices each factor's policy may observe.
    /// `None` means every factor sees the full state.
    fn factor_inputs(&self) -> Option<Vec<Vec<usize>>> {
        None
    }
}

pub(crate) fn check_action(spec: &MdpSpec, action: &[f64]) -> Result<()> {
    let m = spec.action_dim();
    if action.len() != m {
        return Err(Error::dims(m, action.len(), "action"));
    }
    if action.iter().any(|a| !a.is_finite()) {
        return Err(Error::InvalidInput("non-finite action".into()));
    }
    Ok(())
}

/// Runs one episode of at most `spec.horizon` steps.
pub fn rollout(
    env: &dyn Environment,
    policy: &FactoredPolicy,
    gamma: f64,
    env_rng: &mut dyn RngCore,
    policy_rng: &mut dyn RngCore,
) -> Result<Trajectory> {
    let horizon = env.spec().horizon;
    let mut state = env.reset(env_rng);
    let mut steps = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let action = policy.sample(&state, policy_rng)?;
        let tr = env.step(&state, &action, env_rng)?;
        let terminal = tr.terminal || t + 1 == horizon;
        steps.push(Step {
            state: std::mem::replace(&mut state, tr.next_state),
            action,
            reward: tr.reward,
            terminal,
        });
        if terminal {
            break;
        }
    }
    Ok(Trajectory::new(steps, gamma))
}

/// Every trajectory of an enumerable environment with its probability under
/// `policy`.
pub fn enumerate_trajectories(
    env: &dyn Environment,
    policy: &FactoredPolicy,
    gamma: f64,
) -> Result<Vec<(Trajectory, f64)>> {
    let mdp = env.as_tabular().ok_or_else(|| {
        Error::Unsupported(format!("environment `{}` is not enumerable", env.name()))
    })?;
    let paths = mdp.enumerate()?;
    paths
        .iter()
        .map(|p| Ok((p.to_trajectory(mdp, gamma), p.probability(mdp, policy)?)))
        .collect()
}

/// Names accepted by [`build`].
pub const ENV_NAMES: &[&str] = &[
    "target_matching",
    "point_mass",
    "communicate_target_lite",
    "tabular",
];

/// Builds a named environment from a JSON parameter map.
///
/// `seed` feeds quantities drawn once per experiment, such as the target
/// vector of target matching.
pub fn build(name: &str, params: &serde_json::Value, seed: u64) -> Result<Box<dyn Environment>> {
    let get_usize = |key: &str| -> Result<Option<usize>> {
        match params.get(key) {
            None | Some(serde_json::Value::Null) => Ok(None),
            Some(v) => v
                .as_u64()
                .map(|x| Some(x as usize))
                .ok_or_else(|| Error::Config(format!("env param `{key}` must be an integer"))),
        }
    };
    let get_f64 = |key: &str| -> Result<Option<f64>> {
        match params.get(key) {
            None | Some(serde_json::Value::Null) => Ok(None),
            Some(v) => v
                .as_f64()
                .map(Some)
                .ok_or_else(|| Error::Config(format!("env param `{key}` must be a number"))),
        }
    };
    match name {
        "target_matching" => {
            let m = get_usize("m")?
                .ok_or_else(|| Error::Config("target_matching requires param `m`".into()))?;
            let mut env = match params.get("target") {
                Some(serde_json::Value::Array(_)) => {
                    let target: Vec<f64> = serde_json::from_value(params["target"].clone())?;
                    if target.len() != m {
                        return Err(Error::Config(format!(
                            "target has length {}, expected m = {m}",
                            target.len()
                        )));
                    }
                    TargetMatching::new(target)?
                }
                _ => TargetMatching::from_seed(m, seed)?,
            };
            if let Some(th) = get_f64("solve_threshold")? {
                env = env.with_threshold(th);
            }
            Ok(Box::new(env))
        }
        "point_mass" => {
            let mut env = PointMass::default();
            if let Some(h) = get_usize("horizon")? {
                env = env.with_horizon(h)?;
            }
            if let Some(v) = params.get("fixed_start") {
                if !v.is_null() {
                    let start: [f64; 2] = serde_json::from_value(v.clone())?;
                    env = env.with_fixed_start(start);
                }
            }
            Ok(Box::new(env))
        }
        "communicate_target_lite" => {
            let mut env = CommunicateTargetLite::default();
            if let Some(h) = get_usize("horizon")? {
                env = env.with_horizon(h)?;
            }
            Ok(Box::new(env))
        }
        "tabular" => {
            let mdp: TabularMdp = if let Some(path) = params.get("path").and_then(|p| p.as_str()) {
                TabularMdp::from_json_file(path)?
            } else if let Some(name) = params.get("fixture").and_then(|p| p.as_str()) {
                crate::oracle::fixture(name)?
            } else if let Some(inline) = params.get("mdp") {
                let mdp: TabularMdp = serde_json::from_value(inline.clone())?;
                mdp.validated()?
            } else {
                return Err(Error::Config(
                    "tabular requires param `path`, `fixture` or inline `mdp`".into(),
                ));
            };
            Ok(Box::new(mdp))
        }
        other => Err(Error::Config(format!(
            "unknown environment `{other}`; valid names: {}",
            ENV_NAMES.join(", ")
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_rejects_empty_actions_and_bad_discount() {
        assert!(MdpSpec::new(1, vec![], 1, 1.0).is_err());
        let f = vec![FactorDescriptor::Continuous { dim: 1 }];
        assert!(MdpSpec::new(1, f.clone(), 1, 0.0).is_err());
        assert!(MdpSpec::new(1, f.clone(), 0, 1.0).is_err());
        let ok = MdpSpec::new(
            1,
            vec![
                FactorDescriptor::Continuous { dim: 3 },
                FactorDescriptor::Categorical { cardinality: 4 },
            ],
            2,
            0.9,
        )
        .unwrap();
        assert_eq!(ok.action_dim(), 4);
        assert_eq!(ok.num_factors(), 2);
    }

    #[test]
    fn unknown_name_lists_valid_names() {
        let err = build("mujoco_ant", &serde_json::json!({}), 0).err().unwrap();
        let msg = err.to_string();
        for name in ENV_NAMES {
            assert!(msg.contains(name), "{msg}");
        }
    }

    #[test]
    fn trajectory_return_cache_matches_direct_sum() {
        let rewards = [1.5, -2.0, 0.25, 4.0];
        let steps = rewards
            .iter()
            .map(|&r| Step {
                state: vec![0.0],
                action: vec![0.0],
                reward: r,
                terminal: false,
            })
            .collect();
        let traj = Trajectory::new(steps, 0.9);
        let direct: f64 = rewards
            .iter()
            .enumerate()
            .map(|(t, r)| 0.9f64.powi(t as i32) * r)
            .sum();
        assert!((traj.discounted_return() - direct).abs() < 1e-12);
        assert_eq!(traj.total_reward(), 3.75);
    }
}
