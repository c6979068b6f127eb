use rand::{Rng, RngCore};

use super::{check_action, Environment, FactorDescriptor, MdpSpec, Transition};
use crate::{Error, Result};

const DT: f64 = 0.1;
const VELOCITY_COST: f64 = 0.1;
const CONTROL_COST: f64 = 0.01;

/// 2D double integrator driven toward the origin.
///
/// State is `(px, py, vx, vy)`; the action is a force per axis, one
/// continuous factor each. Reward per step is
/// `-(‖p‖² + 0.1‖v‖² + 0.01‖u‖²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMass {
    fixed_start: Option<[f64; 2]>,
    spec: MdpSpec,
}

impl Default for PointMass {
    fn default() -> Self {
        PointMass {
            fixed_start: None,
            spec: MdpSpec::new(4, vec![FactorDescriptor::Continuous { dim: 1 }; 2], 100, 0.995)
                .expect("valid point mass spec"),
        }
    }
}

impl PointMass {
    pub fn with_horizon(mut self, horizon: usize) -> Result<Self> {
        self.spec = MdpSpec::new(4, self.spec.action_factors.clone(), horizon, self.spec.discount)?;
        Ok(self)
    }

    pub fn with_fixed_start(mut self, start: [f64; 2]) -> Self {
        self.fixed_start = Some(start);
        self
    }
}

impl Environment for PointMass {
    fn name(&self) -> &str {
        "point_mass"
    }

    fn spec(&self) -> &MdpSpec {
        &self.spec
    }

    fn reset(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let [px, py] = self
            .fixed_start
            .unwrap_or_else(|| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
        vec![px, py, 0.0, 0.0]
    }

    fn step(&self, state: &[f64], action: &[f64], _rng: &mut dyn RngCore) -> Result<Transition> {
        if state.len() != 4 {
            return Err(Error::dims(4, state.len(), "point mass state"));
        }
        check_action(&self.spec, action)?;
        let (p, v) = (&state[..2], &state[2..]);
        let reward = -(p[0] * p[0] + p[1] * p[1])
            - VELOCITY_COST * (v[0] * v[0] + v[1] * v[1])
            - CONTROL_COST * (action[0] * action[0] + action[1] * action[1]);
        let vx = v[0] + DT * action[0];
        let vy = v[1] + DT * action[1];
        Ok(Transition {
            next_state: vec![p[0] + DT * vx, p[1] + DT * vy, vx, vy],
            reward,
            terminal: false,
        })
    }
}
