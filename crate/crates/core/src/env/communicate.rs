use rand::{Rng, RngCore};

use super::{check_action, Environment, FactorDescriptor, MdpSpec, Transition};
use crate::{Error, Result};

const DT: f64 = 0.1;

/// Two-agent particle world with a continuous communication channel.
///
/// Each agent knows the other's goal but not its own. The state is
/// `[p1, p2, g1, g2, c1, c2]` (each a 2-vector, 12 reals), where `cj` is the
/// message agent `j` emitted on the previous step. Agent `j` acts with 4
/// reals: 2 for velocity and 2 for its outgoing message. The reward is
/// `-(‖p1 - g1‖ + ‖p2 - g2‖)`.
///
/// Agent 1 observes `p1, g2, c2`; agent 2 observes `p2, g1, c1`.
#[derive(Debug, Clone, PartialEq)]
pub struct CommunicateTargetLite {
    spec: MdpSpec,
}

impl Default for CommunicateTargetLite {
    fn default() -> Self {
        CommunicateTargetLite {
            spec: MdpSpec::new(12, vec![FactorDescriptor::Continuous { dim: 4 }; 2], 100, 0.995)
                .expect("valid communicate spec"),
        }
    }
}

impl CommunicateTargetLite {
    pub fn with_horizon(mut self, horizon: usize) -> Result<Self> {
        self.spec = MdpSpec::new(12, self.spec.action_factors.clone(), horizon, self.spec.discount)?;
        Ok(self)
    }
}

impl Environment for CommunicateTargetLite {
    fn name(&self) -> &str {
        "communicate_target_lite"
    }

    fn spec(&self) -> &MdpSpec {
        &self.spec
    }

    fn reset(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let mut s = vec![0.0; 12];
        for x in &mut s[..8] {
            *x = rng.random_range(-1.0..1.0);
        }
        s
    }

    fn step(&self, state: &[f64], action: &[f64], _rng: &mut dyn RngCore) -> Result<Transition> {
        if state.len() != 12 {
            return Err(Error::dims(12, state.len(), "communicate state"));
        }
        check_action(&self.spec, action)?;
        let dist = |p: &[f64], g: &[f64]| ((p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2)).sqrt();
        let reward = -(dist(&state[0..2], &state[4..6]) + dist(&state[2..4], &state[6..8]));
        let mut next = state.to_vec();
        next[0] += DT * action[0];
        next[1] += DT * action[1];
        next[2] += DT * action[4];
        next[3] += DT * action[5];
        next[8..10].copy_from_slice(&action[2..4]);
        next[10..12].copy_from_slice(&action[6..8]);
        Ok(Transition {
            next_state: next,
            reward,
            terminal: false,
        })
    }

    fn factor_inputs(&self) -> Option<Vec<Vec<usize>>> {
        Some(vec![vec![0, 1, 6, 7, 10, 11], vec![2, 3, 4, 5, 8, 9]])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamRng;
    use rand::SeedableRng;

    #[test]
    fn messages_are_delivered_next_step() {
        let env = CommunicateTargetLite::default();
        let mut rng = StreamRng::seed_from_u64(2);
        let s = env.reset(&mut rng);
        assert_eq!(&s[8..], &[0.0; 4]);
        let a = [0.0, 0.0, 0.3, -0.4, 0.0, 0.0, 0.7, 0.1];
        let tr = env.step(&s, &a, &mut rng).unwrap();
        assert_eq!(&tr.next_state[8..10], &[0.3, -0.4]);
        assert_eq!(&tr.next_state[10..12], &[0.7, 0.1]);
        assert_eq!(&tr.next_state[..8], &s[..8]);
    }

    #[test]
    fn reward_is_zero_at_goals() {
        let env = CommunicateTargetLite::default();
        let mut rng = StreamRng::seed_from_u64(0);
        let s = [0.1, 0.2, -0.3, 0.4, 0.1, 0.2, -0.3, 0.4, 0.0, 0.0, 0.0, 0.0];
        let tr = env.step(&s, &[0.0; 8], &mut rng).unwrap();
        assert_eq!(tr.reward, 0.0);
    }

    #[test]
    fn observations_hide_own_goal() {
        let env = CommunicateTargetLite::default();
        let inputs = env.factor_inputs().unwrap();
        assert!(!inputs[0].contains(&4) && !inputs[0].contains(&5));
        assert!(!inputs[1].contains(&6) && !inputs[1].contains(&7));
    }
}
