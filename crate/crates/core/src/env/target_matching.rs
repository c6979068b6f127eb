use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use super::{check_action, Environment, FactorDescriptor, MdpSpec, Transition};
use crate::rng::{stream, Stream};
use crate::{Error, Result};

/// Solve thresholds for the reference dimensions; other `m` use `-0.0025·m`.
pub fn solve_threshold_for(m: usize) -> f64 {
    match m {
        12 => -0.01,
        100 => -0.25,
        400 => -0.99,
        2000 => -4.96,
        _ => -0.0025 * m as f64,
    }
}

/// Single-state, one-step task with reward `-‖a - c‖²`.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetMatching {
    target: Vec<f64>,
    threshold: f64,
    spec: MdpSpec,
}

impl TargetMatching {
    pub fn new(target: Vec<f64>) -> Result<Self> {
        if target.is_empty() {
            return Err(Error::InvalidInput("target matching needs m >= 1".into()));
        }
        if target.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput("non-finite target".into()));
        }
        let m = target.len();
        let spec = MdpSpec::new(1, vec![FactorDescriptor::Continuous { dim: 1 }; m], 1, 1.0)?;
        Ok(TargetMatching {
            target,
            threshold: solve_threshold_for(m),
            spec,
        })
    }

    /// Target drawn from a standard normal seeded by `seed`.
    pub fn from_seed(m: usize, seed: u64) -> Result<Self> {
        let mut rng = stream(seed, Stream::Target, &[m as u64]);
        let target = (0..m).map(|_| StandardNormal.sample(&mut rng)).collect();
        Self::new(target)
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn m(&self) -> usize {
        self.target.len()
    }
}

impl Environment for TargetMatching {
    fn name(&self) -> &str {
        "target_matching"
    }

    fn spec(&self) -> &MdpSpec {
        &self.spec
    }

    fn reset(&self, _rng: &mut dyn RngCore) -> Vec<f64> {
        vec![0.0]
    }

    fn step(&self, state: &[f64], action: &[f64], _rng: &mut dyn RngCore) -> Result<Transition> {
        if state.len() != 1 {
            return Err(Error::dims(1, state.len(), "target matching state"));
        }
        check_action(&self.spec, action)?;
        let loss: f64 = action
            .iter()
            .zip(&self.target)
            .map(|(a, c)| (a - c) * (a - c))
            .sum();
        Ok(Transition {
            next_state: vec![0.0],
            reward: -loss,
            terminal: true,
        })
    }

    fn solve_threshold(&self) -> Option<f64> {
        Some(self.threshold)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamRng;
    use proptest::prelude::*;
    use rand::SeedableRng;

    #[test]
    fn reset_is_single_state() {
        let env = TargetMatching::from_seed(12, 3).unwrap();
        let mut rng = StreamRng::seed_from_u64(0);
        assert_eq!(env.reset(&mut rng), vec![0.0]);
        assert_eq!(env.spec().action_dim(), 12);
        assert_eq!(env.spec().horizon, 1);
    }

    #[test]
    fn reward_examples() {
        let env = TargetMatching::new(vec![1.0, 1.0]).unwrap();
        let mut rng = StreamRng::seed_from_u64(0);
        let at_target = env.step(&[0.0], &[1.0, 1.0], &mut rng).unwrap();
        assert_eq!(at_target.reward, 0.0);
        assert!(at_target.terminal);
        let at_zero = env.step(&[0.0], &[0.0, 0.0], &mut rng).unwrap();
        assert_eq!(at_zero.reward, -2.0);
    }

    #[test]
    fn wrong_action_length_is_rejected() {
        let env = TargetMatching::new(vec![1.0, 1.0]).unwrap();
        let mut rng = StreamRng::seed_from_u64(0);
        let err = env.step(&[0.0], &[1.0], &mut rng).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn thresholds() {
        assert_eq!(solve_threshold_for(12), -0.01);
        assert_eq!(solve_threshold_for(100), -0.25);
        assert_eq!(solve_threshold_for(400), -0.99);
        assert_eq!(solve_threshold_for(2000), -4.96);
        assert!((solve_threshold_for(40) + 0.1).abs() < 1e-15);
    }

    #[test]
    fn target_is_frozen_per_seed() {
        let a = TargetMatching::from_seed(5, 11).unwrap();
        let b = TargetMatching::from_seed(5, 11).unwrap();
        let c = TargetMatching::from_seed(5, 12).unwrap();
        assert_eq!(a.target(), b.target());
        assert_ne!(a.target(), c.target());
    }

    proptest! {
        #[test]
        fn reward_nonpositive_and_zero_only_at_target(
            target in prop::collection::vec(-3.0f64..3.0, 1..6),
            offsets in prop::collection::vec(-2.0f64..2.0, 6),
        ) {
            let env = TargetMatching::new(target.clone()).unwrap();
            let mut rng = StreamRng::seed_from_u64(0);
            let action: Vec<f64> = target.iter().zip(&offsets).map(|(c, o)| c + o).collect();
            let r = env.step(&[0.0], &action, &mut rng).unwrap().reward;
            prop_assert!(r <= 0.0);
            let same = action.iter().zip(&target).all(|(a, c)| a == c);
            prop_assert_eq!(r == 0.0, same);
        }
    }
}
