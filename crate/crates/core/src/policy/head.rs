use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::env::FactorDescriptor;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Distribution family of one factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeadKind {
    /// Diagonal Gaussian, `mean = W·x + b`, free per-dimension log-std.
    Gaussian { dim: usize },
    /// Softmax over `logits = W·x + b`.
    Categorical { cardinality: usize },
}

impl HeadKind {
    pub fn from_descriptor(d: FactorDescriptor) -> Self {
        match d {
            FactorDescriptor::Continuous { dim } => HeadKind::Gaussian { dim },
            FactorDescriptor::Categorical { cardinality } => HeadKind::Categorical { cardinality },
        }
    }

    pub fn descriptor(self) -> FactorDescriptor {
        match self {
            HeadKind::Gaussian { dim } => FactorDescriptor::Continuous { dim },
            HeadKind::Categorical { cardinality } => FactorDescriptor::Categorical { cardinality },
        }
    }

    /// Rows of the weight matrix.
    pub fn outputs(self) -> usize {
        match self {
            HeadKind::Gaussian { dim } => dim,
            HeadKind::Categorical { cardinality } => cardinality,
        }
    }

    pub fn param_len(self, input_dim: usize) -> usize {
        match self {
            HeadKind::Gaussian { dim } => dim * (input_dim + 2),
            HeadKind::Categorical { cardinality } => cardinality * (input_dim + 1),
        }
    }
}

/// One factor of a [`super::FactoredPolicy`]: what it reads and where its
/// parameters live.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorHead {
    pub kind: HeadKind,
    /// Indices of the state vector the head reads.
    pub state_inputs: Vec<usize>,
    /// Parent factors whose (encoded) values are appended to the input.
    pub parents: Vec<usize>,
    pub input_dim: usize,
    /// Start of this head's parameter block.
    pub offset: usize,
    pub len: usize,
}

/// Linear pre-activations `W·x + b`; `block` is `[W (rows × n), b (rows), ...]`.
pub(crate) fn affine(block: &[f64], rows: usize, x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let bias = &block[rows * n..rows * (n + 1)];
    (0..rows)
        .map(|r| {
            block[r * n..(r + 1) * n]
                .iter()
                .zip(x)
                .map(|(w, xi)| w * xi)
                .sum::<f64>()
                + bias[r]
        })
        .collect()
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

fn log_softmax_at(logits: &[f64], v: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln() + max;
    logits[v] - lse
}

impl FactorHead {
    pub(crate) fn log_stds<'a>(&self, block: &'a [f64]) -> &'a [f64] {
        let HeadKind::Gaussian { dim } = self.kind else {
            unreachable!("log-std of a categorical head")
        };
        let n = self.input_dim;
        &block[dim * (n + 1)..dim * (n + 2)]
    }

    /// Gaussian mean / categorical logits.
    pub(crate) fn outputs(&self, block: &[f64], x: &[f64]) -> Vec<f64> {
        affine(block, self.kind.outputs(), x)
    }

    pub(crate) fn log_density(&self, block: &[f64], x: &[f64], value: &[f64]) -> f64 {
        let out = self.outputs(block, x);
        match self.kind {
            HeadKind::Gaussian { .. } => out
                .iter()
                .zip(self.log_stds(block))
                .zip(value)
                .map(|((mu, ls), a)| {
                    let z = (a - mu) * (-ls).exp();
                    -0.5 * z * z - ls - 0.5 * LN_2PI
                })
                .sum(),
            HeadKind::Categorical { .. } => log_softmax_at(&out, value[0] as usize),
        }
    }

    /// Gradient of the log-density with respect to this head's block.
    pub(crate) fn score(&self, block: &[f64], x: &[f64], value: &[f64]) -> Vec<f64> {
        let n = self.input_dim;
        let rows = self.kind.outputs();
        let out = self.outputs(block, x);
        let mut grad = vec![0.0; self.len];
        // d log p / d (pre-activation r)
        let dpre: Vec<f64> = match self.kind {
            HeadKind::Gaussian { .. } => {
                let ls = self.log_stds(block);
                let mut d = Vec::with_capacity(rows);
                for r in 0..rows {
                    let inv_var = (-2.0 * ls[r]).exp();
                    let diff = value[r] - out[r];
                    d.push(diff * inv_var);
                    grad[rows * (n + 1) + r] = diff * diff * inv_var - 1.0;
                }
                d
            }
            HeadKind::Categorical { .. } => {
                let a = value[0] as usize;
                softmax(&out)
                    .into_iter()
                    .enumerate()
                    .map(|(v, p)| if v == a { 1.0 - p } else { -p })
                    .collect()
            }
        };
        for r in 0..rows {
            for k in 0..n {
                grad[r * n + k] = dpre[r] * x[k];
            }
            grad[rows * n + r] = dpre[r];
        }
        grad
    }

    pub(crate) fn sample(&self, block: &[f64], x: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
        let out = self.outputs(block, x);
        match self.kind {
            HeadKind::Gaussian { .. } => out
                .iter()
                .zip(self.log_stds(block))
                .map(|(mu, ls)| {
                    let eps: f64 = StandardNormal.sample(rng);
                    mu + ls.exp() * eps
                })
                .collect(),
            HeadKind::Categorical { .. } => {
                let probs = softmax(&out);
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut pick = probs.len() - 1;
                for (v, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        pick = v;
                        break;
                    }
                }
                vec![pick as f64]
            }
        }
    }

    /// Expected value in encoded space: the mean for Gaussians, the
    /// probability vector (expected one-hot) for categoricals.
    pub(crate) fn mean(&self, block: &[f64], x: &[f64]) -> Vec<f64> {
        let out = self.outputs(block, x);
        match self.kind {
            HeadKind::Gaussian { .. } => out,
            HeadKind::Categorical { .. } => softmax(&out),
        }
    }

    /// KL(self at `block` ‖ self at `other`) for the same input.
    pub(crate) fn kl(&self, block: &[f64], other: &[f64], x: &[f64]) -> f64 {
        let p = self.outputs(block, x);
        let q = self.outputs(other, x);
        match self.kind {
            HeadKind::Gaussian { .. } => {
                let (lp, lq) = (self.log_stds(block), self.log_stds(other));
                (0..p.len())
                    .map(|r| {
                        let vp = (2.0 * lp[r]).exp();
                        let vq = (2.0 * lq[r]).exp();
                        lq[r] - lp[r] + (vp + (p[r] - q[r]).powi(2)) / (2.0 * vq) - 0.5
                    })
                    .sum()
            }
            HeadKind::Categorical { .. } => {
                let pp = softmax(&p);
                let (mp, mq) = (
                    p.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                    q.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                );
                let lse_p = p.iter().map(|l| (l - mp).exp()).sum::<f64>().ln() + mp;
                let lse_q = q.iter().map(|l| (l - mq).exp()).sum::<f64>().ln() + mq;
                pp.iter()
                    .enumerate()
                    .filter(|(_, &pv)| pv > 0.0)
                    .map(|(v, pv)| pv * ((p[v] - lse_p) - (q[v] - lse_q)))
                    .sum()
            }
        }
    }
}
