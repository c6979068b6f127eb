//! Random Fourier features and closed-form ridge regression.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// `y(x) = sin(P·x / ν + φ)` with `P` standard normal and `φ ~ U[-π, π)`.
/// Frozen after construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RffMap {
    input_dim: usize,
    /// Row-major `num_features × input_dim`.
    projection: Vec<f64>,
    phase: Vec<f64>,
    bandwidth: f64,
}

impl RffMap {
    pub fn new(
        input_dim: usize,
        num_features: usize,
        bandwidth: f64,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::InvalidInput(format!("bandwidth {bandwidth} must be positive")));
        }
        if num_features == 0 {
            return Err(Error::InvalidInput("RFF map needs at least one feature".into()));
        }
        let projection = (0..num_features * input_dim)
            .map(|_| StandardNormal.sample(rng))
            .collect();
        let phase = (0..num_features)
            .map(|_| rng.random_range(-std::f64::consts::PI..std::f64::consts::PI))
            .collect();
        Ok(RffMap {
            input_dim,
            projection,
            phase,
            bandwidth,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_features(&self) -> usize {
        self.phase.len()
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn phase(&self) -> &[f64] {
        &self.phase
    }

    /// `P·x/ν + φ`, before the sine.
    pub fn preactivations(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::dims(self.input_dim, x.len(), "RFF input"));
        }
        let inv = 1.0 / self.bandwidth;
        Ok(self
            .phase
            .iter()
            .enumerate()
            .map(|(r, phi)| {
                let row = &self.projection[r * self.input_dim..(r + 1) * self.input_dim];
                row.iter().zip(x).map(|(p, xi)| p * xi).sum::<f64>() * inv + phi
            })
            .collect())
    }

    /// Preactivations after adding `delta` to inputs `start..start + delta.len()`.
    pub fn shift_preactivations(&self, base: &[f64], start: usize, delta: &[f64]) -> Vec<f64> {
        let inv = 1.0 / self.bandwidth;
        base.iter()
            .enumerate()
            .map(|(r, u)| {
                let row = &self.projection[r * self.input_dim + start..r * self.input_dim + start + delta.len()];
                u + row.iter().zip(delta).map(|(p, d)| p * d).sum::<f64>() * inv
            })
            .collect()
    }

    pub fn features(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::dims(self.input_dim, x.len(), "RFF input"));
        }
        Ok(self.preactivations(x)?.into_iter().map(f64::sin).collect())
    }
}

/// Median pairwise Euclidean distance over the first `probe` samples.
/// Falls back to 1 when the samples are degenerate.
pub fn median_bandwidth(samples: &[Vec<f64>], probe: usize) -> f64 {
    let n = samples.len().min(probe);
    let mut d = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let dist = samples[i]
                .iter()
                .zip(&samples[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            d.push(dist);
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(|a, b| a.total_cmp(b));
    let med = if d.len() % 2 == 1 {
        d[d.len() / 2]
    } else {
        0.5 * (d[d.len() / 2 - 1] + d[d.len() / 2])
    };
    if med > 0.0 && med.is_finite() {
        med
    } else {
        1.0
    }
}

/// Input transform ahead of a linear model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureMap {
    /// Raw inputs.
    Linear { input_dim: usize },
    /// Inputs followed by their elementwise squares.
    Quadratic { input_dim: usize },
    Rff(RffMap),
}

impl FeatureMap {
    pub fn input_dim(&self) -> usize {
        match self {
            FeatureMap::Linear { input_dim } | FeatureMap::Quadratic { input_dim } => *input_dim,
            FeatureMap::Rff(m) => m.input_dim(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            FeatureMap::Linear { input_dim } => *input_dim,
            FeatureMap::Quadratic { input_dim } => 2 * input_dim,
            FeatureMap::Rff(m) => m.num_features(),
        }
    }

    pub fn map(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            FeatureMap::Linear { input_dim } => {
                if x.len() != *input_dim {
                    return Err(Error::dims(*input_dim, x.len(), "linear features"));
                }
                Ok(x.to_vec())
            }
            FeatureMap::Quadratic { input_dim } => {
                if x.len() != *input_dim {
                    return Err(Error::dims(*input_dim, x.len(), "quadratic features"));
                }
                Ok(x.iter().copied().chain(x.iter().map(|v| v * v)).collect())
            }
            FeatureMap::Rff(m) => m.features(x),
        }
    }
}

/// Ridge penalty specification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Ridge {
    Absolute(f64),
    /// Scaled by the mean diagonal of the (weighted) Gram matrix.
    Relative(f64),
}

impl Default for Ridge {
    fn default() -> Self {
        Ridge::Relative(1e-5)
    }
}

/// `argmin_w ‖F·w - t‖² + λ‖w‖²` via the normal equations.
pub fn ridge_solve(features: &DMatrix<f64>, targets: &[f64], ridge: f64) -> Result<Vec<f64>> {
    let (n, k) = features.shape();
    if n == 0 || n != targets.len() {
        return Err(Error::dims(n, targets.len(), "ridge targets"));
    }
    if ridge < 0.0 || !ridge.is_finite() {
        return Err(Error::InvalidInput(format!("ridge {ridge} must be >= 0")));
    }
    let t = DVector::from_column_slice(targets);
    let mut gram = features.transpose() * features;
    for d in 0..k {
        gram[(d, d)] += ridge;
    }
    let rhs = features.transpose() * t;
    solve_spd(gram, rhs)
}

fn solve_spd(gram: DMatrix<f64>, rhs: DVector<f64>) -> Result<Vec<f64>> {
    let scale = gram.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let chol = Cholesky::new(gram).ok_or_else(|| Error::Singular("normal equations are not positive definite".into()))?;
    // Cholesky can succeed on numerically singular systems; reject pivots
    // that vanish relative to the matrix scale.
    let l = chol.l_dirty();
    let min_pivot = (0..l.nrows()).map(|i| l[(i, i)]).fold(f64::INFINITY, f64::min);
    if !(min_pivot * min_pivot > scale * 1e-14) {
        return Err(Error::Singular("normal equations are numerically singular".into()));
    }
    let w = chol.solve(&rhs);
    if w.iter().any(|x| !x.is_finite()) {
        return Err(Error::Singular("non-finite solution".into()));
    }
    Ok(w.iter().copied().collect())
}

/// `b(x) = wᵀx + c` with an unpenalized bias `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Absolute penalty actually used by the last fit.
    pub ridge: f64,
}

impl LinearModel {
    pub fn zeros(num_features: usize) -> Self {
        LinearModel {
            weights: vec![0.0; num_features],
            bias: 0.0,
            ridge: 0.0,
        }
    }

    pub fn predict(&self, features: &[f64]) -> f64 {
        debug_assert_eq!(features.len(), self.weights.len());
        self.weights
            .iter()
            .zip(features)
            .map(|(w, x)| w * x)
            .sum::<f64>()
            + self.bias
    }

    /// Minimizes `Σ_n ω_n (wᵀx_n + c - t_n)² + λ‖w‖²` in closed form, with
    /// `ω ≡ 1` when `sample_weights` is `None`.
    pub fn fit(
        rows: &[Vec<f64>],
        targets: &[f64],
        ridge: Ridge,
        sample_weights: Option<&[f64]>,
    ) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::InvalidInput("cannot fit on an empty batch".into()));
        }
        if targets.len() != n {
            return Err(Error::dims(n, targets.len(), "regression targets"));
        }
        if let Some(w) = sample_weights {
            if w.len() != n {
                return Err(Error::dims(n, w.len(), "sample weights"));
            }
            if w.iter().any(|x| *x < 0.0 || !x.is_finite()) {
                return Err(Error::InvalidInput("sample weights must be finite and >= 0".into()));
            }
        }
        let k = rows[0].len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::InvalidInput("ragged feature rows".into()));
        }
        let design = DMatrix::from_fn(n, k + 1, |r, c| if c < k { rows[r][c] } else { 1.0 });
        let weighted = match sample_weights {
            Some(w) => DMatrix::from_fn(n, k + 1, |r, c| design[(r, c)] * w[r]),
            None => design.clone(),
        };
        let mut gram = weighted.transpose() * &design;
        let rhs = weighted.transpose() * DVector::from_column_slice(targets);
        let lambda = match ridge {
            Ridge::Absolute(l) => l,
            Ridge::Relative(c) => {
                let mean_diag = if k == 0 {
                    0.0
                } else {
                    (0..k).map(|d| gram[(d, d)]).sum::<f64>() / k as f64
                };
                // all-zero features fall back to the bias column's scale
                c * mean_diag.max(1e-6 * gram[(k, k)]).max(1e-12)
            }
        };
        if lambda < 0.0 || !lambda.is_finite() {
            return Err(Error::InvalidInput(format!("ridge {lambda} must be >= 0")));
        }
        for d in 0..k {
            gram[(d, d)] += lambda;
        }
        let mut w = solve_spd(gram, rhs)?;
        let bias = w.pop().expect("bias column");
        Ok(LinearModel {
            weights: w,
            bias,
            ridge: lambda,
        })
    }
}

/// A feature map paired with a fitted linear model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regressor {
    pub features: FeatureMap,
    pub model: LinearModel,
}

impl Regressor {
    /// The zero function over `features`.
    pub fn zero(features: FeatureMap) -> Self {
        let k = features.output_dim();
        Regressor {
            features,
            model: LinearModel::zeros(k),
        }
    }

    pub fn fit(
        features: FeatureMap,
        inputs: &[Vec<f64>],
        targets: &[f64],
        ridge: Ridge,
        sample_weights: Option<&[f64]>,
    ) -> Result<Self> {
        let rows = inputs
            .iter()
            .map(|x| features.map(x))
            .collect::<Result<Vec<_>>>()?;
        let model = LinearModel::fit(&rows, targets, ridge, sample_weights)?;
        Ok(Regressor { features, model })
    }

    pub fn predict(&self, input: &[f64]) -> Result<f64> {
        Ok(self.model.predict(&self.features.map(input)?))
    }
}
