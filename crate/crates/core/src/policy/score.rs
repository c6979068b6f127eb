use std::ops::Range;

/// Gradient of one factor's log-density with respect to the full parameter
/// vector, stored sparsely: entries outside the factor's block are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    pub factor: usize,
    pub offset: usize,
    pub values: Vec<f64>,
}

impl ScoreVector {
    pub fn block(&self) -> Range<usize> {
        self.offset..self.offset + self.values.len()
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    /// Inner product of two score vectors; zero when the blocks are disjoint.
    pub fn dot(&self, other: &ScoreVector) -> f64 {
        let (a, b) = (self.block(), other.block());
        let lo = a.start.max(b.start);
        let hi = a.end.min(b.end);
        (lo..hi)
            .map(|k| self.values[k - a.start] * other.values[k - b.start])
            .sum()
    }

    pub fn dot_dense(&self, v: &[f64]) -> f64 {
        self.values
            .iter()
            .zip(&v[self.block()])
            .map(|(a, b)| a * b)
            .sum()
    }

    /// `out += scale * self`.
    pub fn add_scaled_into(&self, out: &mut [f64], scale: f64) {
        for (o, v) in out[self.block()].iter_mut().zip(&self.values) {
            *o += scale * v;
        }
    }

    pub fn to_dense(&self, len: usize) -> Vec<f64> {
        let mut out = vec![0.0; len];
        self.add_scaled_into(&mut out, 1.0);
        out
    }
}
