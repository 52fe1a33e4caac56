//! Standardized distance between a frame and the frames already buffered.

use crate::domain::{FeatureVector, FEATURE_LEN};

/// Default lower bound on per-feature deviation, in normalized units.
pub const DEFAULT_SIGMA_FLOOR: f64 = 1e-3;

/// Running per-feature moments of a buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct BufferStats {
    count: usize,
    sum: [f64; FEATURE_LEN],
    sum_sq: [f64; FEATURE_LEN],
}

impl Default for BufferStats {
    fn default() -> Self {
        Self {
            count: 0,
            sum: [0.0; FEATURE_LEN],
            sum_sq: [0.0; FEATURE_LEN],
        }
    }
}

impl BufferStats {
    pub fn from_features<'a>(features: impl IntoIterator<Item = &'a FeatureVector>) -> Self {
        let mut s = Self::default();
        for f in features {
            s.add(f);
        }
        s
    }

    pub fn add(&mut self, f: &FeatureVector) {
        self.count += 1;
        for (j, x) in f.0.iter().enumerate() {
            self.sum[j] += x;
            self.sum_sq[j] += x * x;
        }
    }

    pub fn merge(&mut self, other: &BufferStats) {
        self.count += other.count;
        for j in 0..FEATURE_LEN {
            self.sum[j] += other.sum[j];
            self.sum_sq[j] += other.sum_sq[j];
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn mean(&self, j: usize) -> f64 {
        self.sum[j] / self.count as f64
    }

    /// Population standard deviation.
    pub fn std(&self, j: usize) -> f64 {
        let n = self.count as f64;
        let m = self.sum[j] / n;
        (self.sum_sq[j] / n - m * m).max(0.0).sqrt()
    }
}

pub fn standardized_distance(f: &FeatureVector, stats: &BufferStats, sigma_floor: f64) -> f64 {
    (0..FEATURE_LEN)
        .map(|j| {
            let s = stats.std(j).max(sigma_floor);
            let z = (f.0[j] - stats.mean(j)) / s;
            z * z
        })
        .sum::<f64>()
        .sqrt()
}

/// Similarity in `(0, 1]`; an empty buffer is maximally similar. Distances
/// beyond the exponent range saturate at the smallest positive normal.
pub fn similarity(f: &FeatureVector, stats: &BufferStats, sigma_floor: f64) -> f64 {
    if stats.is_empty() {
        return 1.0;
    }
    (-standardized_distance(f, stats, sigma_floor))
        .exp()
        .max(f64::MIN_POSITIVE)
}
