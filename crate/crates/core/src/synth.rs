//! Isotropic 2D Gaussian mixtures: the training data and the ground truth.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numcore::{Rng, Tensor};

pub const RING8_RADIUS: f64 = 2.0;
pub const RING8_STD: f64 = 0.02;
pub const GRID25_SPACING: f64 = 2.0;
pub const GRID25_STD: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MixtureError {
    #[error("mixture needs at least one mode")]
    Empty,
    #[error("{modes} modes but {weights} weights")]
    WeightCount { modes: usize, weights: usize },
    #[error("weights must be non-negative and sum to 1 (sum = {sum})")]
    Weights { sum: f64 },
    #[error("mode {index} has non-positive or non-finite std {std}")]
    Std { index: usize, std: f64 },
    #[error("mode {index} has a non-finite mean")]
    Mean { index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub mean: [f64; 2],
    pub std: f64,
}

/// Weighted isotropic Gaussian mixture in the plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMixture", into = "RawMixture")]
pub struct MixtureSpec {
    modes: Vec<Mode>,
    weights: Vec<f64>,
    cumulative: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawMixture {
    modes: Vec<Mode>,
    weights: Vec<f64>,
}

impl TryFrom<RawMixture> for MixtureSpec {
    type Error = MixtureError;
    fn try_from(raw: RawMixture) -> Result<Self, Self::Error> {
        MixtureSpec::new(raw.modes, raw.weights)
    }
}

impl From<MixtureSpec> for RawMixture {
    fn from(spec: MixtureSpec) -> Self {
        RawMixture {
            modes: spec.modes,
            weights: spec.weights,
        }
    }
}

impl MixtureSpec {
    pub fn new(modes: Vec<Mode>, weights: Vec<f64>) -> Result<Self, MixtureError> {
        if modes.is_empty() {
            return Err(MixtureError::Empty);
        }
        if modes.len() != weights.len() {
            return Err(MixtureError::WeightCount {
                modes: modes.len(),
                weights: weights.len(),
            });
        }
        for (index, m) in modes.iter().enumerate() {
            if !(m.std > 0.0 && m.std.is_finite()) {
                return Err(MixtureError::Std { index, std: m.std });
            }
            if !m.mean.iter().all(|v| v.is_finite()) {
                return Err(MixtureError::Mean { index });
            }
        }
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|w| w.is_nan() || *w < 0.0) || (sum - 1.0).abs() > 1e-12 {
            return Err(MixtureError::Weights { sum });
        }
        let cumulative = weights
            .iter()
            .scan(0.0, |acc, w| {
                *acc += w;
                Some(*acc)
            })
            .collect();
        Ok(Self {
            modes,
            weights,
            cumulative,
        })
    }

    /// Equal weights over `modes`.
    pub fn uniform(modes: Vec<Mode>) -> Result<Self, MixtureError> {
        let n = modes.len();
        Self::new(modes, vec![1.0 / n as f64; n])
    }

    /// Eight equal modes on a circle of `radius` centred at the origin,
    /// mode `k` at angle `2πk/8`.
    pub fn ring8_with(radius: f64, std: f64) -> Self {
        let modes = (0..8)
            .map(|k| {
                let a = 2.0 * PI * k as f64 / 8.0;
                Mode {
                    mean: [radius * a.cos(), radius * a.sin()],
                    std,
                }
            })
            .collect();
        Self::uniform(modes).expect("valid ring")
    }

    pub fn ring8() -> Self {
        Self::ring8_with(RING8_RADIUS, RING8_STD)
    }

    /// 5×5 equal-weight grid with the given spacing, centred at the origin.
    pub fn grid25_with(spacing: f64, std: f64) -> Self {
        let modes = (-2..=2)
            .flat_map(|i| {
                (-2..=2).map(move |j| Mode {
                    mean: [i as f64 * spacing, j as f64 * spacing],
                    std,
                })
            })
            .collect();
        Self::uniform(modes).expect("valid grid")
    }

    pub fn grid25() -> Self {
        Self::grid25_with(GRID25_SPACING, GRID25_STD)
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// Axis-aligned box `[xmin, xmax, ymin, ymax]` around the mode means.
    pub fn bounding_box(&self, margin: f64) -> [f64; 4] {
        let mut b = [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY];
        for m in &self.modes {
            b[0] = b[0].min(m.mean[0]);
            b[1] = b[1].max(m.mean[0]);
            b[2] = b[2].min(m.mean[1]);
            b[3] = b[3].max(m.mean[1]);
        }
        [b[0] - margin, b[1] + margin, b[2] - margin, b[3] + margin]
    }

    fn pick(&self, u: f64) -> usize {
        self.cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.modes.len() - 1)
    }

    /// `n` i.i.d. draws as an `[n, 2]` tensor.
    pub fn sample(&self, rng: &mut Rng, n: usize) -> Tensor {
        assert!(n >= 1, "sample size must be positive");
        let mut data = Vec::with_capacity(2 * n);
        for _ in 0..n {
            let m = &self.modes[self.pick(rng.uniform())];
            data.push(m.mean[0] + m.std * rng.normal());
            data.push(m.mean[1] + m.std * rng.normal());
        }
        Tensor::from_parts(vec![n, 2], data)
    }

    fn log_components(&self, x: [f64; 2]) -> Vec<f64> {
        self.modes
            .iter()
            .zip(&self.weights)
            .map(|(m, w)| {
                let s2 = m.std * m.std;
                let d2 = (x[0] - m.mean[0]).powi(2) + (x[1] - m.mean[1]).powi(2);
                w.ln() - (2.0 * PI * s2).ln() - d2 / (2.0 * s2)
            })
            .collect()
    }

    /// Exact mixture log-density, via log-sum-exp.
    pub fn log_density(&self, x: [f64; 2]) -> f64 {
        let logs = self.log_components(x);
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
    }

    /// `∇ₓ log p(x)`: responsibility-weighted `(μ_k − x)/s_k²`.
    pub fn score(&self, x: [f64; 2]) -> [f64; 2] {
        let logs = self.log_components(x);
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let r: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = r.iter().sum();
        let mut g = [0.0; 2];
        for (m, rk) in self.modes.iter().zip(&r) {
            let s2 = m.std * m.std;
            g[0] += rk * (m.mean[0] - x[0]) / s2;
            g[1] += rk * (m.mean[1] - x[1]) / s2;
        }
        [g[0] / total, g[1] / total]
    }

    /// Index of the mode whose mean is nearest to `x`, and that distance.
    pub fn nearest_mode(&self, x: [f64; 2]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (k, m) in self.modes.iter().enumerate() {
            let d = ((x[0] - m.mean[0]).powi(2) + (x[1] - m.mean[1]).powi(2)).sqrt();
            if d < best.1 {
                best = (k, d);
            }
        }
        best
    }
}
