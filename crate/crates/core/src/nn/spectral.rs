//! Power-iteration estimate of a weight matrix's largest singular value.

use serde::{Deserialize, Serialize};

use crate::numcore::{Rng, Tensor};

/// Persistent singular-vector estimates for one `[in, out]` weight.
///
/// `u` lives in the input space (length `in`), `v` in the output space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerState {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl PowerState {
    pub fn random(rows: usize, cols: usize, rng: &mut Rng) -> Self {
        let mut u: Vec<f64> = (0..rows).map(|_| rng.normal()).collect();
        normalize(&mut u);
        Self { u, v: vec![0.0; cols] }
    }

    /// Runs `iters` rounds of `v ← Wᵀu/‖Wᵀu‖, u ← Wv/‖Wv‖` and returns
    /// `σ = ‖Wv‖ = uᵀWv`.
    ///
    /// Each round applies `WᵀW` to `v`, so `‖Wv‖` never decreases from one
    /// round to the next. A zero matrix yields `σ = 0` and leaves the
    /// vectors untouched.
    pub fn iterate(&mut self, w: &Tensor, iters: usize) -> f64 {
        let (rows, cols) = (w.rows(), w.cols());
        debug_assert_eq!(self.u.len(), rows);
        debug_assert_eq!(self.v.len(), cols);
        let data = w.data();
        let mut sigma = 0.0;
        for _ in 0..iters {
            let mut v = vec![0.0; cols];
            for (i, &ui) in self.u.iter().enumerate() {
                for (vj, &wij) in v.iter_mut().zip(&data[i * cols..(i + 1) * cols]) {
                    *vj += ui * wij;
                }
            }
            if normalize(&mut v) == 0.0 {
                return 0.0;
            }
            let mut u: Vec<f64> = (0..rows).map(|i| dot(&data[i * cols..(i + 1) * cols], &v)).collect();
            sigma = normalize(&mut u);
            if sigma == 0.0 {
                return 0.0;
            }
            self.u = u;
            self.v = v;
        }
        sigma
    }

    /// `uᵀWv` with the current vectors, without iterating.
    pub fn current_estimate(&self, w: &Tensor) -> f64 {
        let cols = w.cols();
        self.u
            .iter()
            .enumerate()
            .map(|(i, ui)| ui * dot(&w.data()[i * cols..(i + 1) * cols], &self.v))
            .sum()
    }
}

/// Spectral norm estimate from a fresh deterministic start.
pub fn spectral_norm(w: &Tensor, iters: usize) -> f64 {
    // All-ones start; fine unless it is orthogonal to the top singular vector.
    let rows = w.rows();
    let mut state = PowerState {
        u: vec![1.0 / (rows as f64).sqrt(); rows],
        v: vec![0.0; w.cols()],
    };
    state.iterate(w, iters)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(x: &mut [f64]) -> f64 {
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > 0.0 {
        x.iter_mut().for_each(|v| *v /= n);
    }
    n
}
