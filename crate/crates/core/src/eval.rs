//! Mode coverage, critic level sets and critic/density rank alignment.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numcore::{Rng, Tensor};
use crate::sampler::{Potential, SamplerError};
use crate::synth::MixtureSpec;

pub const DEFAULT_HQ_SIGMAS: f64 = 4.0;

/// Points evaluated per critic call when sweeping a grid.
const GRID_CHUNK: usize = 4096;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no samples to evaluate")]
    Empty,
    #[error("samples must be [n, 2], got {0:?}")]
    Shape(Vec<usize>),
    #[error("invalid range [{lo}, {hi}] for {axis}: need finite lo < hi")]
    Range { axis: &'static str, lo: f64, hi: f64 },
    #[error("resolution must be at least 2 per axis, got {0}x{1}")]
    Resolution(usize, usize),
    #[error("non-finite critic value at lattice point ({0}, {1})")]
    NonFinite(usize, usize),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    pub samples: usize,
    pub total_modes: usize,
    pub modes_recovered: usize,
    /// Fraction of samples within `hq_sigmas` standard deviations of their
    /// nearest mode.
    pub hq_fraction: f64,
    pub hq_sigmas: f64,
    /// Nearest-mode assignment counts; they sum to `samples`.
    pub per_mode_counts: Vec<usize>,
    pub mean_nearest_distance: f64,
}

/// Assigns every sample to its nearest mode.
///
/// A mode counts as recovered when at least `n / (10·#modes)` samples land
/// within `hq_sigmas·std` of it.
pub fn mode_report(spec: &MixtureSpec, samples: &Tensor, hq_sigmas: f64) -> Result<ModeReport, EvalError> {
    if samples.shape().len() != 2 || samples.cols() != 2 {
        return Err(EvalError::Shape(samples.shape().to_vec()));
    }
    let n = samples.rows();
    if n == 0 {
        return Err(EvalError::Empty);
    }
    let k = spec.len();
    let mut counts = vec![0usize; k];
    let mut hq_counts = vec![0usize; k];
    let mut dist_sum = 0.0;
    for i in 0..n {
        let r = samples.row(i);
        let (mode, d) = spec.nearest_mode([r[0], r[1]]);
        counts[mode] += 1;
        dist_sum += d;
        if d <= hq_sigmas * spec.modes()[mode].std {
            hq_counts[mode] += 1;
        }
    }
    let threshold = n as f64 / (10.0 * k as f64);
    let hq: usize = hq_counts.iter().sum();
    Ok(ModeReport {
        samples: n,
        total_modes: k,
        modes_recovered: hq_counts.iter().filter(|&&c| c as f64 >= threshold).count(),
        hq_fraction: hq as f64 / n as f64,
        hq_sigmas,
        per_mode_counts: counts,
        mean_nearest_distance: dist_sum / n as f64,
    })
}

/// Critic values on a regular lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelGrid {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub nx: usize,
    pub ny: usize,
    /// Row-major by `y` index: `values[j * nx + i]` is the value at
    /// `(x_i, y_j)`.
    pub values: Vec<f64>,
}

/// `i`-th of `n` evenly spaced points on `[lo, hi]`.
///
/// Computed as `lo + (hi − lo)·(i/(n − 1))` so that lattice points shared by
/// a grid and its refinement get bit-identical coordinates.
pub fn lattice_coord(lo: f64, hi: f64, i: usize, n: usize) -> f64 {
    lo + (hi - lo) * (i as f64 / (n - 1) as f64)
}

impl LevelGrid {
    pub fn x(&self, i: usize) -> f64 {
        lattice_coord(self.x_range.0, self.x_range.1, i, self.nx)
    }

    pub fn y(&self, j: usize) -> f64 {
        lattice_coord(self.y_range.0, self.y_range.1, j, self.ny)
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.nx + i]
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// `exp(D)` normalized to sum to one over the lattice.
    pub fn normalized_density(&self) -> Vec<f64> {
        let (_, max) = self.min_max();
        let w: Vec<f64> = self.values.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = w.iter().sum();
        w.into_iter().map(|v| v / total).collect()
    }
}

fn check_range(axis: &'static str, (lo, hi): (f64, f64)) -> Result<(), EvalError> {
    if lo.is_finite() && hi.is_finite() && lo < hi {
        Ok(())
    } else {
        Err(EvalError::Range { axis, lo, hi })
    }
}

pub fn level_grid<P: Potential + ?Sized>(
    critic: &P,
    x_range: (f64, f64),
    y_range: (f64, f64),
    resolution: (usize, usize),
) -> Result<LevelGrid, EvalError> {
    check_range("x", x_range)?;
    check_range("y", y_range)?;
    let (nx, ny) = resolution;
    if nx < 2 || ny < 2 {
        return Err(EvalError::Resolution(nx, ny));
    }
    let mut points = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        let y = lattice_coord(y_range.0, y_range.1, j, ny);
        for i in 0..nx {
            points.push(lattice_coord(x_range.0, x_range.1, i, nx));
            points.push(y);
        }
    }
    let total = nx * ny;
    let mut values = Vec::with_capacity(total);
    for start in (0..total).step_by(GRID_CHUNK) {
        let end = (start + GRID_CHUNK).min(total);
        let chunk = Tensor::matrix(end - start, 2, points[2 * start..2 * end].to_vec()).map_err(SamplerError::from)?;
        values.extend(critic.values(&chunk)?);
    }
    if let Some(p) = values.iter().position(|v| !v.is_finite()) {
        return Err(EvalError::NonFinite(p % nx, p / nx));
    }
    Ok(LevelGrid {
        x_range,
        y_range,
        nx,
        ny,
        values,
    })
}

/// Average ranks (1-based), ties sharing the mean of their positions.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation; `None` when either input is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len());
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some(sab / (saa * sbb).sqrt())
}

/// Margin around the mode means for the uniform background points.
pub const ALIGNMENT_MARGIN: f64 = 1.0;

/// Rank correlation between the true log-density and the critic over `n`
/// mixture draws plus `n` uniform points covering the modes.
///
/// A constant critic (or density) has no ranking; the result is 0 and a
/// warning is logged.
pub fn energy_alignment<P: Potential + ?Sized>(
    spec: &MixtureSpec,
    critic: &P,
    n: usize,
    rng: &mut Rng,
) -> Result<f64, EvalError> {
    assert!(n >= 2, "need at least two points per population");
    let data = spec.sample(rng, n);
    let [x0, x1, y0, y1] = spec.bounding_box(ALIGNMENT_MARGIN);
    let mut bg = Vec::with_capacity(2 * n);
    for _ in 0..n {
        bg.push(rng.uniform_range(x0, x1));
        bg.push(rng.uniform_range(y0, y1));
    }
    let background = Tensor::matrix(n, 2, bg).map_err(SamplerError::from)?;
    let points = data.vstack(&background).map_err(SamplerError::from)?;
    let truth = spec.values(&points)?;
    let mut scores = Vec::with_capacity(points.rows());
    for start in (0..points.rows()).step_by(GRID_CHUNK) {
        let end = (start + GRID_CHUNK).min(points.rows());
        scores.extend(critic.values(&points.slice_rows(start, end))?);
    }
    Ok(spearman(&truth, &scores).unwrap_or_else(|| {
        log::warn!("energy alignment undefined for a constant input; reporting 0");
        0.0
    }))
}
