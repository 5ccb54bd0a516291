//! Independent oracles shared by the integration tests.
//!
//! Nothing here calls the library's forward or backward code: networks are
//! re-evaluated with plain loops so that finite differences check the tape
//! against separate arithmetic.

#![allow(dead_code)]

use dcd_core::nn::Mlp;
use dcd_core::numcore::{Tape, Tensor};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Relative error `|a − b| / max(|a|, |b|, floor)`.
///
/// The floor keeps exactly-zero and round-off sized gradients from turning
/// an absolute error of ~1e-12 into a huge relative one.
pub fn rel_err(a: f64, b: f64) -> f64 {
    const FLOOR: f64 = 1e-4;
    (a - b).abs() / a.abs().max(b.abs()).max(FLOOR)
}

/// One affine layer as plain vectors, weight row-major `[fan_in][fan_out]`.
#[derive(Clone)]
pub struct RefLayer {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub fan_in: usize,
    pub fan_out: usize,
}

pub fn ref_layers(mlp: &Mlp) -> Vec<RefLayer> {
    mlp.layers()
        .iter()
        .map(|l| RefLayer {
            w: l.weight.data().to_vec(),
            b: l.bias.data().to_vec(),
            fan_in: l.fan_in(),
            fan_out: l.fan_out(),
        })
        .collect()
}

/// Straight-line forward of one row from layer `start` on, given that
/// layer's input. Returns the output and the ReLU on/off pattern of every
/// hidden unit visited.
pub fn ref_forward_from(layers: &[RefLayer], start: usize, input: &[f64]) -> (Vec<f64>, Vec<bool>) {
    let mut a = input.to_vec();
    let mut pattern = Vec::new();
    for (l, layer) in layers.iter().enumerate().skip(start) {
        // Row-major sweep; each z[j] still sums over p in order, then adds b[j].
        let mut z = vec![0.0; layer.fan_out];
        for (p, &ap) in a.iter().enumerate() {
            let row = &layer.w[p * layer.fan_out..(p + 1) * layer.fan_out];
            for (zj, &w) in z.iter_mut().zip(row) {
                *zj += ap * w;
            }
        }
        for (zj, &b) in z.iter_mut().zip(&layer.b) {
            *zj += b;
        }
        if l + 1 < layers.len() {
            for v in z.iter_mut() {
                pattern.push(*v > 0.0);
                if *v <= 0.0 {
                    *v = 0.0;
                }
            }
        }
        a = z;
    }
    (a, pattern)
}

/// Activations entering each layer and pre-activations leaving it, for one
/// row.
pub fn ref_activations(layers: &[RefLayer], x: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut acts = vec![x.to_vec()];
    let mut pre = Vec::new();
    for l in 0..layers.len() {
        let (z, _) = ref_forward_from(&layers[l..l + 1], 0, &acts[l]);
        if l + 1 < layers.len() {
            acts.push(z.iter().map(|v| v.max(0.0)).collect());
        }
        pre.push(z);
    }
    (acts, pre)
}

pub fn ref_forward(layers: &[RefLayer], x: &[f64]) -> Vec<f64> {
    ref_forward_from(layers, 0, x).0
}

#[derive(Debug, Default, Clone, Copy)]
pub struct FdReport {
    pub max_rel: f64,
    pub checked: usize,
    /// Coordinates whose ±h perturbation crossed a ReLU kink, where central
    /// differences do not estimate the derivative.
    pub skipped: usize,
}

impl FdReport {
    fn add(&mut self, analytic: f64, numeric: f64) {
        self.max_rel = self.max_rel.max(rel_err(analytic, numeric));
        self.checked += 1;
    }
}

/// Tape gradients of `Σ_rows Σ_k seed[r,k]·mlp(x)[r,k]` with respect to
/// every parameter (in `params()` order) and the input.
pub fn tape_grads(mlp: &Mlp, x: &Tensor, seed: &Tensor) -> (Vec<Tensor>, Tensor) {
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let trace = mlp.record(&mut tape, xv, true).unwrap();
    let mut g = tape.backward(trace.output, seed).unwrap();
    let params = trace.params.iter().map(|&p| g.take(p)).collect();
    (params, g.take(xv))
}

/// Checks every parameter and input gradient of `mlp` on batch `x` against
/// central differences of the straight-line oracle.
pub fn fd_check_mlp(mlp: &Mlp, x: &Tensor, seed: &Tensor) -> FdReport {
    let (pgrads, xgrad) = tape_grads(mlp, x, seed);
    let layers = ref_layers(mlp);
    let out_dim = mlp.output_dim();
    let rows = x.rows();
    let cached: Vec<_> = (0..rows).map(|r| ref_activations(&layers, x.row(r))).collect();
    let base: Vec<Vec<bool>> = (0..rows).map(|r| ref_forward_from(&layers, 0, x.row(r)).1).collect();
    let last = layers.len() - 1;
    let mut report = FdReport::default();

    // Output of row `r` when pre-activation `j` of layer `l` moves by `dz`.
    // Only that unit changes, so the next layer is updated from one weight
    // row and the rest is re-evaluated in full. Sets `kink` if any ReLU
    // flips.
    let shifted = |r: usize, l: usize, j: usize, dz: f64, kink: &mut bool| -> Vec<f64> {
        let (acts, pre) = &cached[r];
        let mut z = pre[l].clone();
        z[j] += dz;
        if l == last {
            return z;
        }
        if (z[j] > 0.0) != (pre[l][j] > 0.0) {
            *kink = true;
        }
        let da = z[j].max(0.0) - acts[l + 1][j];
        let next = &layers[l + 1];
        let mut z = pre[l + 1].clone();
        for (zk, &w) in z.iter_mut().zip(&next.w[j * next.fan_out..(j + 1) * next.fan_out]) {
            *zk += da * w;
        }
        if l + 1 == last {
            return z;
        }
        let mut a = z;
        for (v, &p) in a.iter_mut().zip(&pre[l + 1]) {
            if (*v > 0.0) != (p > 0.0) {
                *kink = true;
            }
            *v = v.max(0.0);
        }
        let (out, pat) = ref_forward_from(&layers, l + 2, &a);
        let offset = base[r].len() - pat.len();
        if pat[..] != base[r][offset..] {
            *kink = true;
        }
        out
    };
    let objective = |l: usize, j: usize, dz: &dyn Fn(usize) -> f64, kink: &mut bool| -> f64 {
        let mut total = 0.0;
        for r in 0..rows {
            let out = shifted(r, l, j, dz(r), kink);
            for k in 0..out_dim {
                total += seed.get(r, k) * out[k];
            }
        }
        total
    };

    for (l, layer) in layers.iter().enumerate() {
        for which in 0..2 {
            let n = if which == 0 { layer.w.len() } else { layer.b.len() };
            for i in 0..n {
                // Weight i = (p, j) feeds unit j scaled by the input a_p.
                let j = i % layer.fan_out;
                let scale = |r: usize| {
                    if which == 0 {
                        cached[r].0[l][i / layer.fan_out]
                    } else {
                        1.0
                    }
                };
                let mut kink = false;
                let fp = objective(l, j, &|r| FD_STEP * scale(r), &mut kink);
                let fm = objective(l, j, &|r| -FD_STEP * scale(r), &mut kink);
                if kink {
                    report.skipped += 1;
                    continue;
                }
                report.add(pgrads[2 * l + which].data()[i], (fp - fm) / (2.0 * FD_STEP));
            }
        }
    }

    for r in 0..rows {
        for c in 0..x.cols() {
            let mut xi = x.row(r).to_vec();
            let mut eval = |v: f64| {
                xi[c] = v;
                let (out, pat) = ref_forward_from(&layers, 0, &xi);
                let f: f64 = (0..out_dim).map(|k| seed.get(r, k) * out[k]).sum();
                (f, pat != base[r])
            };
            let (fp, kp) = eval(x.get(r, c) + FD_STEP);
            let (fm, km) = eval(x.get(r, c) - FD_STEP);
            if kp || km {
                report.skipped += 1;
                continue;
            }
            report.add(xgrad.get(r, c), (fp - fm) / (2.0 * FD_STEP));
        }
    }
    report
}
