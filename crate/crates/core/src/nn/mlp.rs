use serde::{Deserialize, Serialize};

use crate::numcore::{self, Rng, Tape, Tensor, Var};

use super::NnError;

/// Affine map `x·W + b` with `W: [in, out]` and `b: [1, out]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// Uniform `±1/√fan_in` weights, zero bias.
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.uniform_range(-bound, bound))
            .collect();
        Self {
            weight: Tensor::matrix(fan_in, fan_out, data).expect("finite init"),
            bias: Tensor::zeros(&[1, fan_out]),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.cols()
    }
}

/// Stack of affine layers with ReLU between them and a linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Linear>,
}

/// Vars produced by recording an [`Mlp`] onto a tape.
#[derive(Debug, Clone)]
pub struct MlpTrace {
    pub output: Var,
    /// `[w0, b0, w1, b1, ...]`, in the order of [`Mlp::params`].
    pub params: Vec<Var>,
}

impl Mlp {
    /// Fresh network with layer widths `dims` (`dims.len() - 1` layers).
    pub fn new(dims: &[usize], rng: &mut Rng) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least one layer");
        let layers = dims.windows(2).map(|w| Linear::init(w[0], w[1], rng)).collect();
        Self { layers }
    }

    /// Wraps explicit layers, checking that their widths chain.
    pub fn from_layers(layers: Vec<Linear>) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::Architecture("no layers".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weight.shape().len() != 2 || l.bias.shape() != [1, l.fan_out()] {
                return Err(NnError::Architecture(format!(
                    "layer {i}: weight {:?} / bias {:?}",
                    l.weight.shape(),
                    l.bias.shape()
                )));
            }
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(NnError::Architecture(format!(
                    "layer {i} emits {} features but layer {} expects {}",
                    pair[0].fan_out(),
                    i + 1,
                    pair[1].fan_in()
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Linear] {
        &mut self.layers
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].fan_in()];
        dims.extend(self.layers.iter().map(Linear::fan_out));
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn param_name(index: usize) -> String {
        let kind = if index.is_multiple_of(2) { "weight" } else { "bias" };
        format!("layer{}.{kind}", index / 2)
    }

    fn check_input(&self, x: &Tensor) -> Result<(), NnError> {
        if x.shape().len() != 2 || x.cols() != self.input_dim() {
            return Err(NnError::InputDim {
                expected: self.input_dim(),
                got: x.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Tape-free forward pass; same arithmetic as [`Mlp::record`].
    pub fn forward(&self, x: &Tensor) -> Result<Tensor, NnError> {
        self.check_input(x)?;
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = numcore::add_row(&numcore::matmul(&h, &layer.weight), &layer.bias);
            if i < last {
                h = h.map(|v| if v > 0.0 { v } else { 0.0 });
            }
        }
        Ok(h)
    }

    /// Records the forward pass on `tape`. Parameters become leaves when
    /// `trainable`, constants otherwise.
    pub fn record(&self, tape: &mut Tape, input: Var, trainable: bool) -> Result<MlpTrace, NnError> {
        self.check_input(tape.value(input))?;
        let last = self.layers.len() - 1;
        let mut params = Vec::with_capacity(2 * self.layers.len());
        let mut h = input;
        for (i, layer) in self.layers.iter().enumerate() {
            let (w, b) = if trainable {
                (tape.leaf(layer.weight.clone()), tape.leaf(layer.bias.clone()))
            } else {
                (tape.constant(layer.weight.clone()), tape.constant(layer.bias.clone()))
            };
            params.extend([w, b]);
            h = tape.matmul(h, w)?;
            h = tape.add_row(h, b)?;
            if i < last {
                h = tape.relu(h)?;
            }
        }
        Ok(MlpTrace { output: h, params })
    }
}
