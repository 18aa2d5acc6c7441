//! Fully connected rectifier network with a scalar output and exact
//! reverse-mode gradients.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::DenseMatrix;
use crate::{Error, Result};

/// Hidden width used by the reference decoder.
pub const REFERENCE_HIDDEN_WIDTH: usize = 4000;

/// Affine map `x ↦ x·W + b` with `W` stored as `in × out`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        Linear {
            weight: DenseMatrix::zeros(d_in, d_out),
            bias: vec![0.0; d_out],
        }
    }

    /// Uniform in `[−1/√fan_in, 1/√fan_in]` for weights and bias.
    pub fn uniform<R: Rng + ?Sized>(d_in: usize, d_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (d_in as f64).sqrt();
        let mut l = Self::zeros(d_in, d_out);
        for w in l.weight.as_mut_slice() {
            *w = rng.random_range(-bound..=bound);
        }
        for b in &mut l.bias {
            *b = rng.random_range(-bound..=bound);
        }
        l
    }

    pub fn d_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn d_out(&self) -> usize {
        self.weight.cols()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.bias.clone();
        for (i, &a) in x.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(self.weight.row(i)) {
                *o += a * w;
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

/// Activations recorded by a forward pass, consumed by [`Mlp::backward`].
#[derive(Clone, Debug)]
pub struct MlpTrace {
    /// Input to each layer; `inputs[0]` is the network input.
    inputs: Vec<Vec<f64>>,
    output: f64,
}

impl MlpTrace {
    pub fn output(&self) -> f64 {
        self.output
    }
}

impl Mlp {
    /// Builds `sizes = [d_in, h1, ..., 1]` with seeded uniform initialization.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        Self::check_sizes(sizes)?;
        let layers = sizes
            .windows(2)
            .map(|w| Linear::uniform(w[0], w[1], rng))
            .collect();
        Ok(Mlp { layers })
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        Self::check_sizes(sizes)?;
        Ok(Mlp {
            layers: sizes.windows(2).map(|w| Linear::zeros(w[0], w[1])).collect(),
        })
    }

    fn check_sizes(sizes: &[usize]) -> Result<()> {
        if sizes.len() < 2 || sizes.last() != Some(&1) || sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "mlp layer sizes must be positive and end in 1, got {sizes:?}"
            )));
        }
        Ok(())
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.layers.iter().map(Linear::d_in).collect();
        s.push(1);
        s
    }

    pub fn d_in(&self) -> usize {
        self.layers[0].d_in()
    }

    pub fn zeros_like(&self) -> Mlp {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Linear::zeros(l.d_in(), l.d_out()))
                .collect(),
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d_in() {
            return Err(Error::DimensionMismatch {
                context: "mlp input",
                expected: self.d_in(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        Ok(self.forward_trace(x)?.output)
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<MlpTrace> {
        self.check_input(x)?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut next = layer.apply(&cur);
            if i != last {
                for v in &mut next {
                    *v = v.max(0.0);
                }
            }
            inputs.push(cur);
            cur = next;
        }
        Ok(MlpTrace {
            inputs,
            output: cur[0],
        })
    }

    /// Accumulates `upstream · ∂ŷ/∂θ` into `grads` and returns `upstream · ∂ŷ/∂x`.
    ///
    /// The rectifier's subgradient at 0 is 0.
    pub fn backward(&self, trace: &MlpTrace, upstream: f64, grads: &mut Mlp) -> Vec<f64> {
        let mut delta = vec![upstream];
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &trace.inputs[i];
            let g = &mut grads.layers[i];
            for (b, d) in g.bias.iter_mut().zip(&delta) {
                *b += d;
            }
            for (r, &a) in input.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (w, d) in g.weight.row_mut(r).iter_mut().zip(&delta) {
                    *w += a * d;
                }
            }
            let mut prev: Vec<f64> = (0..layer.d_in())
                .map(|r| {
                    layer
                        .weight
                        .row(r)
                        .iter()
                        .zip(&delta)
                        .map(|(w, d)| w * d)
                        .sum()
                })
                .collect();
            // The input of layer i > 0 is a rectified activation.
            if i > 0 {
                for (p, &a) in prev.iter_mut().zip(input) {
                    if a <= 0.0 {
                        *p = 0.0;
                    }
                }
            }
            delta = std::mem::take(&mut prev);
        }
        delta
    }

    /// Parameter tensors in checkpoint order: `layer0.w, layer0.b, layer1.w, ...`.
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            for v in t {
                *v *= factor;
            }
        }
    }
}
