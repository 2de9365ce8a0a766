//! Fully connected network with row-chunked (data-parallel) batch evaluation.

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::par;

/// Rows per work item. Fixed so that gradient reductions do not depend on the thread count.
const ROW_CHUNK: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    pub fn tag(self) -> u32 {
        match self {
            Activation::Relu => 0,
            Activation::Identity => 1,
        }
    }

    pub fn from_tag(tag: u32) -> Result<Self> {
        match tag {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::Identity),
            _ => Err(Error::Format(format!("bad activation tag {tag}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    /// `in x out`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Linear {
    pub fn zeros(input: usize, output: usize, activation: Activation) -> Self {
        Linear { weight: Array2::zeros((input, output)), bias: Array1::zeros(output), activation }
    }

    /// He-uniform weights, zero bias.
    pub fn he_uniform<R: Rng>(input: usize, output: usize, activation: Activation, rng: &mut R) -> Self {
        let bound = (6.0 / input as f64).sqrt();
        let weight = Array2::from_shape_fn((input, output), |_| rng.random_range(-bound..bound));
        Linear { weight, bias: Array1::zeros(output), activation }
    }

    fn forward(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut z = x.dot(&self.weight);
        z += &self.bias;
        if self.activation == Activation::Relu {
            z.mapv_inplace(|v| if v < 0.0 { 0.0 } else { v });
        }
        z
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

/// Per-layer inputs plus the final output, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct MlpTrace {
    activations: Vec<Array2<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrad {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl MlpGrad {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        MlpGrad {
            weights: mlp.layers.iter().map(|l| Array2::zeros(l.weight.raw_dim())).collect(),
            biases: mlp.layers.iter().map(|l| Array1::zeros(l.bias.raw_dim())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrad) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }
}

impl Mlp {
    /// `hidden_layers` ReLU layers of `hidden_width`, then a linear head
    /// initialized to zero so the network starts as the zero map.
    pub fn new<R: Rng>(input: usize, hidden_width: usize, hidden_layers: usize, output: usize, rng: &mut R) -> Self {
        let mut layers = Vec::with_capacity(hidden_layers + 1);
        let mut width = input;
        for _ in 0..hidden_layers {
            layers.push(Linear::he_uniform(width, hidden_width, Activation::Relu, rng));
            width = hidden_width;
        }
        layers.push(Linear::zeros(width, output, Activation::Identity));
        Mlp { layers }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().unwrap().weight.ncols()
    }

    /// Multiply-adds per evaluated row.
    pub fn macs_per_row(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len()).sum()
    }

    fn check(z: &Array2<f64>, layer: usize) -> Result<()> {
        if z.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFiniteActivation { layer })
        }
    }

    fn forward_chunk(&self, x: ArrayView2<f64>, keep: bool) -> Result<(Array2<f64>, Vec<Array2<f64>>)> {
        let mut acts = Vec::new();
        let mut cur = x.to_owned();
        for (li, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&cur.view());
            Self::check(&z, li)?;
            if keep {
                acts.push(std::mem::replace(&mut cur, z));
            } else {
                cur = z;
            }
        }
        Ok((cur, acts))
    }

    fn chunks(n: usize) -> Vec<(usize, usize)> {
        (0..n.div_ceil(ROW_CHUNK)).map(|c| (c * ROW_CHUNK, ((c + 1) * ROW_CHUNK).min(n))).collect()
    }

    /// Batched evaluation without keeping intermediate activations.
    pub fn forward_inference(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let ranges = Self::chunks(x.nrows());
        let parts = par::map_slice(&ranges, |&(a, b)| self.forward_chunk(x.slice(s![a..b, ..]), false).map(|r| r.0));
        let parts: Vec<Array2<f64>> = parts.into_iter().collect::<Result<_>>()?;
        Ok(stack_rows(parts, self.output_width()))
    }

    /// Batched evaluation keeping what the backward pass needs.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, MlpTrace)> {
        let ranges = Self::chunks(x.nrows());
        let parts = par::map_slice(&ranges, |&(a, b)| self.forward_chunk(x.slice(s![a..b, ..]), true));
        let parts: Vec<(Array2<f64>, Vec<Array2<f64>>)> = parts.into_iter().collect::<Result<_>>()?;
        let mut activations = Vec::with_capacity(self.layers.len());
        for li in 0..self.layers.len() {
            let w = self.layers[li].weight.nrows();
            activations.push(stack_rows(parts.iter().map(|p| p.1[li].clone()).collect(), w));
        }
        let out = stack_rows(parts.into_iter().map(|p| p.0).collect(), self.output_width());
        activations.push(out.clone());
        Ok((out, MlpTrace { activations }))
    }

    /// Backward pass. Returns parameter gradients and the gradient on the input.
    pub fn backward(&self, trace: &MlpTrace, d_out: ArrayView2<f64>) -> (MlpGrad, Array2<f64>) {
        let n = d_out.nrows();
        let ranges = Self::chunks(n);
        let parts = par::map_slice(&ranges, |&(a, b)| {
            let mut grad = MlpGrad::zeros_like(self);
            let mut d = d_out.slice(s![a..b, ..]).to_owned();
            for li in (0..self.layers.len()).rev() {
                let layer = &self.layers[li];
                if layer.activation == Activation::Relu {
                    let out = trace.activations[li + 1].slice(s![a..b, ..]);
                    ndarray::Zip::from(&mut d).and(&out).for_each(|g, &o| {
                        if o <= 0.0 {
                            *g = 0.0;
                        }
                    });
                }
                let input = trace.activations[li].slice(s![a..b, ..]);
                grad.weights[li] = input.t().dot(&d);
                grad.biases[li] = d.sum_axis(Axis(0));
                d = d.dot(&layer.weight.t());
            }
            (grad, d)
        });
        let mut grad = MlpGrad::zeros_like(self);
        let mut dx = Vec::with_capacity(parts.len());
        for (g, d) in parts {
            grad.add_assign(&g);
            dx.push(d);
        }
        (grad, stack_rows(dx, self.input_width()))
    }
}

fn stack_rows(parts: Vec<Array2<f64>>, width: usize) -> Array2<f64> {
    match parts.len() {
        0 => Array2::zeros((0, width)),
        1 => parts.into_iter().next().unwrap(),
        _ => {
            let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
            concatenate(Axis(0), &views).expect("row chunks share a width")
        }
    }
}
