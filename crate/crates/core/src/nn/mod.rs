//! Dense networks with taped reverse-mode gradients, AdamW and a warm-restart cosine schedule.
//!
//! Parameters and activations are `f64` throughout. A forward pass over a batch returns a
//! [`Tape`] holding every layer input and pre-activation; [`Mlp::backward`] consumes it.

mod adamw;
pub mod checkpoint;
mod lr;

pub use adamw::{AdamW, AdamWConfig};
pub use lr::LrSchedule;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};

/// Shape and decay flag of one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    /// Whether decoupled weight decay applies (weights yes, biases no).
    pub decay: bool,
}

/// Anything holding trainable tensors in a fixed order.
pub trait Module {
    fn param_specs(&self) -> Vec<ParamSpec>;
    fn params(&self) -> Vec<&[f64]>;
    fn params_mut(&mut self) -> Vec<&mut [f64]>;

    fn n_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

/// Gradients laid out in the same order as [`Module::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Vec<f64>>);

impl Gradients {
    pub fn zeros_like<M: Module + ?Sized>(m: &M) -> Self {
        Gradients(m.params().iter().map(|p| vec![0.0; p.len()]).collect())
    }

    pub fn scale(&mut self, k: f64) {
        self.0.iter_mut().flatten().for_each(|g| *g *= k);
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|g| g.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// Tanh approximation of the Gaussian error linear unit.
    Gelu,
    Identity,
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_C: f64 = 0.044_715;

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => 0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh()),
            Activation::Identity => x,
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => {
                let th = (GELU_K * (x + GELU_C * x * x * x)).tanh();
                0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Fully connected layer `y = W x + b`, `W` stored as `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            weight: Array2::zeros((n_out, n_in)),
            bias: Array1::zeros(n_out),
        }
    }

    /// Uniform `+-1/sqrt(n_in)` initialisation.
    pub fn random<R: Rng + ?Sized>(n_in: usize, n_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (n_in as f64).sqrt();
        let mut d = Self::zeros(n_in, n_out);
        d.weight.iter_mut().for_each(|w| *w = rng.random_range(-bound..bound));
        d.bias.iter_mut().for_each(|b| *b = rng.random_range(-bound..bound));
        d
    }

    pub fn n_in(&self) -> usize {
        self.weight.ncols()
    }

    pub fn n_out(&self) -> usize {
        self.weight.nrows()
    }
}

/// Cached activations of one batched forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    generation: u64,
    /// Input to each layer, `batch x n_in`.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of each hidden layer, `batch x n_out`.
    pre: Vec<Array2<f64>>,
}

impl Tape {
    pub fn batch_size(&self) -> usize {
        self.inputs.first().map_or(0, |x| x.nrows())
    }
}

/// Multilayer perceptron; the final layer is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub activation: Activation,
    generation: u64,
}

impl Mlp {
    /// Builds a network with the given widths (`widths[0]` is the input width).
    pub fn new<R: Rng + ?Sized>(
        widths: &[usize],
        activation: Activation,
        zero_last: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Config(format!("bad layer widths {widths:?}")));
        }
        let n = widths.len() - 1;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                if zero_last && i + 1 == n {
                    Dense::zeros(w[0], w[1])
                } else {
                    Dense::random(w[0], w[1], rng)
                }
            })
            .collect();
        Ok(Self {
            layers,
            activation,
            generation: 0,
        })
    }

    pub fn from_layers(layers: Vec<Dense>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("an MLP needs at least one layer".into()));
        }
        for w in layers.windows(2) {
            if w[0].n_out() != w[1].n_in() {
                return Err(Error::Shape(format!(
                    "layer widths {} -> {} do not chain",
                    w[0].n_out(),
                    w[1].n_in()
                )));
            }
        }
        for l in &layers {
            if l.bias.len() != l.n_out() {
                return Err(Error::Shape("bias width differs from layer output".into()));
            }
        }
        Ok(Self {
            layers,
            activation,
            generation: 0,
        })
    }

    pub fn n_in(&self) -> usize {
        self.layers[0].n_in()
    }

    pub fn n_out(&self) -> usize {
        self.layers.last().unwrap().n_out()
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.n_in()];
        w.extend(self.layers.iter().map(Dense::n_out));
        w
    }

    /// Marks the parameters as changed; outstanding tapes become stale.
    pub fn touch(&mut self) {
        self.generation = self.generation.wrapping_add(1);
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    /// Single-input forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, Tape)> {
        let x = ArrayView2::from_shape((1, input.len()), input).map_err(|e| Error::Shape(e.to_string()))?;
        let (y, tape) = self.forward_batch(x)?;
        Ok((y.row(0).to_vec(), tape))
    }

    /// Output only, no tape.
    pub fn predict_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_width(x.ncols())?;
        let mut a = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = a.dot(&layer.weight.t());
            z += &layer.bias;
            if i + 1 < self.layers.len() {
                z.mapv_inplace(|v| self.activation.apply(v));
            }
            a = z;
        }
        Ok(a)
    }

    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Tape)> {
        self.check_width(x.ncols())?;
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n.saturating_sub(1));
        let mut a = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = a.dot(&layer.weight.t());
            z += &layer.bias;
            inputs.push(a);
            if i + 1 < n {
                let act = z.mapv(|v| self.activation.apply(v));
                pre.push(z);
                a = act;
            } else {
                a = z;
            }
        }
        Ok((
            a,
            Tape {
                generation: self.generation,
                inputs,
                pre,
            },
        ))
    }

    /// Reverse pass. `output_grad` is `dL/dy` for each batch row; parameter gradients are
    /// summed over the batch. Returns the parameter gradients and `dL/dx`.
    pub fn backward(&self, tape: &Tape, output_grad: ArrayView2<'_, f64>) -> Result<(Gradients, Array2<f64>)> {
        if tape.generation != self.generation || tape.inputs.len() != self.layers.len() {
            return Err(Error::Shape(
                "stale tape: parameters changed since the forward pass".into(),
            ));
        }
        if output_grad.dim() != (tape.batch_size(), self.n_out()) {
            return Err(Error::Shape(format!(
                "output gradient {:?} vs expected {:?}",
                output_grad.dim(),
                (tape.batch_size(), self.n_out())
            )));
        }
        let n = self.layers.len();
        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); 2 * n];
        let mut delta = output_grad.to_owned();
        for i in (0..n).rev() {
            let layer = &self.layers[i];
            let dw = delta.t().dot(&tape.inputs[i]);
            let db = delta.sum_axis(Axis(0));
            grads[2 * i] = dw.into_raw_vec_and_offset().0;
            grads[2 * i + 1] = db.to_vec();
            let mut d_in = delta.dot(&layer.weight);
            if i > 0 {
                let act = self.activation;
                ndarray::Zip::from(&mut d_in)
                    .and(&tape.pre[i - 1])
                    .for_each(|d, &z| *d *= act.derivative(z));
            }
            delta = d_in;
        }
        Ok((Gradients(grads), delta))
    }

    fn check_width(&self, got: usize) -> Result<()> {
        if got != self.n_in() {
            return Err(Error::Shape(format!(
                "input width {got}, network expects {}",
                self.n_in()
            )));
        }
        Ok(())
    }
}

impl Module for Mlp {
    fn param_specs(&self) -> Vec<ParamSpec> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    ParamSpec {
                        name: format!("layer{i}.weight"),
                        shape: vec![l.n_out(), l.n_in()],
                        decay: true,
                    },
                    ParamSpec {
                        name: format!("layer{i}.bias"),
                        shape: vec![l.n_out()],
                        decay: false,
                    },
                ]
            })
            .collect()
    }

    fn params(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    l.weight.as_slice().expect("standard layout"),
                    l.bias.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.generation = self.generation.wrapping_add(1);
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.weight.as_slice_mut().expect("standard layout"),
                    l.bias.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }
}

/// Row-wise softmax of a logit vector, shift-stabilised.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}
