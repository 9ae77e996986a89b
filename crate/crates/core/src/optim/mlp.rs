//! Feed-forward networks over a flat parameter buffer, with exact
//! reverse-mode gradients.
//!
//! Parameters live in one contiguous `Vec<f64>`: for every layer the weight
//! matrix (row-major, `fan_in x fan_out`) followed by its bias. Keeping the
//! buffer flat lets the optimizer, checkpointing and serialization treat any
//! composition of networks (trunk plus heads) as a single vector.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TensorKind {
    Weight,
    Bias,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorShape {
    pub rows: usize,
    pub cols: usize,
    pub kind: TensorKind,
}

impl TensorShape {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flat parameter values with the shape of every tensor they hold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    pub values: Vec<f64>,
    pub shapes: Vec<TensorShape>,
}

impl ParameterSet {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// One flag per scalar: true for weight entries (decayed), false for biases.
    pub fn decay_mask(&self) -> Vec<bool> {
        self.shapes.iter().flat_map(|s| std::iter::repeat_n(s.kind == TensorKind::Weight, s.len())).collect()
    }

    pub fn concat(parts: Vec<ParameterSet>) -> ParameterSet {
        let mut values = Vec::new();
        let mut shapes = Vec::new();
        for p in parts {
            values.extend(p.values);
            shapes.extend(p.shapes);
        }
        ParameterSet { values, shapes }
    }

    pub fn zeros_like(&self) -> ParameterSet {
        ParameterSet { values: vec![0.0; self.values.len()], shapes: self.shapes.clone() }
    }

    pub fn is_consistent(&self) -> bool {
        self.shapes.iter().map(TensorShape::len).sum::<usize>() == self.values.len()
    }
}

/// Layer widths of a fully connected network. Hidden layers use ELU; the
/// output layer is linear unless `activate_output` is set (used for shared
/// representation trunks).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    #[serde(default)]
    pub activate_output: bool,
}

pub fn elu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        z.exp_m1()
    }
}

// ELU'(z) expressed through a = ELU(z): 1 for z > 0, a + 1 otherwise.
fn elu_grad_from_output(a: f64) -> f64 {
    if a > 0.0 {
        1.0
    } else {
        a + 1.0
    }
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden: Vec<usize>, output_dim: usize) -> Self {
        Self { input_dim, hidden, output_dim, activate_output: false }
    }

    /// A representation network: every layer (including the last) is activated.
    pub fn trunk(input_dim: usize, widths: &[usize]) -> Self {
        let (last, hidden) = widths.split_last().expect("trunk needs at least one layer");
        Self { input_dim, hidden: hidden.to_vec(), output_dim: *last, activate_output: true }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::Config(format!("all layer widths must be >= 1: {self:?}")));
        }
        Ok(())
    }

    fn dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden);
        dims.push(self.output_dim);
        dims
    }

    pub fn n_layers(&self) -> usize {
        self.hidden.len() + 1
    }

    pub fn shapes(&self) -> Vec<TensorShape> {
        self.dims()
            .windows(2)
            .flat_map(|w| {
                [
                    TensorShape { rows: w[0], cols: w[1], kind: TensorKind::Weight },
                    TensorShape { rows: 1, cols: w[1], kind: TensorKind::Bias },
                ]
            })
            .collect()
    }

    pub fn n_params(&self) -> usize {
        self.shapes().iter().map(TensorShape::len).sum()
    }

    fn activated(&self, layer: usize) -> bool {
        layer + 1 < self.n_layers() || self.activate_output
    }

    /// Uniform fan-in initialization, `U(-sqrt(6/fan_in), sqrt(6/fan_in))`;
    /// biases start at zero.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> ParameterSet {
        let shapes = self.shapes();
        let mut values = Vec::with_capacity(self.n_params());
        for s in &shapes {
            match s.kind {
                TensorKind::Weight => {
                    let bound = (6.0 / s.rows as f64).sqrt();
                    values.extend((0..s.len()).map(|_| rng.random_range(-bound..bound)));
                }
                TensorKind::Bias => values.extend(std::iter::repeat_n(0.0, s.len())),
            }
        }
        ParameterSet { values, shapes }
    }

    /// Zeroes the final layer so the network initially outputs 0 everywhere.
    pub fn zero_output_layer(&self, params: &mut [f64]) {
        let dims = self.dims();
        let fan_in = dims[dims.len() - 2];
        let last = (fan_in + 1) * self.output_dim;
        let n = params.len();
        params[n - last..].fill(0.0);
    }

    fn layer<'a>(
        &self,
        params: &'a [f64],
        offset: usize,
        fan_in: usize,
        fan_out: usize,
    ) -> (ArrayView2<'a, f64>, ArrayView1<'a, f64>) {
        let w_len = fan_in * fan_out;
        let w = ArrayView2::from_shape((fan_in, fan_out), &params[offset..offset + w_len]).expect("layer shape");
        let b = ArrayView1::from(&params[offset + w_len..offset + w_len + fan_out]);
        (w, b)
    }

    /// Runs the network on a batch, keeping every layer's activation for the
    /// backward pass.
    pub fn forward(&self, params: &[f64], x: ArrayView2<f64>) -> Result<ForwardCache> {
        if x.ncols() != self.input_dim {
            return Err(Error::Dimension {
                expected: self.input_dim,
                actual: x.ncols(),
                context: "network input columns",
            });
        }
        if params.len() != self.n_params() {
            return Err(Error::Dimension {
                expected: self.n_params(),
                actual: params.len(),
                context: "network parameter count",
            });
        }
        let dims = self.dims();
        let mut acts = Vec::with_capacity(dims.len());
        acts.push(x.to_owned());
        let mut offset = 0;
        for (l, w) in dims.windows(2).enumerate() {
            let (wm, b) = self.layer(params, offset, w[0], w[1]);
            let mut z = acts[l].dot(&wm);
            z += &b;
            if self.activated(l) {
                z.mapv_inplace(elu);
            }
            acts.push(z);
            offset += (w[0] + 1) * w[1];
        }
        Ok(ForwardCache { acts })
    }

    /// Back-propagates `grad_out = dL/d(output)` through the cached pass.
    /// Parameter gradients are *added* into `grad`; the gradient with respect
    /// to the network input is returned.
    pub fn backward(
        &self,
        params: &[f64],
        cache: &ForwardCache,
        grad_out: ArrayView2<f64>,
        grad: &mut [f64],
    ) -> Array2<f64> {
        let dims = self.dims();
        let mut offsets = Vec::with_capacity(dims.len() - 1);
        let mut offset = 0;
        for w in dims.windows(2) {
            offsets.push(offset);
            offset += (w[0] + 1) * w[1];
        }
        let mut delta = grad_out.to_owned();
        for l in (0..self.n_layers()).rev() {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            if self.activated(l) {
                delta.zip_mut_with(&cache.acts[l + 1], |d, &a| *d *= elu_grad_from_output(a));
            }
            let off = offsets[l];
            let w_len = fan_in * fan_out;
            {
                let (gw, gb) = grad[off..off + w_len + fan_out].split_at_mut(w_len);
                let mut gw = ArrayViewMut2::from_shape((fan_in, fan_out), gw).expect("grad shape");
                general_mat_mul(1.0, &cache.acts[l].t(), &delta, 1.0, &mut gw);
                let mut gb = ArrayViewMut1::from(gb);
                gb += &delta.sum_axis(Axis(0));
            }
            let (wm, _) = self.layer(params, off, fan_in, fan_out);
            delta = delta.dot(&wm.t());
        }
        delta
    }

    /// Convenience forward returning only the output.
    pub fn predict(&self, params: &[f64], x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward(params, x)?.into_output())
    }
}

/// Activations of one forward pass; `acts[0]` is the input.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    acts: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.acts.last().expect("non-empty cache")
    }

    pub fn into_output(mut self) -> Array2<f64> {
        self.acts.pop().expect("non-empty cache")
    }
}
