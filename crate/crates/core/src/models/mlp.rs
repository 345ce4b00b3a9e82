use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{matmul_into, Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            _ => None,
        }
    }

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::config(format!(
                "unknown activation '{other}' (relu|tanh)"
            ))),
        }
    }
}

/// A contiguous block of the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamSlice {
    pub offset: usize,
    pub len: usize,
}

impl ParamSlice {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }
}

/// Where one dense layer lives in the flat parameter vector.
/// Weights are `out × in` row-major, followed by `out` biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerLayout {
    pub inputs: usize,
    pub outputs: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl LayerLayout {
    pub fn weight_range(&self) -> std::ops::Range<usize> {
        self.weight_offset..self.bias_offset
    }

    pub fn bias_range(&self) -> std::ops::Range<usize> {
        self.bias_offset..self.bias_offset + self.outputs
    }

    pub fn end(&self) -> usize {
        self.bias_offset + self.outputs
    }
}

/// Fully connected classifier `F(x; θ)` with a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    widths: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
}

/// Graph leaves bound to the layers of an [`Mlp`], in layer order.
#[derive(Debug, Clone)]
pub struct ParamNodes {
    layers: Vec<(NodeId, NodeId)>,
}

impl ParamNodes {
    /// Gradient of the last backward pass, laid out like the parameter vector.
    pub fn gradient(&self, g: &Graph) -> Vec<f64> {
        let mut out = Vec::new();
        for &(w, b) in &self.layers {
            out.extend(g.grad(w));
            out.extend(g.grad(b));
        }
        out
    }
}

fn layouts(widths: &[usize]) -> Vec<LayerLayout> {
    let mut offset = 0;
    widths
        .windows(2)
        .map(|w| {
            let l = LayerLayout {
                inputs: w[0],
                outputs: w[1],
                weight_offset: offset,
                bias_offset: offset + w[0] * w[1],
            };
            offset = l.end();
            l
        })
        .collect()
}

fn validate_widths(widths: &[usize]) -> Result<()> {
    if widths.len() < 2 {
        return Err(Error::config(format!(
            "an MLP needs input and output widths, got {widths:?}"
        )));
    }
    if widths.contains(&0) {
        return Err(Error::config(format!(
            "layer widths must be positive, got {widths:?}"
        )));
    }
    Ok(())
}

fn init_layer(params: &mut [f64], layout: &LayerLayout, rng: &mut ChaCha8Rng) {
    let bound = (6.0 / layout.inputs as f64).sqrt();
    for w in &mut params[layout.weight_range()] {
        *w = rng.random_range(-bound..bound);
    }
    for b in &mut params[layout.bias_range()] {
        *b = 0.0;
    }
}

impl Mlp {
    /// Uniform(±√(6/fan_in)) weights, zero biases.
    pub fn init(widths: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        validate_widths(widths)?;
        let mut params = vec![0.0; Self::count_params(widths)];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layout in layouts(widths) {
            init_layer(&mut params, &layout, &mut rng);
        }
        Ok(Mlp {
            widths: widths.to_vec(),
            activation,
            params,
        })
    }

    pub fn from_params(widths: &[usize], activation: Activation, params: Vec<f64>) -> Result<Self> {
        validate_widths(widths)?;
        let d = Self::count_params(widths);
        if params.len() != d {
            return Err(Error::config(format!(
                "widths {widths:?} need {d} parameters, got {}",
                params.len()
            )));
        }
        Ok(Mlp {
            widths: widths.to_vec(),
            activation,
            params,
        })
    }

    /// `Σ (in·out + out)` over layers.
    pub fn count_params(widths: &[usize]) -> usize {
        widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn with_params(&self, params: Vec<f64>) -> Result<Self> {
        Self::from_params(&self.widths, self.activation, params)
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn n_inputs(&self) -> usize {
        self.widths[0]
    }

    pub fn n_outputs(&self) -> usize {
        *self.widths.last().expect("validated")
    }

    pub fn layers(&self) -> Vec<LayerLayout> {
        layouts(&self.widths)
    }

    /// Final weight + bias block; always the suffix of the parameter vector.
    pub fn last_layer_slice(&self) -> ParamSlice {
        let last = *self.layers().last().expect("validated");
        ParamSlice {
            offset: last.weight_offset,
            len: self.params.len() - last.weight_offset,
        }
    }

    pub fn full_slice(&self) -> ParamSlice {
        ParamSlice {
            offset: 0,
            len: self.params.len(),
        }
    }

    /// Adds one output unit (the none class). Its weight row is drawn with the
    /// usual init rule from `seed`, its bias is zero; every existing parameter is kept.
    pub fn expand_none_class(&self, seed: u64) -> Mlp {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fan_in = self.widths[self.widths.len() - 2];
        let bound = (6.0 / fan_in as f64).sqrt();
        let row: Vec<f64> = (0..fan_in)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        self.expand_with_row(&row)
    }

    /// As [`Mlp::expand_none_class`] with an all-zero new row.
    pub fn expand_none_class_zeroed(&self) -> Mlp {
        let fan_in = self.widths[self.widths.len() - 2];
        self.expand_with_row(&vec![0.0; fan_in])
    }

    fn expand_with_row(&self, row: &[f64]) -> Mlp {
        let last = *self.layers().last().expect("validated");
        let mut params = self.params[..last.bias_offset].to_vec();
        params.extend_from_slice(row);
        params.extend_from_slice(&self.params[last.bias_range()]);
        params.push(0.0);
        let mut widths = self.widths.clone();
        *widths.last_mut().expect("validated") += 1;
        Mlp {
            widths,
            activation: self.activation,
            params,
        }
    }

    /// The final layer alone, as a zero-hidden-layer network over penultimate features.
    pub fn head(&self) -> Mlp {
        let n = self.widths.len();
        let slice = self.last_layer_slice();
        Mlp {
            widths: self.widths[n - 2..].to_vec(),
            activation: self.activation,
            params: self.params[slice.range()].to_vec(),
        }
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.n_inputs() && x.rows() > 0 {
            return Err(Error::config(format!(
                "input has {} columns, network expects {}",
                x.cols(),
                self.n_inputs()
            )));
        }
        Ok(())
    }

    /// Post-activation outputs of every hidden layer up to (excluding) layer `stop`.
    fn forward_range(&self, params: &[f64], x: &Matrix, start: usize, stop: usize) -> Matrix {
        let layers = self.layers();
        let n_layers = layers.len();
        let mut act = x.clone();
        for (idx, layout) in layers.iter().enumerate().take(stop).skip(start) {
            act = dense(params, layout, &act);
            if idx + 1 < n_layers {
                let f = self.activation;
                act.data_mut().iter_mut().for_each(|v| *v = f.apply(*v));
            }
        }
        act
    }

    /// Logits `F(x; params)` for every row of `x`.
    pub fn logits_with(&self, params: &[f64], x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        if params.len() != self.params.len() {
            return Err(Error::config("parameter vector has the wrong length"));
        }
        Ok(self.forward_range(params, x, 0, self.widths.len() - 1))
    }

    pub fn logits(&self, x: &Matrix) -> Result<Matrix> {
        self.logits_with(&self.params, x)
    }

    /// Penultimate-layer activations (the input itself for a single-layer network).
    pub fn features(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        Ok(self.forward_range(&self.params, x, 0, self.widths.len() - 2))
    }

    /// Inputs to layer `layer` (activations after the previous layers).
    pub(crate) fn activations_before(&self, params: &[f64], x: &Matrix, layer: usize) -> Matrix {
        self.forward_range(params, x, 0, layer)
    }

    /// Continues a forward pass from the inputs of layer `layer`.
    pub(crate) fn logits_from(&self, params: &[f64], act: &Matrix, layer: usize) -> Matrix {
        self.forward_range(params, act, layer, self.widths.len() - 1)
    }

    /// Adds one weight leaf and one bias leaf per layer to `g`.
    pub fn param_leaves(&self, g: &mut Graph, params: &[f64]) -> Result<ParamNodes> {
        if params.len() != self.params.len() {
            return Err(Error::config("parameter vector has the wrong length"));
        }
        let mut layers = Vec::new();
        for l in self.layers() {
            let w = g.leaf(Tensor::matrix(
                l.outputs,
                l.inputs,
                params[l.weight_range()].to_vec(),
            )?);
            let b = g.leaf(Tensor::vector(params[l.bias_range()].to_vec()));
            layers.push((w, b));
        }
        Ok(ParamNodes { layers })
    }

    /// Records a forward pass of `x` through existing parameter leaves.
    pub fn forward_graph(&self, g: &mut Graph, nodes: &ParamNodes, x: NodeId) -> Result<NodeId> {
        let n = nodes.layers.len();
        let mut act = x;
        for (idx, &(w, b)) in nodes.layers.iter().enumerate() {
            let wt = g.transpose(w)?;
            let z = g.matmul(act, wt)?;
            let z = g.add(z, b)?;
            act = if idx + 1 < n {
                match self.activation {
                    Activation::Relu => g.relu(z),
                    Activation::Tanh => g.tanh(z),
                }
            } else {
                z
            };
        }
        Ok(act)
    }

    /// Records the forward pass on `g`; returns the logits node and the parameter leaves.
    pub fn build_graph(
        &self,
        g: &mut Graph,
        params: &[f64],
        x: NodeId,
    ) -> Result<(NodeId, ParamNodes)> {
        let nodes = self.param_leaves(g, params)?;
        let logits = self.forward_graph(g, &nodes, x)?;
        Ok((logits, nodes))
    }

    /// Graph with `x` as a constant input; convenience for objectives.
    pub fn graph_for(&self, params: &[f64], x: &Matrix) -> Result<(Graph, NodeId, ParamNodes)> {
        self.check_input(x)?;
        let mut g = Graph::new();
        let input = g.constant(x.to_tensor());
        let (logits, nodes) = self.build_graph(&mut g, params, input)?;
        Ok((g, logits, nodes))
    }
}

/// `act · Wᵀ + b` for one layer.
fn dense(params: &[f64], l: &LayerLayout, act: &Matrix) -> Matrix {
    let w = &params[l.weight_range()];
    let mut wt = vec![0.0; l.inputs * l.outputs];
    for o in 0..l.outputs {
        for i in 0..l.inputs {
            wt[i * l.outputs + o] = w[o * l.inputs + i];
        }
    }
    let rows = act.rows();
    let mut out = vec![0.0; rows * l.outputs];
    matmul_into(act.data(), &wt, rows, l.inputs, l.outputs, &mut out);
    let b = &params[l.bias_range()];
    for row in out.chunks_exact_mut(l.outputs) {
        row.iter_mut().zip(b).for_each(|(z, bb)| *z += bb);
    }
    Matrix::new(rows, l.outputs, out).expect("consistent by construction")
}
