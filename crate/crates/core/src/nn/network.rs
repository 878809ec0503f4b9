use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded_rng};

/// Element-wise (or row-wise, for softmax) non-linearity applied after the
/// affine map of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Sigmoid,
    Tanh,
    Relu,
    Softmax,
}

impl Activation {
    /// Tag used by the checkpoint format.
    pub fn tag(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Sigmoid => 1,
            Activation::Tanh => 2,
            Activation::Relu => 3,
            Activation::Softmax => 4,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => Activation::Identity,
            1 => Activation::Sigmoid,
            2 => Activation::Tanh,
            3 => Activation::Relu,
            4 => Activation::Softmax,
            _ => return None,
        })
    }

    /// Applies the activation in place to one row of pre-activations.
    pub(crate) fn apply_row(self, row: &mut [f32]) {
        match self {
            Activation::Identity => {}
            Activation::Sigmoid => row.iter_mut().for_each(|v| *v = sigmoid(*v)),
            Activation::Tanh => row.iter_mut().for_each(|v| *v = v.tanh()),
            Activation::Relu => row.iter_mut().for_each(|v| *v = v.max(0.0)),
            Activation::Softmax => {
                let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                let mut sum = 0.0f32;
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    sum += *v;
                }
                row.iter_mut().for_each(|v| *v /= sum);
            }
        }
    }

    /// Maps `grad` (dL/dy for one row) to dL/dz in place, given the row's
    /// activation outputs `y`.
    pub(crate) fn backprop_row(self, y: &[f32], grad: &mut [f32]) {
        match self {
            Activation::Identity => {}
            Activation::Sigmoid => {
                for (g, &o) in grad.iter_mut().zip(y) {
                    *g *= o * (1.0 - o);
                }
            }
            Activation::Tanh => {
                for (g, &o) in grad.iter_mut().zip(y) {
                    *g *= 1.0 - o * o;
                }
            }
            Activation::Relu => {
                for (g, &o) in grad.iter_mut().zip(y) {
                    if o <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            Activation::Softmax => {
                let dot: f32 = grad.iter().zip(y).map(|(g, o)| g * o).sum();
                for (g, &o) in grad.iter_mut().zip(y) {
                    *g = o * (*g - dot);
                }
            }
        }
    }
}

fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Fully connected layer: `y = act(W x + b)` with `W` stored `[out × in]`
/// row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    inputs: usize,
    outputs: usize,
    weights: Vec<f32>,
    bias: Vec<f32>,
    activation: Activation,
}

impl DenseLayer {
    pub fn new(
        inputs: usize,
        outputs: usize,
        weights: Vec<f32>,
        bias: Vec<f32>,
        activation: Activation,
    ) -> Result<Self> {
        if inputs == 0 || outputs == 0 {
            return Err(Error::Argument("layer dims must be positive".into()));
        }
        if weights.len() != inputs * outputs {
            return Err(Error::dim("layer weights", inputs * outputs, weights.len()));
        }
        if bias.len() != outputs {
            return Err(Error::dim("layer bias", outputs, bias.len()));
        }
        Ok(Self {
            inputs,
            outputs,
            weights,
            bias,
            activation,
        })
    }

    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Result<Self> {
        Self::new(
            inputs,
            outputs,
            vec![0.0; inputs * outputs],
            vec![0.0; outputs],
            activation,
        )
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot(
        inputs: usize,
        outputs: usize,
        activation: Activation,
        seed: u64,
    ) -> Result<Self> {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt() as f32;
        let mut rng = seeded_rng(seed);
        let weights = (0..inputs * outputs)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        Self::new(inputs, outputs, weights, vec![0.0; outputs], activation)
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f32] {
        &mut self.weights
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f32] {
        &mut self.bias
    }

    pub fn param_count(&self) -> usize {
        self.outputs * self.inputs + self.outputs
    }

    /// Forward pass over a batch already known to be `rows × inputs`.
    pub(crate) fn forward_rows(&self, input: &[f32], rows: usize) -> Vec<f32> {
        let mut out = vec![0.0f32; rows * self.outputs];
        for r in 0..rows {
            let x = &input[r * self.inputs..(r + 1) * self.inputs];
            let y = &mut out[r * self.outputs..(r + 1) * self.outputs];
            for (o, yo) in y.iter_mut().enumerate() {
                let w = &self.weights[o * self.inputs..(o + 1) * self.inputs];
                *yo = self.bias[o] + dot(w, x);
            }
            self.activation.apply_row(y);
        }
        out
    }
}

#[inline]
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f32 {
    // Four independent accumulators; fixed order keeps results bit-stable.
    let mut acc = [0.0f32; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = i * 4;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut tail = 0.0f32;
    for j in chunks * 4..a.len() {
        tail += a[j] * b[j];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Ordered stack of dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<DenseLayer>,
    rng_seed: u64,
}

impl Network {
    /// Assembles a network, checking that adjacent layers line up and that
    /// softmax only appears on the last layer.
    pub fn from_layers(layers: Vec<DenseLayer>, rng_seed: u64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Argument("network needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::dim(
                    format!("layer {} input", i + 1),
                    pair[0].outputs,
                    pair[1].inputs,
                ));
            }
        }
        if let Some(i) = layers[..layers.len() - 1]
            .iter()
            .position(|l| l.activation == Activation::Softmax)
        {
            return Err(Error::Argument(format!(
                "softmax only allowed on the final layer (found on layer {i})"
            )));
        }
        Ok(Self { layers, rng_seed })
    }

    /// Builds a Glorot-initialized MLP with widths `sizes[0] → … → sizes[n]`.
    /// `activations` has one entry per layer.
    pub fn mlp(sizes: &[usize], activations: &[Activation], seed: u64) -> Result<Self> {
        if sizes.len() < 2 || activations.len() != sizes.len() - 1 {
            return Err(Error::Argument(format!(
                "need n+1 sizes for n activations, got {} sizes and {} activations",
                sizes.len(),
                activations.len()
            )));
        }
        let layers = sizes
            .windows(2)
            .zip(activations)
            .enumerate()
            .map(|(i, (w, &act))| DenseLayer::glorot(w[0], w[1], act, derive_seed(seed, i as u64)))
            .collect::<Result<Vec<_>>>()?;
        Self::from_layers(layers, seed)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn into_layers(self) -> Vec<DenseLayer> {
        self.layers
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn output_activation(&self) -> Activation {
        self.layers[self.layers.len() - 1].activation
    }

    pub fn param_count(&self) -> u64 {
        self.layers.iter().map(|l| l.param_count() as u64).sum()
    }

    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        self.forward_range(0..self.layers.len(), batch)
    }

    /// Runs only the layers in `range`. Used for encoder/decoder slices.
    pub fn forward_range(&self, range: Range<usize>, batch: &Tensor) -> Result<Tensor> {
        if range.start >= range.end || range.end > self.layers.len() {
            return Err(Error::Argument(format!(
                "layer range {range:?} invalid for {} layers",
                self.layers.len()
            )));
        }
        let first = &self.layers[range.start];
        if batch.shape().len() != 2 || batch.cols() != first.inputs {
            return Err(Error::dim(
                format!("layer {} input", range.start),
                first.inputs,
                batch.cols(),
            ));
        }
        let rows = batch.rows();
        let mut act = batch.data().to_vec();
        for layer in &self.layers[range] {
            act = layer.forward_rows(&act, rows);
        }
        let cols = act.len() / rows;
        Tensor::matrix(rows, cols, act)
    }

    /// A new network holding a copy of the layers in `range`.
    pub fn slice(&self, range: Range<usize>) -> Result<Network> {
        if range.start >= range.end || range.end > self.layers.len() {
            return Err(Error::Argument(format!(
                "layer range {range:?} invalid for {} layers",
                self.layers.len()
            )));
        }
        Network::from_layers(self.layers[range].to_vec(), self.rng_seed)
    }
}

/// Loss functions supported by the trainer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Mean over rows of the squared L2 norm of the residual.
    Mse,
    /// Mean over rows of `-Σ t·ln p`.
    CrossEntropy,
}

impl LossKind {
    /// The loss `evaluate` pairs with a given output activation.
    pub fn for_output(act: Activation) -> Self {
        match act {
            Activation::Softmax => LossKind::CrossEntropy,
            _ => LossKind::Mse,
        }
    }
}

const LN_FLOOR: f32 = 1e-12;

pub fn loss(pred: &Tensor, target: &Tensor, kind: LossKind) -> Result<f32> {
    check_same_shape(pred, target)?;
    let rows = pred.rows();
    let total: f64 = match kind {
        LossKind::Mse => pred
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, t)| {
                let d = (p - t) as f64;
                d * d
            })
            .sum(),
        LossKind::CrossEntropy => {
            if pred
                .data()
                .iter()
                .any(|&p| !(0.0..=1.0 + 1e-5).contains(&p))
            {
                return Err(Error::Argument(
                    "cross entropy needs probability rows".into(),
                ));
            }
            pred.data()
                .iter()
                .zip(target.data())
                .map(|(&p, &t)| -(t as f64) * (p.max(LN_FLOOR) as f64).ln())
                .sum()
        }
    };
    Ok((total / rows as f64) as f32)
}

pub(crate) fn check_same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.rows() != b.rows() {
        return Err(Error::dim("batch rows", a.rows(), b.rows()));
    }
    if a.cols() != b.cols() {
        return Err(Error::dim("batch columns", a.cols(), b.cols()));
    }
    Ok(())
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Count of rows whose argmax agrees.
pub(crate) fn correct_count(pred: &Tensor, target: &Tensor) -> usize {
    (0..pred.rows())
        .filter(|&r| argmax(pred.row(r)) == argmax(target.row(r)))
        .count()
}

/// Frozen evaluation: one full pass, no parameter updates. The loss is cross
/// entropy for softmax outputs and MSE otherwise.
pub fn evaluate(net: &Network, inputs: &Tensor, targets: &Tensor) -> Result<(f32, f32)> {
    if inputs.rows() == 0 || targets.rows() == 0 {
        return Err(Error::Argument(
            "cannot evaluate on an empty dataset".into(),
        ));
    }
    let pred = net.forward(inputs)?;
    let l = loss(
        &pred,
        targets,
        LossKind::for_output(net.output_activation()),
    )?;
    let acc = correct_count(&pred, targets) as f32 / pred.rows() as f32;
    Ok((l, acc))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(w: Vec<f32>, b: Vec<f32>, i: usize, o: usize, act: Activation) -> Network {
        Network::from_layers(vec![DenseLayer::new(i, o, w, b, act).unwrap()], 0).unwrap()
    }

    #[test]
    fn zero_sigmoid_layer_outputs_half() {
        let net = single(vec![0.0; 6], vec![0.0; 2], 3, 2, Activation::Sigmoid);
        let x = Tensor::matrix(2, 3, vec![1.0, -4.0, 9.0, 0.3, 0.2, 100.0]).unwrap();
        let y = net.forward(&x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn identity_layer_passes_through() {
        let net = single(
            vec![1.0, 0.0, 0.0, 1.0],
            vec![0.0; 2],
            2,
            2,
            Activation::Identity,
        );
        let x = Tensor::matrix(1, 2, vec![0.25, -3.5]).unwrap();
        assert_eq!(net.forward(&x).unwrap().data(), x.data());
    }

    #[test]
    fn hand_computed_two_layer_composition() {
        // 2-2-1: sigmoid(w2 · sigmoid(W1 x + b1) + b2)
        let l1 = DenseLayer::new(
            2,
            2,
            vec![0.5, -1.0, 2.0, 0.25],
            vec![0.1, -0.2],
            Activation::Sigmoid,
        )
        .unwrap();
        let l2 = DenseLayer::new(2, 1, vec![1.5, -0.5], vec![0.3], Activation::Sigmoid).unwrap();
        let net = Network::from_layers(vec![l1, l2], 0).unwrap();
        let x = [0.8f64, -0.4];
        let s = |v: f64| 1.0 / (1.0 + (-v).exp());
        let h0 = s(0.5 * x[0] - 1.0 * x[1] + 0.1);
        let h1 = s(2.0 * x[0] + 0.25 * x[1] - 0.2);
        let expected = s(1.5 * h0 - 0.5 * h1 + 0.3);
        let y = net
            .forward(&Tensor::matrix(1, 2, vec![0.8, -0.4]).unwrap())
            .unwrap();
        assert!((y.data()[0] as f64 - expected).abs() < 1e-6);
    }

    #[test]
    fn forward_reports_offending_layer() {
        let net = Network::mlp(&[3, 4, 2], &[Activation::Tanh, Activation::Softmax], 1).unwrap();
        let err = net
            .forward(&Tensor::matrix(1, 5, vec![0.0; 5]).unwrap())
            .unwrap_err();
        assert!(err.to_string().contains("layer 0"), "{err}");
    }

    #[test]
    fn softmax_must_be_last() {
        let l1 = DenseLayer::zeros(2, 2, Activation::Softmax).unwrap();
        let l2 = DenseLayer::zeros(2, 2, Activation::Identity).unwrap();
        assert!(Network::from_layers(vec![l1, l2], 0).is_err());
    }

    #[test]
    fn incompatible_layers_rejected() {
        let l1 = DenseLayer::zeros(2, 3, Activation::Tanh).unwrap();
        let l2 = DenseLayer::zeros(2, 2, Activation::Identity).unwrap();
        assert!(matches!(
            Network::from_layers(vec![l1, l2], 0),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn mse_examples() {
        let x = Tensor::matrix(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(loss(&x, &x, LossKind::Mse).unwrap(), 0.0);
        let p = Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap();
        let t = Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap();
        assert_eq!(loss(&p, &t, LossKind::Mse).unwrap(), 1.0);
    }

    #[test]
    fn cross_entropy_of_uniform_is_ln_k() {
        for k in [2usize, 4, 10] {
            let p = Tensor::matrix(1, k, vec![1.0 / k as f32; k]).unwrap();
            let mut t = vec![0.0; k];
            t[k - 1] = 1.0;
            let t = Tensor::matrix(1, k, t).unwrap();
            let l = loss(&p, &t, LossKind::CrossEntropy).unwrap();
            assert!((l - (k as f32).ln()).abs() < 1e-6);
        }
    }

    #[test]
    fn loss_shape_mismatch_is_dimension_error() {
        let a = Tensor::matrix(1, 2, vec![0.0; 2]).unwrap();
        let b = Tensor::matrix(1, 3, vec![0.0; 3]).unwrap();
        assert!(matches!(
            loss(&a, &b, LossKind::Mse),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn param_counts() {
        let net = Network::mlp(
            &[784, 20, 10],
            &[Activation::Sigmoid, Activation::Softmax],
            0,
        )
        .unwrap();
        assert_eq!(net.param_count(), 15_910);
        let net = Network::mlp(&[2, 2], &[Activation::Identity], 0).unwrap();
        assert_eq!(net.param_count(), 6);
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.25, 0.25, 0.25, 0.25]), 0);
        assert_eq!(argmax(&[0.1, 0.4, 0.4]), 1);
    }

    #[test]
    fn uniform_predictor_accuracy_follows_tie_break() {
        // Zero weights + softmax: every row predicts class 0.
        let net = single(vec![0.0; 8], vec![0.0; 4], 2, 4, Activation::Softmax);
        let x = Tensor::matrix(4, 2, vec![1.0; 8]).unwrap();
        let mut t = vec![0.0; 16];
        for r in 0..4 {
            t[r * 4 + r] = 1.0;
        }
        let t = Tensor::matrix(4, 4, t).unwrap();
        let (l, acc) = evaluate(&net, &x, &t).unwrap();
        assert_eq!(acc, 0.25);
        assert!((l - 4f32.ln()).abs() < 1e-6);
        assert_eq!(evaluate(&net, &x, &t).unwrap(), (l, acc));
    }
}
