use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::network::{check_same_shape, correct_count, loss, Activation, LossKind, Network};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded_rng};

/// Plain minibatch SGD settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub batch_size: usize,
    pub epochs: usize,
    pub loss: LossKind,
    pub shuffle_seed: u64,
}

impl TrainConfig {
    pub fn validate(&self, rows: usize) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Argument(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Argument("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 || self.batch_size > rows {
            return Err(Error::Argument(format!(
                "batch size {} must be in 1..={rows}",
                self.batch_size
            )));
        }
        Ok(())
    }
}

/// Per-epoch metrics. Loss and accuracy are averaged over the epoch's batches
/// as seen before each update.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingHistory {
    pub loss: Vec<f32>,
    pub accuracy: Vec<f32>,
}

/// Gradient of the loss with respect to one layer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

/// Hooks into the training loop.
pub trait TrainObserver {
    fn on_batch_end(&mut self, _epoch: usize, _batch: usize, _net: &Network) -> Result<()> {
        Ok(())
    }

    fn on_epoch_end(&mut self, _epoch: usize, _net: &Network) -> Result<()> {
        Ok(())
    }
}

struct EpochHook<F>(F);

impl<F: FnMut(usize, &Network)> TrainObserver for EpochHook<F> {
    fn on_epoch_end(&mut self, epoch: usize, net: &Network) -> Result<()> {
        (self.0)(epoch, net);
        Ok(())
    }
}

struct NoObserver;
impl TrainObserver for NoObserver {}

/// Backpropagation. Returns the batch loss and per-layer gradients without
/// touching the network.
pub fn gradients(
    net: &Network,
    batch: &Tensor,
    targets: &Tensor,
    kind: LossKind,
) -> Result<(f32, Vec<LayerGrad>)> {
    let (l, grads, _) = backprop(net, batch, targets, kind)?;
    Ok((l, grads))
}

fn backprop(
    net: &Network,
    batch: &Tensor,
    targets: &Tensor,
    kind: LossKind,
) -> Result<(f32, Vec<LayerGrad>, Tensor)> {
    let layers = net.layers();
    if batch.cols() != net.input_dim() {
        return Err(Error::dim("layer 0 input", net.input_dim(), batch.cols()));
    }
    let rows = batch.rows();

    // acts[i] is the input to layer i; acts[n] is the network output.
    let mut acts: Vec<Vec<f32>> = Vec::with_capacity(layers.len() + 1);
    acts.push(batch.data().to_vec());
    for layer in layers {
        let next = layer.forward_rows(acts.last().expect("non-empty"), rows);
        acts.push(next);
    }
    let out = Tensor::matrix(rows, net.output_dim(), acts.pop().expect("output"))?;
    check_same_shape(&out, targets)?;
    let batch_loss = loss(&out, targets, kind)?;

    let inv_rows = 1.0 / rows as f32;
    let width = net.output_dim();
    let out_act = net.output_activation();
    // dL/dz for the final layer.
    let mut delta = vec![0.0f32; rows * width];
    for r in 0..rows {
        let p = out.row(r);
        let t = targets.row(r);
        let d = &mut delta[r * width..(r + 1) * width];
        match (kind, out_act) {
            (LossKind::CrossEntropy, Activation::Softmax) => {
                let t_sum: f32 = t.iter().sum();
                for j in 0..width {
                    d[j] = (p[j] * t_sum - t[j]) * inv_rows;
                }
            }
            (LossKind::CrossEntropy, act) => {
                for j in 0..width {
                    d[j] = -t[j] / p[j].max(1e-12) * inv_rows;
                }
                act.backprop_row(p, d);
            }
            (LossKind::Mse, act) => {
                for j in 0..width {
                    d[j] = 2.0 * (p[j] - t[j]) * inv_rows;
                }
                act.backprop_row(p, d);
            }
        }
    }

    let mut grads = Vec::with_capacity(layers.len());
    for (li, layer) in layers.iter().enumerate().rev() {
        let (n_in, n_out) = (layer.inputs(), layer.outputs());
        let input = &acts[li];
        let mut gw = vec![0.0f32; n_in * n_out];
        let mut gb = vec![0.0f32; n_out];
        for r in 0..rows {
            let x = &input[r * n_in..(r + 1) * n_in];
            let d = &delta[r * n_out..(r + 1) * n_out];
            for (o, &dv) in d.iter().enumerate() {
                if dv == 0.0 {
                    continue;
                }
                gb[o] += dv;
                let row = &mut gw[o * n_in..(o + 1) * n_in];
                for (g, &xv) in row.iter_mut().zip(x) {
                    *g += dv * xv;
                }
            }
        }
        if !gw.iter().chain(&gb).all(|v| v.is_finite()) {
            return Err(Error::NonFinite { layer: li });
        }
        if li > 0 {
            let prev_act = layers[li - 1].activation();
            let w = layer.weights();
            let mut prev = vec![0.0f32; rows * n_in];
            for r in 0..rows {
                let d = &delta[r * n_out..(r + 1) * n_out];
                let pd = &mut prev[r * n_in..(r + 1) * n_in];
                for (o, &dv) in d.iter().enumerate() {
                    if dv == 0.0 {
                        continue;
                    }
                    for (p, &wv) in pd.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                        *p += dv * wv;
                    }
                }
                prev_act.backprop_row(&input[r * n_in..(r + 1) * n_in], pd);
            }
            delta = prev;
        }
        grads.push(LayerGrad {
            weights: gw,
            bias: gb,
        });
    }
    grads.reverse();
    Ok((batch_loss, grads, out))
}

fn apply_sgd(net: &mut Network, grads: &[LayerGrad], lr: f32) {
    for (layer, g) in net.layers_mut().iter_mut().zip(grads) {
        for (w, gw) in layer.weights_mut().iter_mut().zip(&g.weights) {
            *w -= lr * gw;
        }
        for (b, gb) in layer.bias_mut().iter_mut().zip(&g.bias) {
            *b -= lr * gb;
        }
    }
}

/// One SGD step on a batch. Returns the loss measured before the update.
pub fn train_step(
    net: &mut Network,
    batch: &Tensor,
    targets: &Tensor,
    cfg: &TrainConfig,
) -> Result<f32> {
    let (l, grads, _) = backprop(net, batch, targets, cfg.loss)?;
    apply_sgd(net, &grads, cfg.learning_rate);
    Ok(l)
}

/// Callback run after every epoch with the epoch index.
pub type EpochHookFn<'a> = &'a mut dyn FnMut(usize, &Network);

/// Trains for `cfg.epochs` epochs. `hook`, if given, runs after the last batch
/// of every epoch with the epoch index.
pub fn train(
    net: &mut Network,
    inputs: &Tensor,
    targets: &Tensor,
    cfg: &TrainConfig,
    hook: Option<EpochHookFn<'_>>,
) -> Result<TrainingHistory> {
    match hook {
        Some(f) => train_observed(net, inputs, targets, cfg, &mut EpochHook(f)),
        None => train_observed(net, inputs, targets, cfg, &mut NoObserver),
    }
}

/// Like [`train`] but reports batch and epoch boundaries to `observer`.
pub fn train_observed(
    net: &mut Network,
    inputs: &Tensor,
    targets: &Tensor,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainingHistory> {
    if inputs.rows() != targets.rows() {
        return Err(Error::dim("target rows", inputs.rows(), targets.rows()));
    }
    let rows = inputs.rows();
    cfg.validate(rows)?;

    let mut history = TrainingHistory::default();
    let mut order: Vec<usize> = (0..rows).collect();
    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut seeded_rng(derive_seed(cfg.shuffle_seed, epoch as u64)));

        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let x = inputs.select_rows(idx)?;
            let t = targets.select_rows(idx)?;
            let (l, grads, out) = backprop(net, &x, &t, cfg.loss)?;
            apply_sgd(net, &grads, cfg.learning_rate);
            loss_sum += l as f64 * idx.len() as f64;
            correct += correct_count(&out, &t);
            observer.on_batch_end(epoch, bi, net)?;
        }
        history.loss.push((loss_sum / rows as f64) as f32);
        history.accuracy.push(correct as f32 / rows as f32);
        observer.on_epoch_end(epoch, net)?;
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::network::{evaluate, DenseLayer};

    fn cfg(lr: f32, batch: usize, epochs: usize, loss: LossKind) -> TrainConfig {
        TrainConfig {
            learning_rate: lr,
            batch_size: batch,
            epochs,
            loss,
            shuffle_seed: 3,
        }
    }

    fn xor() -> (Tensor, Tensor) {
        let x = Tensor::matrix(4, 2, vec![0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0]).unwrap();
        let t = Tensor::matrix(4, 2, vec![1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
        (x, t)
    }

    #[test]
    fn zero_learning_rate_leaves_weights() {
        let mut net =
            Network::mlp(&[2, 3, 2], &[Activation::Tanh, Activation::Softmax], 9).unwrap();
        let before = net.clone();
        let (x, t) = xor();
        train_step(&mut net, &x, &t, &cfg(0.0, 4, 1, LossKind::CrossEntropy)).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn perfect_prediction_has_zero_gradient() {
        let layer = DenseLayer::new(
            2,
            2,
            vec![1.0, 0.0, 0.0, 1.0],
            vec![0.0, 0.0],
            Activation::Identity,
        )
        .unwrap();
        let mut net = Network::from_layers(vec![layer], 0).unwrap();
        let before = net.clone();
        let x = Tensor::matrix(2, 2, vec![0.3, -0.7, 1.5, 2.0]).unwrap();
        let l = train_step(&mut net, &x, &x, &cfg(0.5, 2, 1, LossKind::Mse)).unwrap();
        assert_eq!(l, 0.0);
        assert_eq!(net, before);
    }

    #[test]
    fn hook_sees_each_epoch_in_order() {
        let mut net = Network::mlp(&[2, 2], &[Activation::Softmax], 1).unwrap();
        let (x, t) = xor();
        let mut seen = Vec::new();
        let mut hook = |e: usize, _: &Network| seen.push(e);
        train(
            &mut net,
            &x,
            &t,
            &cfg(0.1, 2, 3, LossKind::CrossEntropy),
            Some(&mut hook),
        )
        .unwrap();
        assert_eq!(seen, vec![0, 1, 2]);
    }

    #[test]
    fn xor_is_learned() {
        let mut net =
            Network::mlp(&[2, 8, 2], &[Activation::Tanh, Activation::Softmax], 11).unwrap();
        let (x, t) = xor();
        train(
            &mut net,
            &x,
            &t,
            &cfg(0.5, 4, 2000, LossKind::CrossEntropy),
            None,
        )
        .unwrap();
        let (_, acc) = evaluate(&net, &x, &t).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn memorizes_four_rows() {
        let mut net =
            Network::mlp(&[3, 6, 4], &[Activation::Sigmoid, Activation::Softmax], 5).unwrap();
        let x = Tensor::matrix(
            4,
            3,
            vec![0.1, 0.9, 0.2, 0.8, 0.1, 0.4, 0.5, 0.5, 0.9, 0.0, 0.3, 0.7],
        )
        .unwrap();
        let mut t = vec![0.0; 16];
        for r in 0..4 {
            t[r * 4 + r] = 1.0;
        }
        let t = Tensor::matrix(4, 4, t).unwrap();
        train(
            &mut net,
            &x,
            &t,
            &cfg(1.0, 4, 3000, LossKind::CrossEntropy),
            None,
        )
        .unwrap();
        assert_eq!(evaluate(&net, &x, &t).unwrap().1, 1.0);
    }

    #[test]
    fn rejects_oversized_batch() {
        let mut net = Network::mlp(&[2, 2], &[Activation::Softmax], 1).unwrap();
        let (x, t) = xor();
        assert!(train(
            &mut net,
            &x,
            &t,
            &cfg(0.1, 5, 1, LossKind::CrossEntropy),
            None
        )
        .is_err());
        assert!(train(
            &mut net,
            &x,
            &t,
            &cfg(0.1, 2, 0, LossKind::CrossEntropy),
            None
        )
        .is_err());
    }

    #[test]
    fn non_finite_gradient_names_layer() {
        let layer = DenseLayer::new(1, 1, vec![f32::MAX], vec![0.0], Activation::Identity).unwrap();
        let mut net = Network::from_layers(vec![layer], 0).unwrap();
        let x = Tensor::matrix(1, 1, vec![f32::MAX]).unwrap();
        let t = Tensor::matrix(1, 1, vec![0.0]).unwrap();
        let err = train_step(&mut net, &x, &t, &cfg(0.1, 1, 1, LossKind::Mse)).unwrap_err();
        assert!(matches!(err, Error::NonFinite { layer: 0 }), "{err}");
    }

    #[test]
    fn training_is_bit_reproducible() {
        let run = || {
            let mut net =
                Network::mlp(&[2, 5, 2], &[Activation::Tanh, Activation::Softmax], 21).unwrap();
            let (x, t) = xor();
            train(
                &mut net,
                &x,
                &t,
                &cfg(0.3, 2, 50, LossKind::CrossEntropy),
                None,
            )
            .unwrap()
        };
        assert_eq!(run(), run());
    }
}
