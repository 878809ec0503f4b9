//! Independent reference implementations used as test oracles. Nothing here
//! calls into the library's math.

#![allow(dead_code)]

use fedae::nn::{Activation, Network, Tensor};

/// Every weight then every bias, layer by layer, widened to f64.
pub fn params_f64(net: &Network) -> Vec<f64> {
    net.layers()
        .iter()
        .flat_map(|l| l.weights().iter().chain(l.bias()).map(|&v| v as f64))
        .collect()
}

/// Forward pass in f64 with the layer shapes of `net` and the parameters in
/// `params` (laid out as by [`params_f64`]).
pub fn forward_f64(net: &Network, params: &[f64], x: &[f64]) -> Vec<f64> {
    let mut a = x.to_vec();
    let mut off = 0;
    for layer in net.layers() {
        let (n_in, n_out) = (layer.inputs(), layer.outputs());
        let w = &params[off..off + n_in * n_out];
        let b = &params[off + n_in * n_out..off + n_in * n_out + n_out];
        off += n_in * n_out + n_out;
        let mut z: Vec<f64> = (0..n_out)
            .map(|o| b[o] + (0..n_in).map(|i| w[o * n_in + i] * a[i]).sum::<f64>())
            .collect();
        match layer.activation() {
            Activation::Identity => {}
            Activation::Sigmoid => z.iter_mut().for_each(|v| *v = 1.0 / (1.0 + (-*v).exp())),
            Activation::Tanh => z.iter_mut().for_each(|v| *v = v.tanh()),
            Activation::Relu => z.iter_mut().for_each(|v| *v = v.max(0.0)),
            Activation::Softmax => {
                let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let s: f64 = z.iter().map(|v| (v - m).exp()).sum();
                z.iter_mut().for_each(|v| *v = (*v - m).exp() / s);
            }
        }
        a = z;
    }
    a
}

/// Mean over rows of the summed squared error, or of the cross-entropy when
/// the output is a softmax.
pub fn loss_f64(net: &Network, params: &[f64], x: &Tensor, t: &Tensor) -> f64 {
    let rows = x.rows();
    let softmax = net.output_activation() == Activation::Softmax;
    let mut total = 0.0;
    for r in 0..rows {
        let xr: Vec<f64> = x.row(r).iter().map(|&v| v as f64).collect();
        let y = forward_f64(net, params, &xr);
        for (yi, &ti) in y.iter().zip(t.row(r)) {
            total += if softmax {
                -(ti as f64) * yi.max(1e-300).ln()
            } else {
                (yi - ti as f64).powi(2)
            };
        }
    }
    total / rows as f64
}

/// Central finite differences of [`loss_f64`] for every parameter.
pub fn numeric_gradient(net: &Network, x: &Tensor, t: &Tensor, eps: f64) -> Vec<f64> {
    let base = params_f64(net);
    (0..base.len())
        .map(|i| {
            let mut p = base.clone();
            p[i] = base[i] + eps;
            let up = loss_f64(net, &p, x, t);
            p[i] = base[i] - eps;
            let down = loss_f64(net, &p, x, t);
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// Component-wise mean in f64, in the order given.
pub fn brute_mean(vectors: &[Vec<f32>]) -> Vec<f64> {
    let p = vectors[0].len();
    (0..p)
        .map(|j| vectors.iter().map(|v| v[j] as f64).sum::<f64>() / vectors.len() as f64)
        .collect()
}

/// Closed-form parameter count of a symmetric funnel autoencoder.
pub fn funnel_params(p: u64, hidden: &[u64], latent: u64) -> u64 {
    let mut widths = vec![p];
    widths.extend_from_slice(hidden);
    widths.push(latent);
    widths.extend(hidden.iter().rev());
    widths.push(p);
    widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// Relative comparison with an absolute floor.
pub fn close(a: f64, b: f64, rel: f64, floor: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()) + floor
}
