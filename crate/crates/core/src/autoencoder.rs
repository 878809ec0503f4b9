//! Symmetric funnel autoencoder over flattened model weights.
//!
//! The network runs `P → hidden… → L → reversed hidden… → P`. Layers before
//! `split_index` form the encoder (kept by the collaborator); the rest form
//! the decoder (shipped to the aggregator).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::{
    check_len, denormalize, fit_norm, normalize, FlatWeights, NormStats, WeightDataset,
};
use crate::error::{Error, Result};
use crate::nn::{self, Activation, LossKind, Network, Tensor, TrainConfig, TrainObserver};
use crate::wire::{to_u32, ByteReader};

/// Tolerance used by [`recreation_accuracy`] unless told otherwise.
pub const DEFAULT_TAU: f32 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AeConfig {
    /// Encoder widths between the input and the latent layer, strictly
    /// decreasing. The decoder mirrors them.
    pub encoder_hidden: Vec<usize>,
    pub latent_dim: usize,
    /// Activation of every non-output layer, including the latent layer.
    pub hidden_activation: Activation,
    pub output_activation: Activation,
    pub train: TrainConfig,
    /// Trailing fraction of snapshots (by capture order) kept out of training
    /// and only reported on.
    pub holdout_fraction: f32,
}

impl AeConfig {
    pub fn new(latent_dim: usize) -> Self {
        Self {
            encoder_hidden: Vec::new(),
            latent_dim,
            hidden_activation: Activation::Tanh,
            output_activation: Activation::Sigmoid,
            train: TrainConfig {
                learning_rate: 0.02,
                batch_size: 4,
                epochs: 300,
                loss: LossKind::Mse,
                shuffle_seed: 0,
            },
            holdout_fraction: 0.2,
        }
    }

    /// Full list of layer widths for an autoencoder over `p` parameters.
    pub fn layer_sizes(&self, p: u64) -> Result<Vec<u64>> {
        let l = self.latent_dim as u64;
        if l == 0 {
            return Err(Error::config(
                "latent_dim",
                "latent dimension must be positive",
            ));
        }
        let mut enc = vec![p];
        enc.extend(self.encoder_hidden.iter().map(|&h| h as u64));
        enc.push(l);
        if let Some(w) = enc.windows(2).find(|w| w[1] >= w[0]) {
            return Err(Error::config(
                "encoder_hidden",
                format!(
                    "layer widths must strictly decrease from {p} to {l}, found {} → {}",
                    w[0], w[1]
                ),
            ));
        }
        let mut sizes = enc.clone();
        sizes.extend(enc.iter().rev().skip(1));
        Ok(sizes)
    }

    pub fn param_count(&self, p: u64) -> Result<u64> {
        Ok(sizes_params(&self.layer_sizes(p)?))
    }

    /// Parameter count of the decoder half alone.
    pub fn decoder_param_count(&self, p: u64) -> Result<u64> {
        let sizes = self.layer_sizes(p)?;
        Ok(sizes_params(&sizes[sizes.len() / 2..]))
    }
}

fn sizes_params(sizes: &[u64]) -> u64 {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// `P / L`.
pub fn compression_ratio(p: u64, l: u64) -> f64 {
    p as f64 / l as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricAutoencoder {
    net: Network,
    split_index: usize,
    stats: Option<NormStats>,
    config: AeConfig,
}

pub fn build_ae(p: u64, cfg: &AeConfig, seed: u64) -> Result<SymmetricAutoencoder> {
    let sizes: Vec<usize> = cfg
        .layer_sizes(p)?
        .into_iter()
        .map(|s| s as usize)
        .collect();
    let n_layers = sizes.len() - 1;
    let acts: Vec<Activation> = (0..n_layers)
        .map(|i| {
            if i + 1 == n_layers {
                cfg.output_activation
            } else {
                cfg.hidden_activation
            }
        })
        .collect();
    let net = Network::mlp(&sizes, &acts, seed)?;
    Ok(SymmetricAutoencoder {
        net,
        split_index: n_layers / 2,
        stats: None,
        config: cfg.clone(),
    })
}

impl SymmetricAutoencoder {
    /// Wraps an existing funnel network. The split is placed after the
    /// narrowest layer.
    pub fn from_network(
        net: Network,
        stats: Option<NormStats>,
        train: TrainConfig,
    ) -> Result<Self> {
        let layers = net.layers();
        let n = layers.len();
        if n < 2 || !n.is_multiple_of(2) {
            return Err(Error::Argument(format!(
                "autoencoder needs an even layer count, got {n}"
            )));
        }
        let split = n / 2;
        let widths: Vec<usize> = std::iter::once(layers[0].inputs())
            .chain(layers.iter().map(|l| l.outputs()))
            .collect();
        let funnel = widths[..=split].windows(2).all(|w| w[1] < w[0])
            && widths[split..].windows(2).all(|w| w[1] > w[0])
            && (0..=split).all(|i| widths[i] == widths[n - i]);
        if !funnel {
            return Err(Error::Argument(format!(
                "layer widths {widths:?} are not a symmetric funnel"
            )));
        }
        if let Some(s) = &stats {
            check_len(widths[0], s.len())?;
        }
        let config = AeConfig {
            encoder_hidden: widths[1..split].to_vec(),
            latent_dim: widths[split],
            hidden_activation: layers[0].activation(),
            output_activation: layers[n - 1].activation(),
            train,
            holdout_fraction: AeConfig::new(1).holdout_fraction,
        };
        Ok(Self {
            net,
            split_index: split,
            stats,
            config,
        })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn split_index(&self) -> usize {
        self.split_index
    }

    pub fn config(&self) -> &AeConfig {
        &self.config
    }

    pub fn stats(&self) -> Option<&NormStats> {
        self.stats.as_ref()
    }

    pub fn set_stats(&mut self, stats: NormStats) -> Result<()> {
        check_len(self.input_dim(), stats.len())?;
        self.stats = Some(stats);
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.net.layers()[self.split_index - 1].outputs()
    }

    pub fn param_count(&self) -> u64 {
        self.net.param_count()
    }

    pub fn encoder(&self) -> Network {
        self.net
            .slice(0..self.split_index)
            .expect("split inside network")
    }

    pub fn decoder(&self) -> Network {
        self.net
            .slice(self.split_index..self.net.layers().len())
            .expect("split inside network")
    }

    fn stats_or_err(&self) -> Result<&NormStats> {
        self.stats.as_ref().ok_or_else(|| {
            Error::Argument("autoencoder has no normalization statistics; train it first".into())
        })
    }

    /// The decoder half plus what the aggregator needs to use it.
    pub fn decoder_shipment(&self) -> Result<DecoderShipment> {
        Ok(DecoderShipment {
            decoder: self.decoder(),
            stats: self.stats_or_err()?.clone(),
            latent_dim: self.latent_dim(),
        })
    }

    /// Full autoencoder in the shipment layout (`FWCK` + stats + latent dim).
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        write_with_stats(&self.net, self.stats_or_err()?, self.latent_dim())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (net, stats, latent) = read_with_stats(bytes)?;
        let ae = Self::from_network(net, Some(stats), AeConfig::new(latent).train)?;
        if ae.latent_dim() != latent {
            return Err(Error::Parse {
                offset: bytes.len() - 4,
                message: format!(
                    "latent dim {latent} does not match network ({})",
                    ae.latent_dim()
                ),
            });
        }
        Ok(ae)
    }

    /// Rebuilds an autoencoder from separately stored halves.
    pub fn from_halves(encoder: &DecoderShipment, decoder: &DecoderShipment) -> Result<Self> {
        if encoder.stats != decoder.stats || encoder.latent_dim != decoder.latent_dim {
            return Err(Error::Argument(
                "encoder and decoder halves do not belong together".into(),
            ));
        }
        let mut layers = encoder.decoder.layers().to_vec();
        layers.extend_from_slice(decoder.decoder.layers());
        let net = Network::from_layers(layers, 0)?;
        Self::from_network(
            net,
            Some(encoder.stats.clone()),
            AeConfig::new(encoder.latent_dim).train,
        )
    }

    /// The encoder half in the shipment layout; lets a collaborator persist
    /// its side of the codec.
    pub fn encoder_half(&self) -> Result<DecoderShipment> {
        Ok(DecoderShipment {
            decoder: self.encoder(),
            stats: self.stats_or_err()?.clone(),
            latent_dim: self.latent_dim(),
        })
    }
}

/// Code sent uplink in place of the full weight vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    pub values: Vec<f32>,
    pub round: u32,
    pub collaborator_id: u32,
}

/// Applies the encoder layers to an already-normalized weight vector.
pub fn encode(ae: &SymmetricAutoencoder, flat: &FlatWeights) -> Result<LatentCode> {
    check_len(ae.input_dim(), flat.len())?;
    let x = Tensor::row_vector(flat.values().to_vec())?;
    let z = ae.net.forward_range(0..ae.split_index, &x)?;
    Ok(LatentCode {
        values: z.into_data(),
        round: 0,
        collaborator_id: 0,
    })
}

/// Applies the decoder layers; the result is in the normalized domain.
pub fn decode(ae: &SymmetricAutoencoder, z: &LatentCode) -> Result<FlatWeights> {
    check_len(ae.latent_dim(), z.values.len())?;
    let x = Tensor::row_vector(z.values.clone())?;
    let out = ae
        .net
        .forward_range(ae.split_index..ae.net.layers().len(), &x)?;
    Ok(FlatWeights::new(out.into_data()))
}

/// Fraction of components whose normalized values differ by at most `tau`.
pub fn recreation_accuracy(
    original: &FlatWeights,
    predicted: &FlatWeights,
    stats: &NormStats,
    tau: f32,
) -> Result<f32> {
    check_len(original.len(), predicted.len())?;
    if !(tau > 0.0) {
        return Err(Error::Argument(format!("tau must be positive, got {tau}")));
    }
    let a = normalize(original, stats)?;
    let b = normalize(predicted, stats)?;
    Ok(within_tau(a.values(), b.values(), tau))
}

fn within_tau(a: &[f32], b: &[f32], tau: f32) -> f32 {
    let hits = a
        .iter()
        .zip(b)
        .filter(|(x, y)| (*x - *y).abs() <= tau)
        .count();
    hits as f32 / a.len() as f32
}

/// Reconstruction metrics collected while training an autoencoder.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AeHistory {
    /// Reconstruction loss on the training rows before any update.
    pub initial_loss: f32,
    /// Per-epoch training loss.
    pub loss: Vec<f32>,
    /// Reconstruction loss on the training rows after the last epoch.
    pub final_loss: f32,
    /// Per-epoch recreation accuracy on the training rows (at [`DEFAULT_TAU`]).
    pub recreation_accuracy: Vec<f32>,
    /// Per-epoch recreation accuracy on the held-out rows; empty without holdout.
    pub holdout_recreation_accuracy: Vec<f32>,
    pub train_rows: usize,
    pub holdout_rows: usize,
}

struct ReconstructionProbe<'a> {
    train: &'a Tensor,
    holdout: Option<&'a Tensor>,
    acc: Vec<f32>,
    holdout_acc: Vec<f32>,
}

impl ReconstructionProbe<'_> {
    fn accuracy(net: &Network, rows: &Tensor) -> Result<f32> {
        let out = net.forward(rows)?;
        Ok(within_tau(out.data(), rows.data(), DEFAULT_TAU))
    }
}

impl TrainObserver for ReconstructionProbe<'_> {
    fn on_epoch_end(&mut self, _epoch: usize, net: &Network) -> Result<()> {
        self.acc.push(Self::accuracy(net, self.train)?);
        if let Some(h) = self.holdout {
            self.holdout_acc.push(Self::accuracy(net, h)?);
        }
        Ok(())
    }
}

/// Trains the autoencoder to reproduce the normalized snapshots of `ds`
/// under the squared-error reconstruction loss.
///
/// Normalization statistics come from `ds` when present and are otherwise
/// fitted on all of its rows; either way they are stored in `ae`.
pub fn train_ae(ae: &mut SymmetricAutoencoder, ds: &WeightDataset) -> Result<AeHistory> {
    check_len(ae.input_dim(), ds.param_count())?;
    let s = ds.len();
    if s < 2 {
        return Err(Error::Argument(format!(
            "need at least 2 snapshots to train, got {s}"
        )));
    }
    let stats = match ds.stats() {
        Some(st) => st.clone(),
        None => fit_norm(ds)?,
    };

    let frac = ae.config.holdout_fraction.clamp(0.0, 1.0);
    let holdout = ((s as f32 * frac).floor() as usize).min(s - 2);
    let n_train = s - holdout;
    let p = ds.param_count();

    let mut normalized = Vec::with_capacity(s * p);
    for i in 0..s {
        normalized.extend(normalize(&ds.snapshot(i), &stats)?.into_values());
    }
    let train_rows = Tensor::matrix(n_train, p, normalized[..n_train * p].to_vec())?;
    let holdout_rows = if holdout > 0 {
        Some(Tensor::matrix(
            holdout,
            p,
            normalized[n_train * p..].to_vec(),
        )?)
    } else {
        None
    };

    let mut cfg = ae.config.train.clone();
    cfg.loss = LossKind::Mse;
    cfg.batch_size = cfg.batch_size.clamp(1, n_train);

    let initial_loss = nn::loss(&ae.net.forward(&train_rows)?, &train_rows, LossKind::Mse)?;
    let mut probe = ReconstructionProbe {
        train: &train_rows,
        holdout: holdout_rows.as_ref(),
        acc: Vec::new(),
        holdout_acc: Vec::new(),
    };
    let hist = nn::train_observed(&mut ae.net, &train_rows, &train_rows, &cfg, &mut probe)?;
    let (acc, holdout_acc) = (probe.acc, probe.holdout_acc);
    let final_loss = nn::loss(&ae.net.forward(&train_rows)?, &train_rows, LossKind::Mse)?;
    if !final_loss.is_finite() || hist.loss.iter().any(|l| !l.is_finite()) {
        return Err(Error::Diverged(
            "autoencoder reconstruction loss is not finite".into(),
        ));
    }
    ae.stats = Some(stats);
    Ok(AeHistory {
        initial_loss,
        loss: hist.loss,
        final_loss,
        recreation_accuracy: acc,
        holdout_recreation_accuracy: holdout_acc,
        train_rows: n_train,
        holdout_rows: holdout,
    })
}

/// Decoder half of a trained autoencoder with its normalization statistics:
/// everything the aggregator needs to rebuild a collaborator's weights.
///
/// Binary layout: an `FWCK` checkpoint of the decoder layers, then the
/// statistics (`P` f32 minimums, `P` f32 maximums, little-endian), then a
/// little-endian `u32` latent dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderShipment {
    pub decoder: Network,
    pub stats: NormStats,
    pub latent_dim: usize,
}

impl DecoderShipment {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        write_with_stats(&self.decoder, &self.stats, self.latent_dim)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (decoder, stats, latent_dim) = read_with_stats(bytes)?;
        if latent_dim != decoder.input_dim().min(decoder.output_dim()) {
            return Err(Error::Parse {
                offset: bytes.len() - 4,
                message: format!("latent dim {latent_dim} does not match the network"),
            });
        }
        Ok(Self {
            decoder,
            stats,
            latent_dim,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Latent code to normalized-domain weights.
    pub fn decode_normalized(&self, z: &[f32]) -> Result<FlatWeights> {
        check_len(self.latent_dim, z.len())?;
        let out = self.decoder.forward(&Tensor::row_vector(z.to_vec())?)?;
        Ok(FlatWeights::new(out.into_data()))
    }

    /// Latent code to weights in the original parameter domain.
    pub fn reconstruct(&self, z: &[f32]) -> Result<FlatWeights> {
        denormalize(&self.decode_normalized(z)?, &self.stats)
    }
}

fn write_with_stats(net: &Network, stats: &NormStats, latent: usize) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    net.write_checkpoint(&mut out)?;
    stats.write(&mut out);
    out.extend_from_slice(&to_u32(latent, "latent dim")?.to_le_bytes());
    Ok(out)
}

fn read_with_stats(bytes: &[u8]) -> Result<(Network, NormStats, usize)> {
    let mut r = ByteReader::new(bytes);
    let net = Network::read_checkpoint(&mut r)?;
    // The parameter vector is whichever end of the network is wider.
    let p = net.input_dim().max(net.output_dim());
    let stats = NormStats::read(&mut r, p)?;
    let latent = r.u32_le("latent dim")? as usize;
    r.finish()?;
    Ok((net, stats, latent))
}

/// Collaborator side of the uplink codec.
#[derive(Debug, Clone, PartialEq)]
pub enum Codec {
    /// Sends the weights as they are.
    Identity,
    Autoencoder(SymmetricAutoencoder),
}

impl Codec {
    /// Number of floats sent for a `p`-parameter update.
    pub fn payload_len(&self, p: usize) -> usize {
        match self {
            Codec::Identity => p,
            Codec::Autoencoder(ae) => ae.latent_dim(),
        }
    }

    /// Raw weights to the uplink payload.
    pub fn compress(&self, w: &FlatWeights) -> Result<Vec<f32>> {
        match self {
            Codec::Identity => Ok(w.values().to_vec()),
            Codec::Autoencoder(ae) => {
                let stats = ae.stats_or_err()?;
                Ok(encode(ae, &normalize(w, stats)?)?.values)
            }
        }
    }

    /// What the aggregator would recover from `w`, computed locally.
    pub fn round_trip(&self, w: &FlatWeights) -> Result<FlatWeights> {
        match self {
            Codec::Identity => Ok(w.clone()),
            Codec::Autoencoder(ae) => {
                let stats = ae.stats_or_err()?;
                let z = encode(ae, &normalize(w, stats)?)?;
                let mut out = denormalize(&decode(ae, &z)?, stats)?;
                if let Some(id) = w.shape_id() {
                    out = FlatWeights::with_shape(out.into_values(), id);
                }
                Ok(out)
            }
        }
    }

    /// The matching aggregator-side decoder.
    pub fn decoder(&self) -> Result<Decoder> {
        Ok(match self {
            Codec::Identity => Decoder::Identity,
            Codec::Autoencoder(ae) => Decoder::Shipment(ae.decoder_shipment()?),
        })
    }
}

/// Aggregator side of the uplink codec.
#[derive(Debug, Clone, PartialEq)]
pub enum Decoder {
    Identity,
    Shipment(DecoderShipment),
}

impl Decoder {
    /// Expected payload length, if fixed by the decoder.
    pub fn latent_dim(&self) -> Option<usize> {
        match self {
            Decoder::Identity => None,
            Decoder::Shipment(s) => Some(s.latent_dim),
        }
    }

    pub fn reconstruct(&self, payload: &[f32]) -> Result<FlatWeights> {
        match self {
            Decoder::Identity => Ok(FlatWeights::new(payload.to_vec())),
            Decoder::Shipment(s) => s.reconstruct(payload),
        }
    }
}
