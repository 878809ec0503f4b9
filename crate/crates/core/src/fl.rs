//! Federated protocol: pre-pass round, compressed uplink, decode-and-average
//! aggregation and uncompressed broadcast.
//!
//! Collaborators within a round run in parallel on the rayon pool; every
//! message between a collaborator and the aggregator crosses as bytes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autoencoder::{
    build_ae, train_ae, AeConfig, AeHistory, Codec, Decoder, DecoderShipment, LatentCode,
};
use crate::codec::{
    check_len, flatten, load_into, FlatWeights, ModelShape, SnapshotCadence, SnapshotRecorder,
    WeightDataset,
};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{evaluate, train, train_observed, Network, TrainConfig, TrainingHistory};
use crate::rng::derive_seed;
use crate::wire::{put_f32s, to_u32, ByteReader};

pub const UPDATE_MAGIC: &[u8; 4] = b"FWUP";
pub const UPDATE_VERSION: u16 = 1;
/// Magic, version, collaborator id, round and latent length.
pub const UPDATE_HEADER_BYTES: usize = 4 + 2 + 4 + 4 + 4;

const PREPASS_STREAM: u64 = 1;
const AE_STREAM: u64 = 2;
const ROUND_STREAM: u64 = 1 << 32;

/// The uplink wire unit.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedUpdate {
    pub collaborator_id: u32,
    pub round: u32,
    pub latent: LatentCode,
}

impl CompressedUpdate {
    pub fn new(collaborator_id: u32, round: u32, values: Vec<f32>) -> Self {
        Self {
            collaborator_id,
            round,
            latent: LatentCode {
                values,
                round,
                collaborator_id,
            },
        }
    }

    pub fn payload(&self) -> &[f32] {
        &self.latent.values
    }

    pub fn payload_bytes(&self) -> usize {
        self.latent.values.len() * 4
    }

    pub fn wire_bytes(&self) -> usize {
        UPDATE_HEADER_BYTES + self.payload_bytes()
    }

    /// `"FWUP" | u16 version | u32 collaborator | u32 round | u32 L | L × f32`,
    /// little-endian.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(self.wire_bytes());
        out.extend_from_slice(UPDATE_MAGIC);
        out.extend_from_slice(&UPDATE_VERSION.to_le_bytes());
        out.extend_from_slice(&self.collaborator_id.to_le_bytes());
        out.extend_from_slice(&self.round.to_le_bytes());
        out.extend_from_slice(&to_u32(self.latent.values.len(), "latent length")?.to_le_bytes());
        put_f32s(&mut out, &self.latent.values);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.magic(UPDATE_MAGIC)?;
        r.version(UPDATE_VERSION)?;
        let id = r.u32_le("collaborator id")?;
        let round = r.u32_le("round")?;
        let len = r.u32_le("latent length")? as usize;
        let values = r.f32_vec(len, "latent values")?;
        r.finish()?;
        Ok(Self::new(id, round, values))
    }
}

/// Metrics for one collaborator in one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollabRoundMetrics {
    pub collaborator_id: u32,
    /// After local training, before aggregation.
    pub pre_loss: f32,
    pub pre_accuracy: f32,
    /// After loading the new global weights.
    pub post_loss: f32,
    pub post_accuracy: f32,
    /// Update frame size, header included.
    pub uplink_bytes: u64,
    /// Update payload only (`4 · L`).
    pub uplink_payload_bytes: u64,
    /// Size of the global-weight broadcast this collaborator received.
    pub downlink_bytes: u64,
    /// Decoder re-shipment after a mid-run retrain; zero otherwise.
    pub decoder_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    pub collaborators: Vec<CollabRoundMetrics>,
    pub uplink_bytes: u64,
    pub uplink_payload_bytes: u64,
    pub downlink_bytes: u64,
    pub decoder_bytes: u64,
}

pub struct CollaboratorState {
    pub id: u32,
    pub model: Network,
    pub data: LabeledDataset,
    pub train: TrainConfig,
    /// Set by the pre-pass, or substituted directly (e.g. [`Codec::Identity`]).
    pub codec: Option<Codec>,
    /// Weight snapshots from the pre-pass (and later rounds when retraining).
    pub snapshots: Option<WeightDataset>,
    pub history: Vec<CollabRoundMetrics>,
    seed: u64,
    local_rounds: u64,
}

impl CollaboratorState {
    pub fn new(
        id: u32,
        model: Network,
        data: LabeledDataset,
        train: TrainConfig,
        seed: u64,
    ) -> Self {
        Self {
            id,
            model,
            data,
            train,
            codec: None,
            snapshots: None,
            history: Vec::new(),
            seed,
            local_rounds: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn evaluate(&self) -> Result<(f32, f32)> {
        evaluate(&self.model, &self.data.inputs, &self.data.targets)
    }
}

pub struct AggregatorState {
    global: FlatWeights,
    shape: ModelShape,
    decoders: BTreeMap<u32, Decoder>,
    round: u32,
}

impl AggregatorState {
    pub fn new(global_model: &Network) -> Self {
        Self {
            global: flatten(global_model),
            shape: ModelShape::of(global_model),
            decoders: BTreeMap::new(),
            round: 0,
        }
    }

    pub fn global(&self) -> &FlatWeights {
        &self.global
    }

    pub fn shape(&self) -> &ModelShape {
        &self.shape
    }

    /// Number of completed aggregations; also the stamp expected on the
    /// next batch of updates.
    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn register_decoder(&mut self, collaborator: u32, decoder: Decoder) -> Result<()> {
        if let Decoder::Shipment(s) = &decoder {
            check_len(self.shape.param_len(), s.stats.len())?;
        }
        self.decoders.insert(collaborator, decoder);
        Ok(())
    }

    /// Registers a decoder received as an encoded shipment.
    pub fn receive_shipment(&mut self, collaborator: u32, bytes: &[u8]) -> Result<()> {
        let ship = DecoderShipment::from_bytes(bytes)?;
        self.register_decoder(collaborator, Decoder::Shipment(ship))
    }

    pub fn decoder(&self, collaborator: u32) -> Option<&Decoder> {
        self.decoders.get(&collaborator)
    }

    pub fn registered(&self) -> impl Iterator<Item = u32> + '_ {
        self.decoders.keys().copied()
    }
}

/// Collaborators sharing `global`'s architecture, one per partition, with ids
/// `0..n` and seeds fanned out from `seed`.
pub fn federation(
    global: &Network,
    partitions: Vec<LabeledDataset>,
    train: &TrainConfig,
    seed: u64,
) -> (Vec<CollaboratorState>, AggregatorState) {
    let collabs = partitions
        .into_iter()
        .enumerate()
        .map(|(i, data)| {
            CollaboratorState::new(
                i as u32,
                global.clone(),
                data,
                train.clone(),
                derive_seed(seed, 1000 + i as u64),
            )
        })
        .collect();
    (collabs, AggregatorState::new(global))
}

fn check_collaborators(collabs: &[CollaboratorState], agg: &AggregatorState) -> Result<()> {
    if collabs.is_empty() {
        return Err(Error::Argument("no collaborators".into()));
    }
    let mut ids = BTreeSet::new();
    for c in collabs {
        if !ids.insert(c.id) {
            return Err(Error::Protocol(format!(
                "duplicate collaborator id {}",
                c.id
            )));
        }
        if ModelShape::of(&c.model) != agg.shape {
            return Err(Error::Protocol(format!(
                "collaborator {} does not share the global model architecture",
                c.id
            )));
        }
    }
    Ok(())
}

/// What one collaborator produced in the pre-pass.
#[derive(Debug, Clone)]
pub struct PrepassReport {
    pub collaborator_id: u32,
    pub training: TrainingHistory,
    pub autoencoder: AeHistory,
    pub shipment_bytes: usize,
}

/// Local training without federation, capturing one snapshot per epoch;
/// then each collaborator trains its autoencoder on its snapshots and ships
/// the decoder to the aggregator.
pub fn run_prepass(
    collabs: &mut [CollaboratorState],
    agg: &mut AggregatorState,
    prepass_epochs: usize,
    ae_cfg: &AeConfig,
) -> Result<Vec<PrepassReport>> {
    if prepass_epochs < 2 {
        return Err(Error::Argument(format!(
            "pre-pass needs at least 2 epochs to yield 2 snapshots, got {prepass_epochs}"
        )));
    }
    check_collaborators(collabs, agg)?;
    let global = agg.global.clone();
    let shape = agg.shape.clone();

    let results: Vec<(PrepassReport, Vec<u8>)> = collabs
        .par_iter_mut()
        .map(|c| prepass_one(c, &global, &shape, prepass_epochs, ae_cfg))
        .collect::<Result<_>>()?;

    let mut reports = Vec::with_capacity(results.len());
    for (report, bytes) in results {
        agg.receive_shipment(report.collaborator_id, &bytes)?;
        reports.push(report);
    }
    Ok(reports)
}

fn prepass_one(
    c: &mut CollaboratorState,
    global: &FlatWeights,
    shape: &ModelShape,
    epochs: usize,
    ae_cfg: &AeConfig,
) -> Result<(PrepassReport, Vec<u8>)> {
    let id = c.id;
    let wrap = |e: Error| Error::Prepass {
        collaborator: id,
        reason: e.to_string(),
    };
    load_into(&mut c.model, global)?;
    let mut ds = WeightDataset::new(shape, SnapshotCadence::PerEpoch);
    let mut cfg = c.train.clone();
    cfg.epochs = epochs;
    cfg.shuffle_seed = derive_seed(c.seed, PREPASS_STREAM);
    let training = train_observed(
        &mut c.model,
        &c.data.inputs,
        &c.data.targets,
        &cfg,
        &mut SnapshotRecorder::new(&mut ds),
    )?;

    let mut ae_cfg = ae_cfg.clone();
    ae_cfg.train.shuffle_seed = derive_seed(c.seed, AE_STREAM + 1);
    let mut ae = build_ae(
        shape.total_params(),
        &ae_cfg,
        derive_seed(c.seed, AE_STREAM),
    )
    .map_err(wrap)?;
    let history = train_ae(&mut ae, &ds).map_err(wrap)?;
    if let Some(stats) = ae.stats() {
        ds.set_stats(stats.clone())?;
    }
    let bytes = ae.decoder_shipment()?.to_bytes()?;
    c.snapshots = Some(ds);
    c.codec = Some(Codec::Autoencoder(ae));
    Ok((
        PrepassReport {
            collaborator_id: id,
            training,
            autoencoder: history,
            shipment_bytes: bytes.len(),
        },
        bytes,
    ))
}

/// Loads `global` into the collaborator's model, trains `local_epochs` on its
/// data and returns the flattened result.
pub fn local_round(
    c: &mut CollaboratorState,
    global: &FlatWeights,
    local_epochs: usize,
) -> Result<FlatWeights> {
    load_into(&mut c.model, global)?;
    if local_epochs == 0 {
        return Ok(global.clone());
    }
    let mut cfg = c.train.clone();
    cfg.epochs = local_epochs;
    cfg.shuffle_seed = derive_seed(c.seed, ROUND_STREAM + c.local_rounds);
    c.local_rounds += 1;
    train(&mut c.model, &c.data.inputs, &c.data.targets, &cfg, None)?;
    Ok(flatten(&c.model))
}

/// Encodes `w` with the collaborator's codec and stamps it.
pub fn compress_uplink(
    c: &CollaboratorState,
    w: &FlatWeights,
    round: u32,
) -> Result<CompressedUpdate> {
    let codec = c.codec.as_ref().ok_or_else(|| {
        Error::Protocol(format!(
            "collaborator {} has no codec; run the pre-pass first",
            c.id
        ))
    })?;
    compress_with(codec, c.id, w, round)
}

fn compress_with(codec: &Codec, id: u32, w: &FlatWeights, round: u32) -> Result<CompressedUpdate> {
    Ok(CompressedUpdate::new(id, round, codec.compress(w)?))
}

/// Rebuilds every update with its collaborator's registered decoder and
/// replaces the global weights with their component-wise mean.
pub fn aggregate(agg: &mut AggregatorState, updates: &[CompressedUpdate]) -> Result<FlatWeights> {
    let decoders = std::mem::take(&mut agg.decoders);
    let out = aggregate_with(agg, updates, &decoders);
    agg.decoders = decoders;
    out
}

fn aggregate_with(
    agg: &mut AggregatorState,
    updates: &[CompressedUpdate],
    decoders: &BTreeMap<u32, Decoder>,
) -> Result<FlatWeights> {
    let mut by_id: BTreeMap<u32, &CompressedUpdate> = BTreeMap::new();
    for u in updates {
        if u.round != agg.round {
            return Err(Error::Protocol(format!(
                "update from collaborator {} is stamped round {}, expected {}",
                u.collaborator_id, u.round, agg.round
            )));
        }
        if by_id.insert(u.collaborator_id, u).is_some() {
            return Err(Error::Protocol(format!(
                "duplicate update from collaborator {}",
                u.collaborator_id
            )));
        }
    }
    if let Some(id) = decoders.keys().find(|id| !by_id.contains_key(id)) {
        return Err(Error::Protocol(format!(
            "missing update from collaborator {id}"
        )));
    }
    if let Some(id) = by_id.keys().find(|id| !decoders.contains_key(id)) {
        return Err(Error::Protocol(format!(
            "no decoder registered for collaborator {id}"
        )));
    }
    if by_id.is_empty() {
        return Err(Error::Protocol("no updates to aggregate".into()));
    }

    let p = agg.shape.param_len();
    let mut sum = vec![0.0f64; p];
    // Ascending id order keeps the sum bit-reproducible.
    for (id, u) in &by_id {
        let dec = &decoders[id];
        if let Some(l) = dec.latent_dim() {
            check_len(l, u.payload().len())?;
        }
        let w = dec.reconstruct(u.payload())?;
        check_len(p, w.len())?;
        for (s, &v) in sum.iter_mut().zip(w.values()) {
            *s += v as f64;
        }
    }
    let k = by_id.len() as f64;
    let mean = FlatWeights::with_shape(
        sum.into_iter().map(|s| (s / k) as f32).collect(),
        agg.shape.id(),
    );
    agg.global = mean.clone();
    agg.round += 1;
    Ok(mean)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Compression {
    On,
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederatedConfig {
    pub rounds: usize,
    pub local_epochs: usize,
    pub compression: Compression,
    /// Retrain every collaborator's autoencoder (and re-ship its decoder)
    /// every `k` rounds on its pre-pass snapshots plus the weights it has
    /// sent since. Off by default.
    #[serde(default)]
    pub retrain_every: Option<usize>,
}

impl FederatedConfig {
    pub fn new(rounds: usize, local_epochs: usize, compression: Compression) -> Self {
        Self {
            rounds,
            local_epochs,
            compression,
            retrain_every: None,
        }
    }
}

struct LocalOutcome {
    id: u32,
    pre: (f32, f32),
    frame: Vec<u8>,
    payload_bytes: usize,
}

/// Runs `cfg.rounds` federated rounds. Each round: local training from the
/// current global, uplink, aggregation, broadcast, and evaluation of the new
/// global on every collaborator's data.
///
/// With compression off every collaborator sends its raw weights in the same
/// frame format (`L = P`).
pub fn run_federated(
    collabs: &mut [CollaboratorState],
    agg: &mut AggregatorState,
    cfg: &FederatedConfig,
) -> Result<Vec<RoundRecord>> {
    check_collaborators(collabs, agg)?;
    let decoders: BTreeMap<u32, Decoder> = match cfg.compression {
        Compression::On => {
            for c in collabs.iter() {
                if c.codec.is_none() {
                    return Err(Error::Protocol(format!(
                        "collaborator {} has no codec",
                        c.id
                    )));
                }
                if !agg.decoders.contains_key(&c.id) {
                    return Err(Error::Protocol(format!(
                        "missing decoder for collaborator {}",
                        c.id
                    )));
                }
            }
            collabs
                .iter()
                .map(|c| (c.id, agg.decoders[&c.id].clone()))
                .collect()
        }
        Compression::Off => collabs.iter().map(|c| (c.id, Decoder::Identity)).collect(),
    };
    let mut decoders = decoders;
    let retrain = match (cfg.compression, cfg.retrain_every) {
        (Compression::On, Some(k)) if k > 0 => Some(k),
        _ => None,
    };
    let p = agg.shape.param_len();
    let broadcast_bytes = (UPDATE_HEADER_BYTES + 4 * p) as u64;

    let mut records = Vec::with_capacity(cfg.rounds);
    for r in 0..cfg.rounds {
        let global = agg.global.clone();
        let round = agg.round;
        let compression = cfg.compression;
        let keep_snapshots = retrain.is_some();

        let outcomes: Vec<LocalOutcome> = collabs
            .par_iter_mut()
            .map(|c| {
                let w = local_round(c, &global, cfg.local_epochs)?;
                let pre = c.evaluate()?;
                let update = match compression {
                    Compression::On => compress_uplink(c, &w, round)?,
                    Compression::Off => compress_with(&Codec::Identity, c.id, &w, round)?,
                };
                if keep_snapshots {
                    if let Some(ds) = c.snapshots.as_mut() {
                        ds.push(&w)?;
                    }
                }
                Ok(LocalOutcome {
                    id: c.id,
                    pre,
                    payload_bytes: update.payload_bytes(),
                    frame: update.to_bytes()?,
                })
            })
            .collect::<Result<_>>()?;

        let updates = outcomes
            .iter()
            .map(|o| CompressedUpdate::from_bytes(&o.frame))
            .collect::<Result<Vec<_>>>()?;
        let new_global = aggregate_with(agg, &updates, &decoders)?;

        let post: Vec<(f32, f32)> = collabs
            .par_iter_mut()
            .map(|c| {
                load_into(&mut c.model, &new_global)?;
                c.evaluate()
            })
            .collect::<Result<_>>()?;

        let mut decoder_bytes: BTreeMap<u32, u64> = BTreeMap::new();
        if let Some(k) = retrain {
            if (r + 1) % k == 0 {
                let shipped: Vec<(u32, Vec<u8>)> = collabs
                    .par_iter_mut()
                    .map(|c| retrain_codec(c).map(|b| (c.id, b)))
                    .collect::<Result<_>>()?;
                for (id, bytes) in shipped {
                    agg.receive_shipment(id, &bytes)?;
                    decoders.insert(id, agg.decoders[&id].clone());
                    decoder_bytes.insert(id, bytes.len() as u64);
                }
            }
        }

        let metrics: Vec<CollabRoundMetrics> = outcomes
            .iter()
            .zip(&post)
            .map(|(o, &(post_loss, post_accuracy))| CollabRoundMetrics {
                collaborator_id: o.id,
                pre_loss: o.pre.0,
                pre_accuracy: o.pre.1,
                post_loss,
                post_accuracy,
                uplink_bytes: o.frame.len() as u64,
                uplink_payload_bytes: o.payload_bytes as u64,
                downlink_bytes: broadcast_bytes,
                decoder_bytes: decoder_bytes.get(&o.id).copied().unwrap_or(0),
            })
            .collect();
        for (c, m) in collabs.iter_mut().zip(&metrics) {
            c.history.push(m.clone());
        }
        records.push(RoundRecord {
            round,
            uplink_bytes: metrics.iter().map(|m| m.uplink_bytes).sum(),
            uplink_payload_bytes: metrics.iter().map(|m| m.uplink_payload_bytes).sum(),
            downlink_bytes: metrics.iter().map(|m| m.downlink_bytes).sum(),
            decoder_bytes: metrics.iter().map(|m| m.decoder_bytes).sum(),
            collaborators: metrics,
        });
    }
    Ok(records)
}

fn retrain_codec(c: &mut CollaboratorState) -> Result<Vec<u8>> {
    let id = c.id;
    let (Some(Codec::Autoencoder(ae)), Some(ds)) = (c.codec.as_mut(), c.snapshots.as_mut()) else {
        return Err(Error::Protocol(format!(
            "collaborator {id} has nothing to retrain"
        )));
    };
    // Refit the scaling on everything seen so far.
    let mut fresh = WeightDataset::from_rows((0..ds.len()).map(|i| ds.row(i).to_vec()).collect())?;
    train_ae(ae, &fresh).map_err(|e| Error::Prepass {
        collaborator: id,
        reason: e.to_string(),
    })?;
    if let Some(stats) = ae.stats() {
        fresh.set_stats(stats.clone())?;
        ds.set_stats(stats.clone())?;
    }
    ae.decoder_shipment()?.to_bytes()
}

/// Per-round metrics as CSV:
/// `round,collab_id,phase,loss,accuracy,uplink_bytes,downlink_bytes`.
///
/// The `pre` row carries the collaborator's uplink for the round (update
/// frame plus any decoder re-shipment); the `post` row carries the broadcast
/// it received.
pub fn rounds_csv(records: &[RoundRecord]) -> String {
    let mut out = String::from("round,collab_id,phase,loss,accuracy,uplink_bytes,downlink_bytes\n");
    for rec in records {
        for m in &rec.collaborators {
            let _ = writeln!(
                out,
                "{},{},pre,{},{},{},0",
                rec.round,
                m.collaborator_id,
                m.pre_loss,
                m.pre_accuracy,
                m.uplink_bytes + m.decoder_bytes
            );
            let _ = writeln!(
                out,
                "{},{},post,{},{},0,{}",
                rec.round, m.collaborator_id, m.post_loss, m.post_accuracy, m.downlink_bytes
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_blobs;
    use crate::nn::{Activation, LossKind};

    fn small_federation(n: usize) -> (Vec<CollaboratorState>, AggregatorState) {
        let ds = gen_blobs(40 * n, 6, 3, 0.4, 5).unwrap();
        let parts = crate::data::partition(&ds, n, 1).unwrap();
        let global = Network::mlp(&[6, 5, 3], &[Activation::Tanh, Activation::Softmax], 3).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.1,
            batch_size: 8,
            epochs: 1,
            loss: LossKind::CrossEntropy,
            shuffle_seed: 0,
        };
        federation(&global, parts, &cfg, 42)
    }

    #[test]
    fn update_frame_layout() {
        let u = CompressedUpdate::new(7, 3, vec![1.0, -2.0]);
        let bytes = u.to_bytes().unwrap();
        assert_eq!(bytes.len(), UPDATE_HEADER_BYTES + 8);
        assert_eq!(&bytes[..4], b"FWUP");
        assert_eq!(&bytes[4..6], &1u16.to_le_bytes());
        assert_eq!(&bytes[6..10], &7u32.to_le_bytes());
        assert_eq!(&bytes[10..14], &3u32.to_le_bytes());
        assert_eq!(&bytes[14..18], &2u32.to_le_bytes());
        assert_eq!(CompressedUpdate::from_bytes(&bytes).unwrap(), u);
        assert!(CompressedUpdate::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn local_round_with_zero_epochs_is_identity() {
        let (mut collabs, agg) = small_federation(1);
        let g = agg.global().clone();
        assert_eq!(local_round(&mut collabs[0], &g, 0).unwrap(), g);
    }

    #[test]
    fn local_round_is_deterministic_and_learns() {
        let (mut a, agg) = small_federation(2);
        let (mut b, _) = small_federation(2);
        let g = agg.global().clone();
        let before = a[0].evaluate().unwrap().0;
        let wa = local_round(&mut a[0], &g, 3).unwrap();
        let wb = local_round(&mut b[0], &g, 3).unwrap();
        assert_eq!(wa, wb);
        assert!(a[0].evaluate().unwrap().0 < before);
    }

    #[test]
    fn aggregate_midpoint_and_single() {
        let layer = crate::nn::DenseLayer::zeros(1, 1, Activation::Identity).unwrap();
        let net = Network::from_layers(vec![layer], 0).unwrap();
        let mut agg = AggregatorState::new(&net);
        agg.register_decoder(0, Decoder::Identity).unwrap();
        let one = aggregate(&mut agg, &[CompressedUpdate::new(0, 0, vec![0.5, 1.5])]).unwrap();
        assert_eq!(one.values(), &[0.5, 1.5]);

        agg.register_decoder(1, Decoder::Identity).unwrap();
        let ups = [
            CompressedUpdate::new(0, 1, vec![0.0, 2.0]),
            CompressedUpdate::new(1, 1, vec![2.0, 4.0]),
        ];
        assert_eq!(aggregate(&mut agg, &ups).unwrap().values(), &[1.0, 3.0]);
        assert_eq!(agg.round(), 2);
    }

    #[test]
    fn aggregate_protocol_errors() {
        let layer = crate::nn::DenseLayer::zeros(1, 1, Activation::Identity).unwrap();
        let net = Network::from_layers(vec![layer], 0).unwrap();
        let mut agg = AggregatorState::new(&net);
        agg.register_decoder(0, Decoder::Identity).unwrap();
        agg.register_decoder(1, Decoder::Identity).unwrap();
        let a = CompressedUpdate::new(0, 0, vec![0.0, 0.0]);
        let b = CompressedUpdate::new(1, 0, vec![0.0, 0.0]);
        assert!(matches!(
            aggregate(&mut agg, std::slice::from_ref(&a)),
            Err(Error::Protocol(_))
        ));
        assert!(matches!(
            aggregate(&mut agg, &[a.clone(), a.clone(), b.clone()]),
            Err(Error::Protocol(_))
        ));
        let late = CompressedUpdate::new(1, 5, vec![0.0, 0.0]);
        assert!(matches!(
            aggregate(&mut agg, &[a.clone(), late]),
            Err(Error::Protocol(_))
        ));
        let stranger = CompressedUpdate::new(9, 0, vec![0.0, 0.0]);
        assert!(matches!(
            aggregate(&mut agg, &[a.clone(), b.clone(), stranger]),
            Err(Error::Protocol(_))
        ));
        let short = CompressedUpdate::new(1, 0, vec![0.0]);
        assert!(matches!(
            aggregate(&mut agg, &[a, short]),
            Err(Error::Codec { .. })
        ));
        assert_eq!(agg.round(), 0);
    }

    #[test]
    fn zero_rounds_changes_nothing() {
        let (mut collabs, mut agg) = small_federation(2);
        let g = agg.global().clone();
        let recs = run_federated(
            &mut collabs,
            &mut agg,
            &FederatedConfig::new(0, 2, Compression::Off),
        )
        .unwrap();
        assert!(recs.is_empty());
        assert_eq!(agg.global(), &g);
        assert_eq!(agg.round(), 0);
    }

    #[test]
    fn compression_on_requires_prepass() {
        let (mut collabs, mut agg) = small_federation(2);
        let err = run_federated(
            &mut collabs,
            &mut agg,
            &FederatedConfig::new(1, 1, Compression::On),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Protocol(_)));
    }

    #[test]
    fn prepass_rejects_single_epoch() {
        let (mut collabs, mut agg) = small_federation(1);
        assert!(run_prepass(&mut collabs, &mut agg, 1, &AeConfig::new(4)).is_err());
    }

    #[test]
    fn off_mode_is_plain_fedavg() {
        let (mut collabs, mut agg) = small_federation(3);
        let recs = run_federated(
            &mut collabs,
            &mut agg,
            &FederatedConfig::new(2, 1, Compression::Off),
        )
        .unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(agg.round(), 2);
        let p = agg.shape().param_len();
        for rec in &recs {
            assert_eq!(rec.uplink_bytes, 3 * (UPDATE_HEADER_BYTES + 4 * p) as u64);
            assert_eq!(rec.uplink_payload_bytes, 3 * 4 * p as u64);
        }
        // Everybody holds the final global.
        for c in &collabs {
            assert_eq!(flatten(&c.model).values(), agg.global().values());
        }
        let csv = rounds_csv(&recs);
        assert_eq!(csv.lines().count(), 1 + 2 * 3 * 2);
    }
}
