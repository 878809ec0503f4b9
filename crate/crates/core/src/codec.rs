//! Flattening of model weights, snapshot capture and min-max scaling.
//!
//! Flattening order is part of the wire contract: layer 0 weights
//! (row-major `[out × in]`), layer 0 bias, layer 1 weights, layer 1 bias, …

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, DenseLayer, Network, TrainObserver};
use crate::wire::{put_f32s, to_u32, ByteReader};

/// Structural description of a dense network; enough to rebuild one from a
/// flat weight vector.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelShape {
    layers: Vec<LayerSpec>,
    total_params: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerSpec {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
}

/// Stable fingerprint of a [`ModelShape`] (FNV-1a over the layer descriptors).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ShapeId(pub u64);

impl ModelShape {
    pub fn new(layers: Vec<LayerSpec>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Argument(
                "model shape needs at least one layer".into(),
            ));
        }
        for (i, w) in layers.windows(2).enumerate() {
            if w[0].outputs != w[1].inputs {
                return Err(Error::dim(
                    format!("layer {} input", i + 1),
                    w[0].outputs,
                    w[1].inputs,
                ));
            }
        }
        let total_params = layers
            .iter()
            .map(|l| (l.inputs * l.outputs + l.outputs) as u64)
            .sum();
        Ok(Self {
            layers,
            total_params,
        })
    }

    pub fn of(net: &Network) -> Self {
        let layers = net
            .layers()
            .iter()
            .map(|l| LayerSpec {
                inputs: l.inputs(),
                outputs: l.outputs(),
                activation: l.activation(),
            })
            .collect();
        Self::new(layers).expect("a valid network has a valid shape")
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn total_params(&self) -> u64 {
        self.total_params
    }

    pub fn param_len(&self) -> usize {
        self.total_params as usize
    }

    pub fn id(&self) -> ShapeId {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for l in &self.layers {
            eat(&(l.inputs as u64).to_le_bytes());
            eat(&(l.outputs as u64).to_le_bytes());
            eat(&[l.activation.tag()]);
        }
        ShapeId(h)
    }
}

/// One-dimensional snapshot of every parameter of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatWeights {
    values: Vec<f32>,
    shape_id: Option<ShapeId>,
}

impl FlatWeights {
    /// A vector not tied to any particular model shape.
    pub fn new(values: Vec<f32>) -> Self {
        Self {
            values,
            shape_id: None,
        }
    }

    pub fn with_shape(values: Vec<f32>, shape: ShapeId) -> Self {
        Self {
            values,
            shape_id: Some(shape),
        }
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn shape_id(&self) -> Option<ShapeId> {
        self.shape_id
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

pub fn flatten(net: &Network) -> FlatWeights {
    let mut values = Vec::with_capacity(net.param_count() as usize);
    for layer in net.layers() {
        values.extend_from_slice(layer.weights());
        values.extend_from_slice(layer.bias());
    }
    FlatWeights::with_shape(values, ModelShape::of(net).id())
}

/// Builds a fresh network of `shape` holding `flat`.
pub fn unflatten(shape: &ModelShape, flat: &FlatWeights) -> Result<Network> {
    check_len(shape.param_len(), flat.len())?;
    let mut off = 0;
    let mut layers = Vec::with_capacity(shape.layers.len());
    for spec in &shape.layers {
        let nw = spec.inputs * spec.outputs;
        let w = flat.values[off..off + nw].to_vec();
        off += nw;
        let b = flat.values[off..off + spec.outputs].to_vec();
        off += spec.outputs;
        layers.push(DenseLayer::new(
            spec.inputs,
            spec.outputs,
            w,
            b,
            spec.activation,
        )?);
    }
    Network::from_layers(layers, 0)
}

/// Overwrites the parameters of `net` in place.
pub fn load_into(net: &mut Network, flat: &FlatWeights) -> Result<()> {
    check_len(net.param_count() as usize, flat.len())?;
    let mut off = 0;
    for layer in net.layers_mut() {
        let nw = layer.weights().len();
        layer
            .weights_mut()
            .copy_from_slice(&flat.values[off..off + nw]);
        off += nw;
        let nb = layer.bias().len();
        layer
            .bias_mut()
            .copy_from_slice(&flat.values[off..off + nb]);
        off += nb;
    }
    Ok(())
}

pub(crate) fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::Codec { expected, actual });
    }
    Ok(())
}

/// Per-parameter minimum and maximum over a set of snapshots.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    min: Vec<f32>,
    max: Vec<f32>,
}

impl NormStats {
    pub fn new(min: Vec<f32>, max: Vec<f32>) -> Result<Self> {
        check_len(min.len(), max.len())?;
        if let Some(i) = min.iter().zip(&max).position(|(a, b)| !(a <= b)) {
            return Err(Error::Argument(format!(
                "min exceeds max at component {i}: {} > {}",
                min[i], max[i]
            )));
        }
        Ok(Self { min, max })
    }

    pub fn min(&self) -> &[f32] {
        &self.min
    }

    pub fn max(&self) -> &[f32] {
        &self.max
    }

    pub fn len(&self) -> usize {
        self.min.len()
    }

    pub fn is_empty(&self) -> bool {
        self.min.is_empty()
    }

    pub fn is_degenerate(&self, i: usize) -> bool {
        self.min[i] == self.max[i]
    }

    pub fn degenerate_count(&self) -> usize {
        (0..self.len()).filter(|&i| self.is_degenerate(i)).count()
    }

    pub(crate) fn write(&self, out: &mut Vec<u8>) {
        put_f32s(out, &self.min);
        put_f32s(out, &self.max);
    }

    pub(crate) fn read(r: &mut ByteReader<'_>, len: usize) -> Result<Self> {
        let min = r.f32_vec(len, "normalization minimum")?;
        let max = r.f32_vec(len, "normalization maximum")?;
        let at = r.offset();
        Self::new(min, max).map_err(|e| Error::Parse {
            offset: at,
            message: e.to_string(),
        })
    }
}

/// Maps each component into `[0, 1]` using its min-max range; out-of-range
/// values are clamped and degenerate components map to 0.5.
pub fn normalize(flat: &FlatWeights, stats: &NormStats) -> Result<FlatWeights> {
    check_len(stats.len(), flat.len())?;
    let values = flat
        .values
        .iter()
        .zip(stats.min.iter().zip(&stats.max))
        .map(|(&x, (&lo, &hi))| {
            if lo == hi {
                0.5
            } else {
                ((x - lo) / (hi - lo)).clamp(0.0, 1.0)
            }
        })
        .collect();
    Ok(FlatWeights {
        values,
        shape_id: flat.shape_id,
    })
}

/// Inverse of [`normalize`]; degenerate components return their constant.
pub fn denormalize(flat: &FlatWeights, stats: &NormStats) -> Result<FlatWeights> {
    check_len(stats.len(), flat.len())?;
    let values = flat
        .values
        .iter()
        .zip(stats.min.iter().zip(&stats.max))
        .map(|(&y, (&lo, &hi))| if lo == hi { lo } else { lo + y * (hi - lo) })
        .collect();
    Ok(FlatWeights {
        values,
        shape_id: flat.shape_id,
    })
}

/// How often snapshots are taken while training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotCadence {
    PerEpoch,
    PerNBatches(usize),
}

/// `S × P` matrix of weight snapshots.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightDataset {
    param_count: usize,
    shape_id: Option<ShapeId>,
    rows: Vec<f32>,
    cadence: SnapshotCadence,
    stats: Option<NormStats>,
}

pub const DATASET_MAGIC: &[u8; 4] = b"FWDS";
pub const DATASET_VERSION: u16 = 1;

impl WeightDataset {
    pub fn new(shape: &ModelShape, cadence: SnapshotCadence) -> Self {
        Self {
            param_count: shape.param_len(),
            shape_id: Some(shape.id()),
            rows: Vec::new(),
            cadence,
            stats: None,
        }
    }

    /// Builds a dataset directly from rows of equal length.
    pub fn from_rows(rows: Vec<Vec<f32>>) -> Result<Self> {
        let p = rows.first().map(|r| r.len()).unwrap_or(0);
        if p == 0 {
            return Err(Error::Argument("dataset rows must be non-empty".into()));
        }
        let mut flat = Vec::with_capacity(rows.len() * p);
        for r in &rows {
            check_len(p, r.len())?;
            flat.extend_from_slice(r);
        }
        Ok(Self {
            param_count: p,
            shape_id: None,
            rows: flat,
            cadence: SnapshotCadence::PerEpoch,
            stats: None,
        })
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    pub fn len(&self) -> usize {
        self.rows.len() / self.param_count
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.rows[i * self.param_count..(i + 1) * self.param_count]
    }

    pub fn snapshot(&self, i: usize) -> FlatWeights {
        FlatWeights {
            values: self.row(i).to_vec(),
            shape_id: self.shape_id,
        }
    }

    pub fn cadence(&self) -> SnapshotCadence {
        self.cadence
    }

    pub fn shape_id(&self) -> Option<ShapeId> {
        self.shape_id
    }

    pub fn stats(&self) -> Option<&NormStats> {
        self.stats.as_ref()
    }

    pub fn set_stats(&mut self, stats: NormStats) -> Result<()> {
        check_len(self.param_count, stats.len())?;
        self.stats = Some(stats);
        Ok(())
    }

    /// Reattaches a model shape, e.g. after loading from disk.
    pub fn bind_shape(&mut self, shape: &ModelShape) -> Result<()> {
        check_len(shape.param_len(), self.param_count)?;
        self.shape_id = Some(shape.id());
        Ok(())
    }

    pub fn push(&mut self, flat: &FlatWeights) -> Result<()> {
        check_len(self.param_count, flat.len())?;
        if let (Some(a), Some(b)) = (self.shape_id, flat.shape_id) {
            if a != b {
                return Err(Error::Argument(
                    "snapshot comes from a different model shape".into(),
                ));
            }
        }
        self.rows.extend_from_slice(&flat.values);
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(15 + (self.rows.len() + 2 * self.param_count) * 4);
        out.extend_from_slice(DATASET_MAGIC);
        out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
        out.extend_from_slice(&to_u32(self.param_count, "parameter count")?.to_le_bytes());
        out.extend_from_slice(&to_u32(self.len(), "snapshot count")?.to_le_bytes());
        out.push(self.stats.is_some() as u8);
        if let Some(stats) = &self.stats {
            stats.write(&mut out);
        }
        put_f32s(&mut out, &self.rows);
        Ok(out)
    }

    /// Parses an `FWDS` file. The result has no bound model shape and
    /// per-epoch cadence; see [`WeightDataset::bind_shape`].
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.magic(DATASET_MAGIC)?;
        r.version(DATASET_VERSION)?;
        let p = r.u32_le("parameter count")? as usize;
        let s = r.u32_le("snapshot count")? as usize;
        if p == 0 {
            return Err(r.error("parameter count must be positive"));
        }
        let at = r.offset();
        let stats = match r.u8("normalization flag")? {
            0 => None,
            1 => Some(NormStats::read(&mut r, p)?),
            other => {
                return Err(Error::Parse {
                    offset: at,
                    message: format!("bad normalization flag {other}"),
                })
            }
        };
        let n = s
            .checked_mul(p)
            .ok_or_else(|| r.error("dataset size overflows"))?;
        let rows = r.f32_vec(n, "snapshots")?;
        r.finish()?;
        Ok(Self {
            param_count: p,
            shape_id: None,
            rows,
            cadence: SnapshotCadence::PerEpoch,
            stats,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Appends `flatten(net)` as a new row.
pub fn append_snapshot(ds: &mut WeightDataset, net: &Network) -> Result<()> {
    if let Some(id) = ds.shape_id {
        if id != ModelShape::of(net).id() {
            return Err(Error::Codec {
                expected: ds.param_count,
                actual: net.param_count() as usize,
            });
        }
    }
    ds.push(&flatten(net))
}

/// Component-wise min/max over every snapshot.
pub fn fit_norm(ds: &WeightDataset) -> Result<NormStats> {
    if ds.is_empty() {
        return Err(Error::Argument(
            "cannot fit normalization on an empty dataset".into(),
        ));
    }
    let mut min = ds.row(0).to_vec();
    let mut max = min.clone();
    for s in 1..ds.len() {
        for ((lo, hi), &v) in min.iter_mut().zip(max.iter_mut()).zip(ds.row(s)) {
            *lo = lo.min(v);
            *hi = hi.max(v);
        }
    }
    NormStats::new(min, max)
}

/// Training observer that appends snapshots to a dataset at the dataset's
/// cadence.
pub struct SnapshotRecorder<'a> {
    dataset: &'a mut WeightDataset,
    batches_seen: usize,
}

impl<'a> SnapshotRecorder<'a> {
    pub fn new(dataset: &'a mut WeightDataset) -> Self {
        Self {
            dataset,
            batches_seen: 0,
        }
    }
}

impl TrainObserver for SnapshotRecorder<'_> {
    fn on_batch_end(&mut self, _epoch: usize, _batch: usize, net: &Network) -> Result<()> {
        self.batches_seen += 1;
        if let SnapshotCadence::PerNBatches(n) = self.dataset.cadence {
            if n > 0 && self.batches_seen.is_multiple_of(n) {
                append_snapshot(self.dataset, net)?;
            }
        }
        Ok(())
    }

    fn on_epoch_end(&mut self, _epoch: usize, net: &Network) -> Result<()> {
        if self.dataset.cadence == SnapshotCadence::PerEpoch {
            append_snapshot(self.dataset, net)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{train_observed, LossKind, Tensor, TrainConfig};
    use crate::rng::seeded_rng;
    use rand::Rng;

    fn mlp(sizes: &[usize], seed: u64) -> Network {
        let mut acts = vec![Activation::Tanh; sizes.len() - 2];
        acts.push(Activation::Softmax);
        Network::mlp(sizes, &acts, seed).unwrap()
    }

    #[test]
    fn flatten_order_is_weights_then_bias() {
        let layer = DenseLayer::new(1, 1, vec![2.0], vec![3.0], Activation::Identity).unwrap();
        let net = Network::from_layers(vec![layer], 0).unwrap();
        assert_eq!(flatten(&net).values(), &[2.0, 3.0]);
        let shape = ModelShape::of(&net);
        let back = unflatten(&shape, &FlatWeights::new(vec![2.0, 3.0])).unwrap();
        assert_eq!(back.layers()[0].weights(), &[2.0]);
        assert_eq!(back.layers()[0].bias(), &[3.0]);
    }

    #[test]
    fn mnist_sized_round_trip_and_off_by_one() {
        let net = mlp(&[784, 20, 10], 17);
        let flat = flatten(&net);
        assert_eq!(flat.len(), 15_910);
        let shape = ModelShape::of(&net);
        assert_eq!(shape.total_params(), 15_910);
        let back = unflatten(&shape, &flat).unwrap();
        assert_eq!(flatten(&back).values(), flat.values());

        let short = FlatWeights::new(flat.values()[..15_909].to_vec());
        match unflatten(&shape, &short) {
            Err(Error::Codec { expected, actual }) => {
                assert_eq!((expected, actual), (15_910, 15_909))
            }
            other => panic!("expected codec error, got {other:?}"),
        }
    }

    #[test]
    fn load_into_overwrites() {
        let mut a = mlp(&[3, 4, 2], 1);
        let b = mlp(&[3, 4, 2], 2);
        load_into(&mut a, &flatten(&b)).unwrap();
        assert_eq!(a.layers(), b.layers());
    }

    #[test]
    fn fit_norm_examples() {
        let ds = WeightDataset::from_rows(vec![vec![0.0, 1.0], vec![2.0, 3.0]]).unwrap();
        let s = fit_norm(&ds).unwrap();
        assert_eq!(s.min(), &[0.0, 1.0]);
        assert_eq!(s.max(), &[2.0, 3.0]);
        assert_eq!(s.degenerate_count(), 0);

        let one = WeightDataset::from_rows(vec![vec![0.5, -1.0, 7.0]]).unwrap();
        let s = fit_norm(&one).unwrap();
        assert_eq!(s.degenerate_count(), 3);
    }

    #[test]
    fn fit_norm_matches_brute_force() {
        let mut rng = seeded_rng(5);
        let rows: Vec<Vec<f32>> = (0..5)
            .map(|_| (0..7).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect();
        let s = fit_norm(&WeightDataset::from_rows(rows.clone()).unwrap()).unwrap();
        for c in 0..7 {
            let col: Vec<f32> = rows.iter().map(|r| r[c]).collect();
            let lo = col.iter().cloned().fold(f32::INFINITY, f32::min);
            let hi = col.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            assert_eq!((s.min()[c], s.max()[c]), (lo, hi));
        }
    }

    #[test]
    fn normalize_endpoints_and_degenerate() {
        let stats = NormStats::new(vec![-1.0, 0.0, 4.0], vec![1.0, 2.0, 4.0]).unwrap();
        let lo = normalize(&FlatWeights::new(vec![-1.0, 0.0, 4.0]), &stats).unwrap();
        assert_eq!(lo.values(), &[0.0, 0.0, 0.5]);
        let hi = normalize(&FlatWeights::new(vec![1.0, 2.0, 4.0]), &stats).unwrap();
        assert_eq!(hi.values(), &[1.0, 1.0, 0.5]);
        let out = normalize(&FlatWeights::new(vec![5.0, -9.0, 0.0]), &stats).unwrap();
        assert_eq!(out.values(), &[1.0, 0.0, 0.5]);

        let d = denormalize(&FlatWeights::new(vec![0.5; 3]), &stats).unwrap();
        assert_eq!(d.values()[2], 4.0);
        assert_eq!(
            denormalize(&FlatWeights::new(vec![0.0; 3]), &stats)
                .unwrap()
                .values(),
            &[-1.0, 0.0, 4.0]
        );
        assert_eq!(
            denormalize(&FlatWeights::new(vec![1.0; 3]), &stats)
                .unwrap()
                .values(),
            &[1.0, 2.0, 4.0]
        );
        assert!(normalize(&FlatWeights::new(vec![0.0; 2]), &stats).is_err());
    }

    #[test]
    fn append_snapshot_checks_shape() {
        let a = mlp(&[3, 4, 2], 1);
        let mut ds = WeightDataset::new(&ModelShape::of(&a), SnapshotCadence::PerEpoch);
        append_snapshot(&mut ds, &a).unwrap();
        assert_eq!(ds.len(), 1);
        let b = mlp(&[3, 5, 2], 1);
        assert!(matches!(
            append_snapshot(&mut ds, &b),
            Err(Error::Codec { .. })
        ));
    }

    fn toy_data() -> (Tensor, Tensor) {
        let x = Tensor::matrix(
            8,
            2,
            vec![
                0., 0., 0., 1., 1., 0., 1., 1., 0.1, 0.1, 0.1, 0.9, 0.9, 0.1, 0.9, 0.9,
            ],
        )
        .unwrap();
        let mut t = vec![0.0; 16];
        for r in 0..8 {
            t[r * 2 + (r % 2)] = 1.0;
        }
        (x, Tensor::matrix(8, 2, t).unwrap())
    }

    #[test]
    fn recorder_rows_match_epoch_end_state() {
        let mut net = mlp(&[2, 3, 2], 8);
        let (x, t) = toy_data();
        let cfg = TrainConfig {
            learning_rate: 0.2,
            batch_size: 2,
            epochs: 10,
            loss: LossKind::CrossEntropy,
            shuffle_seed: 1,
        };
        let mut ds = WeightDataset::new(&ModelShape::of(&net), SnapshotCadence::PerEpoch);
        train_observed(&mut net, &x, &t, &cfg, &mut SnapshotRecorder::new(&mut ds)).unwrap();
        assert_eq!(ds.len(), 10);
        assert_eq!(ds.row(9), flatten(&net).values());

        // Replaying epoch by epoch reproduces every row.
        let mut replay = mlp(&[2, 3, 2], 8);
        let mut rows = Vec::new();
        let mut hook = |_: usize, n: &Network| rows.push(flatten(n).into_values());
        crate::nn::train(&mut replay, &x, &t, &cfg, Some(&mut hook)).unwrap();
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(ds.row(i), &r[..]);
        }

        let mut per_batch =
            WeightDataset::new(&ModelShape::of(&net), SnapshotCadence::PerNBatches(2));
        let mut net = mlp(&[2, 3, 2], 8);
        train_observed(
            &mut net,
            &x,
            &t,
            &cfg,
            &mut SnapshotRecorder::new(&mut per_batch),
        )
        .unwrap();
        // 4 batches per epoch, one snapshot every 2 batches.
        assert_eq!(per_batch.len(), 20);
    }

    #[test]
    fn fwds_layout_and_round_trip() {
        let mut ds = WeightDataset::from_rows(vec![vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let plain = ds.to_bytes().unwrap();
        assert_eq!(&plain[..4], b"FWDS");
        assert_eq!(&plain[4..6], &[1, 0]);
        assert_eq!(&plain[6..10], &2u32.to_le_bytes());
        assert_eq!(&plain[10..14], &2u32.to_le_bytes());
        assert_eq!(plain[14], 0);
        assert_eq!(plain.len(), 15 + 16);

        ds.set_stats(fit_norm(&ds).unwrap()).unwrap();
        let bytes = ds.to_bytes().unwrap();
        assert_eq!(bytes[14], 1);
        assert_eq!(bytes.len(), 15 + 16 + 16);
        let back = WeightDataset::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(back.stats(), ds.stats());
        assert!(WeightDataset::from_bytes(&bytes[..bytes.len() - 2]).is_err());
    }
}
