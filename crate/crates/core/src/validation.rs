//! Replay of stored weight snapshots through a codec.
//!
//! Every snapshot and its reconstruction are loaded into a frozen copy of the
//! model and evaluated on the same data, giving an original and a predicted
//! loss/accuracy curve over the snapshot sequence.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autoencoder::Codec;
use crate::codec::{check_len, unflatten, ModelShape, WeightDataset};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::evaluate;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplayRow {
    pub epoch: usize,
    pub original_loss: f32,
    pub original_accuracy: f32,
    pub predicted_loss: f32,
    pub predicted_accuracy: f32,
}

impl ReplayRow {
    pub fn accuracy_delta(&self) -> f32 {
        (self.original_accuracy - self.predicted_accuracy).abs()
    }

    pub fn loss_delta(&self) -> f32 {
        (self.original_loss - self.predicted_loss).abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplaySummary {
    pub snapshots: usize,
    pub max_accuracy_delta: f64,
    pub mean_accuracy_delta: f64,
    pub max_loss_delta: f64,
    pub mean_loss_delta: f64,
}

/// Pass/fail bars on the accuracy deltas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    pub mean_accuracy_delta: f64,
    pub max_accuracy_delta: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            mean_accuracy_delta: 0.05,
            max_accuracy_delta: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub rows: Vec<ReplayRow>,
    pub summary: ReplaySummary,
}

impl ValidationReport {
    pub fn meets(&self, t: &Thresholds) -> bool {
        self.summary.mean_accuracy_delta <= t.mean_accuracy_delta
            && self.summary.max_accuracy_delta <= t.max_accuracy_delta
    }

    /// `epoch,orig_loss,orig_acc,pred_loss,pred_acc`, one line per snapshot.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,orig_loss,orig_acc,pred_loss,pred_acc\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.epoch,
                r.original_loss,
                r.original_accuracy,
                r.predicted_loss,
                r.predicted_accuracy
            );
        }
        out
    }
}

fn summarize(rows: &[ReplayRow]) -> ReplaySummary {
    let n = rows.len().max(1) as f64;
    let acc = rows.iter().map(|r| f64::from(r.accuracy_delta()));
    let loss = rows.iter().map(|r| f64::from(r.loss_delta()));
    ReplaySummary {
        snapshots: rows.len(),
        max_accuracy_delta: acc.clone().fold(0.0, f64::max),
        mean_accuracy_delta: acc.sum::<f64>() / n,
        max_loss_delta: loss.clone().fold(0.0, f64::max),
        mean_loss_delta: loss.sum::<f64>() / n,
    }
}

/// Evaluates every snapshot in `ds` and its round trip through `codec` on
/// `eval`. Nothing is trained and no input is modified.
pub fn replay_validation(
    ds: &WeightDataset,
    codec: &Codec,
    shape: &ModelShape,
    eval: &LabeledDataset,
) -> Result<ValidationReport> {
    check_len(shape.param_len(), ds.param_count())?;
    if let Some(id) = ds.shape_id() {
        if id != shape.id() {
            return Err(Error::Codec {
                expected: shape.param_len(),
                actual: ds.param_count(),
            });
        }
    }
    let rows = (0..ds.len())
        .into_par_iter()
        .map(|i| {
            let original = ds.snapshot(i);
            let predicted = codec.round_trip(&original)?;
            let (original_loss, original_accuracy) =
                evaluate(&unflatten(shape, &original)?, &eval.inputs, &eval.targets)?;
            let (predicted_loss, predicted_accuracy) =
                evaluate(&unflatten(shape, &predicted)?, &eval.inputs, &eval.targets)?;
            Ok(ReplayRow {
                epoch: i,
                original_loss,
                original_accuracy,
                predicted_loss,
                predicted_accuracy,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize(&rows);
    Ok(ValidationReport { rows, summary })
}
