//! Savings ratio of autoencoder compression against the one-off cost of
//! shipping decoders, plus break-even points and sweep tables.
//!
//! All sizes are parameter counts, so the ratio is dimensionless:
//!
//! ```text
//! SR   = (O · R · N) / (C · R · N + Cost)
//! Cost = decoder size · D       (decoder size = AE size / 2 by default)
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the size of one decoder is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderSizeMode {
    /// Half the autoencoder's parameter count.
    HalfAe,
    /// An exact decoder parameter count.
    Exact(f64),
    /// Decoder shipment treated as free.
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderCount {
    Fixed(f64),
    /// One decoder per collaborator (`D == N`).
    PerCollaborator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavingsScenario {
    original_size: f64,
    compressed_size: f64,
    comm_rounds: f64,
    collabs: f64,
    ae_size: f64,
    decoders: DecoderCount,
    mode: DecoderSizeMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Rounds,
    Collabs,
}

fn positive(name: &str, v: f64, min: f64) -> Result<f64> {
    if !v.is_finite() || v < min {
        return Err(Error::Argument(format!("{name} must be >= {min}, got {v}")));
    }
    Ok(v)
}

impl SavingsScenario {
    /// One round, one collaborator, one decoder, half-AE decoder size.
    pub fn new(original_size: f64, compressed_size: f64, ae_size: f64) -> Result<Self> {
        positive("compressed size", compressed_size, 1.0)?;
        positive("original size", original_size, compressed_size)?;
        if !(ae_size > 0.0 && ae_size.is_finite()) {
            return Err(Error::Argument(format!(
                "autoencoder size must be positive, got {ae_size}"
            )));
        }
        Ok(Self {
            original_size,
            compressed_size,
            comm_rounds: 1.0,
            collabs: 1.0,
            ae_size,
            decoders: DecoderCount::Fixed(1.0),
            mode: DecoderSizeMode::HalfAe,
        })
    }

    pub fn with_rounds(mut self, rounds: f64) -> Result<Self> {
        self.comm_rounds = positive("rounds", rounds, 1.0)?;
        Ok(self)
    }

    pub fn with_collabs(mut self, collabs: f64) -> Result<Self> {
        self.collabs = positive("collaborators", collabs, 1.0)?;
        Ok(self)
    }

    pub fn with_decoders(mut self, decoders: DecoderCount) -> Result<Self> {
        if let DecoderCount::Fixed(d) = decoders {
            positive("decoder count", d, 1.0)?;
        }
        self.decoders = decoders;
        Ok(self)
    }

    pub fn with_mode(mut self, mode: DecoderSizeMode) -> Result<Self> {
        if let DecoderSizeMode::Exact(s) = mode {
            positive("decoder size", s, f64::MIN_POSITIVE)?;
        }
        self.mode = mode;
        Ok(self)
    }

    pub fn original_size(&self) -> f64 {
        self.original_size
    }

    pub fn compressed_size(&self) -> f64 {
        self.compressed_size
    }

    pub fn rounds(&self) -> f64 {
        self.comm_rounds
    }

    pub fn collabs(&self) -> f64 {
        self.collabs
    }

    pub fn decoder_count(&self) -> f64 {
        match self.decoders {
            DecoderCount::Fixed(d) => d,
            DecoderCount::PerCollaborator => self.collabs,
        }
    }

    pub fn decoder_size(&self) -> f64 {
        match self.mode {
            DecoderSizeMode::HalfAe => self.ae_size / 2.0,
            DecoderSizeMode::Exact(s) => s,
            DecoderSizeMode::Zero => 0.0,
        }
    }

    fn with_axis(&self, axis: SweepAxis, v: f64) -> Self {
        let mut s = self.clone();
        match axis {
            SweepAxis::Rounds => s.comm_rounds = v,
            SweepAxis::Collabs => s.collabs = v,
        }
        s
    }
}

/// Total one-off cost of shipping decoders.
pub fn decoder_cost(s: &SavingsScenario) -> f64 {
    s.decoder_size() * s.decoder_count()
}

pub fn savings_ratio(s: &SavingsScenario) -> f64 {
    let traffic = s.comm_rounds * s.collabs;
    (s.original_size * traffic) / (s.compressed_size * traffic + decoder_cost(s))
}

fn per_update_saving(s: &SavingsScenario) -> Result<f64> {
    let saved = s.original_size - s.compressed_size;
    if saved <= 0.0 {
        return Err(Error::Infeasible(format!(
            "no break-even: original size {} does not exceed compressed size {}",
            s.original_size, s.compressed_size
        )));
    }
    Ok(saved)
}

/// Rounds at which the savings ratio reaches 1 for the scenario's
/// collaborator count: `Cost / (N · (O − C))`. The scenario's own round
/// count is ignored.
pub fn break_even_rounds(s: &SavingsScenario) -> Result<f64> {
    Ok(decoder_cost(s) / (s.collabs * per_update_saving(s)?))
}

/// Collaborators at which the savings ratio reaches 1 with a fixed decoder
/// count: `Cost / (R · (O − C))`. The scenario's own collaborator count is
/// ignored.
pub fn break_even_collaborators(s: &SavingsScenario) -> Result<f64> {
    if s.decoders == DecoderCount::PerCollaborator {
        return Err(Error::Argument(
            "with one decoder per collaborator the break-even does not depend on the collaborator count".into(),
        ));
    }
    Ok(decoder_cost(s) / (s.comm_rounds * per_update_saving(s)?))
}

/// `steps` evenly spaced points over `[from, to]` along `axis`, with the
/// savings ratio at each.
pub fn sweep(
    s: &SavingsScenario,
    axis: SweepAxis,
    from: f64,
    to: f64,
    steps: usize,
) -> Result<Vec<(f64, f64)>> {
    positive("sweep start", from, 1.0)?;
    positive("sweep end", to, from)?;
    if steps == 0 {
        return Err(Error::Argument("sweep needs at least one step".into()));
    }
    Ok((0..steps)
        .map(|i| {
            let v = if steps == 1 {
                from
            } else {
                from + (to - from) * i as f64 / (steps - 1) as f64
            };
            (v, savings_ratio(&s.with_axis(axis, v)))
        })
        .collect())
}
