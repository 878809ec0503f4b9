//! The `fedae` command line: JSON experiment configs in, CSV and JSON
//! metrics out.
//!
//! Exit codes: 0 ok, 1 configuration, 2 I/O, 3 protocol, 4 threshold not met.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::autoencoder::{AeConfig, Codec, SymmetricAutoencoder};
use crate::codec::{ModelShape, WeightDataset};
use crate::data::{self, LabeledDataset};
use crate::error::{Error, Result};
use crate::fl::{self, Compression, FederatedConfig, PrepassReport, RoundRecord};
use crate::nn::{Activation, LossKind, Network, TrainConfig};
use crate::rng::derive_seed;
use crate::savings::{self, DecoderCount, DecoderSizeMode, SavingsScenario, SweepAxis};
use crate::validation::{replay_validation, Thresholds};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_PROTOCOL: i32 = 3;
pub const EXIT_THRESHOLD: i32 = 4;

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. }
        | Error::Argument(_)
        | Error::Dimension { .. }
        | Error::Infeasible(_) => EXIT_CONFIG,
        Error::Io(_) | Error::Parse { .. } => EXIT_IO,
        Error::Protocol(_)
        | Error::Codec { .. }
        | Error::Prepass { .. }
        | Error::Diverged(_)
        | Error::NonFinite { .. } => EXIT_PROTOCOL,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub prepass: PrepassConfig,
    pub federated: FederatedSection,
    #[serde(default)]
    pub validation: ValidationConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// Partitions converted to grayscale (RGB sources only).
    #[serde(default)]
    pub grayscale: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Blobs {
        n: usize,
        dim: usize,
        classes: usize,
        spread: f32,
    },
    ImageBlobs {
        n: usize,
        height: usize,
        width: usize,
        classes: usize,
        spread: f32,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        limit: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Widths from input to output.
    pub layers: Vec<usize>,
    /// One per weight layer; the last is usually `softmax`.
    pub activations: Vec<Activation>,
    pub learning_rate: f32,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrepassConfig {
    pub epochs: usize,
    #[serde(default)]
    pub ae: AeSection,
}

impl Default for PrepassConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            ae: AeSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AeSection {
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub learning_rate: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub holdout_fraction: f32,
}

impl Default for AeSection {
    fn default() -> Self {
        let d = AeConfig::new(32);
        Self {
            latent_dim: d.latent_dim,
            hidden: d.encoder_hidden,
            learning_rate: d.train.learning_rate,
            epochs: d.train.epochs,
            batch_size: d.train.batch_size,
            holdout_fraction: d.holdout_fraction,
        }
    }
}

impl AeSection {
    pub fn to_ae_config(&self) -> AeConfig {
        let mut cfg = AeConfig::new(self.latent_dim);
        cfg.encoder_hidden = self.hidden.clone();
        cfg.train.learning_rate = self.learning_rate;
        cfg.train.epochs = self.epochs;
        cfg.train.batch_size = self.batch_size;
        cfg.holdout_fraction = self.holdout_fraction;
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederatedSection {
    pub rounds: usize,
    pub local_epochs: usize,
    pub collaborators: usize,
    pub compression: Compression,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub retrain_every: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidationConfig {
    pub mean_accuracy_delta: f64,
    pub max_accuracy_delta: f64,
    /// Replay through the identity codec instead of the trained autoencoders.
    pub identity_codec: bool,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        let t = Thresholds::default();
        Self {
            mean_accuracy_delta: t.mean_accuracy_delta,
            max_accuracy_delta: t.max_accuracy_delta,
            identity_codec: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: "out".into() }
    }
}

impl ExperimentConfig {
    /// Parses and checks a config document; errors carry the path into it.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(path, e.into_inner().to_string())
        })?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    fn check(&self) -> Result<()> {
        let m = &self.model;
        if m.layers.len() < 2 {
            return Err(Error::config(
                "model.layers",
                "need at least an input and an output width",
            ));
        }
        if m.activations.len() != m.layers.len() - 1 {
            return Err(Error::config(
                "model.activations",
                format!(
                    "expected {} entries, got {}",
                    m.layers.len() - 1,
                    m.activations.len()
                ),
            ));
        }
        if m.layers.contains(&0) {
            return Err(Error::config("model.layers", "widths must be positive"));
        }
        if !(m.learning_rate > 0.0) {
            return Err(Error::config("model.learning_rate", "must be positive"));
        }
        if m.batch_size == 0 {
            return Err(Error::config("model.batch_size", "must be positive"));
        }
        if let (Some(d), Some(k)) = (self.input_dim(), self.classes()) {
            if m.layers[0] != d {
                return Err(Error::config(
                    "model.layers[0]",
                    format!("data has {d} input features, model expects {}", m.layers[0]),
                ));
            }
            if *m.layers.last().unwrap() != k {
                return Err(Error::config(
                    "model.layers",
                    format!(
                        "data has {k} classes, model outputs {}",
                        m.layers.last().unwrap()
                    ),
                ));
            }
        }
        let f = &self.federated;
        if f.collaborators == 0 {
            return Err(Error::config("federated.collaborators", "must be positive"));
        }
        if let Some(&g) = self.data.grayscale.iter().find(|&&g| g >= f.collaborators) {
            return Err(Error::config(
                "data.grayscale",
                format!(
                    "partition {g} does not exist with {} collaborators",
                    f.collaborators
                ),
            ));
        }
        if !self.data.grayscale.is_empty()
            && !matches!(self.data.source, DataSource::ImageBlobs { .. })
        {
            return Err(Error::config(
                "data.grayscale",
                "grayscale needs an RGB image source",
            ));
        }
        if self.prepass.epochs < 2 {
            return Err(Error::config("prepass.epochs", "need at least 2 epochs"));
        }
        let ae = &self.prepass.ae;
        if ae.epochs == 0 || ae.batch_size == 0 || !(ae.learning_rate > 0.0) {
            return Err(Error::config(
                "prepass.ae",
                "epochs, batch_size and learning_rate must be positive",
            ));
        }
        ae.to_ae_config()
            .layer_sizes(self.model_param_count())
            .map_err(|e| match e {
                Error::Config { path, message } => {
                    Error::config(format!("prepass.ae.{path}"), message)
                }
                other => other,
            })?;
        Ok(())
    }

    fn input_dim(&self) -> Option<usize> {
        match self.data.source {
            DataSource::Blobs { dim, .. } => Some(dim),
            DataSource::ImageBlobs { height, width, .. } => Some(height * width * 3),
            DataSource::Idx { .. } => None,
        }
    }

    fn classes(&self) -> Option<usize> {
        match self.data.source {
            DataSource::Blobs { classes, .. } | DataSource::ImageBlobs { classes, .. } => {
                Some(classes)
            }
            DataSource::Idx { .. } => None,
        }
    }

    fn model_param_count(&self) -> u64 {
        self.model
            .layers
            .windows(2)
            .map(|w| (w[0] * w[1] + w[1]) as u64)
            .sum()
    }

    /// The initial global model.
    pub fn build_model(&self) -> Result<Network> {
        Network::mlp(
            &self.model.layers,
            &self.model.activations,
            derive_seed(self.federated.seed, 2),
        )
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.model.learning_rate,
            batch_size: self.model.batch_size,
            epochs: 1,
            loss: LossKind::for_output(*self.model.activations.last().expect("checked non-empty")),
            shuffle_seed: 0,
        }
    }

    /// Generates (or loads) the data and splits it into one partition per
    /// collaborator, applying the grayscale transform where requested.
    pub fn build_partitions(&self) -> Result<Vec<LabeledDataset>> {
        let seed = self.federated.seed;
        let full = match &self.data.source {
            DataSource::Blobs {
                n,
                dim,
                classes,
                spread,
            } => data::gen_blobs(*n, *dim, *classes, *spread, derive_seed(seed, 0))?,
            DataSource::ImageBlobs {
                n,
                height,
                width,
                classes,
                spread,
            } => {
                data::gen_image_blobs(*n, *height, *width, *classes, *spread, derive_seed(seed, 0))?
            }
            DataSource::Idx {
                images,
                labels,
                limit,
            } => {
                let ds = data::load_idx(images, labels)?;
                match limit {
                    Some(l) if *l < ds.len() => ds.select(&(0..*l).collect::<Vec<_>>())?,
                    _ => ds,
                }
            }
        };
        let mut parts = data::partition(&full, self.federated.collaborators, derive_seed(seed, 1))?;
        for &g in &self.data.grayscale {
            parts[g] = data::to_grayscale(&parts[g])?;
        }
        Ok(parts)
    }
}

pub fn data_path(out: &Path, id: usize) -> PathBuf {
    out.join("data").join(format!("collab_{id}.fwda"))
}

pub fn weights_path(out: &Path, id: usize) -> PathBuf {
    out.join("prepass").join(format!("weights_{id}.fwds"))
}

/// Collaborator-side copy of the full autoencoder.
pub fn autoencoder_path(out: &Path, id: usize) -> PathBuf {
    out.join("prepass").join(format!("ae_{id}.bin"))
}

/// The decoder shipment held by the aggregator.
pub fn decoder_path(out: &Path, id: usize) -> PathBuf {
    out.join("prepass").join(format!("decoder_{id}.bin"))
}

pub fn federate_dir(out: &Path, compression: Compression) -> PathBuf {
    out.join(match compression {
        Compression::On => "federate-on",
        Compression::Off => "federate-off",
    })
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    write(
        path,
        serde_json::to_string_pretty(value).expect("json serializes") + "\n",
    )
}

fn load_partitions(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<LabeledDataset>> {
    (0..cfg.federated.collaborators)
        .map(|i| data::load_fwda(data_path(out, i)))
        .collect()
}

/// Writes one `FWDA` file per partition and returns the row counts.
pub fn cmd_gen_data(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<usize>> {
    let parts = cfg.build_partitions()?;
    let mut counts = Vec::with_capacity(parts.len());
    for (i, p) in parts.iter().enumerate() {
        write(&data_path(out, i), data::write_fwda(p)?)?;
        counts.push(p.len());
    }
    Ok(counts)
}

/// Runs the pre-pass on the generated data and writes per-collaborator
/// snapshot datasets, autoencoders, decoder shipments and the AE history.
pub fn cmd_prepass(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PrepassReport>> {
    let parts = load_partitions(cfg, out)?;
    let global = cfg.build_model()?;
    let (mut collabs, mut agg) =
        fl::federation(&global, parts, &cfg.train_config(), cfg.federated.seed);
    let reports = fl::run_prepass(
        &mut collabs,
        &mut agg,
        cfg.prepass.epochs,
        &cfg.prepass.ae.to_ae_config(),
    )?;

    for c in &collabs {
        let i = c.id as usize;
        let ds = c.snapshots.as_ref().expect("pre-pass stores snapshots");
        write(&weights_path(out, i), ds.to_bytes()?)?;
        let Some(Codec::Autoencoder(ae)) = &c.codec else {
            unreachable!("pre-pass installs an autoencoder")
        };
        write(&autoencoder_path(out, i), ae.to_bytes()?)?;
        write(&decoder_path(out, i), ae.decoder_shipment()?.to_bytes()?)?;
    }

    let mut csv =
        String::from("collab_id,epoch,loss,recreation_accuracy,holdout_recreation_accuracy\n");
    for r in &reports {
        let h = &r.autoencoder;
        for (e, loss) in h.loss.iter().enumerate() {
            let holdout = h
                .holdout_recreation_accuracy
                .get(e)
                .map(|v| v.to_string())
                .unwrap_or_default();
            csv += &format!(
                "{},{},{},{},{}\n",
                r.collaborator_id, e, loss, h.recreation_accuracy[e], holdout
            );
        }
    }
    write(&out.join("prepass").join("ae_history.csv"), csv)?;

    let summary: Vec<_> = reports
        .iter()
        .map(|r| {
            json!({
                "collaborator": r.collaborator_id,
                "classifier_accuracy": r.training.accuracy,
                "classifier_loss": r.training.loss,
                "ae_initial_loss": r.autoencoder.initial_loss,
                "ae_final_loss": r.autoencoder.final_loss,
                "ae_train_rows": r.autoencoder.train_rows,
                "ae_holdout_rows": r.autoencoder.holdout_rows,
                "decoder_shipment_bytes": r.shipment_bytes,
            })
        })
        .collect();
    write_json(
        &out.join("prepass").join("summary.json"),
        &json!({ "collaborators": summary }),
    )?;
    Ok(reports)
}

/// Runs the federated rounds and writes `rounds.csv` and `summary.json`.
pub fn cmd_federate(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<RoundRecord>> {
    let parts = load_partitions(cfg, out)?;
    let global = cfg.build_model()?;
    let (mut collabs, mut agg) =
        fl::federation(&global, parts, &cfg.train_config(), cfg.federated.seed);
    let f = &cfg.federated;

    if f.compression == Compression::On {
        for c in collabs.iter_mut() {
            let i = c.id as usize;
            let dec = decoder_path(out, i);
            if !dec.exists() {
                return Err(Error::Protocol(format!(
                    "missing decoder for collaborator {i} (expected {})",
                    dec.display()
                )));
            }
            agg.receive_shipment(c.id, &fs::read(dec)?)?;
            let ae = SymmetricAutoencoder::from_bytes(&fs::read(autoencoder_path(out, i))?)?;
            c.codec = Some(Codec::Autoencoder(ae));
            if f.retrain_every.is_some() {
                c.snapshots = Some(WeightDataset::load(weights_path(out, i))?);
            }
        }
    }

    let mut fed = FederatedConfig::new(f.rounds, f.local_epochs, f.compression);
    fed.retrain_every = f.retrain_every;
    let records = fl::run_federated(&mut collabs, &mut agg, &fed)?;

    let dir = federate_dir(out, f.compression);
    write(&dir.join("rounds.csv"), fl::rounds_csv(&records))?;
    write_json(
        &dir.join("summary.json"),
        &federate_summary(cfg, &agg, &records),
    )?;
    Ok(records)
}

fn federate_summary(
    cfg: &ExperimentConfig,
    agg: &fl::AggregatorState,
    records: &[RoundRecord],
) -> serde_json::Value {
    let p = agg.shape().total_params();
    let total = |f: fn(&RoundRecord) -> u64| records.iter().map(f).sum::<u64>();
    let payload = total(|r| r.uplink_payload_bytes);
    let updates: u64 = records.iter().map(|r| r.collaborators.len() as u64).sum();
    let raw = updates * p * 4;
    let ratio = if payload > 0 {
        raw as f64 / payload as f64
    } else {
        0.0
    };
    let last = records.last();
    let finals: Vec<_> = last
        .map(|r| {
            r.collaborators
                .iter()
                .map(|m| {
                    json!({
                        "collaborator": m.collaborator_id,
                        "accuracy": m.post_accuracy,
                        "loss": m.post_loss,
                        "local_accuracy": m.pre_accuracy,
                        "local_loss": m.pre_loss,
                    })
                })
                .collect()
        })
        .unwrap_or_default();
    json!({
        "compression": cfg.federated.compression,
        "rounds": records.len(),
        "local_epochs": cfg.federated.local_epochs,
        "param_count": p,
        "final": finals,
        "total_uplink_bytes": total(|r| r.uplink_bytes),
        "total_uplink_payload_bytes": payload,
        "total_downlink_bytes": total(|r| r.downlink_bytes),
        "total_decoder_bytes": total(|r| r.decoder_bytes),
        "achieved_compression_ratio": ratio,
    })
}

/// Replays every collaborator's snapshots and writes one CSV per
/// collaborator plus `summary.json`. Returns whether all thresholds hold.
pub fn cmd_validate(cfg: &ExperimentConfig, out: &Path) -> Result<bool> {
    let shape = ModelShape::of(&cfg.build_model()?);
    let v = &cfg.validation;
    let thresholds = Thresholds {
        mean_accuracy_delta: v.mean_accuracy_delta,
        max_accuracy_delta: v.max_accuracy_delta,
    };
    let dir = out.join("validation");
    let mut all = true;
    let mut entries = Vec::new();
    for i in 0..cfg.federated.collaborators {
        let ds = WeightDataset::load(weights_path(out, i))?;
        let eval = data::load_fwda(data_path(out, i))?;
        let codec = if v.identity_codec {
            Codec::Identity
        } else {
            Codec::Autoencoder(SymmetricAutoencoder::from_bytes(&fs::read(
                autoencoder_path(out, i),
            )?)?)
        };
        let report = replay_validation(&ds, &codec, &shape, &eval)?;
        let passed = report.meets(&thresholds);
        all &= passed;
        write(&dir.join(format!("collab_{i}.csv")), report.to_csv())?;
        entries.push(json!({ "collaborator": i, "summary": report.summary, "passed": passed }));
    }
    write_json(
        &dir.join("summary.json"),
        &json!({
            "identity_codec": v.identity_codec,
            "thresholds": thresholds,
            "collaborators": entries,
            "passed": all,
        }),
    )?;
    Ok(all)
}

#[derive(Debug, Parser)]
#[command(
    name = "fedae",
    version,
    about = "Federated learning with autoencoder-compressed uplink"
)]
struct Cli {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Base seed; overrides `federated.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate or import the data and write one FWDA file per collaborator.
    GenData,
    /// Local training, snapshot capture and autoencoder training.
    Prepass,
    /// Federated rounds with or without compression.
    Federate {
        /// Overrides `federated.compression`.
        #[arg(long)]
        compression: Option<OnOff>,
    },
    /// Replay pre-pass snapshots through the trained autoencoders.
    Validate {
        /// Use the identity codec instead of the trained autoencoders.
        #[arg(long)]
        identity_codec: bool,
    },
    /// Savings ratio and break-even analysis.
    Savings(SavingsArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Axis {
    Rounds,
    #[value(alias = "collaborators")]
    Collabs,
}

impl From<Axis> for SweepAxis {
    fn from(a: Axis) -> Self {
        match a {
            Axis::Rounds => SweepAxis::Rounds,
            Axis::Collabs => SweepAxis::Collabs,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SizeMode {
    HalfAe,
    Exact,
}

#[derive(Debug, Args)]
struct SavingsArgs {
    /// Uncompressed update size O (parameters).
    #[arg(long)]
    original: f64,
    /// Compressed update size C (latent floats).
    #[arg(long)]
    compressed: f64,
    /// Autoencoder size (parameters).
    #[arg(long)]
    ae: f64,
    #[arg(long, default_value_t = 1.0)]
    rounds: f64,
    #[arg(long, default_value_t = 1.0)]
    collabs: f64,
    /// Number of decoders shipped.
    #[arg(long, conflicts_with = "per_collab_decoders")]
    decoders: Option<f64>,
    /// One decoder per collaborator.
    #[arg(long)]
    per_collab_decoders: bool,
    /// How the decoder size is derived.
    #[arg(long, value_enum, default_value = "half-ae")]
    mode: SizeMode,
    /// Decoder size for `--mode exact`.
    #[arg(long, required_if_eq("mode", "exact"))]
    decoder_size: Option<f64>,
    /// Treat decoder shipment as free.
    #[arg(long, conflicts_with = "mode")]
    zero_cost: bool,
    /// Print the break-even point along an axis.
    #[arg(long, value_enum, conflicts_with = "sweep")]
    break_even: Option<Axis>,
    /// Print a CSV table of the savings ratio along an axis.
    #[arg(long, value_enum)]
    sweep: Option<Axis>,
    #[arg(long, default_value_t = 1.0)]
    from: f64,
    #[arg(long, default_value_t = 100.0)]
    to: f64,
    #[arg(long, default_value_t = 100)]
    steps: usize,
}

impl SavingsArgs {
    fn scenario(&self) -> Result<SavingsScenario> {
        let decoders = if self.per_collab_decoders {
            DecoderCount::PerCollaborator
        } else {
            DecoderCount::Fixed(self.decoders.unwrap_or(1.0))
        };
        let mode = match (self.zero_cost, self.mode) {
            (true, _) => DecoderSizeMode::Zero,
            (false, SizeMode::HalfAe) => DecoderSizeMode::HalfAe,
            (false, SizeMode::Exact) => DecoderSizeMode::Exact(self.decoder_size.unwrap_or(0.0)),
        };
        SavingsScenario::new(self.original, self.compressed, self.ae)?
            .with_rounds(self.rounds)?
            .with_collabs(self.collabs)?
            .with_decoders(decoders)?
            .with_mode(mode)
    }
}

/// Output of the `savings` subcommand: JSON, or CSV for a sweep.
pub fn savings_report(args: &[&str]) -> Result<String> {
    let cli = Cli::try_parse_from(
        std::iter::once("fedae")
            .chain(["savings"])
            .chain(args.iter().copied()),
    )
    .map_err(|e| Error::Argument(e.to_string()))?;
    match cli.command {
        Command::Savings(a) => cmd_savings(&a),
        _ => unreachable!(),
    }
}

fn cmd_savings(a: &SavingsArgs) -> Result<String> {
    let s = a.scenario()?;
    if let Some(axis) = a.sweep {
        let name = match axis {
            Axis::Rounds => "rounds",
            Axis::Collabs => "collabs",
        };
        let mut csv = format!("{name},savings_ratio\n");
        for (x, sr) in savings::sweep(&s, axis.into(), a.from, a.to, a.steps)? {
            csv += &format!("{x},{sr}\n");
        }
        return Ok(csv);
    }
    let mut v = json!({
        "original": s.original_size(),
        "compressed": s.compressed_size(),
        "rounds": s.rounds(),
        "collabs": s.collabs(),
        "decoders": s.decoder_count(),
        "decoder_size": s.decoder_size(),
        "decoder_cost": savings::decoder_cost(&s),
        "savings_ratio": savings::savings_ratio(&s),
    });
    match a.break_even {
        Some(Axis::Rounds) => v["break_even_rounds"] = json!(savings::break_even_rounds(&s)?),
        Some(Axis::Collabs) => {
            v["break_even_collaborators"] = json!(savings::break_even_collaborators(&s)?)
        }
        None => {}
    }
    Ok(serde_json::to_string_pretty(&v).expect("json serializes") + "\n")
}

fn resolve(cli: &Cli) -> Result<(ExperimentConfig, PathBuf)> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::config("--config", "this subcommand needs a config file"))?;
    let text = fs::read_to_string(path)
        .map_err(|e| Error::config("--config", format!("cannot read {}: {e}", path.display())))?;
    let mut cfg = ExperimentConfig::from_json(&text)?;
    if let Some(seed) = cli.seed {
        cfg.federated.seed = seed;
    }
    let out = cli.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    Ok((cfg, out))
}

fn dispatch(cli: Cli) -> Result<i32> {
    if let Command::Savings(a) = &cli.command {
        let text = cmd_savings(a)?;
        print!("{text}");
        if let Some(out) = &cli.out {
            let name = if a.sweep.is_some() {
                "sweep.csv"
            } else {
                "savings.json"
            };
            write(&out.join(name), &text)?;
        }
        return Ok(EXIT_OK);
    }
    let (mut cfg, out) = resolve(&cli)?;
    match cli.command {
        Command::GenData => {
            for (i, n) in cmd_gen_data(&cfg, &out)?.iter().enumerate() {
                println!("{}: {n} rows", data_path(&out, i).display());
            }
        }
        Command::Prepass => {
            for r in cmd_prepass(&cfg, &out)? {
                println!(
                    "collaborator {}: autoencoder loss {} -> {}, decoder {} bytes",
                    r.collaborator_id,
                    r.autoencoder.initial_loss,
                    r.autoencoder.final_loss,
                    r.shipment_bytes
                );
            }
        }
        Command::Federate { compression } => {
            if let Some(c) = compression {
                cfg.federated.compression = match c {
                    OnOff::On => Compression::On,
                    OnOff::Off => Compression::Off,
                };
            }
            let records = cmd_federate(&cfg, &out)?;
            if let Some(last) = records.last() {
                for m in &last.collaborators {
                    println!(
                        "collaborator {}: final accuracy {}",
                        m.collaborator_id, m.post_accuracy
                    );
                }
            }
            println!(
                "wrote {}",
                federate_dir(&out, cfg.federated.compression).display()
            );
        }
        Command::Validate { identity_codec } => {
            cfg.validation.identity_codec |= identity_codec;
            let passed = cmd_validate(&cfg, &out)?;
            println!("validation {}", if passed { "passed" } else { "failed" });
            if !passed {
                return Ok(EXIT_THRESHOLD);
            }
        }
        Command::Savings(_) => unreachable!(),
    }
    Ok(EXIT_OK)
}

/// Parses `args` (including the program name), runs the subcommand and
/// returns the process exit code. Errors are reported on stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let result = match cli.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(cli)),
            Err(e) => Err(Error::Argument(format!("cannot start {n} threads: {e}"))),
        },
        None => dispatch(cli),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
