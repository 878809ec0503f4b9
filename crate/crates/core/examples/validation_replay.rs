//! Replays every pre-pass snapshot through a trained autoencoder and compares
//! the accuracy of the original and reconstructed weights, next to an
//! untrained control.
//!
//! `cargo run --release --example validation_replay`

use std::path::Path;

use fedae::autoencoder::{build_ae, Codec, SymmetricAutoencoder};
use fedae::cli::{self, ExperimentConfig};
use fedae::codec::{fit_norm, ModelShape, WeightDataset};
use fedae::data;
use fedae::validation::{replay_validation, Thresholds};

fn main() -> fedae::Result<()> {
    let cfg = ExperimentConfig::load(
        Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/configs/blobs_replay.json"),
    )?;
    let out = std::env::temp_dir().join("fedae-validation-replay");
    cli::cmd_gen_data(&cfg, &out)?;
    cli::cmd_prepass(&cfg, &out)?;

    let shape = ModelShape::of(&cfg.build_model()?);
    let ds = WeightDataset::load(cli::weights_path(&out, 0))?;
    let eval = data::load_fwda(cli::data_path(&out, 0))?;
    let ae = SymmetricAutoencoder::from_bytes(&std::fs::read(cli::autoencoder_path(&out, 0))?)?;
    let trained = replay_validation(&ds, &Codec::Autoencoder(ae), &shape, &eval)?;

    let mut control = build_ae(shape.total_params(), &cfg.prepass.ae.to_ae_config(), 1)?;
    control.set_stats(fit_norm(&ds)?)?;
    let untrained = replay_validation(&ds, &Codec::Autoencoder(control), &shape, &eval)?;

    print!("{}", trained.to_csv());
    let t = Thresholds::default();
    for (name, r) in [("trained", &trained), ("untrained", &untrained)] {
        println!(
            "{name:>9}: mean |dacc| {:.4}, max |dacc| {:.4}, meets thresholds: {}",
            r.summary.mean_accuracy_delta,
            r.summary.max_accuracy_delta,
            r.meets(&t)
        );
    }
    Ok(())
}
