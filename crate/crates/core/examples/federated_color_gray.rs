//! Two collaborators, one with color and one with grayscale images, run
//! federated rounds with and without autoencoder compression.
//!
//! `cargo run --release --example federated_color_gray` uses the small
//! `quick.json` setup; pass `examples/configs/color_gray.json` for the full
//! experiment (about a minute in release mode).

use std::path::PathBuf;

use fedae::cli::{self, ExperimentConfig};
use fedae::fl::{Compression, RoundRecord};

fn main() -> fedae::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| {
            PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples/configs/quick.json")
        });
    let mut cfg = ExperimentConfig::load(&path)?;
    let out = std::env::temp_dir().join("fedae-color-gray");
    cli::cmd_gen_data(&cfg, &out)?;
    cli::cmd_prepass(&cfg, &out)?;

    let mut runs = Vec::new();
    for mode in [Compression::Off, Compression::On] {
        cfg.federated.compression = mode;
        runs.push((mode, cli::cmd_federate(&cfg, &out)?));
    }
    for (mode, records) in &runs {
        let last: &RoundRecord = records.last().expect("at least one round");
        let payload: u64 = records.iter().map(|r| r.uplink_payload_bytes).sum();
        let accs: Vec<String> = last
            .collaborators
            .iter()
            .map(|m| format!("{:.3}", m.post_accuracy))
            .collect();
        println!(
            "{mode:?}: final accuracy [{}], uplink payload {payload} bytes",
            accs.join(", ")
        );
    }
    println!("artifacts in {}", out.display());
    Ok(())
}
