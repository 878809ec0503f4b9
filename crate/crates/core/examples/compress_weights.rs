//! Trains an autoencoder on weight snapshots, then compresses a weight
//! vector to a latent code and rebuilds it from the decoder shipment alone.
//!
//! `cargo run --release --example compress_weights`

use fedae::autoencoder::{
    build_ae, compression_ratio, encode, train_ae, AeConfig, DecoderShipment,
};
use fedae::codec::{normalize, ModelShape, SnapshotCadence, SnapshotRecorder, WeightDataset};
use fedae::data::gen_blobs;
use fedae::nn::{train_observed, Activation, LossKind, Network, TrainConfig};

fn main() -> fedae::Result<()> {
    let data = gen_blobs(400, 16, 4, 1.0, 7)?;
    let mut net = Network::mlp(&[16, 24, 4], &[Activation::Tanh, Activation::Softmax], 8)?;
    let cfg = TrainConfig {
        learning_rate: 0.02,
        batch_size: 16,
        epochs: 20,
        loss: LossKind::CrossEntropy,
        shuffle_seed: 9,
    };
    let mut ds = WeightDataset::new(&ModelShape::of(&net), SnapshotCadence::PerEpoch);
    train_observed(
        &mut net,
        &data.inputs,
        &data.targets,
        &cfg,
        &mut SnapshotRecorder::new(&mut ds),
    )?;

    let p = net.param_count();
    let mut ae_cfg = AeConfig::new(16);
    ae_cfg.train.epochs = 300;
    let mut ae = build_ae(p, &ae_cfg, 10)?;
    let h = train_ae(&mut ae, &ds)?;
    println!(
        "P = {p}, L = 16, compression ratio {}",
        compression_ratio(p, 16)
    );
    println!(
        "autoencoder: {} parameters, loss {:.3} -> {:.4}",
        ae.param_count(),
        h.initial_loss,
        h.final_loss
    );

    let w = ds.snapshot(ds.len() - 1);
    let z = encode(&ae, &normalize(&w, ae.stats().expect("trained"))?)?;
    let shipment = DecoderShipment::from_bytes(&ae.decoder_shipment()?.to_bytes()?)?;
    let rebuilt = shipment.reconstruct(&z.values)?;
    let err = w
        .values()
        .iter()
        .zip(rebuilt.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    println!("latent code: {:?}", z.values);
    println!("max |w - decode(encode(w))| = {err:.4}");
    Ok(())
}
