//! Records weight snapshots during training into an `FWDS` dataset, once per
//! epoch and once every few batches.
//!
//! `cargo run --release --example weight_snapshots`

use fedae::codec::{
    fit_norm, flatten, unflatten, ModelShape, SnapshotCadence, SnapshotRecorder, WeightDataset,
};
use fedae::data::gen_blobs;
use fedae::nn::{train_observed, Activation, LossKind, Network, TrainConfig};

fn main() -> fedae::Result<()> {
    let data = gen_blobs(320, 6, 3, 0.6, 4)?;
    let cfg = TrainConfig {
        learning_rate: 0.05,
        batch_size: 16,
        epochs: 8,
        loss: LossKind::CrossEntropy,
        shuffle_seed: 5,
    };

    for cadence in [SnapshotCadence::PerEpoch, SnapshotCadence::PerNBatches(5)] {
        let mut net = Network::mlp(&[6, 10, 3], &[Activation::Tanh, Activation::Softmax], 6)?;
        let shape = ModelShape::of(&net);
        let mut ds = WeightDataset::new(&shape, cadence);
        train_observed(
            &mut net,
            &data.inputs,
            &data.targets,
            &cfg,
            &mut SnapshotRecorder::new(&mut ds),
        )?;
        ds.set_stats(fit_norm(&ds)?)?;

        let last = ds.snapshot(ds.len() - 1);
        assert_eq!(last.values(), flatten(&net).values());
        assert_eq!(unflatten(&shape, &last)?.layers(), net.layers());

        let stats = ds.stats().expect("stats were set");
        let bytes = ds.to_bytes()?;
        println!(
            "{cadence:?}: {} snapshots x {} parameters, {} constant components, {} bytes",
            ds.len(),
            ds.param_count(),
            stats.degenerate_count(),
            bytes.len()
        );
        // The file keeps rows and statistics; the shape is bound again on load.
        let mut back = WeightDataset::from_bytes(&bytes)?;
        back.bind_shape(&shape)?;
        assert_eq!(back.snapshot(0), ds.snapshot(0));
        assert_eq!(back.stats(), ds.stats());
    }
    Ok(())
}
