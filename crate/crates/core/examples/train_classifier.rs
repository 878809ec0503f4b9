//! Trains a small MLP on synthetic blobs and saves an `FWCK` checkpoint.
//!
//! `cargo run --release --example train_classifier`

use fedae::data::gen_blobs;
use fedae::nn::{evaluate, train, Activation, LossKind, Network, TrainConfig};

fn main() -> fedae::Result<()> {
    let data = gen_blobs(600, 8, 3, 0.8, 1)?;
    let mut net = Network::mlp(&[8, 16, 3], &[Activation::Tanh, Activation::Softmax], 2)?;
    let cfg = TrainConfig {
        learning_rate: 0.05,
        batch_size: 16,
        epochs: 15,
        loss: LossKind::CrossEntropy,
        shuffle_seed: 3,
    };
    let (loss0, acc0) = evaluate(&net, &data.inputs, &data.targets)?;
    let history = train(&mut net, &data.inputs, &data.targets, &cfg, None)?;
    for (e, (l, a)) in history.loss.iter().zip(&history.accuracy).enumerate() {
        println!("epoch {e:>2}: loss {l:.4} accuracy {a:.3}");
    }
    let (loss, acc) = evaluate(&net, &data.inputs, &data.targets)?;
    println!("before: loss {loss0:.4} accuracy {acc0:.3}");
    println!("after:  loss {loss:.4} accuracy {acc:.3}");

    let path = std::env::temp_dir().join("fedae-classifier.fwck");
    net.save(&path)?;
    let back = Network::load(&path)?;
    assert_eq!(back.layers(), net.layers());
    println!(
        "checkpoint: {} ({} parameters)",
        path.display(),
        net.param_count()
    );
    Ok(())
}
