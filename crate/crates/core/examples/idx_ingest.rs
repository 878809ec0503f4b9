//! Reads an IDX image/label pair (the MNIST file layout), splits it between
//! collaborators and stores each part as an `FWDA` file.
//!
//! `cargo run --example idx_ingest [images.idx labels.idx]`. Without
//! arguments a small IDX pair is written to a temporary directory first.

use std::path::PathBuf;

use fedae::data::{load_fwda, load_idx, partition, save_fwda};

fn synthetic_idx(dir: &std::path::Path) -> std::io::Result<(PathBuf, PathBuf)> {
    let (n, rows, cols) = (12u32, 4u32, 4u32);
    let mut images = Vec::new();
    for v in [0x0803u32, n, rows, cols] {
        images.extend(v.to_be_bytes());
    }
    images.extend((0..n * rows * cols).map(|i| (i * 7 % 256) as u8));
    let mut labels = Vec::new();
    for v in [0x0801u32, n] {
        labels.extend(v.to_be_bytes());
    }
    labels.extend((0..n).map(|i| (i % 3) as u8));
    let (ip, lp) = (dir.join("images.idx"), dir.join("labels.idx"));
    std::fs::write(&ip, images)?;
    std::fs::write(&lp, labels)?;
    Ok((ip, lp))
}

fn main() -> fedae::Result<()> {
    let dir = std::env::temp_dir().join("fedae-idx");
    std::fs::create_dir_all(&dir)?;
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (images, labels) = match args.as_slice() {
        [i, l] => (PathBuf::from(i), PathBuf::from(l)),
        _ => synthetic_idx(&dir)?,
    };

    let ds = load_idx(&images, &labels)?;
    println!(
        "{} images of {} pixels, {} classes",
        ds.len(),
        ds.input_dim(),
        ds.classes()
    );
    for (i, part) in partition(&ds, 3, 0)?.iter().enumerate() {
        let path = dir.join(format!("collab_{i}.fwda"));
        save_fwda(part, &path)?;
        let back = load_fwda(&path)?;
        assert_eq!(back.inputs, part.inputs);
        println!("{}: {} rows", path.display(), back.len());
    }
    Ok(())
}
