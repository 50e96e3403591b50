//! Writes blobs as an IDX pair, reads them back, and exports CSV.
//!
//! cargo run --example idx_data -- [out_dir]

use std::path::PathBuf;

use reponet::data::{batches, load_idx, make_blobs, write_idx};

fn main() -> reponet::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/idx_data".into()));
    std::fs::create_dir_all(&dir).map_err(|e| reponet::Error::Io { path: dir.clone(), source: e })?;

    let mut blobs = make_blobs(3, 16, 50, 0.15, 0.5, 4)?;
    blobs.inputs.mapv_inplace(|x| (x + 0.5).clamp(0.0, 1.0));
    let (images, labels) = (dir.join("blobs-images-idx3-ubyte"), dir.join("blobs-labels-idx1-ubyte"));
    write_idx(&blobs, &images, &labels, 4, 4)?;

    let back = load_idx(&images, &labels)?;
    let worst = back
        .inputs
        .iter()
        .zip(&blobs.inputs)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!("{} samples, {} classes, input_dim {}", back.len(), back.num_classes, back.input_dim());
    println!("max quantization error {worst:.5} (bound {:.5})", 0.5 / 255.0);

    let sizes: Vec<usize> = batches(&back, 64, 0, 0)?.map(|b| b.len()).collect();
    println!("epoch 0 batch sizes {sizes:?}");

    back.export_csv(dir.join("blobs.csv"))?;
    println!("wrote {}", dir.display());
    Ok(())
}
