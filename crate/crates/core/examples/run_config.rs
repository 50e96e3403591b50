//! Drives a full run from a JSON config, the same path `reponet train` takes,
//! then evaluates the checkpoint on fresh blobs.
//!
//! cargo run --release --example run_config -- [out_dir]

use std::path::PathBuf;

use reponet::cli::{cmd_eval, cmd_train, DatasetSpec, CHECKPOINT_FILE};

const CONFIG: &str = r#"{
  "seed": 3,
  "epochs": 25,
  "batch_size": 64,
  "lr": 0.002,
  "hidden_widths": [32, 5],
  "dataset": {"type": "blobs", "classes": 10, "dim": 16, "per_class": 100, "spread": 1.0, "separation": 6.0},
  "classifier": {"kind": "orthoplex", "classes": 10},
  "loss": {"kind": "angular_margin", "m": "max"},
  "output_dir": "run"
}"#;

fn main() -> reponet::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/run_config".into()));
    std::fs::create_dir_all(&dir).map_err(|e| reponet::Error::Io { path: dir.clone(), source: e })?;
    let config = dir.join("config.json");
    std::fs::write(&config, CONFIG).map_err(|e| reponet::Error::Io { path: config.clone(), source: e })?;

    let mut stdout = std::io::stdout();
    let outcome = cmd_train(&config, None, &mut stdout)?;
    println!("resolved loss {:?}", outcome.run.train.loss);

    let fresh = DatasetSpec::Blobs {
        classes: 10,
        dim: 16,
        per_class: 50,
        spread: 1.0,
        separation: 6.0,
        seed: Some(99),
    };
    // same means, new draws: the blob centres depend only on the geometry
    cmd_eval(&outcome.run.output_dir.join(CHECKPOINT_FILE), &fresh, None, &mut stdout)?;
    Ok(())
}
