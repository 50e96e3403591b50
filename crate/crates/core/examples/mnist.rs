//! Trains a 784-256-d MLP with each fixed polytope head on an MNIST subset
//! and reports test accuracy.
//!
//! cargo run --release --example mnist -- [mnist_dir] [train_limit] [epochs] [lr] [batch] [seed]
//!
//! The directory must hold the four uncompressed IDX files
//! (`train-images-idx3-ubyte`, `train-labels-idx1-ubyte`,
//! `t10k-images-idx3-ubyte`, `t10k-labels-idx1-ubyte`).

use std::path::PathBuf;
use std::time::Instant;

use reponet::data::{load_idx, load_idx_with, IdxOptions};
use reponet::losses::{maximal_margin, LossKind, DEFAULT_KAPPA};
use reponet::metrics::accuracy;
use reponet::network::{init_model, train, ClassifierSpec, TrainConfig};
use reponet::polytope::{make_weights, PolytopeKind};

fn main() -> reponet::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "data/mnist".into()));
    let limit = args.next().map_or(10_000, |s| s.parse().expect("train_limit"));
    let epochs = args.next().map_or(10, |s| s.parse().expect("epochs"));
    let lr = args.next().map_or(0.001, |s| s.parse().expect("lr"));
    let bs = args.next().map_or(16, |s| s.parse().expect("batch"));
    let seed = args.next().map_or(1, |s| s.parse().expect("seed"));

    let train_set = load_idx_with(
        dir.join("train-images-idx3-ubyte"),
        dir.join("train-labels-idx1-ubyte"),
        IdxOptions {
            emnist: false,
            limit: Some(limit),
        },
    )?;
    let test_set = load_idx(dir.join("t10k-images-idx3-ubyte"), dir.join("t10k-labels-idx1-ubyte"))?;
    println!("{} training / {} test samples", train_set.len(), test_set.len());

    for kind in PolytopeKind::ALL {
        let started = Instant::now();
        let w = make_weights(kind, 10)?;
        let hidden = vec![256, w.dim()];
        let model = init_model(784, &hidden, ClassifierSpec::Fixed(w.clone()), seed)?;
        let loss = LossKind::AngularMargin {
            kappa: DEFAULT_KAPPA,
            m: maximal_margin(&w),
        };
        let mut config = TrainConfig::new(loss, epochs, seed, hidden);
        config.lr = lr;
        config.batch_size = bs;
        let (model, log) = train(model, &train_set, &config)?;
        let acc = accuracy(&model.predict(test_set.inputs.view())?, &test_set.labels)?;
        println!(
            "{kind:<9} d={} m={:.4}  train acc {:.4}  test acc {:.4}  ({:.1}s)",
            w.dim(),
            w.phi(),
            log.last().map_or(0.0, |e| e.train_accuracy),
            acc,
            started.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
