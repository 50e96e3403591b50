//! Trains an MLP with a frozen simplex head on Gaussian blobs and prints how
//! tightly each class clusters around its weight.
//!
//! cargo run --release --example train_blobs -- [epochs] [seed]

use reponet::data::make_blobs;
use reponet::losses::{maximal_margin, LossKind, DEFAULT_KAPPA};
use reponet::metrics::geometry_report;
use reponet::network::{init_model, predict_features, train, ClassifierSpec, TrainConfig};
use reponet::polytope::make_simplex;

fn main() -> reponet::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().map_or(50, |s| s.parse().expect("epochs"));
    let seed = args.next().map_or(7, |s| s.parse().expect("seed"));

    let classes = 10;
    let data = make_blobs(classes, 20, 200, 1.0, 6.0, seed)?;
    let w = make_simplex(classes)?;
    let m = maximal_margin(&w);
    let model = init_model(20, &[64, w.dim()], ClassifierSpec::Fixed(w.clone()), seed)?;

    let mut config = TrainConfig::new(LossKind::AngularMargin { kappa: DEFAULT_KAPPA, m }, epochs, seed, vec![64, w.dim()]);
    config.batch_size = 64;
    config.lr = 0.002;
    let (model, log) = train(model, &data, &config)?;
    for e in log.iter().step_by(5).chain(log.last()) {
        println!("epoch {:>3}  loss {:>9.4}  acc {:.4}", e.epoch, e.mean_loss, e.train_accuracy);
    }

    let fwd = model.forward(data.inputs.view())?;
    let preds = predict_features(w.rows().view(), fwd.features.view());
    let report = geometry_report(&w, fwd.features.view(), &data.labels, &preds)?;
    println!("phi = {:.4} rad", w.phi());
    for c in &report.per_class {
        println!(
            "class {}: mean angle to weight {:.4} (std {:.4})",
            c.class,
            c.mean_angle_to_weight.unwrap_or(f64::NAN),
            c.angle_std.unwrap_or(f64::NAN)
        );
    }
    println!("min pairwise mean angle {:.4}", report.min_pairwise_mean_angle);
    println!("accuracy {:.4}", report.accuracy);
    Ok(())
}
