//! Trains on 3-D blobs with a frozen cube head (K=8, d=3) and exports raw
//! and unit-normalized features for pairwise scatter plots.
//!
//! cargo run --release --example feature_scatter -- [out_dir]

use std::path::PathBuf;

use reponet::data::make_blobs;
use reponet::losses::{maximal_margin, LossKind, DEFAULT_KAPPA};
use reponet::metrics::{export_scatter, geometry_report};
use reponet::network::{init_model, predict_features, train, ClassifierSpec, TrainConfig};
use reponet::polytope::{make_weights, PolytopeKind};

fn main() -> reponet::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/feature_scatter".into()));
    std::fs::create_dir_all(&dir).map_err(|e| reponet::Error::Io { path: dir.clone(), source: e })?;

    let w = make_weights(PolytopeKind::Cube, 8)?;
    let data = make_blobs(8, 12, 150, 1.0, 6.0, 2)?;
    let hidden = vec![48, w.dim()];
    let model = init_model(12, &hidden, ClassifierSpec::Fixed(w.clone()), 2)?;
    let loss = LossKind::AngularMargin {
        kappa: DEFAULT_KAPPA,
        m: maximal_margin(&w),
    };
    let mut config = TrainConfig::new(loss, 40, 2, hidden);
    config.batch_size = 64;
    config.lr = 0.002;
    let (model, _) = train(model, &data, &config)?;

    let fwd = model.forward(data.inputs.view())?;
    let preds = predict_features(w.rows().view(), fwd.features.view());
    let report = geometry_report(&w, fwd.features.view(), &data.labels, &preds)?;
    export_scatter(fwd.features.view(), &data.labels, false, dir.join("features.csv"))?;
    export_scatter(fwd.features.view(), &data.labels, true, dir.join("features_normalized.csv"))?;
    std::fs::write(dir.join("report.json"), report.to_json()?)
        .map_err(|e| reponet::Error::Io { path: dir.join("report.json"), source: e })?;

    println!("accuracy {:.4}", report.accuracy);
    println!(
        "max mean angle to weight {:.4}, min pairwise {:.4}, phi {:.4}",
        report.max_mean_angle_to_weight().unwrap_or(f64::NAN),
        report.min_pairwise_mean_angle,
        w.phi()
    );
    println!("wrote {}", dir.display());
    Ok(())
}
