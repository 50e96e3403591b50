use std::f64::consts::PI;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reponet::data::make_blobs;
use reponet::losses::{grad_check, maximal_margin, LossKind};
use reponet::network::{init_model, train, ClassifierSpec, TrainConfig};
use reponet::polytope::{angle_between, make_weights, PolytopeKind};

#[test]
fn feature_gradients_hold_over_many_seeds() {
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kind = PolytopeKind::ALL[seed as usize % 3];
        let k = rng.random_range(3..=20);
        let w = make_weights(kind, k).unwrap();
        let m = maximal_margin(&w).min(3.0);
        let labels: Vec<usize> = (0..5).map(|_| rng.random_range(0..k)).collect();
        let mut f = Array2::zeros((5, w.dim()));
        for (n, &y) in labels.iter().enumerate() {
            loop {
                let v: Array1<f64> = Array1::from_shape_simple_fn(w.dim(), || rng.random_range(-1.0..1.0));
                let norm = v.dot(&v).sqrt();
                let theta = angle_between(v.view(), w.row(y));
                if norm > 1e-3 && theta >= 0.05 && (theta - (PI - m)).abs() >= 0.05 {
                    f.row_mut(n).assign(&(v * (rng.random_range(0.5..2.0) / norm)));
                    break;
                }
            }
        }
        for loss in [
            LossKind::PlainCe,
            LossKind::FixedSoftmax,
            LossKind::NormScaled { kappa: 30.0 },
            LossKind::AngularMargin { kappa: 30.0, m },
        ] {
            let err = grad_check(loss, &w, f.view(), &labels, 1e-5).unwrap();
            assert!(err < 1e-5, "{} seed {seed}: {err:e}", loss.name());
        }
    }
}

#[test]
fn default_config_loss_falls() {
    let data = make_blobs(4, 8, 256, 1.0, 6.0, 3).unwrap();
    let w = make_weights(PolytopeKind::Simplex, 4).unwrap();
    let hidden = vec![32, w.dim()];
    let model = init_model(8, &hidden, ClassifierSpec::Fixed(w.clone()), 3).unwrap();
    let loss = LossKind::AngularMargin { kappa: 30.0, m: w.phi() };
    let config = TrainConfig::new(loss, 10, 3, hidden);
    let (_, log) = train(model, &data, &config).unwrap();
    assert!(log[9].mean_loss < log[0].mean_loss, "{:?}", log);
}

#[test]
fn training_is_deterministic_and_keeps_fixed_heads() {
    let data = make_blobs(6, 5, 40, 1.0, 4.0, 8).unwrap();
    for kind in PolytopeKind::ALL {
        let w = make_weights(kind, 6).unwrap();
        let hidden = vec![12, w.dim()];
        let mut config = TrainConfig::new(LossKind::AngularMargin { kappa: 30.0, m: w.phi() }, 4, 8, hidden.clone());
        config.batch_size = 32;
        let run = || {
            let model = init_model(5, &hidden, ClassifierSpec::Fixed(w.clone()), 8).unwrap();
            train(model, &data, &config).unwrap()
        };
        let (a, log_a) = run();
        let (b, log_b) = run();
        assert_eq!(a, b);
        assert_eq!(log_a, log_b);
        let same = a
            .classifier()
            .rows()
            .iter()
            .zip(w.rows().iter())
            .all(|(x, y)| x.to_bits() == y.to_bits());
        assert!(same, "{kind} head moved");
    }
}

#[test]
fn separable_two_class_blobs() {
    let data = make_blobs(2, 4, 100, 1.0, 6.0, 1).unwrap();
    let w = make_weights(PolytopeKind::Orthoplex, 2).unwrap();
    let hidden = vec![16, w.dim()];
    let model = init_model(4, &hidden, ClassifierSpec::Fixed(w.clone()), 1).unwrap();
    let mut config = TrainConfig::new(LossKind::AngularMargin { kappa: 30.0, m: w.phi() }, 20, 1, hidden);
    config.batch_size = 32;
    config.lr = 0.002;
    let (_, log) = train(model, &data, &config).unwrap();
    assert!(log.last().unwrap().train_accuracy >= 0.99, "{:?}", log.last());
}
