use std::f64::consts::PI;

use ndarray::{array, Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reponet::data::{batches, load_idx, make_blobs, write_idx, LabeledBatch};
use reponet::losses::{evaluate, margin_loss, norm_scaled_loss, plain_ce, LossKind};
use reponet::metrics::{export_scatter, geometry_report};
use reponet::polytope::{angle_between, embedding_dim, make_weights, ClassifierWeights, PolytopeKind};

fn kind() -> impl Strategy<Value = PolytopeKind> {
    prop_oneof![
        Just(PolytopeKind::Simplex),
        Just(PolytopeKind::Orthoplex),
        Just(PolytopeKind::Cube)
    ]
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn features(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
    loop {
        let f = Array2::from_shape_simple_fn((n, d), || rng.random_range(-2.0..2.0));
        if f.outer_iter().all(|r| r.dot(&r) > 1e-4) {
            return f;
        }
    }
}

fn batch(seed: u64, kind: PolytopeKind, k: usize, n: usize) -> (ClassifierWeights, Array2<f64>, Vec<usize>) {
    let w = make_weights(kind, k).unwrap();
    let mut r = rng(seed);
    let f = features(&mut r, n, w.dim());
    let labels = (0..n).map(|_| r.random_range(0..k)).collect();
    (w, f, labels)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn rows_are_unit(kind in kind(), k in 2usize..=200) {
        let w = make_weights(kind, k).unwrap();
        for row in w.rows().outer_iter() {
            prop_assert!((row.dot(&row).sqrt() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn simplex_gram(k in 2usize..=200) {
        let w = make_weights(PolytopeKind::Simplex, k).unwrap();
        let d = (k - 1) as f64;
        let gram = w.rows().dot(&w.rows().t());
        for ((i, j), &g) in gram.indexed_iter() {
            let want = if i == j { 1.0 } else { -1.0 / d };
            prop_assert!((g - want).abs() <= 1e-10, "gram[{i},{j}] = {g}");
        }
    }

    #[test]
    fn orthoplex_dots_are_zero_or_minus_one(k in 2usize..=200) {
        let w = make_weights(PolytopeKind::Orthoplex, k).unwrap();
        let gram = w.rows().dot(&w.rows().t());
        for ((i, j), &g) in gram.indexed_iter() {
            if i != j {
                prop_assert!(g.abs() <= 1e-12 || (g + 1.0).abs() <= 1e-12, "gram[{i},{j}] = {g}");
            }
        }
    }

    #[test]
    fn cube_min_angle(k in 2usize..=200) {
        let w = make_weights(PolytopeKind::Cube, k).unwrap();
        let d = w.dim() as f64;
        let mut min = f64::INFINITY;
        for i in 0..k {
            for j in i + 1..k {
                min = min.min(angle_between(w.row(i), w.row(j)));
            }
        }
        prop_assert!((min - ((d - 2.0) / d).acos()).abs() <= 1e-10);
    }

    #[test]
    fn embedding_dim_is_monotone(kind in kind(), k in 2usize..200) {
        prop_assert!(embedding_dim(kind, k).unwrap() <= embedding_dim(kind, k + 1).unwrap());
    }

    #[test]
    fn generators_are_deterministic(kind in kind(), k in 2usize..=200) {
        let a = make_weights(kind, k).unwrap();
        let b = make_weights(kind, k).unwrap();
        prop_assert!(a.rows().iter().zip(b.rows().iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn losses_are_nonnegative_means(seed: u64, kind in kind(), k in 2usize..=30, n in 1usize..=12) {
        let (w, f, labels) = batch(seed, kind, k, n);
        let m = if w.phi() < PI { w.phi() } else { 1.0 };
        for loss in [
            LossKind::PlainCe,
            LossKind::FixedSoftmax,
            LossKind::NormScaled { kappa: 30.0 },
            LossKind::AngularMargin { kappa: 30.0, m },
        ] {
            let r = evaluate(loss, &w, f.view(), &labels).unwrap();
            prop_assert!(r.per_sample.iter().all(|&l| l >= 0.0));
            prop_assert_eq!(r.value, r.per_sample.iter().sum::<f64>() / n as f64);
        }
    }

    #[test]
    fn softmax_shift_invariance(seed: u64, k in 2usize..=20, n in 1usize..=8) {
        let mut r = rng(seed);
        let z = Array2::from_shape_simple_fn((n, k), || r.random_range(-20.0..20.0));
        let shifts = Array1::from_shape_simple_fn(n, || r.random_range(-50.0..50.0));
        let shifted = &z + &shifts.insert_axis(ndarray::Axis(1));
        let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        let a = plain_ce(z.view(), &labels).unwrap().value;
        let b = plain_ce(shifted.view(), &labels).unwrap().value;
        prop_assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
    }

    #[test]
    fn normalized_losses_ignore_scale(seed: u64, kind in kind(), k in 3usize..=30, n in 1usize..=8, c in 0.01f64..100.0) {
        let (w, f, labels) = batch(seed, kind, k, n);
        let scaled = &f * c;
        let a = norm_scaled_loss(&w, f.view(), &labels, 30.0).unwrap().value;
        let b = norm_scaled_loss(&w, scaled.view(), &labels, 30.0).unwrap().value;
        prop_assert!((a - b).abs() <= 1e-10);
        let m = w.phi().min(3.0);
        let a = margin_loss(&w, f.view(), &labels, 30.0, m).unwrap().value;
        let b = margin_loss(&w, scaled.view(), &labels, 30.0, m).unwrap().value;
        prop_assert!((a - b).abs() <= 1e-10);
    }

    #[test]
    fn zero_margin_is_norm_scaled(seed: u64, kind in kind(), k in 2usize..=30, n in 1usize..=12, kappa in 0.5f64..64.0) {
        let (w, f, labels) = batch(seed, kind, k, n);
        let a = margin_loss(&w, f.view(), &labels, kappa, 0.0).unwrap();
        let b = norm_scaled_loss(&w, f.view(), &labels, kappa).unwrap();
        prop_assert!((a.value - b.value).abs() <= 1e-12);
        for (x, y) in a.grad_features.iter().zip(&b.grad_features) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    // Rows e1, e2, e3 in R^4; the feature turns from e1 towards e4, so only
    // the target angle changes.
    #[test]
    fn margin_pressure_is_monotone(m in 0.0f64..3.0, a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let limit = PI - m;
        prop_assume!(limit > 0.06);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let t1 = 0.02 + lo * (limit - 0.04);
        let t2 = 0.02 + hi * (limit - 0.04);
        prop_assume!(t2 - t1 > 1e-3);
        let rows = array![
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0]
        ];
        let w = ClassifierWeights::from_rows(PolytopeKind::Orthoplex, rows).unwrap();
        let loss = |t: f64| {
            let f = array![[t.cos(), 0.0, 0.0, t.sin()]];
            margin_loss(&w, f.view(), &[0], 4.0, m).unwrap().value
        };
        prop_assert!(loss(t1) < loss(t2), "t1 {t1} t2 {t2}");
    }

    #[test]
    fn idx_round_trip(seed: u64, n in 1usize..=20, rows in 1usize..=6, cols in 1usize..=6) {
        let mut r = rng(seed);
        let inputs = Array2::from_shape_simple_fn((n, rows * cols), || r.random_range(0.0..=1.0));
        let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..10)).collect();
        let k = labels.iter().max().unwrap() + 1;
        let data = LabeledBatch::new(inputs, labels, k).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = (dir.path().join("i"), dir.path().join("l"));
        write_idx(&data, &img, &lab, rows, cols).unwrap();
        let back = load_idx(&img, &lab).unwrap();
        prop_assert_eq!(&back.labels, &data.labels);
        for (x, y) in back.inputs.iter().zip(&data.inputs) {
            prop_assert!((0.0..=1.0).contains(x));
            prop_assert!((x - y).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn batches_cover_every_sample_once(n in 1usize..=300, bs in 1usize..=64, seed: u64, epoch in 0u64..5) {
        let inputs = Array2::from_shape_fn((n, 1), |(i, _)| i as f64);
        let data = LabeledBatch::new(inputs, vec![0; n], 1).unwrap();
        let it = batches(&data, bs, seed, epoch).unwrap();
        prop_assert_eq!(it.len(), n.div_ceil(bs));
        let mut seen: Vec<usize> = it.flat_map(|b| b.inputs.iter().map(|&v| v as usize).collect::<Vec<_>>()).collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn geometry_ignores_feature_scale(seed: u64, kind in kind(), k in 2usize..=20, n in 1usize..=30) {
        let (w, f, labels) = batch(seed, kind, k, n);
        let mut r = rng(seed ^ 0x5eed);
        let scales = Array1::from_shape_simple_fn(n, || r.random_range(0.01..100.0));
        let scaled = &f * &scales.insert_axis(ndarray::Axis(1));
        let preds = vec![0; n];
        let a = geometry_report(&w, f.view(), &labels, &preds).unwrap();
        let b = geometry_report(&w, scaled.view(), &labels, &preds).unwrap();
        prop_assert!((a.min_pairwise_mean_angle - b.min_pairwise_mean_angle).abs() <= 1e-10);
        for (x, y) in a.per_class.iter().zip(&b.per_class) {
            prop_assert_eq!(x.count, y.count);
            if let (Some(p), Some(q)) = (x.mean_angle_to_weight, y.mean_angle_to_weight) {
                prop_assert!((p - q).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn scatter_export_shape(seed: u64, n in 1usize..=40, d in 1usize..=12, normalized: bool) {
        let mut r = rng(seed);
        let f = features(&mut r, n, d);
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        export_scatter(f.view(), &labels, normalized, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        prop_assert_eq!(lines.len(), n + 1);
        prop_assert!(lines.iter().all(|l| l.split(',').count() == d + 1));
    }
}

#[test]
fn concentrated_features_sit_on_their_weights() {
    let w = make_weights(PolytopeKind::Simplex, 10).unwrap();
    let mut previous = f64::INFINITY;
    for sigma in [1e-1, 1e-2, 1e-3, 1e-4] {
        let mut r = rng(4);
        let labels: Vec<usize> = (0..500).map(|i| i % 10).collect();
        let f = Array2::from_shape_fn((500, w.dim()), |(n, j)| {
            w.rows()[[labels[n], j]] + sigma * (r.random::<f64>() - 0.5) * 2.0
        });
        let report = geometry_report(&w, f.view(), &labels, &labels).unwrap();
        let worst = report.max_mean_angle_to_weight().unwrap();
        let gap = (report.min_pairwise_mean_angle - w.phi()).abs();
        assert!(worst < 3.0 * sigma, "sigma {sigma}: {worst}");
        assert!(gap < 3.0 * sigma, "sigma {sigma}: {gap}");
        assert!(worst < previous);
        previous = worst;
    }
}

#[test]
fn blob_labels_balance() {
    let data = make_blobs(5, 3, 40, 1.0, 4.0, 1).unwrap();
    for c in 0..5 {
        assert_eq!(data.labels.iter().filter(|&&y| y == c).count(), 40);
    }
}
