//! Evaluates the four losses on the same features and checks their
//! gradients against central differences.
//!
//! cargo run --example losses

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reponet::losses::{evaluate, grad_check, maximal_margin, LossKind, DEFAULT_KAPPA};
use reponet::polytope::{make_weights, PolytopeKind};

fn main() -> reponet::Result<()> {
    let w = make_weights(PolytopeKind::Orthoplex, 10)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let labels: Vec<usize> = (0..8).map(|_| rng.random_range(0..10)).collect();
    // each feature near its own vertex, plus noise
    let features = Array2::from_shape_fn((8, w.dim()), |(n, j)| {
        1.5 * w.rows()[[labels[n], j]] + rng.random_range(-0.4..0.4)
    });

    let m = maximal_margin(&w);
    let kinds = [
        LossKind::PlainCe,
        LossKind::FixedSoftmax,
        LossKind::NormScaled { kappa: DEFAULT_KAPPA },
        LossKind::AngularMargin { kappa: DEFAULT_KAPPA, m: 0.0 },
        LossKind::AngularMargin { kappa: DEFAULT_KAPPA, m: m / 2.0 },
        LossKind::AngularMargin { kappa: DEFAULT_KAPPA, m },
    ];
    for kind in kinds {
        let r = evaluate(kind, &w, features.view(), &labels)?;
        let err = grad_check(kind, &w, features.view(), &labels, 1e-5)?;
        let label = match kind {
            LossKind::AngularMargin { m, .. } => format!("{} m={m:.4}", kind.name()),
            _ => kind.name().to_string(),
        };
        println!("{label:<24} loss {:>11.4e}  grad rel err {err:.1e}", r.value);
    }
    Ok(())
}
