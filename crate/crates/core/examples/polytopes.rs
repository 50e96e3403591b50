//! Generates each fixed classifier for a few class counts and verifies it.
//!
//! cargo run --example polytopes -- [K ...]

use reponet::polytope::{make_weights, verify_geometry, PolytopeKind, DEFAULT_TOL};

fn main() -> reponet::Result<()> {
    let mut counts: Vec<usize> = std::env::args().skip(1).map(|a| a.parse().expect("class count")).collect();
    if counts.is_empty() {
        counts = vec![3, 10, 47, 100];
    }
    println!("{:<10} {:>4} {:>4} {:>10} {:>9} {:>10}", "kind", "K", "d", "phi (rad)", "phi (deg)", "deviation");
    for k in counts {
        for kind in PolytopeKind::ALL {
            let w = make_weights(kind, k)?;
            let check = verify_geometry(&w, DEFAULT_TOL)?;
            println!(
                "{:<10} {:>4} {:>4} {:>10.6} {:>9.3} {:>10.1e}{}",
                kind.as_str(),
                k,
                w.dim(),
                w.phi(),
                w.phi().to_degrees(),
                check.worst_deviation,
                if check.passed { "" } else { "  FAILED" }
            );
        }
    }

    let w = make_weights(PolytopeKind::Simplex, 4)?;
    println!("\nsimplex K=4 as JSON:\n{}", w.to_json()?);
    Ok(())
}
