//! Analytic gradient against central differences on random instances.
//!
//! Run with `cargo run --release --example gradient_check`.

use xcan::gradients::{fd_check, random_instance, InstanceSpec};
use xcan::PenaltyWeights;

fn main() -> xcan::Result<()> {
    let weights = [
        (1.0, 0.0, 0.0),
        (1.0, 1.0, 1.0),
        (1.0, 5.0, 5.0),
        (0.0, 5.0, 0.0),
    ];
    for seed in 0..4u64 {
        let spec = InstanceSpec {
            seed,
            baseline: seed % 2 == 1,
            nonneg: seed >= 2,
            ..InstanceSpec::default()
        };
        let (x, m, xp) = random_instance(&spec)?;
        for &(l0, lr, lc) in &weights {
            let w = PenaltyWeights::new(l0, lr, lc)?;
            let r = fd_check(&x, &m, &xp, &w, 1e-6)?;
            println!(
                "seed {seed} baseline {:5} nonneg {:5} weights ({l0}, {lr}, {lc}): max rel err {:.2e} at {}",
                spec.baseline, spec.nonneg, r.max_rel_err, r.worst_coordinate
            );
        }
    }
    Ok(())
}
