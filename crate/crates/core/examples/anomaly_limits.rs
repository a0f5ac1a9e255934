//! Score control limits on telemetry-like data with one injected anomaly.
//!
//! Run with `cargo run --release --example anomaly_limits`.

use xcan::crossprod::{build_xtx, epsilon_floor, hard_threshold, Mode, SymMatrix};
use xcan::model::scores;
use xcan::pipeline::{autoscale, control_limits, simulate_correlated, DEFAULT_COVERAGE};
use xcan::{fit, CrossProducts, DataMatrix, FitConfig, PenaltyWeights, ThresholdRule};

fn main() -> xcan::Result<()> {
    // Two independent groups of sensors, 200 time steps each.
    let a = simulate_correlated(200, 4, 0.8, 1)?;
    let b = simulate_correlated(200, 4, 0.8, 2)?;
    let mut v = nalgebra::DMatrix::zeros(200, 8);
    v.view_mut((0, 0), (200, 4)).copy_from(a.values());
    v.view_mut((0, 4), (200, 4)).copy_from(b.values());
    // At minute 137 the second sensor group jumps.
    for j in 4..8 {
        v[(137, j)] += 6.0;
    }
    let rows = (0..200).map(|i| format!("t{i}")).collect();
    let cols = (0..8).map(|j| format!("sensor{}", j + 1)).collect();
    let (x, _) = autoscale(&DataMatrix::new(v, rows, cols)?)?;

    let rule = ThresholdRule::positive_only(0.7)?;
    let xtx = epsilon_floor(&hard_threshold(&build_xtx(&x)?, &rule), rule.floor_eps())?;
    let xp = CrossProducts::new(xtx, SymMatrix::uniform(x.n_obs(), Mode::Observations))?;
    let cfg = FitConfig::new(2).with_weights(PenaltyWeights::new(1.0, 0.0, 1e-3)?);
    let result = fit(&x, &xp, &cfg)?;
    println!(
        "explained variance {:.1}%",
        100.0 * result.explained_variance
    );

    for l in control_limits(&scores(&result.model), DEFAULT_COVERAGE)? {
        let flagged: Vec<&str> = l
            .flagged
            .iter()
            .map(|&i| x.row_labels()[i].as_str())
            .collect();
        println!(
            "component {}: limits [{:.2}, {:.2}], flagged {:?}",
            l.component + 1,
            l.lo,
            l.hi,
            flagged
        );
    }
    Ok(())
}
