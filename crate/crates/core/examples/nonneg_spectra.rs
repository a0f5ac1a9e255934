//! Nonnegative spectra with a fitted baseline, with and without a class-map
//! penalty on the observations.
//!
//! Run with `cargo run --example nonneg_spectra`.

use xcan::crossprod::{class_map, epsilon_floor, Mode, SymMatrix, DEFAULT_FLOOR_EPS};
use xcan::model::scores;
use xcan::pipeline::{simulate_spectra, SpectraSpec};
use xcan::{fit, CrossProducts, FitConfig, PenaltyWeights};

fn main() -> xcan::Result<()> {
    let spectra = simulate_spectra(&SpectraSpec::default())?;
    let x = &spectra.data;
    println!(
        "{} spectra x {} wavelengths, classes A and B",
        x.n_obs(),
        x.n_vars()
    );

    let cfg = FitConfig::new(3).nonneg(true).baseline(true);
    let plain = fit(x, &CrossProducts::uniform(x.n_obs(), x.n_vars()), &cfg)?;
    let min_param = plain
        .model
        .to_params()
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    println!(
        "no structure: explained variance {:.2}%, smallest parameter {min_param:.3e}, {:?}",
        100.0 * plain.explained_variance,
        plain.termination
    );

    let xxt = epsilon_floor(&class_map(&spectra.classes)?, DEFAULT_FLOOR_EPS)?;
    let xp = CrossProducts::new(SymMatrix::uniform(x.n_vars(), Mode::Variables), xxt)?;
    let cfg = cfg.with_weights(PenaltyWeights::new(1.0, 1e-3, 0.0)?);
    let mapped = fit(x, &xp, &cfg)?;
    println!(
        "class map: explained variance {:.2}%, {:?}",
        100.0 * mapped.explained_variance,
        mapped.termination
    );

    let t = scores(&mapped.model);
    for h in 0..t.ncols() {
        let col = t.column(h);
        let total: f64 = col.iter().map(|v| v * v).sum();
        let in_a: f64 = col
            .iter()
            .zip(&spectra.classes)
            .filter(|(_, c)| c.as_str() == "A")
            .map(|(v, _)| v * v)
            .sum();
        println!(
            "component {}: {:.1}% of score mass on class A, {:.1}% on class B",
            h + 1,
            100.0 * in_a / total,
            100.0 * (total - in_a) / total
        );
    }
    Ok(())
}
