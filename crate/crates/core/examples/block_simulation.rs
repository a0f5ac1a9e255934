//! Three correlated blocks: plain PCA spreads every component over all
//! variables, the structural penalties confine each one to its block.
//!
//! Run with `cargo run --release --example block_simulation [seed]`.

use xcan::model::scores;
use xcan::pipeline::{build_block_data, BlockTruth, SimSpec};
use xcan::{fit, CrossProducts, FactorModel, FitConfig, PenaltyWeights, ThresholdRule};

/// Largest share of squared mass that `v` puts on a single group.
fn block_share(v: impl Iterator<Item = f64>, groups: &[usize]) -> (usize, f64) {
    let mut mass = vec![0.0; groups.iter().max().unwrap() + 1];
    for (x, &g) in v.zip(groups) {
        mass[g] += x * x;
    }
    let total: f64 = mass.iter().sum();
    let (g, m) = mass.iter().enumerate().fold(
        (0, 0.0),
        |best, (g, &m)| if m > best.1 { (g, m) } else { best },
    );
    (g + 1, m / total)
}

fn report(name: &str, m: &FactorModel, ev: f64, truth: &BlockTruth) {
    println!("{name}: explained variance {:.1}%", 100.0 * ev);
    let t = scores(m);
    for h in 0..m.n_components() {
        let (cb, cs) = block_share(m.p.column(h).iter().copied(), &truth.col_groups);
        let (rb, rs) = block_share(t.column(h).iter().copied(), &truth.row_groups);
        println!(
            "  component {}: loadings {:.0}% in column group {cb}, scores {:.0}% in row block {rb}, |u| {:.3}, |p| {:.3}",
            h + 1,
            100.0 * cs,
            100.0 * rs,
            m.u.column(h).norm(),
            m.p.column(h).norm()
        );
    }
}

fn main() -> xcan::Result<()> {
    let seed = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let (x, truth) = build_block_data(&SimSpec::default().with_seed(seed))?;
    println!("seed {seed}: {}x{} data", x.n_obs(), x.n_vars());

    let pca = fit(
        &x,
        &CrossProducts::uniform(x.n_obs(), x.n_vars()),
        &FitConfig::new(3),
    )?;
    report("no penalties", &pca.model, pca.explained_variance, &truth);

    let xp = CrossProducts::thresholded(&x, &ThresholdRule::magnitude(0.5)?)?;
    let cfg = FitConfig::new(3).with_weights(PenaltyWeights::new(1.0, 4e-2, 1e-5)?);
    let xcan = fit(&x, &xp, &cfg)?;
    report(
        "row and column penalties",
        &xcan.model,
        xcan.explained_variance,
        &truth,
    );
    Ok(())
}
