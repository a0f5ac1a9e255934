//! Saving a model, loading it back, and drawing its components.
//!
//! Run with `cargo run --release --example persistence_and_plots [out_dir]`.

use std::path::PathBuf;

use xcan::io::{self, CrossProductProvenance, ModelRecord, RunManifest, FLATTEN_ORDER};
use xcan::model::loss;
use xcan::pipeline::{build_block_data, Preprocessing, SimSpec};
use xcan::plot::{write_panels, ComponentPanel};
use xcan::{fit, CrossProducts, FitConfig, PenaltyWeights, ThresholdRule};

fn main() -> xcan::Result<()> {
    let out: PathBuf = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("xcan-persistence"));
    let (x, _) = build_block_data(&SimSpec::default())?;
    let xp = CrossProducts::thresholded(&x, &ThresholdRule::magnitude(0.5)?)?;
    let cfg = FitConfig::new(3).with_weights(PenaltyWeights::new(1.0, 4e-2, 1e-5)?);
    let result = fit(&x, &xp, &cfg)?;

    let mut manifest = RunManifest::new("example", Vec::new());
    manifest.fit = Some(cfg.clone());
    manifest.model = Some(ModelRecord {
        components: 3,
        n_obs: x.n_obs(),
        n_vars: x.n_vars(),
        baseline: false,
        flatten_order: FLATTEN_ORDER.to_string(),
        weights: cfg.weights,
        preprocessing: Preprocessing::none(),
        cross_products: CrossProductProvenance {
            xtx: xp.xtx.history().to_vec(),
            xxt: xp.xxt.history().to_vec(),
        },
        termination: Some(result.termination),
        iterations: Some(result.iterations),
        explained_variance: Some(result.explained_variance),
        final_loss: Some(result.final_loss()),
        row_labels: x.row_labels().to_vec(),
        col_labels: x.col_labels().to_vec(),
    });
    let model_dir = out.join("model");
    io::save_model(&model_dir, &result.model, &manifest)?;
    io::write_trace_csv(model_dir.join("trace.csv"), &result.trace)?;

    let (back, _) = io::load_model(&model_dir)?;
    let before = loss(&x, &result.model, &xp, &cfg.weights)?.total;
    let after = loss(&x, &back, &xp, &cfg.weights)?.total;
    println!("loss before saving {before:.17e}, after loading {after:.17e}");

    let panels = ComponentPanel::from_model(
        &back,
        x.row_labels(),
        x.col_labels(),
        result.explained_variance,
        None,
    )?;
    for path in write_panels(out.join("plots"), &panels)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}
