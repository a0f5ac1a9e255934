//! Building and post-processing the structural matrices.
//!
//! Run with `cargo run --example cross_products`.

use nalgebra::DMatrix;
use xcan::crossprod::{
    build_xtx, build_xxt, class_map, epsilon_floor, hard_threshold, subtract_min_baseline,
    SymMatrix,
};
use xcan::{DataMatrix, ThresholdRule};

fn show(name: &str, m: &SymMatrix) {
    println!("{name}:");
    for row in m.entries().row_iter() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:7.3}")).collect();
        println!("  {}", cells.join(" "));
    }
}

fn main() -> xcan::Result<()> {
    // Two pairs of variables that move together, one pair reversed.
    let x = DataMatrix::unlabeled(DMatrix::from_row_slice(
        5,
        4,
        &[
            1.0, 0.9, -0.2, 0.1, //
            2.0, 2.1, 0.1, -0.1, //
            -1.0, -1.2, 1.0, -0.9, //
            0.5, 0.4, 2.0, -2.2, //
            -0.3, -0.2, -1.5, 1.4,
        ],
    ))?;

    let xtx = build_xtx(&x)?;
    show("XtX (cosine of columns)", &xtx);

    let magnitude = ThresholdRule::magnitude(0.5)?;
    let sparse = epsilon_floor(&hard_threshold(&xtx, &magnitude), magnitude.floor_eps())?;
    show("|entry| < 0.5 zeroed, then floored at 0.01", &sparse);

    let positive = ThresholdRule::positive_only(0.7)?;
    show(
        "only entries >= 0.7 kept, then floored",
        &epsilon_floor(&hard_threshold(&xtx, &positive), positive.floor_eps())?,
    );

    show("XXt (cosine of rows)", &build_xxt(&x)?);
    show(
        "XXt with column minima subtracted",
        &subtract_min_baseline(&build_xxt(&x)?),
    );
    show(
        "class map for labels a a b b a",
        &class_map(&["a", "a", "b", "b", "a"])?,
    );

    println!("provenance of the floored XtX: {:?}", sparse.history());
    Ok(())
}
