use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use xcan::crossprod::{build_xtx, class_map, epsilon_floor, hard_threshold, Mode, SymMatrix};
use xcan::io::format_float;
use xcan::model::{loss, sign_align};
use xcan::pipeline::{autoscale, control_limits};
use xcan::{CrossProducts, DataMatrix, FactorModel, PenaltyWeights, ThresholdRule};

fn matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(|(n, m)| {
        prop::collection::vec(-5.0..5.0f64, n * m).prop_map(move |v| DMatrix::from_vec(n, m, v))
    })
}

fn symmetric(max: usize) -> impl Strategy<Value = SymMatrix> {
    (1..=max).prop_flat_map(|n| {
        prop::collection::vec(-1.0..1.0f64, n * n).prop_map(move |v| {
            let a = DMatrix::from_vec(n, n, v);
            SymMatrix::from_matrix(0.5 * (&a + a.transpose()), Mode::Variables).unwrap()
        })
    })
}

fn rule() -> impl Strategy<Value = ThresholdRule> {
    (-1.0..0.9f64, 0.01..1.0f64, 1e-4..0.1f64)
        .prop_map(|(lo, width, eps)| ThresholdRule::new(lo, lo + width, eps).unwrap())
}

/// Data plus a model with `h` components and matching uniform cross-products.
fn instance() -> impl Strategy<Value = (DataMatrix, FactorModel, usize)> {
    (2..6usize, 2..6usize, 1..3usize).prop_flat_map(|(n, m, h)| {
        let h = h.min(n).min(m);
        (
            prop::collection::vec(-2.0..2.0f64, n * m),
            prop::collection::vec(-1.0..1.0f64, n * h),
            prop::collection::vec(0.1..3.0f64, h),
            prop::collection::vec(-1.0..1.0f64, m * h),
            0..h,
        )
            .prop_map(move |(x, u, s, p, flip)| {
                let x = DataMatrix::unlabeled(DMatrix::from_vec(n, m, x)).unwrap();
                let model = FactorModel::new(
                    DMatrix::from_vec(n, h, u),
                    DVector::from_vec(s),
                    DMatrix::from_vec(m, h, p),
                    None,
                )
                .unwrap();
                (x, model, flip)
            })
    })
}

proptest! {
    #[test]
    fn xtx_is_symmetric_bounded_with_unit_diagonal(a in matrix(7, 6)) {
        let x = DataMatrix::unlabeled(a.clone()).unwrap();
        let c = build_xtx(&x).unwrap();
        for i in 0..c.side() {
            for j in 0..c.side() {
                prop_assert_eq!(c.get(i, j), c.get(j, i));
                prop_assert!((-1.0..=1.0).contains(&c.get(i, j)));
            }
            if a.column(i).norm() > 0.0 {
                prop_assert_eq!(c.get(i, i), 1.0);
            }
        }
    }

    #[test]
    fn threshold_is_idempotent(m in symmetric(6), r in rule()) {
        let once = hard_threshold(&m, &r);
        let twice = hard_threshold(&once, &r);
        prop_assert_eq!(once.entries(), twice.entries());
        prop_assert_eq!(once.entries(), &once.entries().transpose());
    }

    #[test]
    fn threshold_then_floor_is_a_safe_divisor(m in symmetric(6), r in rule()) {
        let f = epsilon_floor(&hard_threshold(&m, &r), r.floor_eps()).unwrap();
        prop_assert!(f.min_abs() >= r.floor_eps());
        prop_assert!(f.is_floored());
        prop_assert_eq!(f.entries(), &f.entries().transpose());
    }

    #[test]
    fn class_map_is_an_equivalence_indicator(labels in prop::collection::vec(0u8..4, 1..12)) {
        let c = class_map(&labels).unwrap();
        let n = labels.len();
        for i in 0..n {
            prop_assert_eq!(c.get(i, i), 1.0);
            for j in 0..n {
                prop_assert_eq!(c.get(i, j), c.get(j, i));
                for k in 0..n {
                    if c.get(i, j) == 1.0 && c.get(j, k) == 1.0 {
                        prop_assert_eq!(c.get(i, k), 1.0);
                    }
                }
            }
        }
    }

    #[test]
    fn loss_is_even_in_each_factor_pair((x, m, flip) in instance()) {
        let xp = CrossProducts::uniform(x.n_obs(), x.n_vars());
        let w = PenaltyWeights::new(1.0, 0.4, 0.6).unwrap();
        let mut flipped = m.clone();
        flipped.u.column_mut(flip).neg_mut();
        flipped.p.column_mut(flip).neg_mut();
        let a = loss(&x, &m, &xp, &w).unwrap();
        let b = loss(&x, &flipped, &xp, &w).unwrap();
        prop_assert!((a.fit - b.fit).abs() <= 1e-12 * a.fit.max(1.0));
        prop_assert_eq!((a.f0, a.fr, a.fc), (b.f0, b.fr, b.fc));
        prop_assert_eq!(a.total, a.fit + w.lambda0 * a.f0 + w.lambda_r * a.fr + w.lambda_c * a.fc);
    }

    #[test]
    fn unit_factors_with_uniform_cross_products((x, mut m, _) in instance()) {
        for h in 0..m.n_components() {
            let (nu, np) = (m.u.column(h).norm(), m.p.column(h).norm());
            prop_assume!(nu > 1e-3 && np > 1e-3);
            m.u.column_mut(h).scale_mut(1.0 / nu);
            m.p.column_mut(h).scale_mut(1.0 / np);
        }
        let xp = CrossProducts::uniform(x.n_obs(), x.n_vars());
        let l = loss(&x, &m, &xp, &PenaltyWeights::default()).unwrap();
        let h = m.n_components() as f64;
        prop_assert!((l.fr - h).abs() < 1e-12 && (l.fc - h).abs() < 1e-12);
    }

    #[test]
    fn smaller_cross_product_never_lowers_the_row_penalty(
        (x, m, _) in instance(),
        i in 0usize..8,
        j in 0usize..8,
        shrink in 0.1..1.0f64,
    ) {
        let n = x.n_obs();
        let (i, j) = (i % n, j % n);
        let mut before = DMatrix::from_element(n, n, 0.9);
        let xtx = SymMatrix::uniform(x.n_vars(), Mode::Variables);
        let xp = CrossProducts::new(xtx.clone(), SymMatrix::from_matrix(before.clone(), Mode::Observations).unwrap()).unwrap();
        before[(i, j)] = 0.9 * shrink;
        before[(j, i)] = 0.9 * shrink;
        let smaller = CrossProducts::new(xtx, SymMatrix::from_matrix(before, Mode::Observations).unwrap()).unwrap();
        let w = PenaltyWeights::default();
        prop_assert!(loss(&x, &m, &smaller, &w).unwrap().fr >= loss(&x, &m, &xp, &w).unwrap().fr);
    }

    #[test]
    fn sign_alignment_is_idempotent((_, m, _) in instance()) {
        let once = sign_align(&m);
        prop_assert_eq!(sign_align(&once), once);
    }

    #[test]
    fn autoscale_twice_changes_nothing(a in matrix(8, 4)) {
        prop_assume!(a.nrows() >= 3);
        let x = DataMatrix::unlabeled(a).unwrap();
        prop_assume!(autoscale(&x).is_ok());
        let (once, _) = autoscale(&x).unwrap();
        let (twice, _) = autoscale(&once).unwrap();
        prop_assert!((once.values() - twice.values()).amax() < 1e-12);
    }

    #[test]
    fn limits_follow_affine_maps(
        t in prop::collection::vec(-3.0..3.0f64, 8..40),
        a in 0.1..10.0f64,
        b in -5.0..5.0f64,
    ) {
        let col = DMatrix::from_vec(t.len(), 1, t.clone());
        let moved = col.map(|v| a * v + b);
        let l1 = &control_limits(&col, 0.9).unwrap()[0];
        let l2 = &control_limits(&moved, 0.9).unwrap()[0];
        let tol = 1e-9 * (1.0 + a * l1.hi.abs().max(l1.lo.abs()) + b.abs());
        prop_assert!((l2.lo - (a * l1.lo + b)).abs() < tol);
        prop_assert!((l2.hi - (a * l1.hi + b)).abs() < tol);
        let margin = |l: &xcan::pipeline::ComponentLimits, v: f64| (v - l.lo).abs().min((v - l.hi).abs());
        prop_assume!(t.iter().all(|&v| margin(l1, v) > 1e-6));
        prop_assert_eq!(&l1.flagged, &l2.flagged);
    }

    #[test]
    fn persisted_floats_round_trip(v in any::<f64>().prop_filter("finite", |v| v.is_finite())) {
        prop_assert_eq!(format_float(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
    }
}
