mod common;

use inflatenn::metrics::{compute_ccc, compute_mae, compute_mape, compute_pcc, MetricReport, DEFAULT_MAPE_EPSILON};
use inflatenn::{Error, RngStream};
use proptest::prelude::*;

/// Seeded label/prediction pairs of varying length, correlation, offset
/// and scale.
pub fn seeded_pairs(count: usize, seed: u64) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut rng = RngStream::new(seed);
    (0..count)
        .map(|_| {
            let n = 2 + rng.below(300);
            let rho = rng.uniform(-1.0, 1.0);
            let (shift, scale) = (rng.uniform(-0.5, 0.5), rng.uniform(0.1, 2.0));
            let y: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let p: Vec<f64> = y.iter().map(|v| shift + scale * (rho * v + (1.0 - rho.abs()) * rng.uniform(-1.0, 1.0))).collect();
            (y, p)
        })
        .filter(|(y, p)| common::cov(y, y) > 0.0 && common::cov(p, p) > 0.0)
        .collect()
}

#[test]
fn metrics_match_direct_formulas_on_1000_pairs() {
    let pairs = seeded_pairs(1000, 42);
    assert_eq!(pairs.len(), 1000);
    for (y, p) in &pairs {
        assert!((compute_pcc(y, p).unwrap() - common::pcc(y, p)).abs() <= 1e-9);
        assert!((compute_ccc(y, p).unwrap() - common::ccc(y, p)).abs() <= 1e-9);
        assert!((compute_mae(y, p).unwrap() - common::mae(y, p)).abs() <= 1e-9);
        let (m, _) = compute_mape(y, p, DEFAULT_MAPE_EPSILON).unwrap();
        let want = common::mape(y, p, DEFAULT_MAPE_EPSILON);
        assert!((m - want).abs() <= 1e-9 * want.max(1.0), "{m} vs {want}");
        assert!(compute_ccc(y, p).unwrap().abs() <= compute_pcc(y, p).unwrap().abs() + 1e-12);
    }
}

#[test]
fn ccc_textbook_example_is_exactly_two_thirds() {
    assert_eq!(compute_ccc(&[-1.0, 1.0], &[0.0, 2.0]).unwrap(), 2.0 / 3.0);
    assert_eq!(compute_pcc(&[-1.0, 1.0], &[0.0, 2.0]).unwrap(), 1.0);
}

#[test]
fn constant_series_are_undefined() {
    assert!(matches!(compute_pcc(&[0.2; 5], &[0.1, 0.2, 0.3, 0.4, 0.5]), Err(Error::UndefinedMetric(_))));
    assert!(matches!(compute_ccc(&[0.2; 5], &[0.2; 5]), Err(Error::UndefinedMetric(_))));
    assert!(matches!(compute_mae(&[0.2; 5], &[0.2; 4]), Err(Error::Length(_))));
}

#[test]
fn report_rows_cover_every_metric() {
    let r = MetricReport::compute("arousal", &[0.5, -0.5, 0.0005], &[0.4, -0.6, 0.1]).unwrap();
    assert_eq!((r.n, r.mape_excluded), (3, 1));
    let csv = inflatenn::metrics::reports_to_csv(&[r]);
    assert_eq!(csv.lines().count(), 5);
}

proptest! {
    #[test]
    fn ccc_bounded_by_pcc(y in prop::collection::vec(-1.0f64..1.0, 3..60), seed in 0u64..1000) {
        let mut rng = RngStream::new(seed);
        let p: Vec<f64> = y.iter().map(|v| 0.3 * v + rng.uniform(-0.5, 0.5)).collect();
        prop_assume!(common::cov(&y, &y) > 1e-12 && common::cov(&p, &p) > 1e-12);
        let c = compute_ccc(&y, &p).unwrap();
        let r = compute_pcc(&y, &p).unwrap();
        prop_assert!(c.abs() <= r.abs() + 1e-12);
        prop_assert!((-1.0..=1.0).contains(&c));
    }

    #[test]
    fn pcc_invariant_to_affine_maps(y in prop::collection::vec(-1.0f64..1.0, 3..60), a in 0.1f64..5.0, b in -2.0f64..2.0) {
        let p: Vec<f64> = y.iter().enumerate().map(|(i, v)| v + (i as f64).sin()).collect();
        prop_assume!(common::cov(&y, &y) > 1e-9 && common::cov(&p, &p) > 1e-9);
        let q: Vec<f64> = p.iter().map(|v| a * v + b).collect();
        prop_assert!((compute_pcc(&y, &p).unwrap() - compute_pcc(&y, &q).unwrap()).abs() < 1e-9);
    }
}
