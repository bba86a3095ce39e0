//! MAE, MAPE, PCC and CCC over label/prediction series.
//!
//! All sums run in `f64`; variances use the population convention.

use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const DEFAULT_MAPE_EPSILON: f64 = 1e-3;

fn check_pair(y: &[f64], p: &[f64], min: usize) -> Result<usize> {
    if y.len() != p.len() {
        return Err(Error::Length(format!("{} labels vs {} predictions", y.len(), p.len())));
    }
    if y.len() < min {
        return Err(Error::UndefinedMetric(format!("need at least {min} samples, got {}", y.len())));
    }
    Ok(y.len())
}

struct Moments {
    mean_y: f64,
    mean_p: f64,
    var_y: f64,
    var_p: f64,
    cov: f64,
}

fn pair_moments(y: &[f64], p: &[f64]) -> Moments {
    let n = y.len() as f64;
    let mean_y = y.iter().sum::<f64>() / n;
    let mean_p = p.iter().sum::<f64>() / n;
    let (mut var_y, mut var_p, mut cov) = (0.0, 0.0, 0.0);
    for (a, b) in y.iter().zip(p) {
        let (dy, dp) = (a - mean_y, b - mean_p);
        var_y += dy * dy;
        var_p += dp * dp;
        cov += dy * dp;
    }
    Moments { mean_y, mean_p, var_y: var_y / n, var_p: var_p / n, cov: cov / n }
}

pub fn compute_mae(y: &[f64], p: &[f64]) -> Result<f64> {
    let n = check_pair(y, p, 1)?;
    Ok(y.iter().zip(p).map(|(a, b)| (b - a).abs()).sum::<f64>() / n as f64)
}

/// Percentage error over labels with `|y| >= epsilon`; returns the value and
/// how many samples were excluded.
pub fn compute_mape(y: &[f64], p: &[f64], epsilon: f64) -> Result<(f64, usize)> {
    let n = check_pair(y, p, 1)?;
    let (mut sum, mut kept) = (0.0, 0usize);
    for (a, b) in y.iter().zip(p) {
        if a.abs() >= epsilon {
            sum += (b - a).abs() / a.abs();
            kept += 1;
        }
    }
    if kept == 0 {
        return Err(Error::UndefinedMetric(format!("MAPE: all {n} labels are below {epsilon} in magnitude")));
    }
    Ok((100.0 * sum / kept as f64, n - kept))
}

pub fn compute_pcc(y: &[f64], p: &[f64]) -> Result<f64> {
    check_pair(y, p, 2)?;
    let m = pair_moments(y, p);
    if m.var_y == 0.0 || m.var_p == 0.0 {
        return Err(Error::UndefinedMetric("PCC: a series has zero variance".into()));
    }
    Ok((m.cov / (m.var_y.sqrt() * m.var_p.sqrt())).clamp(-1.0, 1.0))
}

pub fn compute_ccc(y: &[f64], p: &[f64]) -> Result<f64> {
    check_pair(y, p, 2)?;
    let m = pair_moments(y, p);
    if m.var_y == 0.0 || m.var_p == 0.0 {
        return Err(Error::UndefinedMetric("CCC: a series has zero variance".into()));
    }
    let gap = m.mean_y - m.mean_p;
    Ok((2.0 * m.cov / (m.var_y + m.var_p + gap * gap)).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub target: String,
    pub n: usize,
    pub mae: f64,
    pub mape: f64,
    pub mape_excluded: usize,
    pub pcc: f64,
    pub ccc: f64,
}

impl MetricReport {
    pub fn compute(target: &str, y: &[f64], p: &[f64]) -> Result<Self> {
        let (mape, mape_excluded) = compute_mape(y, p, DEFAULT_MAPE_EPSILON)?;
        Ok(MetricReport {
            target: target.to_string(),
            n: y.len(),
            mae: compute_mae(y, p)?,
            mape,
            mape_excluded,
            pcc: compute_pcc(y, p)?,
            ccc: compute_ccc(y, p)?,
        })
    }

    fn rows(&self) -> [(&'static str, f64, usize); 4] {
        [
            ("mae", self.mae, 0),
            ("mape", self.mape, self.mape_excluded),
            ("pcc", self.pcc, 0),
            ("ccc", self.ccc, 0),
        ]
    }
}

/// Machine-readable form: `target,metric,value,n,excluded`.
pub fn reports_to_csv(reports: &[MetricReport]) -> String {
    let mut out = String::from("target,metric,value,n,excluded\n");
    for r in reports {
        for (metric, value, excluded) in r.rows() {
            writeln!(out, "{},{metric},{value:.9},{},{excluded}", r.target, r.n).unwrap();
        }
    }
    out
}

/// Aligned-column text table.
pub fn reports_to_text(reports: &[MetricReport]) -> String {
    let mut out = format!("{:<10} {:>10} {:>10} {:>10} {:>10} {:>8}\n", "target", "mae", "mape%", "pcc", "ccc", "n");
    for r in reports {
        writeln!(
            out,
            "{:<10} {:>10.4} {:>10.2} {:>10.4} {:>10.4} {:>8}",
            r.target, r.mae, r.mape, r.pcc, r.ccc, r.n
        )
        .unwrap();
        if r.mape_excluded > 0 {
            writeln!(out, "  ({} near-zero labels excluded from mape)", r.mape_excluded).unwrap();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mae_examples() {
        assert_eq!(compute_mae(&[0.3, 0.4], &[0.3, 0.4]).unwrap(), 0.0);
        assert_eq!(compute_mae(&[0.0, 1.0], &[1.0, 1.0]).unwrap(), 0.5);
        assert!(matches!(compute_mae(&[0.0], &[0.0, 1.0]), Err(Error::Length(_))));
    }

    #[test]
    fn mape_examples() {
        let (v, ex) = compute_mape(&[0.5, -0.5], &[0.55, -0.45], 1e-3).unwrap();
        assert!((v - 10.0).abs() < 1e-9 && ex == 0);
        let (v, ex) = compute_mape(&[0.5, 0.0], &[0.55, 0.3], 1e-3).unwrap();
        assert!((v - 10.0).abs() < 1e-9 && ex == 1);
        assert_eq!(compute_mape(&[0.2, -0.7], &[0.2, -0.7], 1e-3).unwrap(), (0.0, 0));
        assert!(matches!(compute_mape(&[0.0, 0.0], &[1.0, 1.0], 1e-3), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn correlation_examples() {
        let y = [1.0, 2.0, 3.0, 4.0];
        assert!((compute_pcc(&y, &y).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = y.iter().map(|v| -v).collect();
        assert!((compute_pcc(&y, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert!((compute_ccc(&y, &y).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(compute_ccc(&[-1.0, 1.0], &[0.0, 2.0]).unwrap(), 2.0 / 3.0);
        assert!(matches!(compute_ccc(&[1.0, 1.0], &[0.0, 2.0]), Err(Error::UndefinedMetric(_))));
        assert!(matches!(compute_pcc(&[1.0, 2.0], &[3.0, 3.0]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn ccc_shift_decreases() {
        let y: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let mut last = 1.0 + 1e-12;
        for k in 0..6 {
            let p: Vec<f64> = y.iter().map(|v| v + 0.2 * k as f64).collect();
            let c = compute_ccc(&y, &p).unwrap();
            assert!(c < last);
            last = c;
        }
    }

    #[test]
    fn csv_has_header_and_four_rows_per_target() {
        let r = MetricReport::compute("valence", &[0.1, 0.5, -0.3], &[0.2, 0.4, -0.2]).unwrap();
        let csv = reports_to_csv(&[r]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "target,metric,value,n,excluded");
        assert_eq!(lines.len(), 5);
        assert!(lines[4].starts_with("valence,ccc,"));
    }

    fn series() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (3usize..40).prop_flat_map(|n| {
            (prop::collection::vec(-1.0f64..1.0, n), prop::collection::vec(-1.0f64..1.0, n))
        })
    }

    proptest! {
        #[test]
        fn ccc_bounded_by_pcc((y, p) in series()) {
            if let (Ok(c), Ok(r)) = (compute_ccc(&y, &p), compute_pcc(&y, &p)) {
                prop_assert!(c.abs() <= r.abs() + 1e-12);
            }
        }

        #[test]
        fn ccc_symmetric((y, p) in series()) {
            if let (Ok(a), Ok(b)) = (compute_ccc(&y, &p), compute_ccc(&p, &y)) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn pcc_affine_invariant((y, p) in series(), a in 0.1f64..10.0, b in -5.0f64..5.0) {
            if let Ok(r) = compute_pcc(&y, &p) {
                let q: Vec<f64> = p.iter().map(|v| a * v + b).collect();
                prop_assert!((compute_pcc(&y, &q).unwrap() - r).abs() <= 1e-9);
            }
        }
    }
}
