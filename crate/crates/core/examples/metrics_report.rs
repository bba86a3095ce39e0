//! Scores noisy predictions against labels with MAE, MAPE, PCC and CCC.
//!
//! `cargo run --example metrics_report`

use inflatenn::metrics::{compute_ccc, reports_to_csv, reports_to_text, MetricReport};
use inflatenn::RngStream;

fn main() -> inflatenn::Result<()> {
    let mut rng = RngStream::new(5);
    let labels: Vec<f64> = (0..500).map(|i| (i as f64 / 40.0).sin() * 0.6).collect();
    let good: Vec<f64> = labels.iter().map(|y| y + rng.uniform(-0.1, 0.1)).collect();
    let biased: Vec<f64> = good.iter().map(|p| 0.5 * p + 0.3).collect();

    let reports = [MetricReport::compute("good", &labels, &good)?, MetricReport::compute("biased", &labels, &biased)?];
    print!("{}", reports_to_text(&reports));
    println!();
    print!("{}", reports_to_csv(&reports));
    println!("\nCCC([-1, 1], [0, 2]) = {}", compute_ccc(&[-1.0, 1.0], &[0.0, 2.0])?);
    Ok(())
}
