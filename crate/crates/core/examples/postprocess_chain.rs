//! Repairs lagged, mis-scaled predictions with scale normalisation, the mean
//! filter and time-delay alignment.
//!
//! `cargo run --example postprocess_chain`

use inflatenn::metrics::compute_ccc;
use inflatenn::postprocess::{apply_chain, fit_train_stats, MeanFilter, Steps};
use inflatenn::RngStream;

fn main() -> inflatenn::Result<()> {
    let mut rng = RngStream::new(2);
    let lag = 6;
    let signal: Vec<f64> = (0..400 + lag).map(|i| (i as f64 / 25.0).sin() * 0.5).collect();
    let labels = signal[lag..].to_vec();
    let preds: Vec<f64> = signal[..400].iter().map(|v| 0.2 * v - 0.1 + rng.uniform(-0.02, 0.02)).collect();
    let stats = fit_train_stats(&labels, &preds)?;

    println!("raw CCC {:.3}", compute_ccc(&labels, &preds)?);
    for (steps, variant) in [
        ("sn", MeanFilter::Printed),
        ("sn,mf", MeanFilter::Printed),
        ("sn,mf", MeanFilter::Swapped),
        ("td", MeanFilter::Printed),
        ("sn,mf,td", MeanFilter::Swapped),
    ] {
        let (p, delay) = apply_chain(&labels, &preds, &stats, steps.parse::<Steps>()?, variant)?;
        let (y, t) = match &delay {
            Some(d) => (&labels[d.label_start..d.label_start + d.aligned_len], format!(" (shift {})", d.best_t)),
            None => (&labels[..], String::new()),
        };
        println!("{steps:<9} {variant:<8?} CCC {:.3}{t}", compute_ccc(y, &p)?);
    }
    Ok(())
}
