//! Pre-trains the desk 2D classifier on the synthetic corpus, then fine-tunes
//! a CNN-LSTM cascade and an inflated 3D network on valence/arousal clips and
//! prints their validation logs.
//!
//! `cargo run --release --example synthetic_experiment [seed]`

use inflatenn::pipeline::{run_experiment, ExperimentConfig, ExperimentReport};
use inflatenn::training::log_to_csv;

fn main() {
    let mut cfg = ExperimentConfig::default();
    if let Some(seed) = std::env::args().nth(1).and_then(|s| s.parse().ok()) {
        cfg.synth.seed = seed;
    }
    let report = match run_experiment(&cfg) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("experiment failed: {e}");
            std::process::exit(e.exit_code());
        }
    };
    println!("train clips {}, validation clips {}", report.train_clips, report.val_clips);
    if let Some(last) = report.pretrain_log.last() {
        println!("classifier: loss {:.4}, accuracy {:.3}", last.loss, last.accuracy);
    }
    for (name, fit) in [("cnn-lstm", &report.cascade), ("i3d", &report.i3d)] {
        let [v, a] = ExperimentReport::best_ccc(fit);
        println!("\n{name}: best epoch {} valence CCC {v:.3} arousal CCC {a:.3}", fit.best_epoch);
        print!("{}", log_to_csv(&fit.log));
    }
    println!("\nseconds: pretrain {:.1}, cnn-lstm {:.1}, i3d {:.1}", report.seconds[0], report.seconds[1], report.seconds[2]);
}
