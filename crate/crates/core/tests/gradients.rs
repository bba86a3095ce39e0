mod common;

use std::time::Instant;

use inflatenn::gradcheck::{check_model, relative_error, GradCheckConfig};
use inflatenn::model::{build_cnn_lstm, build_i3d, build_vgg_mini, Head, Profile};
use inflatenn::inflation::InflationConfig;
use inflatenn::training::{mse_loss, weighted_ce_loss};
use inflatenn::{RngStream, Tensor};

#[test]
fn every_layer_kind_matches_finite_differences() {
    let t0 = Instant::now();
    for (name, report) in common::run_gradient_suite() {
        let worst = report.worst().unwrap();
        assert!(
            report.max_rel_error() <= 1e-4,
            "{name}: tensor `{}` entry {} analytic {} numeric {} (rel {:e})",
            worst.name,
            worst.worst_index,
            worst.analytic,
            worst.numeric,
            worst.max_rel_error
        );
        assert!(report.tensors.iter().all(|t| t.probed > 0), "{name} probed nothing");
    }
    assert!(t0.elapsed().as_secs_f64() < 60.0);
}

#[test]
fn suite_covers_every_layer_kind() {
    let tags = common::layer_tags_covered();
    for t in [
        "conv2d", "conv3d", "batchnorm", "relu", "maxpool", "globalavgpool", "flatten", "dense", "lstm", "dropout",
        "skip_add", "fold_time", "unfold_time",
    ] {
        assert!(tags.contains(t), "no gradient case uses {t}");
    }
}

/// Shrinks a desk profile so whole architectures check quickly.
fn tiny() -> Profile {
    Profile {
        input_shape: vec![3, 8, 6],
        widths: [2, 3, 3, 4],
        lstm_units: 3,
        cascade_fc: vec![3],
        regression_fc: vec![3],
        classification_fc: vec![3],
        ..Profile::desk()
    }
}

#[test]
fn whole_architectures_match_finite_differences() {
    let p = tiny();
    let mut rng = RngStream::new(21);
    let base = build_vgg_mini(&p, Head::Classification, &mut rng).unwrap();
    let cascade = build_cnn_lstm(&base.trunk(), &p, &mut rng).unwrap();
    let i3d = build_i3d(&base, &InflationConfig::c2(), &p, &mut rng).unwrap();
    // deep stacks cross pooling/ReLU switches at h = 1e-3
    let cfg = GradCheckConfig { step: 1e-6, max_entries: Some(24), ..Default::default() };
    for (name, model, frames) in [("vgg", base, 1), ("cascade", cascade, 3), ("i3d", i3d, 8)] {
        let mut m = model.cast::<f64>();
        for n in m.trainable_names() {
            let s = m.weights[&n].shape().to_vec();
            m.weights.insert(n, Tensor::seeded_uniform(&mut rng, &s, -0.5, 0.5).unwrap());
        }
        let x = Tensor::<f64>::seeded_uniform(&mut rng, &m.batch_shape(2, frames), 0.0, 1.0).unwrap();
        let r = check_model(&m, &x, &cfg).unwrap();
        assert!(r.max_rel_error() <= 1e-4, "{name}: {:?}", r.worst());
    }
}

#[test]
fn mse_gradient_matches_finite_differences() {
    let mut rng = RngStream::new(5);
    let p = Tensor::<f32>::seeded_uniform(&mut rng, &[4, 2], -1.0, 1.0).unwrap();
    let t = Tensor::<f32>::seeded_uniform(&mut rng, &[4, 2], -1.0, 1.0).unwrap();
    let (_, g) = mse_loss(&p, &t).unwrap();
    for i in 0..p.len() {
        let (mut up, mut down) = (p.clone(), p.clone());
        up.data_mut()[i] += 1e-3;
        down.data_mut()[i] -= 1e-3;
        let step = up.data()[i] as f64 - down.data()[i] as f64;
        let n = (mse_loss(&up, &t).unwrap().0 - mse_loss(&down, &t).unwrap().0) / step;
        assert!(relative_error(g.data()[i] as f64, n, 1e-3) <= 1e-6, "entry {i}");
    }
}

#[test]
fn weighted_ce_gradient_matches_finite_differences() {
    let mut rng = RngStream::new(6);
    let logits = Tensor::<f32>::seeded_uniform(&mut rng, &[3, 5], -2.0, 2.0).unwrap();
    let classes = [4, 0, 2];
    let w = [0.5, 1.0, 2.0, 1.5, 0.75];
    let (_, g) = weighted_ce_loss(&logits, &classes, Some(&w)).unwrap();
    for i in 0..logits.len() {
        let (mut up, mut down) = (logits.clone(), logits.clone());
        up.data_mut()[i] += 1e-3;
        down.data_mut()[i] -= 1e-3;
        let step = up.data()[i] as f64 - down.data()[i] as f64;
        let l = |x: &Tensor<f32>| weighted_ce_loss(x, &classes, Some(&w)).unwrap().0;
        let n = (l(&up) - l(&down)) / step;
        assert!(relative_error(g.data()[i] as f64, n, 1e-3) <= 1e-5, "entry {i}: {} vs {n}", g.data()[i]);
    }
}
