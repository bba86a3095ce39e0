//! Finite-difference check of a small conv/LSTM model in f64.
//!
//! `cargo run --example gradient_check`

use inflatenn::gradcheck::{check_model, GradCheckConfig};
use inflatenn::layers::LayerKind;
use inflatenn::model::{init_weights, InputKind, LayerSpec, ModelSpec};
use inflatenn::{RngStream, Tensor};

fn main() -> inflatenn::Result<()> {
    let layers = vec![
        LayerSpec::new("fold", LayerKind::FoldTime),
        LayerSpec::new("c1", LayerKind::Conv2d { in_ch: 2, out_ch: 3, kernel: 3, stride: 1, padding: 1 }),
        LayerSpec::new("gap", LayerKind::GlobalAvgPool),
        LayerSpec::new("unfold", LayerKind::UnfoldTime),
        LayerSpec::new(
            "lstm",
            LayerKind::Lstm { input: 3, hidden: 4, dropout: 0.0, recurrent_dropout: 0.0, return_sequences: false },
        ),
        LayerSpec::new("out", LayerKind::Dense { in_features: 4, out_features: 2 }),
    ];
    let mut model = ModelSpec::<f64>::new(vec![2, 6, 5], InputKind::Clips, layers)?;
    let mut rng = RngStream::new(3);
    init_weights(&mut model, &mut rng)?;
    for name in model.trainable_names() {
        let shape = model.weights[&name].shape().to_vec();
        model.weights.insert(name, Tensor::seeded_uniform(&mut rng, &shape, -0.5, 0.5)?);
    }
    let x = Tensor::seeded_uniform(&mut rng, &model.batch_shape(2, 4), -1.0, 1.0)?;
    let cfg = GradCheckConfig { max_entries: None, ..Default::default() };
    let report = check_model(&model, &x, &cfg)?;
    for t in &report.tensors {
        println!("{:<14} probed {:>3}  max rel error {:.2e}", t.name, t.probed, t.max_rel_error);
    }
    println!("overall {:.2e}", report.max_rel_error());
    Ok(())
}
