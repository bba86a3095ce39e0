//! Builders for the mini-VGG base, the CNN-LSTM cascade and the inflated 3D
//! network.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inflation::{inflate_model, InflationConfig};
use crate::layers::{LayerKind, ParamRole};
use crate::model::{InputKind, LayerSpec, ModelSpec};
use crate::rng::RngStream;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    /// VGG-16 widths at 100x80 input. Constructible, too slow to train here.
    Paper,
    /// Widths 8/16/32/64 at 32x24 input.
    Desk,
}

/// Every size knob of the three architectures.
#[derive(Clone, Debug, PartialEq)]
pub struct Profile {
    pub input_shape: Vec<usize>,
    pub widths: [usize; 4],
    pub depths: [usize; 4],
    pub batchnorm: bool,
    pub lstm_units: usize,
    pub lstm_dropout: f64,
    pub lstm_recurrent_dropout: f64,
    /// Hidden FC widths of the cascade head (output layer of 2 appended).
    pub cascade_fc: Vec<usize>,
    /// Hidden FC widths of the i3D and 2D regression heads.
    pub regression_fc: Vec<usize>,
    pub classification_fc: Vec<usize>,
    pub classes: usize,
    /// Flatten (true) or average-pool (false) per-frame trunk features before
    /// the LSTM.
    pub cascade_flatten: bool,
}

impl Profile {
    pub fn for_scale(scale: Scale) -> Self {
        match scale {
            Scale::Paper => Profile {
                input_shape: vec![3, 100, 80],
                widths: [64, 128, 256, 512],
                depths: [2, 2, 3, 3],
                batchnorm: false,
                lstm_units: 1024,
                lstm_dropout: 0.2,
                lstm_recurrent_dropout: 0.2,
                cascade_fc: vec![512, 256],
                regression_fc: vec![512],
                classification_fc: vec![512, 128],
                classes: 7,
                cascade_flatten: false,
            },
            Scale::Desk => Profile {
                input_shape: vec![3, 32, 24],
                widths: [8, 16, 32, 64],
                depths: [1, 1, 1, 1],
                batchnorm: false,
                lstm_units: 64,
                lstm_dropout: 0.2,
                lstm_recurrent_dropout: 0.2,
                cascade_fc: vec![32, 16],
                regression_fc: vec![32],
                classification_fc: vec![32, 16],
                classes: 7,
                cascade_flatten: true,
            },
        }
    }

    pub fn desk() -> Self {
        Self::for_scale(Scale::Desk)
    }

    pub fn paper() -> Self {
        Self::for_scale(Scale::Paper)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Head {
    /// Convolutional trunk only.
    None,
    /// Average-pooled features, hidden FC layers, `classes` logits.
    Classification,
    /// Average-pooled features, hidden FC layers, 2 outputs (valence, arousal).
    Regression,
}

fn dense_stack(layers: &mut Vec<LayerSpec>, mut features: usize, hidden: &[usize], outputs: usize) {
    for (i, &w) in hidden.iter().enumerate() {
        layers.push(LayerSpec::new(
            format!("fc{}", i + 1),
            LayerKind::Dense { in_features: features, out_features: w },
        ));
        layers.push(LayerSpec::new(format!("fc{}_relu", i + 1), LayerKind::Relu));
        features = w;
    }
    layers.push(LayerSpec::new(
        "out",
        LayerKind::Dense { in_features: features, out_features: outputs },
    ));
}

/// Fan-in scaled uniform initialisation for every declared tensor that has
/// no entry yet.
pub fn init_weights<T: Scalar>(model: &mut ModelSpec<T>, rng: &mut RngStream) -> Result<()> {
    for layer in &model.layers {
        for (suffix, shape, role) in layer.kind.params() {
            let name = layer.param_name(suffix);
            if model.weights.contains_key(&name) {
                continue;
            }
            let t = match (&layer.kind, suffix, role) {
                (_, _, ParamRole::Buffer) if suffix == "running_var" => Tensor::ones(&shape),
                (_, _, ParamRole::Buffer) => Tensor::zeros(&shape),
                (LayerKind::BatchNorm { .. }, "gamma", _) => Tensor::ones(&shape),
                (LayerKind::BatchNorm { .. }, _, _) => Tensor::zeros(&shape),
                (LayerKind::Lstm { hidden, .. }, "bias", _) => {
                    let h = *hidden;
                    Tensor::from_fn(&shape, |i| if (h..2 * h).contains(&i[0]) { T::one() } else { T::zero() })
                }
                (LayerKind::Lstm { hidden, .. }, _, _) => {
                    let a = 1.0 / (*hidden as f64).sqrt();
                    Tensor::seeded_uniform(rng, &shape, T::from_f64(-a), T::from_f64(a))?
                }
                (_, "bias", _) => Tensor::zeros(&shape),
                (_, _, _) => {
                    let fan_in: usize = shape[1..].iter().product();
                    let a = (6.0 / fan_in as f64).sqrt();
                    Tensor::seeded_uniform(rng, &shape, T::from_f64(-a), T::from_f64(a))?
                }
            };
            model.weights.insert(name, t);
        }
    }
    Ok(())
}

/// Four 3x3 conv blocks (optionally with batch norm) with 2x2 max pooling
/// between blocks, followed by the chosen head.
pub fn build_vgg_mini(profile: &Profile, head: Head, rng: &mut RngStream) -> Result<ModelSpec> {
    let mut layers = vec![];
    let mut block_starts = vec![];
    let mut ch = profile.input_shape[0];
    for b in 0..4 {
        if b > 0 {
            layers.push(LayerSpec::new(format!("pool{b}"), LayerKind::MaxPool { window: vec![2, 2] }));
        }
        block_starts.push(layers.len());
        for k in 0..profile.depths[b] {
            let out = profile.widths[b];
            layers.push(LayerSpec::new(
                format!("block{}_conv{}", b + 1, k + 1),
                LayerKind::Conv2d { in_ch: ch, out_ch: out, kernel: 3, stride: 1, padding: 1 },
            ));
            if profile.batchnorm {
                layers.push(LayerSpec::new(
                    format!("block{}_bn{}", b + 1, k + 1),
                    LayerKind::BatchNorm { channels: out, eps: 1e-5, momentum: 0.1 },
                ));
            }
            layers.push(LayerSpec::new(format!("block{}_relu{}", b + 1, k + 1), LayerKind::Relu));
            ch = out;
        }
    }
    let head_start = attach_head(&mut layers, ch, profile, &head);
    let mut model = ModelSpec::new(profile.input_shape.clone(), InputKind::Frames, layers)?;
    model.block_starts = block_starts;
    model.head_start = head_start;
    init_weights(&mut model, rng)?;
    Ok(model)
}

fn attach_head(layers: &mut Vec<LayerSpec>, ch: usize, profile: &Profile, head: &Head) -> Option<usize> {
    let start = layers.len();
    match head {
        Head::None => return None,
        Head::Classification => {
            layers.push(LayerSpec::new("head_pool", LayerKind::GlobalAvgPool));
            dense_stack(layers, ch, &profile.classification_fc, profile.classes);
        }
        Head::Regression => {
            layers.push(LayerSpec::new("head_pool", LayerKind::GlobalAvgPool));
            dense_stack(layers, ch, &profile.regression_fc, 2);
        }
    }
    Some(start)
}

/// A small residual base: the second block is a two-conv residual unit.
pub fn build_residual_mini(profile: &Profile, head: Head, rng: &mut RngStream) -> Result<ModelSpec> {
    let [w1, w2, w3, w4] = profile.widths;
    let c0 = profile.input_shape[0];
    let conv = |i, o| LayerKind::Conv2d { in_ch: i, out_ch: o, kernel: 3, stride: 1, padding: 1 };
    let bn = |c| LayerKind::BatchNorm { channels: c, eps: 1e-5, momentum: 0.1 };
    let mut layers = vec![
        LayerSpec::new("block1_conv1", conv(c0, w1)),
        LayerSpec::new("block1_relu1", LayerKind::Relu),
        LayerSpec::new("pool1", LayerKind::MaxPool { window: vec![2, 2] }),
        LayerSpec::new("block2_conv1", conv(w1, w2)),
        LayerSpec::new("block2_relu1", LayerKind::Relu),
        LayerSpec::new("block2_conv2", conv(w2, w2)),
        LayerSpec::new("block2_bn2", bn(w2)),
        LayerSpec::new("block2_relu2", LayerKind::Relu),
        LayerSpec::new("block2_conv3", conv(w2, w2)),
        LayerSpec::new("block2_bn3", bn(w2)),
        LayerSpec::new("block2_add", LayerKind::SkipAdd { target: "block2_relu1".into() }),
        LayerSpec::new("block2_relu3", LayerKind::Relu),
        LayerSpec::new("pool2", LayerKind::MaxPool { window: vec![2, 2] }),
        LayerSpec::new("block3_conv1", conv(w2, w3)),
        LayerSpec::new("block3_relu1", LayerKind::Relu),
        LayerSpec::new("pool3", LayerKind::MaxPool { window: vec![2, 2] }),
        LayerSpec::new("block4_conv1", conv(w3, w4)),
        LayerSpec::new("block4_relu1", LayerKind::Relu),
    ];
    let head_start = attach_head(&mut layers, w4, profile, &head);
    let mut model = ModelSpec::new(profile.input_shape.clone(), InputKind::Frames, layers)?;
    model.block_starts = vec![0, 3, 13, 16];
    model.head_start = head_start;
    init_weights(&mut model, rng)?;
    Ok(model)
}

fn require_trunk(base: &ModelSpec) -> Result<()> {
    if base.has_head() {
        return Err(Error::Composition(
            "base model still carries its head; pass `base.trunk()`".into(),
        ));
    }
    if base.input_kind != InputKind::Frames {
        return Err(Error::Composition("base model must be a 2D frame model".into()));
    }
    Ok(())
}

/// Per-frame trunk, LSTM over the feature sequence (last hidden state only),
/// then hidden FC layers and 2 outputs.
pub fn build_cnn_lstm(base: &ModelSpec, profile: &Profile, rng: &mut RngStream) -> Result<ModelSpec> {
    require_trunk(base)?;
    let mut layers = vec![LayerSpec::new("fold_time", LayerKind::FoldTime)];
    layers.extend(base.layers.iter().cloned());
    let frame = base.batch_shape(1, 1);
    let trunk_out = base.infer_shapes(&frame)?.pop().expect("input shape");
    let head_start = layers.len();
    let features = if profile.cascade_flatten {
        layers.push(LayerSpec::new("frame_flatten", LayerKind::Flatten));
        trunk_out[1..].iter().product()
    } else {
        layers.push(LayerSpec::new("frame_pool", LayerKind::GlobalAvgPool));
        trunk_out[1]
    };
    layers.push(LayerSpec::new("unfold_time", LayerKind::UnfoldTime));
    layers.push(LayerSpec::new(
        "lstm",
        LayerKind::Lstm {
            input: features,
            hidden: profile.lstm_units,
            dropout: profile.lstm_dropout,
            recurrent_dropout: profile.lstm_recurrent_dropout,
            return_sequences: false,
        },
    ));
    dense_stack(&mut layers, profile.lstm_units, &profile.cascade_fc, 2);

    let mut model = ModelSpec::new(base.input_shape.clone(), InputKind::Clips, layers)?;
    model.weights = base.weights.clone();
    model.block_starts = base.block_starts.iter().map(|s| s + 1).collect();
    model.head_start = Some(head_start);
    init_weights(&mut model, rng)?;
    Ok(model)
}

/// Inflates the base trunk to 3D and attaches a pooled FC regression head.
pub fn build_i3d(base: &ModelSpec, cfg: &InflationConfig, profile: &Profile, rng: &mut RngStream) -> Result<ModelSpec> {
    let trunk = base.trunk();
    let mut model = inflate_model(&trunk, cfg, rng)?;
    let ch = model
        .layers
        .iter()
        .rev()
        .find_map(|l| match l.kind {
            LayerKind::Conv3d { out_ch, .. } => Some(out_ch),
            _ => None,
        })
        .ok_or_else(|| Error::config("base trunk has no convolutions"))?;
    let start = model.layers.len();
    model.layers.push(LayerSpec::new("head_pool", LayerKind::GlobalAvgPool));
    dense_stack(&mut model.layers, ch, &profile.regression_fc, 2);
    model.head_start = Some(start);
    model.check_graph()?;
    init_weights(&mut model, rng)?;
    Ok(model)
}
