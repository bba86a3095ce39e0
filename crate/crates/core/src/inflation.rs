//! Growing 2D convolution kernels into 3D ones.
//!
//! A `[out, in, kh, kw]` kernel becomes `[out, in, n, kh, kw]`, either by
//! copying it into all `n` temporal slices or by placing it in the centre
//! slice and filling the others with zeros or zero-mean uniform noise. The
//! same configuration also decides which weights stay frozen during training,
//! the per-block temporal dilation and the regression target multiplier.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{LayerKind, ParamRole};
use crate::model::{InputKind, LayerSpec, ModelSpec};
use crate::rng::RngStream;
use crate::tensor::{moments, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InflationMode {
    Centered,
    Copied,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffCenterInit {
    Zero,
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalPadding {
    /// Zero-pad `dilation * (n - 1) / 2` frames on each side; clip length is
    /// preserved through every layer.
    Same,
    /// No temporal padding; each layer shortens the clip.
    Valid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InflationConfig {
    pub mode: InflationMode,
    /// Fill of the off-centre slices in centred mode. Ignored when copying.
    pub off_center_init: OffCenterInit,
    /// Freeze the centre temporal slice of every inflated kernel.
    pub masking: bool,
    /// Temporal dilation of conv blocks 1..4.
    pub dilation_schedule: [usize; 4],
    pub target_multiplier: f64,
    /// Temporal kernel extent `n`; must be odd.
    pub temporal_extent: usize,
    /// Divide copied kernels by `n`.
    pub copied_rescale: bool,
    pub temporal_padding: TemporalPadding,
}

impl Default for InflationConfig {
    fn default() -> Self {
        InflationConfig {
            mode: InflationMode::Centered,
            off_center_init: OffCenterInit::Zero,
            masking: false,
            dilation_schedule: [1, 1, 1, 1],
            target_multiplier: 1.0,
            temporal_extent: 3,
            copied_rescale: false,
            temporal_padding: TemporalPadding::Same,
        }
    }
}

impl InflationConfig {
    /// Centred, random off-centre init, no masking, no dilation, x1.
    pub fn c1() -> Self {
        InflationConfig {
            mode: InflationMode::Centered,
            off_center_init: OffCenterInit::Random,
            masking: false,
            dilation_schedule: [1, 1, 1, 1],
            target_multiplier: 1.0,
            ..Default::default()
        }
    }

    /// Copied, masked, dilation 1/2/4/8, x100.
    pub fn c2() -> Self {
        InflationConfig {
            mode: InflationMode::Copied,
            off_center_init: OffCenterInit::Zero,
            masking: true,
            dilation_schedule: [1, 2, 4, 8],
            target_multiplier: 100.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.temporal_extent % 2 == 0 {
            return Err(Error::config(format!(
                "temporal extent {} must be odd so a centre slice exists",
                self.temporal_extent
            )));
        }
        if let Some(d) = self.dilation_schedule.iter().find(|d| ![1, 2, 4, 8].contains(*d)) {
            return Err(Error::config(format!("temporal dilation {d} not in {{1, 2, 4, 8}}")));
        }
        if !(self.target_multiplier > 0.0) || !self.target_multiplier.is_finite() {
            return Err(Error::config(format!(
                "target multiplier {} must be positive",
                self.target_multiplier
            )));
        }
        Ok(())
    }

    pub fn center(&self) -> usize {
        self.temporal_extent / 2
    }

    fn temporal_padding_for(&self, dilation: usize) -> usize {
        match self.temporal_padding {
            TemporalPadding::Same => dilation * (self.temporal_extent - 1) / 2,
            TemporalPadding::Valid => 0,
        }
    }
}

/// `[out, in, kh, kw] -> [out, in, n, kh, kw]`.
pub fn inflate_kernel<T: Scalar>(w2d: &Tensor<T>, cfg: &InflationConfig, rng: &mut RngStream) -> Result<Tensor<T>> {
    cfg.validate()?;
    let s = w2d.shape();
    if s.len() != 4 {
        return Err(Error::dim(format!("inflate_kernel expects [out, in, kh, kw], got {s:?}")));
    }
    let n = cfg.temporal_extent;
    let slice = s[2] * s[3];
    let (o, i) = (s[0], s[1]);
    let center = cfg.center();

    // off-centre fill, drawn once per slice position in a fixed order
    let noise_half_width = match (cfg.mode, cfg.off_center_init) {
        (InflationMode::Centered, OffCenterInit::Random) => {
            let (_, var) = moments(w2d.data())?;
            // uniform on [-a, a] has std a / sqrt(3)
            Some(var.sqrt() * 3f64.sqrt())
        }
        _ => None,
    };
    let scale = if cfg.mode == InflationMode::Copied && cfg.copied_rescale {
        1.0 / n as f64
    } else {
        1.0
    };

    let mut data = Vec::with_capacity(w2d.len() * n);
    for oc in 0..o {
        for ic in 0..i {
            let src = &w2d.data()[(oc * i + ic) * slice..(oc * i + ic + 1) * slice];
            for t in 0..n {
                match cfg.mode {
                    InflationMode::Copied => {
                        data.extend(src.iter().map(|&v| T::from_f64(v.as_f64() * scale)));
                    }
                    InflationMode::Centered if t == center => data.extend_from_slice(src),
                    InflationMode::Centered => match noise_half_width {
                        Some(a) if a > 0.0 => {
                            data.extend((0..slice).map(|_| T::from_f64(rng.uniform(-a, a))));
                        }
                        _ => data.extend(std::iter::repeat(T::zero()).take(slice)),
                    },
                }
            }
        }
    }
    Tensor::new(vec![o, i, n, s[2], s[3]], data)
}

/// Inflates every layer of a 2D trunk. Conv block `b` gets temporal dilation
/// `dilation_schedule[b]`.
pub fn inflate_model<T: Scalar>(model2d: &ModelSpec<T>, cfg: &InflationConfig, rng: &mut RngStream) -> Result<ModelSpec<T>> {
    cfg.validate()?;
    if model2d.input_kind != InputKind::Frames {
        return Err(Error::config("inflate_model expects a 2D frame model"));
    }
    let n = cfg.temporal_extent;
    let mut layers = Vec::with_capacity(model2d.layers.len());
    let mut weights = BTreeMap::new();
    for (idx, layer) in model2d.layers.iter().enumerate() {
        let copy_params = |weights: &mut BTreeMap<String, Tensor<T>>| -> Result<()> {
            for (suffix, _, _) in layer.kind.params() {
                let name = layer.param_name(suffix);
                let t = model2d
                    .weights
                    .get(&name)
                    .ok_or_else(|| Error::config(format!("missing weight `{name}`")))?;
                weights.insert(name, t.clone());
            }
            Ok(())
        };
        let kind = match &layer.kind {
            LayerKind::Conv2d { in_ch, out_ch, kernel, stride, padding } => {
                let dilation = cfg.dilation_schedule[model2d.block_of(idx).unwrap_or(0)];
                let w = model2d
                    .weights
                    .get(&layer.param_name("weight"))
                    .ok_or_else(|| Error::config(format!("missing weight `{}.weight`", layer.name)))?;
                weights.insert(layer.param_name("weight"), inflate_kernel(w, cfg, rng)?);
                let b = model2d
                    .weights
                    .get(&layer.param_name("bias"))
                    .ok_or_else(|| Error::config(format!("missing weight `{}.bias`", layer.name)))?;
                weights.insert(layer.param_name("bias"), b.clone());
                LayerKind::Conv3d {
                    in_ch: *in_ch,
                    out_ch: *out_ch,
                    kt: n,
                    kernel: *kernel,
                    stride: *stride,
                    padding: *padding,
                    temporal_padding: cfg.temporal_padding_for(dilation),
                    temporal_dilation: dilation,
                }
            }
            LayerKind::BatchNorm { .. } => {
                copy_params(&mut weights)?;
                layer.kind.clone()
            }
            LayerKind::MaxPool { window } if window.len() == 2 => LayerKind::MaxPool {
                window: vec![1, window[0], window[1]],
            },
            LayerKind::Relu | LayerKind::Dropout { .. } | LayerKind::SkipAdd { .. } | LayerKind::GlobalAvgPool => {
                layer.kind.clone()
            }
            other => {
                return Err(Error::UnsupportedLayer {
                    name: layer.name.clone(),
                    reason: format!("{} layers cannot be inflated", other.tag()),
                })
            }
        };
        layers.push(LayerSpec::new(layer.name.clone(), kind));
    }
    let mut out = ModelSpec::new(model2d.input_shape.clone(), InputKind::Clips, layers)?;
    out.weights = weights;
    out.block_starts = model2d.block_starts.clone();
    Ok(out)
}

/// Per-parameter binary masks: 1 = trainable, 0 = frozen.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientMask {
    pub masks: BTreeMap<String, Tensor>,
}

impl GradientMask {
    pub fn all_ones<T: Scalar>(model: &ModelSpec<T>) -> Self {
        GradientMask {
            masks: model
                .declared_params()
                .into_iter()
                .filter(|p| p.2 == ParamRole::Trainable)
                .map(|(name, shape, _)| (name, Tensor::ones(&shape)))
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.masks.get(name)
    }

    /// Freezes every parameter of the named layers.
    pub fn freeze_layers<T: Scalar>(&mut self, model: &ModelSpec<T>, layer_names: &[&str]) -> Result<()> {
        for name in layer_names {
            let idx = model
                .layer_index(name)
                .ok_or_else(|| Error::config(format!("no layer named `{name}`")))?;
            let layer = &model.layers[idx];
            for (suffix, shape, role) in layer.kind.params() {
                if role == ParamRole::Trainable {
                    self.masks.insert(layer.param_name(suffix), Tensor::zeros(&shape));
                }
            }
        }
        Ok(())
    }

    /// Freezes all conv blocks before `block` (0-based).
    pub fn freeze_blocks_before<T: Scalar>(&mut self, model: &ModelSpec<T>, block: usize) -> Result<()> {
        let names: Vec<&str> = model
            .layers
            .iter()
            .enumerate()
            .filter(|(i, _)| model.block_of(*i).is_some_and(|b| b < block))
            .map(|(_, l)| l.name.as_str())
            .collect();
        self.freeze_layers(model, &names)
    }

    /// `(frozen, total)` entry counts over the given parameters.
    pub fn frozen_count<'a>(&self, names: impl IntoIterator<Item = &'a String>) -> (usize, usize) {
        names.into_iter().fold((0, 0), |(f, t), n| match self.masks.get(n) {
            Some(m) => (f + m.data().iter().filter(|&&v| v == 0.0).count(), t + m.len()),
            None => (f, t),
        })
    }
}

/// Masks that freeze the centre temporal slice of every inflated kernel when
/// `cfg.masking` is set; everything else trains.
pub fn build_gradient_mask<T: Scalar>(model3d: &ModelSpec<T>, cfg: &InflationConfig) -> Result<GradientMask> {
    cfg.validate()?;
    let mut mask = GradientMask::all_ones(model3d);
    for layer in &model3d.layers {
        if let LayerKind::Conv3d { kt, in_ch, out_ch, kernel, .. } = layer.kind {
            if kt != cfg.temporal_extent {
                return Err(Error::config(format!(
                    "layer `{}` has kt={kt}, config says n={}",
                    layer.name, cfg.temporal_extent
                )));
            }
            if cfg.masking {
                let c = cfg.center();
                let m = Tensor::from_fn(&[out_ch, in_ch, kt, kernel, kernel], |i| if i[2] == c { 0.0 } else { 1.0 });
                mask.masks.insert(layer.param_name("weight"), m);
            }
        }
    }
    Ok(mask)
}

fn check_multiplier(m: f64) -> Result<f64> {
    if !(m > 0.0) || !m.is_finite() {
        return Err(Error::config(format!("target multiplier {m} must be positive")));
    }
    Ok(m)
}

pub fn scale_targets(labels: &[f32], multiplier: f64) -> Result<Vec<f32>> {
    let m = check_multiplier(multiplier)?;
    Ok(labels.iter().map(|&v| (v as f64 * m) as f32).collect())
}

pub fn unscale_predictions(preds: &[f32], multiplier: f64) -> Result<Vec<f32>> {
    let m = check_multiplier(multiplier)?;
    Ok(preds.iter().map(|&v| (v as f64 / m) as f32).collect())
}
