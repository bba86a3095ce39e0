//! Declarative layer graphs and their execution.

mod build;
mod exec;

pub use build::{build_cnn_lstm, build_i3d, build_residual_mini, build_vgg_mini, init_weights, Head, Profile, Scale};
pub use exec::{layer_backward, layer_forward, model_backward, model_forward, Backward, ForwardPass, LayerCache, Mode};

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::layers::{LayerKind, ParamRole};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, kind: LayerKind) -> Self {
        LayerSpec { name: name.into(), kind }
    }

    pub fn param_name(&self, suffix: &str) -> String {
        format!("{}.{suffix}", self.name)
    }
}

/// How a batch is laid out on the way in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputKind {
    /// `[n, c, h, w]`
    Frames,
    /// `[n, c, t, h, w]`
    Clips,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec<T = f32> {
    /// Per-frame shape `[c, h, w]`.
    pub input_shape: Vec<usize>,
    pub input_kind: InputKind,
    pub layers: Vec<LayerSpec>,
    pub weights: BTreeMap<String, Tensor<T>>,
    /// Index of the first layer of each conv block.
    pub block_starts: Vec<usize>,
    /// Index of the first head layer, if a head is attached.
    pub head_start: Option<usize>,
}

impl<T: Scalar> ModelSpec<T> {
    pub fn new(input_shape: Vec<usize>, input_kind: InputKind, layers: Vec<LayerSpec>) -> Result<Self> {
        let spec = ModelSpec {
            input_shape,
            input_kind,
            layers,
            weights: BTreeMap::new(),
            block_starts: vec![],
            head_start: None,
        };
        spec.check_graph()?;
        Ok(spec)
    }

    /// Names unique; skip targets strictly earlier.
    pub fn check_graph(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for l in &self.layers {
            if let LayerKind::SkipAdd { target } = &l.kind {
                if !seen.contains(target.as_str()) {
                    return Err(Error::config(format!(
                        "skip_add `{}` targets `{target}`, which is not an earlier layer",
                        l.name
                    )));
                }
            }
            if !seen.insert(l.name.as_str()) {
                return Err(Error::config(format!("duplicate layer name `{}`", l.name)));
            }
        }
        Ok(())
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    pub fn batch_shape(&self, batch: usize, frames: usize) -> Vec<usize> {
        let s = &self.input_shape;
        match self.input_kind {
            InputKind::Frames => vec![batch, s[0], s[1], s[2]],
            InputKind::Clips => vec![batch, s[0], frames, s[1], s[2]],
        }
    }

    /// Shapes after every layer, starting with the input.
    pub fn infer_shapes(&self, input: &[usize]) -> Result<Vec<Vec<usize>>> {
        let mut shapes = vec![input.to_vec()];
        let mut stack = vec![];
        for (i, l) in self.layers.iter().enumerate() {
            let cur = shapes.last().expect("non-empty");
            let next = l
                .kind
                .output_shape(cur, &mut stack)
                .map_err(|e| Error::dim(format!("layer `{}`: {e}", l.name)))?;
            if let LayerKind::SkipAdd { target } = &l.kind {
                let j = self.layer_index(target).expect("checked graph");
                if shapes[j + 1] != next {
                    return Err(Error::dim(format!(
                        "skip_add `{}`: shape {:?} vs target `{target}` {:?}",
                        l.name,
                        next,
                        shapes[j + 1]
                    )));
                }
                debug_assert!(j < i);
            }
            shapes.push(next);
        }
        Ok(shapes)
    }

    /// Every named tensor the layers declare, in layer order.
    pub fn declared_params(&self) -> Vec<(String, Vec<usize>, ParamRole)> {
        self.layers
            .iter()
            .flat_map(|l| {
                l.kind
                    .params()
                    .into_iter()
                    .map(move |(suffix, shape, role)| (l.param_name(suffix), shape, role))
            })
            .collect()
    }

    pub fn trainable_names(&self) -> Vec<String> {
        self.declared_params()
            .into_iter()
            .filter(|p| p.2 == ParamRole::Trainable)
            .map(|p| p.0)
            .collect()
    }

    /// Every parametrised layer has a weight entry of the declared shape.
    pub fn check_weights(&self) -> Result<()> {
        for (name, shape, _) in self.declared_params() {
            match self.weights.get(&name) {
                None => return Err(Error::config(format!("missing weight `{name}`"))),
                Some(t) if t.shape() != shape.as_slice() => {
                    return Err(Error::dim(format!(
                        "weight `{name}` has shape {:?}, layer declares {shape:?}",
                        t.shape()
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Trainable parameter count from the layer declarations alone.
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.kind.trainable_count()).sum()
    }

    /// Conv block a layer belongs to (0-based), if blocks were recorded.
    pub fn block_of(&self, layer: usize) -> Option<usize> {
        if self.block_starts.is_empty() || layer < self.block_starts[0] {
            return None;
        }
        if let Some(h) = self.head_start {
            if layer >= h {
                return None;
            }
        }
        Some(self.block_starts.iter().rposition(|&s| s <= layer).expect("layer past first block"))
    }

    pub fn has_head(&self) -> bool {
        self.head_start.is_some()
    }

    /// The layers before the head, with their weights.
    pub fn trunk(&self) -> ModelSpec<T> {
        let end = self.head_start.unwrap_or(self.layers.len());
        let layers: Vec<LayerSpec> = self.layers[..end].to_vec();
        let keep: HashSet<String> = layers
            .iter()
            .flat_map(|l| l.kind.params().into_iter().map(move |p| l.param_name(p.0)))
            .collect();
        ModelSpec {
            input_shape: self.input_shape.clone(),
            input_kind: self.input_kind,
            layers,
            weights: self
                .weights
                .iter()
                .filter(|(k, _)| keep.contains(*k))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
            block_starts: self.block_starts.clone(),
            head_start: None,
        }
    }

    pub fn cast<U: Scalar>(&self) -> ModelSpec<U> {
        ModelSpec {
            input_shape: self.input_shape.clone(),
            input_kind: self.input_kind,
            layers: self.layers.clone(),
            weights: self.weights.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            block_starts: self.block_starts.clone(),
            head_start: self.head_start,
        }
    }

    /// Human-readable architecture manifest: key/value header, then one line
    /// per layer.
    pub fn manifest(&self, frames: usize) -> Result<String> {
        let mut out = String::new();
        let input = self.batch_shape(1, frames);
        let shapes = self.infer_shapes(&input)?;
        let kind = match self.input_kind {
            InputKind::Frames => "frames",
            InputKind::Clips => "clips",
        };
        writeln!(out, "input_kind = {kind}").unwrap();
        writeln!(out, "input_shape = {:?}", input).unwrap();
        writeln!(out, "layers = {}", self.layers.len()).unwrap();
        writeln!(out, "params = {}", self.param_count()).unwrap();
        writeln!(out, "blocks = {:?}", self.block_starts).unwrap();
        if let Some(h) = self.head_start {
            writeln!(out, "head_start = {h}").unwrap();
        }
        writeln!(out, "[layers]").unwrap();
        for (i, l) in self.layers.iter().enumerate() {
            let block = self.block_of(i).map_or("-".to_string(), |b| (b + 1).to_string());
            let mut line = format!("{i:>3} {:<16} {:<14} block={block:<2} out={:?}", l.name, l.kind.tag(), shapes[i + 1]);
            for (suffix, shape, role) in l.kind.params() {
                let tag = if role == ParamRole::Buffer { "buffer" } else { "param" };
                write!(line, " {tag}:{suffix}=rank{}{:?}", shape.len(), shape).unwrap();
            }
            match &l.kind {
                LayerKind::Conv3d { kt, temporal_dilation, .. } => {
                    write!(line, " kt={kt} dilation={temporal_dilation}").unwrap()
                }
                LayerKind::Conv2d { kernel, .. } => write!(line, " k={kernel}").unwrap(),
                LayerKind::SkipAdd { target } => write!(line, " target={target}").unwrap(),
                LayerKind::MaxPool { window } => write!(line, " window={window:?}").unwrap(),
                _ => {}
            }
            writeln!(out, "{line}").unwrap();
        }
        Ok(out)
    }
}
