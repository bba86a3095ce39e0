//! Forward and backward kernels for every layer kind the two architectures
//! use, plus the [`LayerKind`] catalogue the model graph is written in.

pub mod activation;
pub mod conv;
pub mod dense;
pub mod lstm;
pub mod norm;
pub mod pool;

pub use activation::{dropout_mask, relu_backward, relu_forward, softmax_rows};
pub use conv::{conv_backward, conv_forward, Conv2DLayer, Conv3DLayer, ConvGeometry};
pub use dense::{dense_backward, dense_forward, DenseLayer};
pub use lstm::{LSTMLayer, LstmCache};
pub use norm::{BatchNormCache, BatchNormLayer};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum LayerKind {
    Conv2d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Conv3d {
        in_ch: usize,
        out_ch: usize,
        kt: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        temporal_padding: usize,
        temporal_dilation: usize,
    },
    BatchNorm {
        channels: usize,
        eps: f64,
        momentum: f64,
    },
    Relu,
    /// Non-overlapping max pooling over the trailing spatial (or
    /// spatiotemporal) axes.
    MaxPool { window: Vec<usize> },
    GlobalAvgPool,
    Flatten,
    Dense { in_features: usize, out_features: usize },
    Lstm {
        input: usize,
        hidden: usize,
        dropout: f64,
        recurrent_dropout: f64,
        return_sequences: bool,
    },
    Dropout { rate: f64 },
    /// Adds the output of an earlier, identically shaped layer.
    SkipAdd { target: String },
    /// `[n, c, t, h, w] -> [n*t, c, h, w]`, so a 2D trunk runs on every frame.
    FoldTime,
    /// `[n*t, f] -> [n, t, f]`, undoing the innermost [`LayerKind::FoldTime`].
    UnfoldTime,
}

/// Role of a named tensor attached to a layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamRole {
    Trainable,
    /// Updated by forward passes in training mode, never by the optimizer.
    Buffer,
}

impl LayerKind {
    pub fn tag(&self) -> &'static str {
        match self {
            LayerKind::Conv2d { .. } => "conv2d",
            LayerKind::Conv3d { .. } => "conv3d",
            LayerKind::BatchNorm { .. } => "batchnorm",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool { .. } => "maxpool",
            LayerKind::GlobalAvgPool => "globalavgpool",
            LayerKind::Flatten => "flatten",
            LayerKind::Dense { .. } => "dense",
            LayerKind::Lstm { .. } => "lstm",
            LayerKind::Dropout { .. } => "dropout",
            LayerKind::SkipAdd { .. } => "skip_add",
            LayerKind::FoldTime => "fold_time",
            LayerKind::UnfoldTime => "unfold_time",
        }
    }

    pub fn is_conv(&self) -> bool {
        matches!(self, LayerKind::Conv2d { .. } | LayerKind::Conv3d { .. })
    }

    /// Named tensors this layer owns, as `(suffix, shape, role)`.
    pub fn params(&self) -> Vec<(&'static str, Vec<usize>, ParamRole)> {
        use ParamRole::*;
        match *self {
            LayerKind::Conv2d { in_ch, out_ch, kernel, .. } => vec![
                ("weight", vec![out_ch, in_ch, kernel, kernel], Trainable),
                ("bias", vec![out_ch], Trainable),
            ],
            LayerKind::Conv3d { in_ch, out_ch, kt, kernel, .. } => vec![
                ("weight", vec![out_ch, in_ch, kt, kernel, kernel], Trainable),
                ("bias", vec![out_ch], Trainable),
            ],
            LayerKind::BatchNorm { channels, .. } => vec![
                ("gamma", vec![channels], Trainable),
                ("beta", vec![channels], Trainable),
                ("running_mean", vec![channels], Buffer),
                ("running_var", vec![channels], Buffer),
            ],
            LayerKind::Dense { in_features, out_features } => vec![
                ("weight", vec![out_features, in_features], Trainable),
                ("bias", vec![out_features], Trainable),
            ],
            LayerKind::Lstm { input, hidden, .. } => vec![
                ("w_ih", vec![4 * hidden, input], Trainable),
                ("w_hh", vec![4 * hidden, hidden], Trainable),
                ("bias", vec![4 * hidden], Trainable),
            ],
            _ => vec![],
        }
    }

    pub fn trainable_count(&self) -> usize {
        self.params()
            .iter()
            .filter(|p| p.2 == ParamRole::Trainable)
            .map(|p| p.1.iter().product::<usize>())
            .sum()
    }

    /// Output shape for a batch-inclusive input shape. `time_stack` tracks
    /// temporal extents folded into the batch axis.
    pub fn output_shape(&self, s: &[usize], time_stack: &mut Vec<usize>) -> Result<Vec<usize>> {
        let bad = |what: &str| Error::dim(format!("{} cannot take input {s:?}: {what}", self.tag()));
        Ok(match self {
            LayerKind::Conv2d { in_ch, out_ch, kernel, stride, padding } => {
                if s.len() != 4 || s[1] != *in_ch {
                    return Err(bad("expected [n, in_ch, h, w]"));
                }
                let g = ConvGeometry {
                    in_ch: *in_ch,
                    out_ch: *out_ch,
                    kt: 1,
                    kh: *kernel,
                    kw: *kernel,
                    stride: *stride,
                    pad_t: 0,
                    pad_h: *padding,
                    pad_w: *padding,
                    dilation_t: 1,
                };
                let (_, h, w) = g.output_extent(1, s[2], s[3])?;
                vec![s[0], *out_ch, h, w]
            }
            LayerKind::Conv3d {
                in_ch,
                out_ch,
                kt,
                kernel,
                stride,
                padding,
                temporal_padding,
                temporal_dilation,
            } => {
                if s.len() != 5 || s[1] != *in_ch {
                    return Err(bad("expected [n, in_ch, t, h, w]"));
                }
                let g = ConvGeometry {
                    in_ch: *in_ch,
                    out_ch: *out_ch,
                    kt: *kt,
                    kh: *kernel,
                    kw: *kernel,
                    stride: *stride,
                    pad_t: *temporal_padding,
                    pad_h: *padding,
                    pad_w: *padding,
                    dilation_t: *temporal_dilation,
                };
                let (t, h, w) = g.output_extent(s[2], s[3], s[4])?;
                vec![s[0], *out_ch, t, h, w]
            }
            LayerKind::BatchNorm { channels, .. } => {
                if s.len() < 2 || s[1] != *channels {
                    return Err(bad("channel mismatch"));
                }
                s.to_vec()
            }
            LayerKind::Relu | LayerKind::Dropout { .. } | LayerKind::SkipAdd { .. } => s.to_vec(),
            LayerKind::MaxPool { window } => {
                if s.len() != window.len() + 2 || s[2..].iter().zip(window).any(|(d, w)| w > d) {
                    return Err(bad("window does not fit"));
                }
                let mut out = s[..2].to_vec();
                out.extend(pool::pooled_extents(&s[2..], window));
                out
            }
            LayerKind::GlobalAvgPool => {
                if s.len() < 3 {
                    return Err(bad("expected [n, c, ...]"));
                }
                vec![s[0], s[1]]
            }
            LayerKind::Flatten => {
                if s.len() < 2 {
                    return Err(bad("expected [n, ...]"));
                }
                vec![s[0], s[1..].iter().product()]
            }
            LayerKind::Dense { in_features, out_features } => {
                if s.len() != 2 || s[1] != *in_features {
                    return Err(bad("feature mismatch"));
                }
                vec![s[0], *out_features]
            }
            LayerKind::Lstm { input, hidden, return_sequences, .. } => {
                if s.len() != 3 || s[2] != *input {
                    return Err(bad("expected [n, steps, features]"));
                }
                if *return_sequences {
                    vec![s[0], s[1], *hidden]
                } else {
                    vec![s[0], *hidden]
                }
            }
            LayerKind::FoldTime => {
                if s.len() != 5 {
                    return Err(bad("expected [n, c, t, h, w]"));
                }
                time_stack.push(s[2]);
                vec![s[0] * s[2], s[1], s[3], s[4]]
            }
            LayerKind::UnfoldTime => {
                let t = time_stack.pop().ok_or_else(|| bad("no folded time axis"))?;
                if s.len() != 2 || s[0] % t != 0 {
                    return Err(bad("expected [n*t, f]"));
                }
                vec![s[0] / t, t, s[1]]
            }
        })
    }
}
