use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::layers::lstm::LstmGradAccumulator;
use crate::layers::{
    conv, conv_backward, conv_forward, dense_backward, dense_forward, dropout_mask, pool, relu_backward, relu_forward,
    BatchNormCache, BatchNormLayer, ConvGeometry, LSTMLayer, LayerKind, LstmCache,
};
use crate::model::{LayerSpec, ModelSpec};
use crate::rng::RngStream;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

impl Mode {
    pub fn is_train(self) -> bool {
        self == Mode::Train
    }
}

#[derive(Clone, Debug)]
enum Extra<T> {
    None,
    MaxPool(Vec<usize>),
    BatchNorm(BatchNormCache<T>),
    Dropout(Option<Tensor<T>>),
    Lstm(Vec<LstmCache<T>>),
    Time(usize),
}

/// State a layer's forward call leaves behind for its backward call.
#[derive(Clone, Debug)]
pub struct LayerCache<T> {
    tag: &'static str,
    input: Tensor<T>,
    extra: Extra<T>,
}

fn param<'a, T>(weights: &'a BTreeMap<String, Tensor<T>>, layer: &LayerSpec, suffix: &str) -> Result<&'a Tensor<T>> {
    let name = layer.param_name(suffix);
    weights
        .get(&name)
        .ok_or_else(|| Error::State(format!("missing weight `{name}`")))
}

fn geometry(kind: &LayerKind) -> ConvGeometry {
    match *kind {
        LayerKind::Conv2d { in_ch, out_ch, kernel, stride, padding } => ConvGeometry {
            in_ch,
            out_ch,
            kt: 1,
            kh: kernel,
            kw: kernel,
            stride,
            pad_t: 0,
            pad_h: padding,
            pad_w: padding,
            dilation_t: 1,
        },
        LayerKind::Conv3d {
            in_ch,
            out_ch,
            kt,
            kernel,
            stride,
            padding,
            temporal_padding,
            temporal_dilation,
        } => ConvGeometry {
            in_ch,
            out_ch,
            kt,
            kh: kernel,
            kw: kernel,
            stride,
            pad_t: temporal_padding,
            pad_h: padding,
            pad_w: padding,
            dilation_t: temporal_dilation,
        },
        _ => unreachable!("not a convolution"),
    }
}

fn batchnorm<T: Scalar>(layer: &LayerSpec, weights: &BTreeMap<String, Tensor<T>>) -> Result<BatchNormLayer<T>> {
    let LayerKind::BatchNorm { eps, momentum, .. } = layer.kind else {
        unreachable!()
    };
    Ok(BatchNormLayer {
        gamma: param(weights, layer, "gamma")?.clone(),
        beta: param(weights, layer, "beta")?.clone(),
        running_mean: param(weights, layer, "running_mean")?.clone(),
        running_var: param(weights, layer, "running_var")?.clone(),
        eps,
        momentum,
    })
}

fn lstm<T: Scalar>(layer: &LayerSpec, weights: &BTreeMap<String, Tensor<T>>) -> Result<LSTMLayer<T>> {
    let LayerKind::Lstm { dropout, recurrent_dropout, .. } = layer.kind else {
        unreachable!()
    };
    Ok(LSTMLayer {
        w_ih: param(weights, layer, "w_ih")?.clone(),
        w_hh: param(weights, layer, "w_hh")?.clone(),
        bias: param(weights, layer, "bias")?.clone(),
        dropout,
        recurrent_dropout,
    })
}

/// `[n, c, t, h, w] <-> [n, t, c, h, w]`
fn swap_ct<T: Scalar>(x: &Tensor<T>, n: usize, a: usize, b: usize, inner: usize) -> Vec<T> {
    let d = x.data();
    let mut out = Vec::with_capacity(d.len());
    for i in 0..n {
        for j in 0..b {
            for k in 0..a {
                let off = ((i * a + k) * b + j) * inner;
                out.extend_from_slice(&d[off..off + inner]);
            }
        }
    }
    out
}

/// Forward one layer. `outputs` holds every earlier layer's output (needed by
/// skip connections); `time_stack` tracks folded temporal extents.
pub fn layer_forward<T: Scalar>(
    layer: &LayerSpec,
    weights: &BTreeMap<String, Tensor<T>>,
    x: &Tensor<T>,
    skip_source: Option<&Tensor<T>>,
    mode: Mode,
    rng: &mut RngStream,
    time_stack: &mut Vec<usize>,
) -> Result<(Tensor<T>, LayerCache<T>, Vec<(String, Tensor<T>)>)> {
    let mut updates = vec![];
    let mut extra = Extra::None;
    let y = match &layer.kind {
        LayerKind::Conv2d { .. } => {
            let w = param(weights, layer, "weight")?;
            let s = w.shape();
            let w5 = w.reshape(&[s[0], s[1], 1, s[2], s[3]])?;
            let y = conv_forward(&conv::as_clip(x)?, &w5, param(weights, layer, "bias")?, &geometry(&layer.kind))?;
            conv::drop_time(y)?
        }
        LayerKind::Conv3d { .. } => conv_forward(
            x,
            param(weights, layer, "weight")?,
            param(weights, layer, "bias")?,
            &geometry(&layer.kind),
        )?,
        LayerKind::BatchNorm { .. } => {
            let bn = batchnorm(layer, weights)?;
            let (y, cache, upd) = bn.forward(x, mode.is_train())?;
            if let Some(u) = upd {
                updates.push((layer.param_name("running_mean"), u.mean));
                updates.push((layer.param_name("running_var"), u.var));
            }
            extra = Extra::BatchNorm(cache);
            y
        }
        LayerKind::Relu => relu_forward(x),
        LayerKind::MaxPool { window } => {
            let (y, arg) = pool::max_pool_forward(x, window)?;
            extra = Extra::MaxPool(arg);
            y
        }
        LayerKind::GlobalAvgPool => pool::global_avg_forward(x)?,
        LayerKind::Flatten => {
            let s = x.shape();
            x.reshape(&[s[0], s[1..].iter().product()])?
        }
        LayerKind::Dense { .. } => {
            dense_forward(param(weights, layer, "weight")?, param(weights, layer, "bias")?, x)?
        }
        LayerKind::Lstm { return_sequences, .. } => {
            let l = lstm(layer, weights)?;
            let kernel = l.kernel()?;
            let s = x.shape();
            if s.len() != 3 {
                return Err(Error::dim(format!("lstm `{}` expects [n, steps, f], got {s:?}", layer.name)));
            }
            let (n, steps, f) = (s[0], s[1], s[2]);
            let root = RngStream::new(rng.next_u64());
            let train = mode.is_train();
            let results: Vec<(Tensor<T>, LstmCache<T>)> = (0..n)
                .into_par_iter()
                .map(|i| {
                    let seq = Tensor::new(vec![steps, f], x.data()[i * steps * f..(i + 1) * steps * f].to_vec())?;
                    kernel.forward(&seq, train, &mut root.split(i as u64))
                })
                .collect::<Result<_>>()?;
            let h = l.hidden();
            let mut out = Vec::with_capacity(n * steps * h);
            let mut caches = Vec::with_capacity(n);
            for (y, c) in results {
                if *return_sequences {
                    out.extend_from_slice(y.data());
                } else {
                    out.extend_from_slice(&y.data()[(steps - 1) * h..]);
                }
                caches.push(c);
            }
            extra = Extra::Lstm(caches);
            if *return_sequences {
                Tensor::new(vec![n, steps, h], out)?
            } else {
                Tensor::new(vec![n, h], out)?
            }
        }
        LayerKind::Dropout { rate } => {
            if mode.is_train() && *rate > 0.0 {
                let mask = dropout_mask(x.shape(), *rate, rng)?;
                let y = x.mul(&mask)?;
                extra = Extra::Dropout(Some(mask));
                y
            } else {
                extra = Extra::Dropout(None);
                x.clone()
            }
        }
        LayerKind::SkipAdd { target } => {
            let src = skip_source
                .ok_or_else(|| Error::State(format!("skip_add `{}` has no output of `{target}`", layer.name)))?;
            x.add(src)
                .map_err(|e| Error::dim(format!("skip_add `{}`: {e}", layer.name)))?
        }
        LayerKind::FoldTime => {
            let s = x.shape().to_vec();
            if s.len() != 5 {
                return Err(Error::dim(format!("fold_time expects [n, c, t, h, w], got {s:?}")));
            }
            time_stack.push(s[2]);
            extra = Extra::Time(s[2]);
            let data = swap_ct(x, s[0], s[1], s[2], s[3] * s[4]);
            Tensor::new(vec![s[0] * s[2], s[1], s[3], s[4]], data)?
        }
        LayerKind::UnfoldTime => {
            let t = time_stack
                .pop()
                .ok_or_else(|| Error::State("unfold_time without a folded time axis".into()))?;
            let s = x.shape();
            if s.len() != 2 || s[0] % t != 0 {
                return Err(Error::dim(format!("unfold_time expects [n*{t}, f], got {s:?}")));
            }
            extra = Extra::Time(t);
            x.reshape(&[s[0] / t, t, s[1]])?
        }
    };
    Ok((
        y,
        LayerCache {
            tag: layer.kind.tag(),
            input: x.clone(),
            extra,
        },
        updates,
    ))
}

/// Exact gradients of one layer. Returns the input gradient and the named
/// parameter gradients.
pub fn layer_backward<T: Scalar>(
    layer: &LayerSpec,
    weights: &BTreeMap<String, Tensor<T>>,
    cache: &LayerCache<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<(String, Tensor<T>)>)> {
    if cache.tag != layer.kind.tag() {
        return Err(Error::State(format!(
            "layer `{}` ({}) given a {} cache",
            layer.name,
            layer.kind.tag(),
            cache.tag
        )));
    }
    let x = &cache.input;
    let mismatch = || Error::State(format!("layer `{}`: cache does not match layer kind", layer.name));
    let mut grads = vec![];
    let gx = match &layer.kind {
        LayerKind::Conv2d { .. } => {
            let w = param(weights, layer, "weight")?;
            let s = w.shape();
            let w5 = w.reshape(&[s[0], s[1], 1, s[2], s[3]])?;
            let g = conv_backward(&conv::as_clip(x)?, &w5, &conv::as_clip(grad_out)?, &geometry(&layer.kind))?;
            grads.push((layer.param_name("weight"), g.weight.into_reshape(s)?));
            grads.push((layer.param_name("bias"), g.bias));
            conv::drop_time(g.input)?
        }
        LayerKind::Conv3d { .. } => {
            let g = conv_backward(x, param(weights, layer, "weight")?, grad_out, &geometry(&layer.kind))?;
            grads.push((layer.param_name("weight"), g.weight));
            grads.push((layer.param_name("bias"), g.bias));
            g.input
        }
        LayerKind::BatchNorm { .. } => {
            let Extra::BatchNorm(c) = &cache.extra else {
                return Err(mismatch());
            };
            let (gx, mut gp) = batchnorm(layer, weights)?.backward(c, grad_out)?;
            let gb = gp.pop().expect("beta");
            let gg = gp.pop().expect("gamma");
            grads.push((layer.param_name("gamma"), gg));
            grads.push((layer.param_name("beta"), gb));
            gx
        }
        LayerKind::Relu => relu_backward(x, grad_out)?,
        LayerKind::MaxPool { .. } => {
            let Extra::MaxPool(arg) = &cache.extra else {
                return Err(mismatch());
            };
            pool::max_pool_backward(x.shape(), arg, grad_out)?
        }
        LayerKind::GlobalAvgPool => pool::global_avg_backward(x.shape(), grad_out)?,
        LayerKind::Flatten | LayerKind::UnfoldTime => grad_out.reshape(x.shape())?,
        LayerKind::Dense { .. } => {
            let (gx, gw, gb) = dense_backward(param(weights, layer, "weight")?, x, grad_out)?;
            grads.push((layer.param_name("weight"), gw));
            grads.push((layer.param_name("bias"), gb));
            gx
        }
        LayerKind::Lstm { return_sequences, .. } => {
            let Extra::Lstm(caches) = &cache.extra else {
                return Err(mismatch());
            };
            let l = lstm(layer, weights)?;
            let (n, steps, f) = (x.shape()[0], x.shape()[1], x.shape()[2]);
            let h = l.hidden();
            let expect: Vec<usize> = if *return_sequences { vec![n, steps, h] } else { vec![n, h] };
            if grad_out.shape() != expect.as_slice() || caches.len() != n {
                return Err(Error::State(format!(
                    "lstm `{}`: grad {:?} does not match cached batch",
                    layer.name,
                    grad_out.shape()
                )));
            }
            let mut acc = LstmGradAccumulator::new(&l);
            let mut gx = Vec::with_capacity(x.len());
            for (i, c) in caches.iter().enumerate() {
                let mut g = vec![T::zero(); steps * h];
                if *return_sequences {
                    g.copy_from_slice(&grad_out.data()[i * steps * h..(i + 1) * steps * h]);
                } else {
                    g[(steps - 1) * h..].copy_from_slice(&grad_out.data()[i * h..(i + 1) * h]);
                }
                let gi = acc.add_sequence(c, &Tensor::new(vec![steps, h], g)?)?;
                gx.extend_from_slice(gi.data());
            }
            let mut gp = acc.finish().into_iter();
            for suffix in ["w_ih", "w_hh", "bias"] {
                grads.push((layer.param_name(suffix), gp.next().expect("lstm grads")));
            }
            Tensor::new(vec![n, steps, f], gx)?
        }
        LayerKind::Dropout { .. } => {
            let Extra::Dropout(mask) = &cache.extra else {
                return Err(mismatch());
            };
            match mask {
                Some(m) => grad_out.mul(m)?,
                None => grad_out.clone(),
            }
        }
        LayerKind::SkipAdd { .. } => grad_out.clone(),
        LayerKind::FoldTime => {
            let Extra::Time(t) = cache.extra else {
                return Err(mismatch());
            };
            let s = x.shape();
            let data = swap_ct(grad_out, s[0], t, s[1], s[3] * s[4]);
            Tensor::new(s.to_vec(), data)?
        }
    };
    Ok((gx, grads))
}

/// Result of a whole-model forward pass.
pub struct ForwardPass<T> {
    pub output: Tensor<T>,
    /// New running statistics produced in training mode.
    pub buffer_updates: Vec<(String, Tensor<T>)>,
    tape: Option<Vec<LayerCache<T>>>,
}

pub struct Backward<T> {
    pub input: Tensor<T>,
    pub params: BTreeMap<String, Tensor<T>>,
}

/// Runs every layer in order. Caches are kept only in training mode.
pub fn model_forward<T: Scalar>(
    model: &ModelSpec<T>,
    batch: &Tensor<T>,
    mode: Mode,
    rng: &mut RngStream,
) -> Result<ForwardPass<T>> {
    let expected_rank = model.batch_shape(1, 1).len();
    if !model.layers.is_empty() {
        let s = batch.shape();
        let want = model.batch_shape(s[0], if s.len() == 5 { s[2] } else { 1 });
        if s.len() != expected_rank || s != want.as_slice() {
            return Err(Error::dim(format!(
                "batch {:?} does not match model input {:?}",
                s, want
            )));
        }
    }
    let skip_targets: Vec<usize> = model
        .layers
        .iter()
        .filter_map(|l| match &l.kind {
            LayerKind::SkipAdd { target } => model.layer_index(target),
            _ => None,
        })
        .collect();

    let mut tape = Vec::with_capacity(model.layers.len());
    let mut outputs: BTreeMap<usize, Tensor<T>> = BTreeMap::new();
    let mut updates = vec![];
    let mut time_stack = vec![];
    let mut x = batch.clone();
    for (i, layer) in model.layers.iter().enumerate() {
        let skip = match &layer.kind {
            LayerKind::SkipAdd { target } => model.layer_index(target).and_then(|j| outputs.get(&j)),
            _ => None,
        };
        let (y, cache, upd) = layer_forward(layer, &model.weights, &x, skip, mode, rng, &mut time_stack)
            .map_err(|e| match e {
                Error::Dimension(m) if !m.contains(&format!("`{}`", layer.name)) => {
                    Error::Dimension(format!("layer `{}`: {m}", layer.name))
                }
                other => other,
            })?;
        updates.extend(upd);
        if mode.is_train() {
            tape.push(cache);
        }
        if skip_targets.contains(&i) {
            outputs.insert(i, y.clone());
        }
        x = y;
    }
    Ok(ForwardPass {
        output: x,
        buffer_updates: updates,
        tape: mode.is_train().then_some(tape),
    })
}

/// Back-propagates `grad_out` through a training-mode forward pass.
pub fn model_backward<T: Scalar>(model: &ModelSpec<T>, pass: &ForwardPass<T>, grad_out: &Tensor<T>) -> Result<Backward<T>> {
    let tape = pass
        .tape
        .as_ref()
        .ok_or_else(|| Error::State("backward needs a training-mode forward pass".into()))?;
    if tape.len() != model.layers.len() {
        return Err(Error::State("forward pass was produced by a different model".into()));
    }
    pass.output.expect_same_shape(grad_out)?;
    let mut pending: BTreeMap<usize, Tensor<T>> = BTreeMap::new();
    let mut params = BTreeMap::new();
    let mut g = grad_out.clone();
    for (i, layer) in model.layers.iter().enumerate().rev() {
        if let Some(extra) = pending.remove(&i) {
            g.add_assign(&extra)?;
        }
        if let LayerKind::SkipAdd { target } = &layer.kind {
            let j = model.layer_index(target).expect("checked graph");
            match pending.get_mut(&j) {
                Some(p) => p.add_assign(&g)?,
                None => {
                    pending.insert(j, g.clone());
                }
            }
        }
        let (gx, gp) = layer_backward(layer, &model.weights, &tape[i], &g)?;
        params.extend(gp);
        g = gx;
    }
    Ok(Backward { input: g, params })
}
