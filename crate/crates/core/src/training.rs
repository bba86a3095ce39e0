//! Losses, Adam, and the two fit loops: frame classification for trunk
//! pre-training and clip regression of valence/arousal.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inflation::{scale_targets, unscale_predictions, GradientMask};
use crate::metrics::compute_ccc;
use crate::model::{model_backward, model_forward, InputKind, Mode, ModelSpec};
use crate::rng::RngStream;
use crate::tensor::Tensor;

/// Mean squared error over all elements and its gradient.
pub fn mse_loss(preds: &Tensor, targets: &Tensor) -> Result<(f64, Tensor)> {
    preds.expect_same_shape(targets)?;
    let n = preds.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(preds.len());
    for (&p, &t) in preds.data().iter().zip(targets.data()) {
        let d = p as f64 - t as f64;
        loss += d * d;
        grad.push((2.0 * d / n) as f32);
    }
    Ok((loss / n, Tensor::new(preds.shape().to_vec(), grad)?))
}

/// Softmax cross-entropy averaged over the batch, each row scaled by the
/// weight of its true class.
pub fn weighted_ce_loss(logits: &Tensor, classes: &[usize], weights: Option<&[f64]>) -> Result<(f64, Tensor)> {
    let s = logits.shape();
    if s.len() != 2 || s[0] != classes.len() {
        return Err(Error::dim(format!("logits {s:?} vs {} class labels", classes.len())));
    }
    let (n, k) = (s[0], s[1]);
    if let Some(w) = weights {
        if w.len() != k {
            return Err(Error::config(format!("{} class weights for {k} classes", w.len())));
        }
        if w.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::config("class weights must be positive"));
        }
    }
    let mut loss = 0.0;
    let mut grad = vec![0f32; n * k];
    for (i, &c) in classes.iter().enumerate() {
        if c >= k {
            return Err(Error::domain(format!("class index {c} out of range for {k} classes")));
        }
        let row = &logits.data()[i * k..(i + 1) * k];
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
        let exps: Vec<f64> = row.iter().map(|&v| (v as f64 - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let w = weights.map_or(1.0, |w| w[c]);
        loss += w * (z.ln() - (row[c] as f64 - max));
        for j in 0..k {
            let onehot = if j == c { 1.0 } else { 0.0 };
            grad[i * k + j] = (w * (exps[j] / z - onehot) / n as f64) as f32;
        }
    }
    Ok((loss / n as f64, Tensor::new(vec![n, k], grad)?))
}

/// Inverse-frequency weights `N / (K * n_c)`.
pub fn class_weights_from_counts(counts: &[usize]) -> Result<Vec<f64>> {
    if counts.is_empty() || counts.contains(&0) {
        return Err(Error::domain(format!("class counts {counts:?} must all be at least 1")));
    }
    let total: usize = counts.iter().sum();
    let k = counts.len() as f64;
    Ok(counts.iter().map(|&c| total as f64 / (k * c as f64)).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 1e-5, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub first: BTreeMap<String, Vec<f64>>,
    pub second: BTreeMap<String, Vec<f64>>,
}

/// One bias-corrected Adam update. Entries whose mask is zero are neither
/// updated nor accumulate moments.
pub fn adam_step(
    params: &mut BTreeMap<String, Tensor>,
    grads: &BTreeMap<String, Tensor>,
    state: &mut OptimizerState,
    cfg: &AdamConfig,
    mask: Option<&GradientMask>,
) -> Result<()> {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (name, g) in grads {
        let p = params
            .get_mut(name)
            .ok_or_else(|| Error::State(format!("gradient for unknown parameter `{name}`")))?;
        p.expect_same_shape(g)?;
        let m = mask.and_then(|m| m.get(name));
        if let Some(m) = m {
            p.expect_same_shape(m)?;
        }
        let first = state.first.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
        let second = state.second.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
        let pd = p.data_mut();
        for i in 0..pd.len() {
            if m.is_some_and(|m| m.data()[i] == 0.0) {
                continue;
            }
            let gi = g.data()[i] as f64;
            first[i] = cfg.beta1 * first[i] + (1.0 - cfg.beta1) * gi;
            second[i] = cfg.beta2 * second[i] + (1.0 - cfg.beta2) * gi * gi;
            let update = cfg.learning_rate * (first[i] / c1) / ((second[i] / c2).sqrt() + cfg.epsilon);
            pd[i] = (pd[i] as f64 - update) as f32;
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Mean of the valence and arousal CCC.
    Mean,
    Valence,
    Arousal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub target_multiplier: f64,
    pub class_weights: Option<Vec<f64>>,
    /// Freeze every conv block before this one (0 = nothing frozen).
    pub freeze_blocks: usize,
    pub selection: Selection,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            batch_size: 16,
            epochs: 10,
            seed: 0,
            target_multiplier: 1.0,
            class_weights: None,
            freeze_blocks: 0,
            selection: Selection::Mean,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.adam.learning_rate > 0.0) {
            return Err(Error::config(format!("learning rate {} must be positive", self.adam.learning_rate)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::config("batch size and epoch count must be at least 1"));
        }
        if !(self.target_multiplier > 0.0) {
            return Err(Error::config("target multiplier must be positive"));
        }
        Ok(())
    }
}

/// Decoded frames of one video, each `[h, w, c]`, stacked.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoFrames {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl VideoFrames {
    pub fn frame_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.frame_len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Writes frame `pos` channel-first into `out`, channels `ch_stride` apart.
    fn write_chw(&self, pos: usize, out: &mut [f32], ch_stride: usize) {
        let (h, w, c) = (self.height, self.width, self.channels);
        let src = &self.data[pos * self.frame_len()..(pos + 1) * self.frame_len()];
        for y in 0..h {
            for x in 0..w {
                for k in 0..c {
                    out[k * ch_stride + y * w + x] = src[(y * w + x) * c + k];
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClipItem {
    pub video: usize,
    pub positions: Vec<usize>,
    pub target: [f32; 2],
}

/// Clips that reference frames of shared videos.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ClipDataset {
    pub videos: Vec<VideoFrames>,
    pub items: Vec<ClipItem>,
}

impl ClipDataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// `[n, c, t, h, w]` inputs and `[n, 2]` targets.
    pub fn batch(&self, idx: &[usize]) -> Result<(Tensor, Tensor)> {
        let first = self.items.get(*idx.first().ok_or_else(|| Error::data("empty batch"))?).ok_or_else(|| Error::data("clip index out of range"))?;
        let v0 = &self.videos[first.video];
        let (c, h, w) = (v0.channels, v0.height, v0.width);
        let t = first.positions.len();
        let per = c * t * h * w;
        let mut x = vec![0f32; idx.len() * per];
        let mut y = Vec::with_capacity(idx.len() * 2);
        for (b, &i) in idx.iter().enumerate() {
            let item = self.items.get(i).ok_or_else(|| Error::data(format!("clip index {i} out of range")))?;
            if item.positions.len() != t {
                return Err(Error::Length(format!("clip {i} has {} frames, batch expects {t}", item.positions.len())));
            }
            let v = &self.videos[item.video];
            let out = &mut x[b * per..(b + 1) * per];
            for (k, &p) in item.positions.iter().enumerate() {
                v.write_chw(p, &mut out[k * h * w..], t * h * w);
            }
            y.extend_from_slice(&item.target);
        }
        Ok((Tensor::new(vec![idx.len(), c, t, h, w], x)?, Tensor::new(vec![idx.len(), 2], y)?))
    }
}

/// Single frames with a class label each.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrameDataset {
    pub videos: Vec<VideoFrames>,
    /// `(video, position, class)`
    pub items: Vec<(usize, usize, usize)>,
}

impl FrameDataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn class_counts(&self, classes: usize) -> Vec<usize> {
        let mut counts = vec![0; classes];
        for &(_, _, c) in &self.items {
            counts[c] += 1;
        }
        counts
    }

    pub fn batch(&self, idx: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let (v, _, _) = self.items[idx[0]];
        let v0 = &self.videos[v];
        let (c, h, w) = (v0.channels, v0.height, v0.width);
        let per = c * h * w;
        let mut x = vec![0f32; idx.len() * per];
        let mut labels = Vec::with_capacity(idx.len());
        for (b, &i) in idx.iter().enumerate() {
            let (v, p, cls) = *self.items.get(i).ok_or_else(|| Error::data(format!("frame index {i} out of range")))?;
            self.videos[v].write_chw(p, &mut x[b * per..(b + 1) * per], h * w);
            labels.push(cls);
        }
        Ok((Tensor::new(vec![idx.len(), c, h, w], x)?, labels))
    }
}

/// One optimizer step on a batch; returns the loss and the network output.
fn train_step(
    model: &mut ModelSpec,
    x: &Tensor,
    loss_fn: impl Fn(&Tensor) -> Result<(f64, Tensor)>,
    state: &mut OptimizerState,
    adam: &AdamConfig,
    mask: Option<&GradientMask>,
    rng: &mut RngStream,
) -> Result<(f64, Tensor)> {
    let pass = model_forward(model, x, Mode::Train, rng)?;
    let (loss, grad) = loss_fn(&pass.output)?;
    if !loss.is_finite() {
        return Ok((loss, pass.output));
    }
    let back = model_backward(model, &pass, &grad)?;
    adam_step(&mut model.weights, &back.params, state, adam, mask)?;
    for (name, t) in pass.buffer_updates.iter().cloned() {
        model.weights.insert(name, t);
    }
    Ok((loss, pass.output))
}

fn shuffled(n: usize, rng: &mut RngStream) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    order
}

fn combined_mask(model: &ModelSpec, cfg: &TrainConfig, mask: Option<&GradientMask>) -> Result<Option<GradientMask>> {
    if cfg.freeze_blocks == 0 {
        return Ok(mask.cloned());
    }
    let mut m = mask.cloned().unwrap_or_else(|| GradientMask::all_ones(model));
    m.freeze_blocks_before(model, cfg.freeze_blocks)?;
    Ok(Some(m))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub split: &'static str,
    pub loss: f64,
    pub ccc: [Option<f64>; 2],
}

pub fn log_to_csv(rows: &[LogRow]) -> String {
    let mut out = String::from("epoch,split,loss,ccc_valence,ccc_arousal\n");
    let fmt = |v: Option<f64>| v.map_or("nan".to_string(), |v| format!("{v:.6}"));
    for r in rows {
        writeln!(out, "{},{},{:.6},{},{}", r.epoch, r.split, r.loss, fmt(r.ccc[0]), fmt(r.ccc[1])).unwrap();
    }
    out
}

pub struct FitResult {
    pub log: Vec<LogRow>,
    /// Weights of the epoch with the best validation score.
    pub best: ModelSpec,
    pub best_epoch: usize,
    pub best_score: f64,
}

fn ccc_pair(preds: &[[f64; 2]], targets: &[[f64; 2]]) -> [Option<f64>; 2] {
    [0, 1].map(|k| {
        let y: Vec<f64> = targets.iter().map(|t| t[k]).collect();
        let p: Vec<f64> = preds.iter().map(|t| t[k]).collect();
        compute_ccc(&y, &p).ok()
    })
}

fn score(ccc: [Option<f64>; 2], sel: Selection) -> f64 {
    let v = ccc.map(|c| c.unwrap_or(0.0));
    match sel {
        Selection::Mean => (v[0] + v[1]) / 2.0,
        Selection::Valence => v[0],
        Selection::Arousal => v[1],
    }
}

/// Eval-mode predictions in label units.
pub fn predict(model: &ModelSpec, data: &ClipDataset, batch_size: usize, multiplier: f64) -> Result<Vec<[f64; 2]>> {
    let mut rng = RngStream::new(0);
    let mut out = Vec::with_capacity(data.len());
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, _) = data.batch(chunk)?;
        let y = model_forward(model, &x, Mode::Eval, &mut rng)?.output;
        let y = unscale_predictions(y.data(), multiplier)?;
        out.extend(y.chunks(2).map(|p| [p[0] as f64, p[1] as f64]));
    }
    Ok(out)
}

fn targets_of(data: &ClipDataset) -> Vec<[f64; 2]> {
    data.items.iter().map(|i| [i.target[0] as f64, i.target[1] as f64]).collect()
}

/// Regression fine-tuning with MSE on (scaled) targets, keeping the weights
/// of the epoch with the best validation CCC.
pub fn fit_regression(
    model: &ModelSpec,
    train: &ClipDataset,
    val: &ClipDataset,
    cfg: &TrainConfig,
    mask: Option<&GradientMask>,
) -> Result<FitResult> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::data("training and validation splits must be non-empty"));
    }
    if model.input_kind != InputKind::Clips {
        return Err(Error::config("regression fit expects a clip model"));
    }
    model.check_weights()?;
    let mask = combined_mask(model, cfg, mask)?;
    let mut model = model.clone();
    let mut state = OptimizerState::default();
    let root = RngStream::new(cfg.seed);
    let val_targets = targets_of(val);
    let mut log = vec![];
    let mut best: Option<(usize, f64, ModelSpec)> = None;

    for epoch in 1..=cfg.epochs {
        let order = shuffled(train.len(), &mut root.split(2 * epoch as u64));
        let mut rng = root.split(2 * epoch as u64 + 1);
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        let mut train_preds = Vec::with_capacity(train.len());
        let mut train_targets = Vec::with_capacity(train.len());
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (x, y) = train.batch(chunk)?;
            let y_scaled = Tensor::new(y.shape().to_vec(), scale_targets(y.data(), cfg.target_multiplier)?)?;
            let (loss, out) = train_step(&mut model, &x, |p| mse_loss(p, &y_scaled), &mut state, &cfg.adam, mask.as_ref(), &mut rng)?;
            if !loss.is_finite() {
                return Err(Error::data(format!(
                    "non-finite loss at epoch {epoch}, batch {b} (clips {:?})",
                    chunk
                )));
            }
            loss_sum += loss * chunk.len() as f64;
            seen += chunk.len();
            let p = unscale_predictions(out.data(), cfg.target_multiplier)?;
            train_preds.extend(p.chunks(2).map(|p| [p[0] as f64, p[1] as f64]));
            train_targets.extend(y.data().chunks(2).map(|t| [t[0] as f64, t[1] as f64]));
        }
        log.push(LogRow {
            epoch,
            split: "train",
            loss: loss_sum / seen as f64,
            ccc: ccc_pair(&train_preds, &train_targets),
        });

        let preds = predict(&model, val, cfg.batch_size, cfg.target_multiplier)?;
        let mse = preds
            .iter()
            .zip(&val_targets)
            .map(|(p, t)| (p[0] - t[0]).powi(2) + (p[1] - t[1]).powi(2))
            .sum::<f64>()
            / (2 * preds.len()) as f64;
        let ccc = ccc_pair(&preds, &val_targets);
        log.push(LogRow { epoch, split: "val", loss: mse, ccc });
        let s = score(ccc, cfg.selection);
        if best.as_ref().map_or(true, |b| s > b.1) {
            best = Some((epoch, s, model.clone()));
        }
    }
    let (best_epoch, best_score, best) = best.expect("at least one epoch");
    Ok(FitResult { log, best, best_epoch, best_score })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassLogRow {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

/// Weighted cross-entropy training of a frame classifier.
pub fn fit_classifier(model: &mut ModelSpec, data: &FrameDataset, cfg: &TrainConfig) -> Result<Vec<ClassLogRow>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::data("empty classification split"));
    }
    model.check_weights()?;
    let root = RngStream::new(cfg.seed);
    let mut state = OptimizerState::default();
    let weights = cfg.class_weights.clone();
    let mut log = vec![];
    for epoch in 1..=cfg.epochs {
        let order = shuffled(data.len(), &mut root.split(2 * epoch as u64));
        let mut rng = root.split(2 * epoch as u64 + 1);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (x, labels) = data.batch(chunk)?;
            let (loss, out) = train_step(
                model,
                &x,
                |p| weighted_ce_loss(p, &labels, weights.as_deref()),
                &mut state,
                &cfg.adam,
                None,
                &mut rng,
            )?;
            if !loss.is_finite() {
                return Err(Error::data(format!("non-finite loss at epoch {epoch}, batch {b}")));
            }
            loss_sum += loss * chunk.len() as f64;
            let k = out.shape()[1];
            for (row, &c) in out.data().chunks(k).zip(&labels) {
                let arg = (0..k).fold(0, |a, j| if row[j] > row[a] { j } else { a });
                correct += (arg == c) as usize;
            }
        }
        log.push(ClassLogRow {
            epoch,
            loss: loss_sum / data.len() as f64,
            accuracy: correct as f64 / data.len() as f64,
        });
    }
    Ok(log)
}
