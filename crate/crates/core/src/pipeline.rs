//! Glue from a corpus to trained models: splitting, windowing, dataset
//! assembly, classifier pre-training and the cascade / inflated-3D runs.

use std::collections::HashMap;
use std::time::Instant;

use crate::clips::{window_clips, Clip, Fusion, WindowConfig};
use crate::datagen::{generate_corpus, toy_class, SynthSpec, SynthVideo};
use crate::error::{Error, Result};
use crate::inflation::{build_gradient_mask, InflationConfig};
use crate::model::{build_cnn_lstm, build_i3d, build_vgg_mini, Head, ModelSpec, Profile};
use crate::rng::RngStream;
use crate::training::{
    class_weights_from_counts, fit_classifier, fit_regression, AdamConfig, ClassLogRow, ClipDataset, ClipItem,
    FitResult, FrameDataset, TrainConfig,
};

pub fn window_corpus(videos: &[SynthVideo], cfg: &WindowConfig) -> Result<Vec<Clip>> {
    let mut clips = vec![];
    for v in videos {
        clips.extend(window_clips(&v.to_stream(), cfg)?);
    }
    Ok(clips)
}

/// Resolves clip sources against `videos` by id; frames are fetched by
/// source index.
pub fn clip_dataset(videos: &[SynthVideo], clips: &[Clip]) -> Result<ClipDataset> {
    let by_id: HashMap<&str, usize> = videos.iter().enumerate().map(|(i, v)| (v.id.as_str(), i)).collect();
    let items = clips
        .iter()
        .map(|c| {
            let video = *by_id
                .get(c.source.as_str())
                .ok_or_else(|| Error::data(format!("clip source `{}` not in corpus", c.source)))?;
            if let Some(&p) = c.indices.iter().find(|&&p| p >= videos[video].frames.len()) {
                return Err(Error::data(format!("clip frame {p} beyond video `{}`", c.source)));
            }
            Ok(ClipItem { video, positions: c.indices.clone(), target: [c.valence, c.arousal] })
        })
        .collect::<Result<_>>()?;
    Ok(ClipDataset { videos: videos.iter().map(|v| v.frames.clone()).collect(), items })
}

/// Every `stride`-th valid frame, labelled with its circumplex class.
pub fn frame_dataset(videos: &[SynthVideo], stride: usize) -> FrameDataset {
    let mut items = vec![];
    for (vi, v) in videos.iter().enumerate() {
        for f in (0..v.frames.len()).step_by(stride.max(1)) {
            if v.valid[f] {
                items.push((vi, f, toy_class(v.valence[f], v.arousal[f])));
            }
        }
    }
    FrameDataset { videos: videos.iter().map(|v| v.frames.clone()).collect(), items }
}

/// Trains the 2D classifier with inverse-frequency class weights.
pub fn pretrain_classifier(
    videos: &[SynthVideo],
    profile: &Profile,
    frame_stride: usize,
    cfg: &TrainConfig,
) -> Result<(ModelSpec, Vec<ClassLogRow>)> {
    let data = frame_dataset(videos, frame_stride);
    let counts: Vec<usize> = data.class_counts(profile.classes).into_iter().map(|c| c.max(1)).collect();
    let cfg = TrainConfig { class_weights: Some(class_weights_from_counts(&counts)?), ..cfg.clone() };
    let mut model = build_vgg_mini(profile, Head::Classification, &mut RngStream::new(cfg.seed).split(17))?;
    let log = fit_classifier(&mut model, &data, &cfg)?;
    Ok((model, log))
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub synth: SynthSpec,
    pub train_videos: usize,
    pub window: WindowConfig,
    pub frame_stride: usize,
    pub pretrain: TrainConfig,
    pub cascade: TrainConfig,
    pub i3d: TrainConfig,
    pub inflation: InflationConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let adam = AdamConfig { learning_rate: 1e-3, ..Default::default() };
        ExperimentConfig {
            synth: SynthSpec::default(),
            train_videos: 40,
            window: WindowConfig { seq_len: 16, overlap: 0.2, fusion: Fusion::Mean, ..Default::default() },
            frame_stride: 3,
            pretrain: TrainConfig { adam, batch_size: 32, epochs: 3, seed: 1, ..Default::default() },
            cascade: TrainConfig { adam, batch_size: 16, epochs: 10, seed: 2, ..Default::default() },
            i3d: TrainConfig { adam, batch_size: 8, epochs: 10, seed: 3, ..Default::default() },
            inflation: InflationConfig::default(),
        }
    }
}

pub struct ExperimentReport {
    pub pretrain_log: Vec<ClassLogRow>,
    pub train_clips: usize,
    pub val_clips: usize,
    pub cascade: FitResult,
    pub i3d: FitResult,
    pub seconds: [f64; 3],
}

impl ExperimentReport {
    /// Best-epoch validation CCC `[valence, arousal]` of a run.
    pub fn best_ccc(fit: &FitResult) -> [f64; 2] {
        fit.log
            .iter()
            .find(|r| r.split == "val" && r.epoch == fit.best_epoch)
            .map(|r| r.ccc.map(|c| c.unwrap_or(f64::NAN)))
            .unwrap_or([f64::NAN; 2])
    }
}

pub fn split_corpus(videos: &[SynthVideo], train: usize) -> Result<(&[SynthVideo], &[SynthVideo])> {
    if train == 0 || train >= videos.len() {
        return Err(Error::config(format!("cannot split {} videos with {train} for training", videos.len())));
    }
    Ok(videos.split_at(train))
}

/// Pre-trains the 2D trunk, then fine-tunes the cascade and the inflated
/// 3D network on the same clips.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let profile = Profile::desk();
    let corpus = generate_corpus(&cfg.synth)?;
    let (train_v, val_v) = split_corpus(&corpus, cfg.train_videos)?;
    let train = clip_dataset(train_v, &window_corpus(train_v, &cfg.window)?)?;
    let val = clip_dataset(val_v, &window_corpus(val_v, &cfg.window)?)?;

    let t0 = Instant::now();
    let (base, pretrain_log) = pretrain_classifier(train_v, &profile, cfg.frame_stride, &cfg.pretrain)?;
    let t1 = Instant::now();

    let mut rng = RngStream::new(cfg.cascade.seed).split(23);
    let cascade_model = build_cnn_lstm(&base.trunk(), &profile, &mut rng)?;
    let cascade = fit_regression(&cascade_model, &train, &val, &cfg.cascade, None)?;
    let t2 = Instant::now();

    let mut rng = RngStream::new(cfg.i3d.seed).split(29);
    let i3d_model = build_i3d(&base, &cfg.inflation, &profile, &mut rng)?;
    let mask = build_gradient_mask(&i3d_model, &cfg.inflation)?;
    let i3d_cfg = TrainConfig { target_multiplier: cfg.inflation.target_multiplier, ..cfg.i3d.clone() };
    let i3d = fit_regression(&i3d_model, &train, &val, &i3d_cfg, Some(&mask))?;
    let t3 = Instant::now();

    Ok(ExperimentReport {
        pretrain_log,
        train_clips: train.len(),
        val_clips: val.len(),
        cascade,
        i3d,
        seconds: [(t1 - t0).as_secs_f64(), (t2 - t1).as_secs_f64(), (t3 - t2).as_secs_f64()],
    })
}
