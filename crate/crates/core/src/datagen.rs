//! Seeded synthetic "face" videos whose labels are exact functionals of the
//! pixels.
//!
//! Each frame is a flat background whose brightness follows a slow sum of
//! sinusoids, with a soft red blob drifting over it. The blob's speed follows
//! its own latent curve and is rendered with motion blur. Valence is the
//! rescaled mean brightness of the frame and arousal is the rescaled mean
//! absolute change from the previous frame, so appearance drives valence and
//! dynamics drive arousal.

use rayon::prelude::*;

use crate::clips::{AnnotationTrack, FrameRecord, VideoStream};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;
use crate::training::VideoFrames;

/// Gain applied to the mean absolute frame difference before the arousal
/// offset of -1.
pub const DEFAULT_KAPPA: f64 = 70.0;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub num_videos: usize,
    pub frames_per_video: usize,
    pub height: usize,
    pub width: usize,
    pub fps: u32,
    pub seed: u64,
    /// Probability that a frame is flagged as having no detected face.
    pub dropout_rate: f64,
    pub kappa: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            num_videos: 50,
            frames_per_video: 300,
            height: 32,
            width: 24,
            fps: 10,
            seed: 0,
            dropout_rate: 0.1,
            kappa: DEFAULT_KAPPA,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_videos == 0 || self.frames_per_video < 2 || self.height == 0 || self.width == 0 {
            return Err(Error::config("synthetic corpus needs at least one video of two non-empty frames"));
        }
        if ![10, 50].contains(&self.fps) {
            return Err(Error::config(format!("fps {} not in {{10, 50}}", self.fps)));
        }
        if !(0.0..=0.3).contains(&self.dropout_rate) {
            return Err(Error::config(format!("dropout rate {} outside [0, 0.3]", self.dropout_rate)));
        }
        if !(self.kappa > 0.0) {
            return Err(Error::config("kappa must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthVideo {
    pub id: String,
    pub fps: u32,
    pub frames: VideoFrames,
    pub valid: Vec<bool>,
    pub valence: Vec<f32>,
    pub arousal: Vec<f32>,
}

impl SynthVideo {
    /// The video as a stream: invalid frames lose their face.
    pub fn to_stream(&self) -> VideoStream {
        let n = self.frames.len();
        let (h, w, c) = (self.frames.height, self.frames.width, self.frames.channels);
        let fl = self.frames.frame_len();
        VideoStream {
            id: self.id.clone(),
            frames: (0..n)
                .map(|f| FrameRecord {
                    frame_index: f,
                    timestamp_ms: f as u64 * 1000 / self.fps as u64,
                    face: self.valid[f].then(|| {
                        Tensor::new(vec![h, w, c], self.frames.data[f * fl..(f + 1) * fl].to_vec()).expect("frame shape")
                    }),
                    valid: self.valid[f],
                })
                .collect(),
            track: AnnotationTrack {
                valence: self.valence.clone(),
                arousal: self.arousal.clone(),
                rate_fps: self.fps,
            },
        }
    }
}

/// Sum of two slow sinusoids with random periods and phases.
struct Latent {
    parts: [(f64, f64, f64); 2],
}

impl Latent {
    fn new(rng: &mut RngStream, periods: (f64, f64), amp: f64) -> Self {
        let mut part = || {
            let period = rng.uniform(periods.0, periods.1);
            (amp * rng.uniform(0.5, 1.0), std::f64::consts::TAU / period, rng.uniform(0.0, std::f64::consts::TAU))
        };
        Latent { parts: [part(), part()] }
    }

    fn at(&self, f: f64) -> f64 {
        self.parts.iter().map(|(a, w, p)| a * (w * f + p).sin()).sum()
    }
}

const BLUR_SAMPLES: usize = 6;

fn render_video(spec: &SynthSpec, index: usize, mut rng: RngStream) -> SynthVideo {
    let (h, w) = (spec.height, spec.width);
    let n = spec.frames_per_video;
    // periods are given in seconds so both frame rates see the same dynamics
    let fps = spec.fps as f64;
    let bright = Latent::new(&mut rng, (15.0 * fps, 40.0 * fps), 0.18);
    let speed = Latent::new(&mut rng, (4.0 * fps, 12.0 * fps), 0.5);
    let turn = Latent::new(&mut rng, (6.0 * fps, 20.0 * fps), 0.15 * 10.0 / fps);
    let base = rng.uniform(0.35, 0.65);
    let radius = rng.uniform(0.18, 0.24) * w.min(h) as f64;
    let max_speed = 3.5 * 10.0 / fps;

    let mut pos = (rng.uniform(radius, w as f64 - radius), rng.uniform(radius, h as f64 - radius));
    let mut heading = rng.uniform(0.0, std::f64::consts::TAU);
    let mut prev = pos;
    let mut data = vec![0f32; n * h * w * 3];
    let mut cover = vec![0f64; h * w];
    for f in 0..n {
        let ff = f as f64;
        let v = max_speed * (0.5 + speed.at(ff)).clamp(0.0, 1.0);
        heading += turn.at(ff);
        let mut next = (pos.0 + v * heading.cos(), pos.1 + v * heading.sin());
        if next.0 < radius || next.0 > w as f64 - radius {
            heading = std::f64::consts::PI - heading;
            next.0 = next.0.clamp(radius, w as f64 - radius);
        }
        if next.1 < radius || next.1 > h as f64 - radius {
            heading = -heading;
            next.1 = next.1.clamp(radius, h as f64 - radius);
        }
        pos = next;

        cover.iter_mut().for_each(|c| *c = 0.0);
        for s in 0..BLUR_SAMPLES {
            let a = (s as f64 + 0.5) / BLUR_SAMPLES as f64;
            let cx = prev.0 + a * (pos.0 - prev.0);
            let cy = prev.1 + a * (pos.1 - prev.1);
            for y in 0..h {
                for x in 0..w {
                    let d = ((x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2)).sqrt();
                    cover[y * w + x] += (radius + 0.5 - d).clamp(0.0, 1.0) / BLUR_SAMPLES as f64;
                }
            }
        }
        prev = pos;

        let b = (base + bright.at(ff)).clamp(0.05, 0.95);
        let frame = &mut data[f * h * w * 3..(f + 1) * h * w * 3];
        for (p, &c) in cover.iter().enumerate() {
            frame[p * 3] = (b + (1.0 - b) * c) as f32;
            frame[p * 3 + 1] = (b * (1.0 - 0.6 * c)) as f32;
            frame[p * 3 + 2] = b as f32;
        }
    }
    let valid: Vec<bool> = (0..n).map(|_| !rng.bernoulli(spec.dropout_rate)).collect();
    let frames = VideoFrames { height: h, width: w, channels: 3, data };
    let (valence, arousal) = label_functionals(&frames, spec.kappa).expect("at least two frames");
    SynthVideo { id: format!("video_{index:03}"), fps: spec.fps, frames, valid, valence, arousal }
}

/// Valence `2 * mean(F_f) - 1` and arousal
/// `clamp(kappa * mean|F_f - F_{f-1}| - 1, -1, 1)`; frame 0 reuses the motion
/// of frame 1.
pub fn label_functionals(frames: &VideoFrames, kappa: f64) -> Result<(Vec<f32>, Vec<f32>)> {
    let n = frames.len();
    if n < 2 {
        return Err(Error::domain(format!("need at least 2 frames, got {n}")));
    }
    let fl = frames.frame_len();
    let frame = |f: usize| &frames.data[f * fl..(f + 1) * fl];
    let valence = (0..n)
        .map(|f| (2.0 * frame(f).iter().map(|&v| v as f64).sum::<f64>() / fl as f64 - 1.0) as f32)
        .collect();
    let motion = |f: usize| {
        frame(f).iter().zip(frame(f - 1)).map(|(&a, &b)| (a as f64 - b as f64).abs()).sum::<f64>() / fl as f64
    };
    let arousal = (0..n)
        .map(|f| (kappa * motion(f.max(1)) - 1.0).clamp(-1.0, 1.0) as f32)
        .collect();
    Ok((valence, arousal))
}

pub fn generate_corpus(spec: &SynthSpec) -> Result<Vec<SynthVideo>> {
    spec.validate()?;
    let root = RngStream::new(spec.seed);
    Ok((0..spec.num_videos)
        .into_par_iter()
        .map(|i| render_video(spec, i, root.split(i as u64)))
        .collect())
}

/// Seven circumplex regions for classifier pre-training: a neutral centre,
/// then valence sign crossed with low/mid/high arousal.
pub fn toy_class(valence: f32, arousal: f32) -> usize {
    if valence.abs() < 0.1 && arousal.abs() < 0.2 {
        return 0;
    }
    let a = if arousal < -1.0 / 3.0 {
        0
    } else if arousal <= 1.0 / 3.0 {
        1
    } else {
        2
    };
    1 + 3 * (valence >= 0.0) as usize + a
}
