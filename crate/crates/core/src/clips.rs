//! From annotated frame streams to fixed-length training clips.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct FrameRecord {
    /// Position in the source video.
    pub frame_index: usize,
    pub timestamp_ms: u64,
    /// `[h, w, 3]` in `[0, 1]`; `None` when no face was found.
    pub face: Option<Tensor>,
    pub valid: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnnotationTrack {
    pub valence: Vec<f32>,
    pub arousal: Vec<f32>,
    pub rate_fps: u32,
}

impl AnnotationTrack {
    pub fn len(&self) -> usize {
        self.valence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valence.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.valence.len() != self.arousal.len() {
            return Err(Error::Length(format!(
                "{} valence labels vs {} arousal labels",
                self.valence.len(),
                self.arousal.len()
            )));
        }
        if let Some(v) = self.valence.iter().chain(&self.arousal).find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::data(format!("annotation {v} outside [-1, 1]")));
        }
        Ok(())
    }
}

/// One video: its frames and the per-frame annotations at the same rate.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoStream {
    pub id: String,
    pub frames: Vec<FrameRecord>,
    pub track: AnnotationTrack,
}

impl VideoStream {
    pub fn validate(&self) -> Result<()> {
        self.track.validate()?;
        if self.frames.len() != self.track.len() {
            return Err(Error::Length(format!(
                "stream `{}`: {} frames vs {} annotations",
                self.id,
                self.frames.len(),
                self.track.len()
            )));
        }
        for w in self.frames.windows(2) {
            if w[1].frame_index <= w[0].frame_index {
                return Err(Error::data(format!(
                    "stream `{}`: frame index {} follows {}",
                    self.id, w[1].frame_index, w[0].frame_index
                )));
            }
        }
        if let Some(f) = self.frames.iter().find(|f| !f.valid && f.face.is_some()) {
            return Err(Error::data(format!("stream `{}`: invalid frame {} carries a face", self.id, f.frame_index)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    Mean,
    /// Signed value of largest magnitude.
    Extremum,
}

impl std::str::FromStr for Fusion {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Fusion::Mean),
            "extremum" => Ok(Fusion::Extremum),
            other => Err(Error::config(format!("unknown fusion `{other}` (mean|extremum)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowConfig {
    pub fps: u32,
    pub seq_len: usize,
    pub overlap: f64,
    pub fusion: Fusion,
    /// Largest allowed `frame_index` gap between neighbouring clip frames.
    pub gap_tolerance: usize,
    /// `frame_index` step between consecutive frames of an intact stream.
    pub nominal_step: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            fps: 10,
            seq_len: 16,
            overlap: 0.5,
            fusion: Fusion::Mean,
            gap_tolerance: 2,
            nominal_step: 1,
        }
    }
}

pub const SEQ_LENS: [usize; 3] = [16, 32, 64];
pub const OVERLAPS: [f64; 3] = [0.2, 0.5, 0.8];
pub const RATES: [u32; 2] = [10, 50];

impl WindowConfig {
    pub fn validate(&self) -> Result<()> {
        if !RATES.contains(&self.fps) {
            return Err(Error::config(format!("fps {} not in {{10, 50}}", self.fps)));
        }
        if self.seq_len == 0 {
            return Err(Error::config("seq_len must be positive"));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(Error::config(format!("overlap {} outside [0, 1)", self.overlap)));
        }
        if self.nominal_step == 0 || self.gap_tolerance < self.nominal_step {
            return Err(Error::config(format!(
                "gap tolerance {} below nominal step {}",
                self.gap_tolerance, self.nominal_step
            )));
        }
        Ok(())
    }

    /// The same window on a stream decimated from `source_fps`: gap
    /// tolerance and nominal step are scaled to source index units.
    pub fn on_source(&self, source_fps: u32) -> WindowConfig {
        let k = (source_fps / self.fps).max(1) as usize;
        WindowConfig { gap_tolerance: self.gap_tolerance * k, nominal_step: self.nominal_step * k, ..self.clone() }
    }

    pub fn stride(&self) -> usize {
        ((self.seq_len as f64 * (1.0 - self.overlap)).round() as usize).max(1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    pub source: String,
    /// Source-video frame indices, strictly increasing.
    pub indices: Vec<usize>,
    /// Positions of those frames within the stream.
    pub positions: Vec<usize>,
    pub valence: f32,
    pub arousal: f32,
}

impl Clip {
    pub fn check(&self, cfg: &WindowConfig) -> Result<()> {
        if self.indices.len() != cfg.seq_len || self.positions.len() != cfg.seq_len {
            return Err(Error::Length(format!("clip has {} frames, want {}", self.indices.len(), cfg.seq_len)));
        }
        for w in self.indices.windows(2) {
            if w[1] <= w[0] || w[1] - w[0] > cfg.gap_tolerance {
                return Err(Error::data(format!("clip gap {} -> {}", w[0], w[1])));
            }
        }
        if !(-1.0..=1.0).contains(&self.valence) || !(-1.0..=1.0).contains(&self.arousal) {
            return Err(Error::data("fused label outside [-1, 1]"));
        }
        Ok(())
    }
}

/// 10 -> 50 replicates each label five times, 50 -> 10 keeps the first of
/// every group of five.
pub fn resample_annotations(track: &AnnotationTrack, to_fps: u32) -> Result<AnnotationTrack> {
    let resample = |v: &[f32]| -> Vec<f32> {
        match (track.rate_fps, to_fps) {
            (10, 50) => v.iter().flat_map(|&x| [x; 5]).collect(),
            (50, 10) => v.iter().step_by(5).copied().collect(),
            _ => v.to_vec(),
        }
    };
    match (track.rate_fps, to_fps) {
        (10, 50) | (50, 10) => {}
        (a, b) if a == b => return Ok(track.clone()),
        (a, b) => return Err(Error::config(format!("cannot resample annotations from {a} to {b} fps"))),
    }
    Ok(AnnotationTrack {
        valence: resample(&track.valence),
        arousal: resample(&track.arousal),
        rate_fps: to_fps,
    })
}

/// Drops frames to go from 50 to 10 fps; the kept frames keep their source
/// indices.
pub fn decimate_stream(stream: &VideoStream, to_fps: u32) -> Result<VideoStream> {
    match (stream.track.rate_fps, to_fps) {
        (a, b) if a == b => Ok(stream.clone()),
        (50, 10) => Ok(VideoStream {
            id: stream.id.clone(),
            frames: stream.frames.iter().step_by(5).cloned().collect(),
            track: resample_annotations(&stream.track, 10)?,
        }),
        (a, b) => Err(Error::config(format!("cannot decimate frames from {a} to {b} fps"))),
    }
}

pub fn fuse_labels(values: &[f32], mode: Fusion) -> Result<f32> {
    if values.is_empty() {
        return Err(Error::domain("cannot fuse an empty label list"));
    }
    Ok(match mode {
        Fusion::Mean => (values.iter().map(|&v| v as f64).sum::<f64>() / values.len() as f64) as f32,
        Fusion::Extremum => {
            let mut best = values[0];
            for &v in &values[1..] {
                if v.abs() > best.abs() {
                    best = v;
                }
            }
            best
        }
    })
}

/// Slides a `seq_len` window with the configured stride over the valid
/// frames of `stream` and keeps the windows whose index gaps all fit the
/// tolerance.
pub fn window_clips(stream: &VideoStream, cfg: &WindowConfig) -> Result<Vec<Clip>> {
    cfg.validate()?;
    stream.validate()?;
    if stream.track.rate_fps != cfg.fps {
        return Err(Error::config(format!(
            "stream `{}` is at {} fps, window config expects {}",
            stream.id, stream.track.rate_fps, cfg.fps
        )));
    }
    let valid: Vec<usize> = (0..stream.frames.len()).filter(|&i| stream.frames[i].valid).collect();
    let mut clips = vec![];
    if valid.len() < cfg.seq_len {
        return Ok(clips);
    }
    let stride = cfg.stride();
    for start in (0..=valid.len() - cfg.seq_len).step_by(stride) {
        let positions = &valid[start..start + cfg.seq_len];
        let indices: Vec<usize> = positions.iter().map(|&p| stream.frames[p].frame_index).collect();
        if indices.windows(2).any(|w| w[1] - w[0] > cfg.gap_tolerance) {
            continue;
        }
        let v: Vec<f32> = positions.iter().map(|&p| stream.track.valence[p]).collect();
        let a: Vec<f32> = positions.iter().map(|&p| stream.track.arousal[p]).collect();
        clips.push(Clip {
            source: stream.id.clone(),
            indices,
            positions: positions.to_vec(),
            valence: fuse_labels(&v, cfg.fusion)?,
            arousal: fuse_labels(&a, cfg.fusion)?,
        });
    }
    Ok(clips)
}

/// Clip counts for every rate/length/overlap combination; streams are given
/// at 50 fps and decimated for the 10 fps rows.
pub fn count_table(streams50: &[VideoStream], base: &WindowConfig) -> Result<Vec<(u32, usize, f64, usize)>> {
    let mut rows = vec![];
    for &fps in &RATES {
        let streams: Vec<VideoStream> = streams50.iter().map(|s| decimate_stream(s, fps)).collect::<Result<_>>()?;
        for &seq_len in &SEQ_LENS {
            for &overlap in &OVERLAPS {
                let cfg = WindowConfig { fps, seq_len, overlap, ..base.clone() }.on_source(50);
                let mut n = 0;
                for s in &streams {
                    n += window_clips(s, &cfg)?.len();
                }
                rows.push((fps, seq_len, overlap, n));
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(n: usize, invalid: &[usize]) -> VideoStream {
        VideoStream {
            id: "v".into(),
            frames: (0..n)
                .map(|i| FrameRecord {
                    frame_index: i,
                    timestamp_ms: i as u64 * 100,
                    face: None,
                    valid: !invalid.contains(&i),
                })
                .collect(),
            track: AnnotationTrack {
                valence: (0..n).map(|i| (i as f32 / n as f32) - 0.5).collect(),
                arousal: vec![0.1; n],
                rate_fps: 10,
            },
        }
    }

    fn cfg(seq_len: usize, overlap: f64) -> WindowConfig {
        WindowConfig { seq_len, overlap, ..Default::default() }
    }

    #[test]
    fn resample_examples() {
        let t = AnnotationTrack { valence: (0..23).map(|i| i as f32 / 23.0).collect(), arousal: vec![0.0; 23], rate_fps: 10 };
        let up = resample_annotations(&t, 50).unwrap();
        assert_eq!(up.len(), 115);
        for (k, chunk) in up.valence.chunks(5).enumerate() {
            assert!(chunk.iter().all(|&v| v == t.valence[k]));
        }
        let (a, b) = (0.25f32, -0.5f32);
        let t50 = AnnotationTrack { valence: vec![a, a, a, a, a, b, b, b, b, b], arousal: vec![0.0; 10], rate_fps: 50 };
        assert_eq!(resample_annotations(&t50, 10).unwrap().valence, vec![a, b]);
        assert_eq!(resample_annotations(&t, 10).unwrap(), t);
        let bad = AnnotationTrack { rate_fps: 25, ..t };
        assert!(matches!(resample_annotations(&bad, 10), Err(Error::Config(_))));
    }

    #[test]
    fn fusion_examples() {
        assert!((fuse_labels(&[0.2, 0.4, 0.6], Fusion::Mean).unwrap() - 0.4).abs() < 1e-7);
        assert_eq!(fuse_labels(&[0.2, -0.7, 0.5], Fusion::Extremum).unwrap(), -0.7);
        assert_eq!(fuse_labels(&[0.7, -0.7], Fusion::Extremum).unwrap(), 0.7);
        for m in [Fusion::Mean, Fusion::Extremum] {
            assert_eq!(fuse_labels(&[0.3; 7], m).unwrap(), 0.3);
        }
        assert!(matches!(fuse_labels(&[], Fusion::Mean), Err(Error::Domain(_))));
    }

    #[test]
    fn counts_on_full_streams() {
        assert_eq!(cfg(16, 0.5).stride(), 8);
        assert_eq!(window_clips(&stream(100, &[]), &cfg(16, 0.5)).unwrap().len(), 11);
        assert_eq!(cfg(16, 0.2).stride(), 13);
        assert_eq!(window_clips(&stream(100, &[]), &cfg(16, 0.2)).unwrap().len(), 7);
        assert!(window_clips(&stream(10, &[]), &cfg(16, 0.5)).unwrap().is_empty());
    }

    #[test]
    fn tight_tolerance_skips_windows_over_a_hole() {
        let s = stream(40, &[20]);
        let c = WindowConfig { gap_tolerance: 1, ..cfg(16, 0.5) };
        let clips = window_clips(&s, &c).unwrap();
        for clip in &clips {
            clip.check(&c).unwrap();
            assert!(!clip.indices.contains(&20));
        }
        // default tolerance bridges a single missing frame
        let loose = window_clips(&s, &cfg(16, 0.5)).unwrap();
        assert!(loose.len() > clips.len());
    }

    #[test]
    fn rate_mismatch_is_config_error() {
        let c = WindowConfig { fps: 50, ..cfg(16, 0.5) };
        assert!(matches!(window_clips(&stream(40, &[]), &c), Err(Error::Config(_))));
    }

    #[test]
    fn count_table_on_intact_50fps_streams() {
        let mut s = stream(500, &[]);
        s.track = resample_annotations(&s.track, 50).unwrap();
        s.track.valence.truncate(500);
        s.track.arousal.truncate(500);
        s.track.rate_fps = 50;
        let rows = count_table(&[s], &WindowConfig::default()).unwrap();
        assert_eq!(rows.len(), 18);
        // 100 frames at 10 fps, seq 16, overlap 0.5
        assert!(rows.contains(&(10, 16, 0.5, 11)));
        // 500 frames at 50 fps, seq 16, stride 13
        assert!(rows.contains(&(50, 16, 0.2, 38)));
    }
}
