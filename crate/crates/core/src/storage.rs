//! On-disk formats: frame packs, weight packs and the CSV tables.
//!
//! Both binary packs are little-endian regardless of host and every file is
//! written atomically through a temporary file in the target directory.
//!
//! FramePack layout:
//!
//! ```text
//! "FPK1" | u32 count | u32 height | u32 width | u32 channels
//!        | validity bitmap, ceil(count / 8) bytes, LSB first
//!        | count * height * width * channels f32
//! ```
//!
//! WeightPack layout:
//!
//! ```text
//! "WPK1" | u32 entries | per entry: u32 name_len | name | u32 rank | rank * u32 | f32 data
//! ```

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clips::Clip;
use crate::datagen::SynthVideo;
use crate::error::{Error, Result};
use crate::postprocess::TrainStats;
use crate::tensor::Tensor;
use crate::training::VideoFrames;

pub const FRAME_MAGIC: &[u8; 4] = b"FPK1";
pub const WEIGHT_MAGIC: &[u8; 4] = b"WPK1";

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Length(format!(
                "truncated {what} at offset {}: need {n} bytes, {} left",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn magic(&mut self, want: &[u8; 4]) -> Result<()> {
        let got = self.take(4, "magic")?;
        if got != want {
            return Err(Error::Format {
                offset: 0,
                reason: format!("bad magic {:?}, expected {:?}", String::from_utf8_lossy(got), String::from_utf8_lossy(want)),
            });
        }
        Ok(())
    }

    fn f32s(&mut self, n: usize, what: &str, allow_nan: bool) -> Result<Vec<f32>> {
        let start = self.pos;
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Length(format!("{what} too large")))?, what)?;
        let vals: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        if !allow_nan {
            if let Some(i) = vals.iter().position(|v| v.is_nan()) {
                return Err(Error::data(format!("NaN in {what} at offset {}", start + 4 * i)));
            }
        }
        Ok(vals)
    }

    fn finish(&self, what: &str) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Length(format!(
                "{} trailing bytes after {what} at offset {}",
                self.buf.len() - self.pos,
                self.pos
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FramePack {
    pub frames: VideoFrames,
    pub valid: Vec<bool>,
}

pub fn encode_frame_pack(pack: &FramePack) -> Result<Vec<u8>> {
    let f = &pack.frames;
    let n = f.len();
    if pack.valid.len() != n || f.data.len() != n * f.frame_len() {
        return Err(Error::Length(format!("{} frames vs {} validity flags", n, pack.valid.len())));
    }
    let mut out = Vec::with_capacity(20 + n.div_ceil(8) + 4 * f.data.len());
    out.extend_from_slice(FRAME_MAGIC);
    for v in [n, f.height, f.width, f.channels] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    let mut bitmap = vec![0u8; n.div_ceil(8)];
    for (i, &v) in pack.valid.iter().enumerate() {
        if v {
            bitmap[i / 8] |= 1 << (i % 8);
        }
    }
    out.extend_from_slice(&bitmap);
    for v in &f.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_frame_pack(bytes: &[u8], allow_nan: bool) -> Result<FramePack> {
    let mut r = Reader { buf: bytes, pos: 0 };
    r.magic(FRAME_MAGIC)?;
    let n = r.u32("frame count")? as usize;
    let h = r.u32("height")? as usize;
    let w = r.u32("width")? as usize;
    let c = r.u32("channels")? as usize;
    if h == 0 || w == 0 || c == 0 {
        return Err(Error::Format { offset: 8, reason: format!("zero frame extent {h}x{w}x{c}") });
    }
    let bitmap = r.take(n.div_ceil(8), "validity bitmap")?;
    let valid = (0..n).map(|i| bitmap[i / 8] >> (i % 8) & 1 == 1).collect();
    let data = r.f32s(n * h * w * c, "frame payload", allow_nan)?;
    r.finish("frame payload")?;
    Ok(FramePack { frames: VideoFrames { height: h, width: w, channels: c, data }, valid })
}

pub fn encode_weight_pack(weights: &BTreeMap<String, Tensor>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHT_MAGIC);
    out.extend_from_slice(&(weights.len() as u32).to_le_bytes());
    for (name, t) in weights {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_weight_pack(bytes: &[u8], allow_nan: bool) -> Result<BTreeMap<String, Tensor>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    r.magic(WEIGHT_MAGIC)?;
    let count = r.u32("entry count")?;
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let at = r.pos as u64;
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Format { offset: at + 4, reason: "entry name is not UTF-8".into() })?
            .to_string();
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("extent")? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Length(format!("entry `{name}` is too large")))?;
        let data = r.f32s(n, &format!("entry `{name}`"), allow_nan)?;
        let t = Tensor::new(shape, data).map_err(|e| Error::Format { offset: at, reason: e.to_string() })?;
        if out.insert(name.clone(), t).is_some() {
            return Err(Error::Format { offset: at, reason: format!("duplicate entry `{name}`") });
        }
    }
    r.finish("last entry")?;
    Ok(out)
}

pub fn write_weight_pack(path: &Path, weights: &BTreeMap<String, Tensor>) -> Result<()> {
    write_atomic(path, &encode_weight_pack(weights))
}

pub fn read_weight_pack(path: &Path, allow_nan: bool) -> Result<BTreeMap<String, Tensor>> {
    decode_weight_pack(&read_bytes(path)?, allow_nan)
}

pub fn write_frame_pack(path: &Path, pack: &FramePack) -> Result<()> {
    write_atomic(path, &encode_frame_pack(pack)?)
}

pub fn read_frame_pack(path: &Path, allow_nan: bool) -> Result<FramePack> {
    decode_frame_pack(&read_bytes(path)?, allow_nan)
}

fn csv_bytes<S: Serialize>(rows: impl IntoIterator<Item = S>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(vec![]);
    for row in rows {
        w.serialize(row).map_err(|e| Error::data(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::data(e.to_string()))
}

fn csv_rows<D: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<D>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::data(format!("{}: {e}", path.display()))))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRow {
    pub frame_index: usize,
    pub timestamp_ms: u64,
    pub valence: f32,
    pub arousal: f32,
    pub valid: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub frame_index: usize,
    pub valence_pred: f64,
    pub arousal_pred: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub id: String,
    pub frames: usize,
    pub fps: u32,
    pub height: usize,
    pub width: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipRow {
    pub source: String,
    /// Space-separated source frame indices.
    pub indices: String,
    /// Space-separated stream positions.
    pub positions: String,
    pub valence: f32,
    pub arousal: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub target: String,
    pub label_mean: f64,
    pub label_std: f64,
    pub pred_mean: f64,
}

pub fn write_predictions(path: &Path, rows: &[PredictionRow]) -> Result<()> {
    write_atomic(path, &csv_bytes(rows)?)
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>> {
    csv_rows(path)
}

pub fn read_annotations(path: &Path) -> Result<Vec<AnnotationRow>> {
    csv_rows(path)
}

pub fn write_stats(path: &Path, stats: &[(String, TrainStats)]) -> Result<()> {
    write_atomic(
        path,
        &csv_bytes(stats.iter().map(|(t, s)| StatsRow {
            target: t.clone(),
            label_mean: s.label_mean,
            label_std: s.label_std,
            pred_mean: s.pred_mean,
        }))?,
    )
}

pub fn read_stats(path: &Path) -> Result<BTreeMap<String, TrainStats>> {
    Ok(csv_rows::<StatsRow>(path)?
        .into_iter()
        .map(|r| (r.target, TrainStats { label_mean: r.label_mean, label_std: r.label_std, pred_mean: r.pred_mean }))
        .collect())
}

fn join(v: &[usize]) -> String {
    v.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" ")
}

fn split(s: &str) -> Result<Vec<usize>> {
    s.split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::data(format!("bad index `{t}` in clip manifest"))))
        .collect()
}

pub fn write_clip_manifest(path: &Path, clips: &[Clip]) -> Result<()> {
    write_atomic(
        path,
        &csv_bytes(clips.iter().map(|c| ClipRow {
            source: c.source.clone(),
            indices: join(&c.indices),
            positions: join(&c.positions),
            valence: c.valence,
            arousal: c.arousal,
        }))?,
    )
}

pub fn read_clip_manifest(path: &Path) -> Result<Vec<Clip>> {
    csv_rows::<ClipRow>(path)?
        .into_iter()
        .map(|r| {
            Ok(Clip {
                source: r.source,
                indices: split(&r.indices)?,
                positions: split(&r.positions)?,
                valence: r.valence,
                arousal: r.arousal,
            })
        })
        .collect()
}

pub fn corpus_paths(dir: &Path, id: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{id}.fpk")), dir.join(format!("{id}.csv")))
}

/// One frame pack and one annotation CSV per video plus `manifest.csv`.
pub fn write_corpus(dir: &Path, videos: &[SynthVideo]) -> Result<()> {
    let mut manifest = vec![];
    for v in videos {
        let (fpk, csv) = corpus_paths(dir, &v.id);
        write_frame_pack(&fpk, &FramePack { frames: v.frames.clone(), valid: v.valid.clone() })?;
        let rows = (0..v.frames.len()).map(|f| AnnotationRow {
            frame_index: f,
            timestamp_ms: f as u64 * 1000 / v.fps as u64,
            valence: v.valence[f],
            arousal: v.arousal[f],
            valid: v.valid[f] as u8,
        });
        write_atomic(&csv, &csv_bytes(rows)?)?;
        manifest.push(CorpusEntry {
            id: v.id.clone(),
            frames: v.frames.len(),
            fps: v.fps,
            height: v.frames.height,
            width: v.frames.width,
        });
    }
    write_atomic(&dir.join("manifest.csv"), &csv_bytes(manifest)?)
}

pub fn read_corpus(dir: &Path, allow_nan: bool) -> Result<Vec<SynthVideo>> {
    let entries: Vec<CorpusEntry> = csv_rows(&dir.join("manifest.csv"))?;
    entries
        .into_iter()
        .map(|e| {
            let (fpk, csv) = corpus_paths(dir, &e.id);
            let pack = read_frame_pack(&fpk, allow_nan)?;
            let rows = read_annotations(&csv)?;
            if pack.valid.len() != e.frames || rows.len() != e.frames {
                return Err(Error::Length(format!(
                    "video `{}`: manifest says {} frames, pack has {}, annotations {}",
                    e.id,
                    e.frames,
                    pack.valid.len(),
                    rows.len()
                )));
            }
            if rows.iter().zip(&pack.valid).any(|(r, &v)| (r.valid == 1) != v) {
                return Err(Error::data(format!("video `{}`: validity flags differ between pack and CSV", e.id)));
            }
            Ok(SynthVideo {
                id: e.id,
                fps: e.fps,
                frames: pack.frames,
                valid: pack.valid,
                valence: rows.iter().map(|r| r.valence).collect(),
                arousal: rows.iter().map(|r| r.arousal).collect(),
            })
        })
        .collect()
}
