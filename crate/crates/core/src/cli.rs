//! Command-line front end.
//!
//! Every weight pack written here gets a model card (`<name>.toml`) beside
//! it recording the architecture, scale, target multiplier and inflation
//! settings, so later commands can rebuild the graph the weights belong to.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::clips::{decimate_stream, window_clips, Clip, Fusion, WindowConfig};
use crate::datagen::{generate_corpus, SynthSpec, SynthVideo, DEFAULT_KAPPA};
use crate::error::{Error, Result};
use crate::inflation::{build_gradient_mask, InflationConfig, InflationMode, OffCenterInit, TemporalPadding};
use crate::metrics::{reports_to_csv, reports_to_text, MetricReport};
use crate::model::{build_cnn_lstm, build_i3d, build_vgg_mini, Head, ModelSpec, Profile, Scale};
use crate::pipeline::{clip_dataset, pretrain_classifier};
use crate::postprocess::{apply_chain, fit_train_stats, MeanFilter, Steps};
use crate::rng::RngStream;
use crate::storage::{
    read_annotations, read_clip_manifest, read_corpus, read_predictions, read_stats, read_weight_pack, write_atomic,
    write_clip_manifest, write_corpus, write_predictions, write_stats, write_weight_pack, PredictionRow,
};
use crate::training::{fit_regression, log_to_csv, predict, ClassLogRow, TrainConfig};

/// Stdout writes that tolerate a closed pipe.
macro_rules! out {
    ($($t:tt)*) => { emit(&format!($($t)*)) };
}
macro_rules! outln {
    ($($t:tt)*) => { emit(&format!("{}\n", format!($($t)*))) };
}

fn emit(s: &str) {
    use std::io::Write as _;
    let _ = std::io::stdout().lock().write_all(s.as_bytes());
}

#[derive(Parser, Debug)]
#[command(name = "inflatenn", version, about = "Valence/arousal regression from face video")]
pub struct Cli {
    /// Accept NaN values in frame and weight packs.
    #[arg(long, global = true)]
    pub allow_nan: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render a synthetic annotated corpus.
    GenData(GenDataArgs),
    /// Cut a corpus into clips and print clip counts.
    Window(WindowArgs),
    /// Inflate a 2D classifier into a 3D regressor.
    Inflate(InflateArgs),
    /// Train from a run-config file.
    Train(TrainArgs),
    /// Score a model on a clip manifest.
    Eval(EvalArgs),
    /// Repair per-frame predictions.
    Postprocess(PostprocessArgs),
    /// Print a model's layer manifest.
    Describe(DescribeArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub videos: usize,
    #[arg(long, default_value_t = 300)]
    pub frames: usize,
    #[arg(long, default_value_t = 32)]
    pub height: usize,
    #[arg(long, default_value_t = 24)]
    pub width: usize,
    #[arg(long, default_value_t = 10)]
    pub fps: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.1)]
    pub dropout_rate: f64,
    #[arg(long, default_value_t = DEFAULT_KAPPA)]
    pub kappa: f64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FusionArg {
    Mean,
    Extremum,
}

#[derive(Args, Debug)]
pub struct WindowArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Target frame rates; comma separated lists give one table row each.
    #[arg(long, value_delimiter = ',', default_value = "10")]
    pub fps: Vec<u32>,
    #[arg(long, value_delimiter = ',', default_value = "16")]
    pub seq_len: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0.5")]
    pub overlap: Vec<f64>,
    #[arg(long, value_enum, default_value = "mean")]
    pub fusion: FusionArg,
    /// Largest gap between neighbouring clip frames, in target-rate frames.
    #[arg(long, default_value_t = 2)]
    pub gap_tolerance: usize,
    /// Video range `start..end` by manifest position.
    #[arg(long)]
    pub videos: Option<String>,
    /// Clip manifest; needs a single fps/seq-len/overlap combination.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the count table here.
    #[arg(long)]
    pub table: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    Centered,
    Copied,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum InitArg {
    Zero,
    Random,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PaddingArg {
    Same,
    Valid,
}

#[derive(Args, Debug)]
pub struct InflationArgs {
    #[arg(long, value_enum, default_value = "centered")]
    pub inflate_mode: ModeArg,
    #[arg(long, value_enum, default_value = "zero")]
    pub init: InitArg,
    /// Freeze the centre slice of every inflated kernel.
    #[arg(long)]
    pub mask: bool,
    /// Temporal dilation of the four conv blocks.
    #[arg(long, value_delimiter = ',', default_value = "1,1,1,1")]
    pub dilation: Vec<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub multiplier: f64,
    #[arg(long, default_value_t = 3)]
    pub temporal_extent: usize,
    /// Divide copied kernels by the temporal extent.
    #[arg(long)]
    pub copied_rescale: bool,
    #[arg(long, value_enum, default_value = "same")]
    pub temporal_padding: PaddingArg,
}

impl InflationArgs {
    pub fn to_config(&self) -> Result<InflationConfig> {
        let dilation_schedule: [usize; 4] = self
            .dilation
            .as_slice()
            .try_into()
            .map_err(|_| Error::config(format!("--dilation needs 4 values, got {}", self.dilation.len())))?;
        let cfg = InflationConfig {
            mode: match self.inflate_mode {
                ModeArg::Centered => InflationMode::Centered,
                ModeArg::Copied => InflationMode::Copied,
            },
            off_center_init: match self.init {
                InitArg::Zero => OffCenterInit::Zero,
                InitArg::Random => OffCenterInit::Random,
            },
            masking: self.mask,
            dilation_schedule,
            target_multiplier: self.multiplier,
            temporal_extent: self.temporal_extent,
            copied_rescale: self.copied_rescale,
            temporal_padding: match self.temporal_padding {
                PaddingArg::Same => TemporalPadding::Same,
                PaddingArg::Valid => TemporalPadding::Valid,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
pub struct InflateArgs {
    /// Classifier weight pack (with its model card).
    #[arg(long)]
    pub base: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Seed for random off-centre slices and the new regression head.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub inflation: InflationArgs,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub clips: PathBuf,
    /// Metric report CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-video frame predictions, averaged over the clips covering each frame.
    #[arg(long)]
    pub predictions_dir: Option<PathBuf>,
    /// Post-processing statistics from the covered frames.
    #[arg(long)]
    pub stats_out: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum MeanFilterArg {
    Printed,
    Swapped,
}

#[derive(Args, Debug)]
pub struct PostprocessArgs {
    /// Annotation CSV of the video.
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub stats: PathBuf,
    #[arg(long, default_value = "sn,mf,td")]
    pub steps: String,
    #[arg(long, value_enum, default_value = "printed")]
    pub mean_filter: MeanFilterArg,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-target alignment result CSV.
    #[arg(long)]
    pub delay_out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    /// 2D classifier.
    Vgg,
    /// CNN-LSTM regressor.
    Cascade,
    /// Inflated 3D regressor.
    I3d,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ScaleArg {
    Desk,
    Paper,
}

#[derive(Args, Debug)]
pub struct DescribeArgs {
    /// Weight pack with a model card.
    #[arg(long, conflicts_with = "arch")]
    pub model: Option<PathBuf>,
    /// Describe a freshly built architecture instead.
    #[arg(long, value_enum)]
    pub arch: Option<Arch>,
    #[arg(long, value_enum, default_value = "desk")]
    pub scale: ScaleArg,
    /// Clip length used for the shape column.
    #[arg(long, default_value_t = 16)]
    pub frames: usize,
    #[command(flatten)]
    pub inflation: InflationArgs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelCard {
    pub arch: Arch,
    pub scale: Scale,
    pub target_multiplier: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inflation: Option<InflationConfig>,
}

pub fn card_path(weights: &Path) -> PathBuf {
    weights.with_extension("toml")
}

/// Builds the architecture a card describes, with throwaway weights.
pub fn build_from_card(card: &ModelCard) -> Result<ModelSpec> {
    let profile = Profile::for_scale(card.scale);
    let mut rng = RngStream::new(0);
    let base = build_vgg_mini(&profile, Head::Classification, &mut rng)?;
    match card.arch {
        Arch::Vgg => Ok(base),
        Arch::Cascade => build_cnn_lstm(&base.trunk(), &profile, &mut rng),
        Arch::I3d => {
            let cfg = card.inflation.as_ref().ok_or_else(|| Error::config("i3d model card lacks [inflation]"))?;
            build_i3d(&base, cfg, &profile, &mut rng)
        }
    }
}

pub fn save_model(path: &Path, model: &ModelSpec, card: &ModelCard) -> Result<()> {
    write_weight_pack(path, &model.weights)?;
    let text = toml::to_string(card).map_err(|e| Error::config(e.to_string()))?;
    write_atomic(&card_path(path), text.as_bytes())
}

pub fn load_model(path: &Path, allow_nan: bool) -> Result<(ModelSpec, ModelCard)> {
    let cp = card_path(path);
    let text = std::fs::read_to_string(&cp).map_err(|e| Error::io(&cp, e))?;
    let card: ModelCard = toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", cp.display())))?;
    let mut model = build_from_card(&card)?;
    let weights = read_weight_pack(path, allow_nan)?;
    let want: BTreeSet<&String> = model.weights.keys().collect();
    let got: BTreeSet<&String> = weights.keys().collect();
    if want != got {
        let missing: Vec<_> = want.difference(&got).collect();
        let extra: Vec<_> = got.difference(&want).collect();
        return Err(Error::data(format!(
            "{} does not match its card: missing {missing:?}, unexpected {extra:?}",
            path.display()
        )));
    }
    model.weights = weights;
    model.check_weights()?;
    Ok((model, card))
}

fn default_frame_stride() -> usize {
    3
}

fn default_scale() -> Scale {
    Scale::Desk
}

/// Contents of a `train --config` file. Relative paths resolve against the
/// file's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: PathBuf,
    pub train_clips: PathBuf,
    pub val_clips: PathBuf,
    pub out: PathBuf,
    pub arch: Arch,
    #[serde(default = "default_scale")]
    pub scale: Scale,
    /// Pre-trained classifier; when absent one is trained on the training
    /// videos first.
    #[serde(default)]
    pub base: Option<PathBuf>,
    /// Every n-th valid frame feeds classifier pre-training.
    #[serde(default = "default_frame_stride")]
    pub frame_stride: usize,
    #[serde(default)]
    pub pretrain: TrainConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub inflation: InflationConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        let root = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.corpus, &mut cfg.train_clips, &mut cfg.val_clips, &mut cfg.out] {
            *p = root.join(&*p);
        }
        if let Some(b) = cfg.base.as_mut() {
            *b = root.join(&*b);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.pretrain.validate()?;
        self.train.validate()?;
        self.inflation.validate()?;
        if self.frame_stride == 0 {
            return Err(Error::config("frame_stride must be at least 1"));
        }
        Ok(())
    }
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Window(a) => window(a, cli.allow_nan),
        Command::Inflate(a) => inflate(a, cli.allow_nan),
        Command::Train(a) => train(a, cli.allow_nan),
        Command::Eval(a) => eval(a, cli.allow_nan),
        Command::Postprocess(a) => postprocess(a),
        Command::Describe(a) => describe(a, cli.allow_nan),
    }
}

fn gen_data(a: &GenDataArgs) -> Result<()> {
    let spec = SynthSpec {
        num_videos: a.videos,
        frames_per_video: a.frames,
        height: a.height,
        width: a.width,
        fps: a.fps,
        seed: a.seed,
        dropout_rate: a.dropout_rate,
        kappa: a.kappa,
    };
    let videos = generate_corpus(&spec)?;
    write_corpus(&a.out, &videos)?;
    outln!("wrote {} videos of {} frames to {}", videos.len(), a.frames, a.out.display());
    Ok(())
}

fn parse_range(s: &str, len: usize) -> Result<std::ops::Range<usize>> {
    let bad = || Error::config(format!("bad video range `{s}`, expected start..end"));
    let (a, b) = s.split_once("..").ok_or_else(bad)?;
    let a: usize = if a.is_empty() { 0 } else { a.parse().map_err(|_| bad())? };
    let b: usize = if b.is_empty() { len } else { b.parse().map_err(|_| bad())? };
    if a >= b || b > len {
        return Err(Error::config(format!("video range {a}..{b} outside 0..{len}")));
    }
    Ok(a..b)
}

/// Clips of every video at `cfg.fps`, decimating faster sources.
pub fn window_videos(videos: &[SynthVideo], cfg: &WindowConfig) -> Result<Vec<Clip>> {
    let mut clips = vec![];
    for v in videos {
        let stream = decimate_stream(&v.to_stream(), cfg.fps)?;
        clips.extend(window_clips(&stream, &cfg.on_source(v.fps))?);
    }
    Ok(clips)
}

fn window(a: &WindowArgs, allow_nan: bool) -> Result<()> {
    let corpus = read_corpus(&a.corpus, allow_nan)?;
    let range = match &a.videos {
        Some(r) => parse_range(r, corpus.len())?,
        None => 0..corpus.len(),
    };
    let videos = &corpus[range];
    let combos: Vec<(u32, usize, f64)> = a
        .fps
        .iter()
        .flat_map(|&f| a.seq_len.iter().flat_map(move |&s| a.overlap.iter().map(move |&o| (f, s, o))))
        .collect();
    if a.out.is_some() && combos.len() != 1 {
        return Err(Error::config("--out needs exactly one fps, seq-len and overlap"));
    }
    let mut table = String::from("fps,seq_len,overlap,stride,clips\n");
    for &(fps, seq_len, overlap) in &combos {
        let cfg = WindowConfig {
            fps,
            seq_len,
            overlap,
            fusion: match a.fusion {
                FusionArg::Mean => Fusion::Mean,
                FusionArg::Extremum => Fusion::Extremum,
            },
            gap_tolerance: a.gap_tolerance,
            nominal_step: 1,
        };
        cfg.validate()?;
        let clips = window_videos(videos, &cfg)?;
        table.push_str(&format!("{fps},{seq_len},{overlap},{},{}\n", cfg.stride(), clips.len()));
        if let Some(out) = &a.out {
            write_clip_manifest(out, &clips)?;
        }
    }
    out!("{table}");
    if let Some(t) = &a.table {
        write_atomic(t, table.as_bytes())?;
    }
    Ok(())
}

fn inflate(a: &InflateArgs, allow_nan: bool) -> Result<()> {
    let cfg = a.inflation.to_config()?;
    let (base, card) = load_model(&a.base, allow_nan)?;
    if card.arch != Arch::Vgg {
        return Err(Error::config(format!("{} is a {:?} model, inflation needs a 2D classifier", a.base.display(), card.arch)));
    }
    let mut rng = RngStream::new(a.seed);
    let model = build_i3d(&base, &cfg, &Profile::for_scale(card.scale), &mut rng)?;
    let out_card =
        ModelCard { arch: Arch::I3d, scale: card.scale, target_multiplier: cfg.target_multiplier, inflation: Some(cfg) };
    save_model(&a.out, &model, &out_card)?;
    outln!("wrote {} ({} parameters)", a.out.display(), model.param_count());
    Ok(())
}

/// The corpus videos referenced by `clips`, in corpus order.
fn referenced<'a>(corpus: &'a [SynthVideo], clips: &[Clip]) -> Vec<SynthVideo> {
    let ids: BTreeSet<&str> = clips.iter().map(|c| c.source.as_str()).collect();
    corpus.iter().filter(|v| ids.contains(v.id.as_str())).cloned().collect()
}

fn class_log_csv(rows: &[ClassLogRow]) -> String {
    let mut s = String::from("epoch,loss,accuracy\n");
    for r in rows {
        s.push_str(&format!("{},{:.6},{:.6}\n", r.epoch, r.loss, r.accuracy));
    }
    s
}

fn train(a: &TrainArgs, allow_nan: bool) -> Result<()> {
    let cfg = RunConfig::load(&a.config)?;
    let corpus = read_corpus(&cfg.corpus, allow_nan)?;
    let train_clips = read_clip_manifest(&cfg.train_clips)?;
    let val_clips = read_clip_manifest(&cfg.val_clips)?;
    if train_clips.is_empty() || val_clips.is_empty() {
        return Err(Error::data("training and validation clip manifests must not be empty"));
    }
    let train_videos = referenced(&corpus, &train_clips);
    let val_videos = referenced(&corpus, &val_clips);
    let profile = Profile::for_scale(cfg.scale);

    let base = match &cfg.base {
        Some(p) => {
            let (m, card) = load_model(p, allow_nan)?;
            if card.arch != Arch::Vgg || card.scale != cfg.scale {
                return Err(Error::config(format!("{} is not a {:?}-scale classifier", p.display(), cfg.scale)));
            }
            m
        }
        None => {
            let (m, log) = pretrain_classifier(&train_videos, &profile, cfg.frame_stride, &cfg.pretrain)?;
            write_atomic(&cfg.out.join("pretrain_log.csv"), class_log_csv(&log).as_bytes())?;
            let card = ModelCard { arch: Arch::Vgg, scale: cfg.scale, target_multiplier: 1.0, inflation: None };
            save_model(&cfg.out.join("base.wpk"), &m, &card)?;
            m
        }
    };
    if cfg.arch == Arch::Vgg {
        outln!("wrote {}", cfg.out.join("base.wpk").display());
        return Ok(());
    }

    let train_data = clip_dataset(&train_videos, &train_clips)?;
    let val_data = clip_dataset(&val_videos, &val_clips)?;
    let (fit, card) = if cfg.arch == Arch::Cascade {
        let model = build_cnn_lstm(&base.trunk(), &profile, &mut RngStream::new(cfg.train.seed).split(23))?;
        let card = ModelCard { arch: Arch::Cascade, scale: cfg.scale, target_multiplier: cfg.train.target_multiplier, inflation: None };
        (fit_regression(&model, &train_data, &val_data, &cfg.train, None)?, card)
    } else {
        let model = build_i3d(&base, &cfg.inflation, &profile, &mut RngStream::new(cfg.train.seed).split(29))?;
        let mask = build_gradient_mask(&model, &cfg.inflation)?;
        let tc = TrainConfig { target_multiplier: cfg.inflation.target_multiplier, ..cfg.train.clone() };
        let card = ModelCard {
            arch: Arch::I3d,
            scale: cfg.scale,
            target_multiplier: tc.target_multiplier,
            inflation: Some(cfg.inflation.clone()),
        };
        (fit_regression(&model, &train_data, &val_data, &tc, Some(&mask))?, card)
    };
    write_atomic(&cfg.out.join("log.csv"), log_to_csv(&fit.log).as_bytes())?;
    save_model(&cfg.out.join("best.wpk"), &fit.best, &card)?;
    outln!("best epoch {} score {:.6}; wrote {}", fit.best_epoch, fit.best_score, cfg.out.join("best.wpk").display());
    Ok(())
}

fn eval(a: &EvalArgs, allow_nan: bool) -> Result<()> {
    let (model, card) = load_model(&a.model, allow_nan)?;
    let corpus = read_corpus(&a.corpus, allow_nan)?;
    let clips = read_clip_manifest(&a.clips)?;
    if clips.is_empty() {
        return Err(Error::data(format!("{} lists no clips", a.clips.display())));
    }
    let videos = referenced(&corpus, &clips);
    let data = clip_dataset(&videos, &clips)?;
    let preds = predict(&model, &data, a.batch_size, card.target_multiplier)?;

    let mut reports = vec![];
    for (k, target) in ["valence", "arousal"].into_iter().enumerate() {
        let y: Vec<f64> = clips.iter().map(|c| if k == 0 { c.valence } else { c.arousal } as f64).collect();
        let p: Vec<f64> = preds.iter().map(|p| p[k]).collect();
        reports.push(MetricReport::compute(target, &y, &p)?);
    }
    write_atomic(&a.out, reports_to_csv(&reports).as_bytes())?;
    out!("{}", reports_to_text(&reports));

    if a.predictions_dir.is_none() && a.stats_out.is_none() {
        return Ok(());
    }
    // clip predictions averaged onto the frames they cover
    let mut cover: BTreeMap<&str, BTreeMap<usize, ([f64; 2], usize)>> = BTreeMap::new();
    for (c, p) in clips.iter().zip(&preds) {
        let frames = cover.entry(c.source.as_str()).or_default();
        for &f in &c.indices {
            let e = frames.entry(f).or_insert(([0.0; 2], 0));
            e.0[0] += p[0];
            e.0[1] += p[1];
            e.1 += 1;
        }
    }
    let mut labels = [vec![], vec![]];
    let mut frame_preds = [vec![], vec![]];
    for v in &videos {
        let Some(frames) = cover.get(v.id.as_str()) else { continue };
        let rows: Vec<PredictionRow> = frames
            .iter()
            .map(|(&f, (s, n))| PredictionRow {
                frame_index: f,
                valence_pred: s[0] / *n as f64,
                arousal_pred: s[1] / *n as f64,
            })
            .collect();
        for r in &rows {
            labels[0].push(v.valence[r.frame_index] as f64);
            labels[1].push(v.arousal[r.frame_index] as f64);
            frame_preds[0].push(r.valence_pred);
            frame_preds[1].push(r.arousal_pred);
        }
        if let Some(dir) = &a.predictions_dir {
            write_predictions(&dir.join(format!("{}.csv", v.id)), &rows)?;
        }
    }
    if let Some(path) = &a.stats_out {
        let stats = vec![
            ("valence".to_string(), fit_train_stats(&labels[0], &frame_preds[0])?),
            ("arousal".to_string(), fit_train_stats(&labels[1], &frame_preds[1])?),
        ];
        write_stats(path, &stats)?;
    }
    Ok(())
}

fn postprocess(a: &PostprocessArgs) -> Result<()> {
    let steps: Steps = a.steps.parse()?;
    let variant = match a.mean_filter {
        MeanFilterArg::Printed => MeanFilter::Printed,
        MeanFilterArg::Swapped => MeanFilter::Swapped,
    };
    let labels: BTreeMap<usize, _> = read_annotations(&a.labels)?.into_iter().map(|r| (r.frame_index, r)).collect();
    let preds = read_predictions(&a.predictions)?;
    if preds.is_empty() {
        return Err(Error::data(format!("{} has no rows", a.predictions.display())));
    }
    let stats = read_stats(&a.stats)?;
    let frames: Vec<usize> = preds.iter().map(|p| p.frame_index).collect();
    let mut repaired = vec![];
    let mut delays = String::from("target,best_t,aligned_len,ccc,label_start\n");
    for (k, target) in ["valence", "arousal"].into_iter().enumerate() {
        let s = stats.get(target).ok_or_else(|| Error::data(format!("{} has no `{target}` row", a.stats.display())))?;
        let y: Vec<f64> = frames
            .iter()
            .map(|f| {
                let r = labels.get(f).ok_or_else(|| Error::data(format!("no label for frame {f}")))?;
                Ok(if k == 0 { r.valence } else { r.arousal } as f64)
            })
            .collect::<Result<_>>()?;
        let p: Vec<f64> = preds.iter().map(|r| if k == 0 { r.valence_pred } else { r.arousal_pred }).collect();
        let (out, delay) = apply_chain(&y, &p, s, steps, variant)?;
        let start = match &delay {
            Some(d) => {
                delays.push_str(&format!("{target},{},{},{:.9},{}\n", d.best_t, d.aligned_len, d.ccc, d.label_start));
                d.label_start
            }
            None => 0,
        };
        // frame index -> repaired value
        repaired.push(frames[start..start + out.len()].iter().copied().zip(out).collect::<BTreeMap<_, _>>());
    }
    let rows: Vec<PredictionRow> = repaired[0]
        .iter()
        .filter_map(|(&f, &v)| {
            repaired[1].get(&f).map(|&ar| PredictionRow { frame_index: f, valence_pred: v, arousal_pred: ar })
        })
        .collect();
    write_predictions(&a.out, &rows)?;
    if steps.time_delay {
        out!("{delays}");
        if let Some(d) = &a.delay_out {
            write_atomic(d, delays.as_bytes())?;
        }
    }
    outln!("wrote {} repaired frames to {}", rows.len(), a.out.display());
    Ok(())
}

fn describe(a: &DescribeArgs, allow_nan: bool) -> Result<()> {
    let (model, card) = match (&a.model, a.arch) {
        (Some(p), _) => load_model(p, allow_nan)?,
        (None, Some(arch)) => {
            let inflation = a.inflation.to_config()?;
            let card = ModelCard {
                arch,
                scale: match a.scale {
                    ScaleArg::Desk => Scale::Desk,
                    ScaleArg::Paper => Scale::Paper,
                },
                target_multiplier: inflation.target_multiplier,
                inflation: (arch == Arch::I3d).then_some(inflation),
            };
            (build_from_card(&card)?, card)
        }
        (None, None) => return Err(Error::config("describe needs --model or --arch")),
    };
    let header = toml::to_string(&ModelCard { inflation: None, ..card }).map_err(|e| Error::config(e.to_string()))?;
    out!("{header}");
    out!("{}", model.manifest(a.frames)?);
    Ok(())
}
