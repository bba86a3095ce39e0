//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use inflatenn::clips::{Clip, FrameRecord, AnnotationTrack, Fusion, VideoStream, WindowConfig};
use inflatenn::gradcheck::{away_from_zero, check_model, distinct_values, GradCheckConfig, GradReport};
use inflatenn::layers::LayerKind;
use inflatenn::model::{init_weights, InputKind, LayerSpec, ModelSpec};
use inflatenn::{RngStream, Tensor};

pub struct GradCase {
    pub name: &'static str,
    pub model: ModelSpec<f64>,
    pub input: Tensor<f64>,
}

fn l(name: &str, kind: LayerKind) -> LayerSpec {
    LayerSpec::new(name, kind)
}

fn conv2d(in_ch: usize, out_ch: usize, stride: usize, padding: usize) -> LayerKind {
    LayerKind::Conv2d { in_ch, out_ch, kernel: 3, stride, padding }
}

fn conv3d(in_ch: usize, out_ch: usize, temporal_padding: usize, temporal_dilation: usize) -> LayerKind {
    LayerKind::Conv3d { in_ch, out_ch, kt: 3, kernel: 3, stride: 1, padding: 1, temporal_padding, temporal_dilation }
}

fn dense(i: usize, o: usize) -> LayerKind {
    LayerKind::Dense { in_features: i, out_features: o }
}

fn lstm(input: usize, hidden: usize, return_sequences: bool) -> LayerKind {
    LayerKind::Lstm { input, hidden, dropout: 0.2, recurrent_dropout: 0.2, return_sequences }
}

/// Builds a model whose trainable tensors are all random, biases included.
fn case(
    name: &'static str,
    seed: u64,
    kind: InputKind,
    shape: &[usize],
    batch: usize,
    frames: usize,
    layers: Vec<LayerSpec>,
    input: impl FnOnce(&mut RngStream, &[usize]) -> Tensor<f64>,
) -> GradCase {
    let mut model = ModelSpec::<f64>::new(shape.to_vec(), kind, layers).expect("valid graph");
    let mut rng = RngStream::new(seed);
    init_weights(&mut model, &mut rng).expect("init");
    for name in model.trainable_names() {
        let s = model.weights[&name].shape().to_vec();
        model.weights.insert(name, Tensor::seeded_uniform(&mut rng, &s, -0.5, 0.5).unwrap());
    }
    let input = input(&mut rng, &model.batch_shape(batch, frames));
    GradCase { name, model, input }
}

fn uniform(rng: &mut RngStream, shape: &[usize]) -> Tensor<f64> {
    Tensor::seeded_uniform(rng, shape, -1.0, 1.0).unwrap()
}

/// One small f64 model per layer kind; together they cover every
/// [`LayerKind`] variant.
pub fn gradient_cases() -> Vec<GradCase> {
    use InputKind::{Clips, Frames};
    vec![
        case("conv2d", 1, Frames, &[2, 5, 4], 2, 1,
            vec![l("c1", conv2d(2, 3, 1, 1)), l("c2", conv2d(3, 2, 2, 0))], uniform),
        case("conv3d", 2, Clips, &[2, 4, 3], 2, 6,
            vec![l("c1", conv3d(2, 3, 1, 1)), l("c2", conv3d(3, 2, 2, 2))], uniform),
        case("batchnorm", 3, Frames, &[2, 4, 3], 4, 1,
            vec![l("c1", conv2d(2, 3, 1, 1)),
                 l("bn", LayerKind::BatchNorm { channels: 3, eps: 1e-5, momentum: 0.1 })], uniform),
        case("relu", 4, Frames, &[3, 2, 2], 3, 1,
            vec![l("act", LayerKind::Relu), l("flat", LayerKind::Flatten), l("fc", dense(12, 3))],
            |r, s| away_from_zero(r, s, 0.1, 1.0)),
        case("maxpool2d", 5, Frames, &[2, 5, 5], 2, 1,
            vec![l("pool", LayerKind::MaxPool { window: vec![2, 2] }), l("flat", LayerKind::Flatten),
                 l("fc", dense(18, 3))],
            |r, s| distinct_values(r, s, 0.01)),
        case("maxpool3d", 6, Clips, &[2, 4, 3], 2, 3,
            vec![l("pool", LayerKind::MaxPool { window: vec![2, 2, 2] }), l("flat", LayerKind::Flatten),
                 l("fc", dense(16, 3))],
            |r, s| distinct_values(r, s, 0.01)),
        case("global_avg_pool", 7, Clips, &[3, 4, 3], 2, 2,
            vec![l("gap", LayerKind::GlobalAvgPool), l("fc", dense(3, 2))], uniform),
        case("flatten_dense", 8, Frames, &[2, 3, 2], 3, 1,
            vec![l("flat", LayerKind::Flatten), l("fc1", dense(12, 4)), l("fc2", dense(4, 2))], uniform),
        case("lstm", 9, Clips, &[3, 1, 1], 3, 5,
            vec![l("fold", LayerKind::FoldTime), l("flat", LayerKind::Flatten), l("unfold", LayerKind::UnfoldTime),
                 l("lstm", lstm(3, 4, false)), l("fc", dense(4, 2))], uniform),
        case("lstm_sequences", 10, Clips, &[2, 1, 1], 2, 4,
            vec![l("fold", LayerKind::FoldTime), l("flat", LayerKind::Flatten), l("unfold", LayerKind::UnfoldTime),
                 l("lstm", lstm(2, 3, true))], uniform),
        case("dropout", 11, Frames, &[2, 3, 3], 3, 1,
            vec![l("flat", LayerKind::Flatten), l("drop", LayerKind::Dropout { rate: 0.3 }), l("fc", dense(18, 3))],
            uniform),
        case("skip_add", 12, Frames, &[2, 4, 4], 2, 1,
            vec![l("c1", conv2d(2, 2, 1, 1)), l("c2", conv2d(2, 2, 1, 1)),
                 l("skip", LayerKind::SkipAdd { target: "c1".into() }), l("gap", LayerKind::GlobalAvgPool),
                 l("fc", dense(2, 2))], uniform),
        case("fold_unfold_time", 13, Clips, &[2, 6, 4], 2, 3,
            vec![l("fold", LayerKind::FoldTime), l("c1", conv2d(2, 3, 1, 1)),
                 l("pool", LayerKind::MaxPool { window: vec![2, 2] }), l("gap", LayerKind::GlobalAvgPool),
                 l("unfold", LayerKind::UnfoldTime), l("lstm", lstm(3, 4, false)), l("fc", dense(4, 2))],
            uniform),
    ]
}

pub fn gradient_config() -> GradCheckConfig {
    GradCheckConfig { step: 1e-3, max_entries: None, ..Default::default() }
}

pub fn run_gradient_suite() -> Vec<(&'static str, GradReport)> {
    gradient_cases()
        .into_iter()
        .map(|c| (c.name, check_model(&c.model, &c.input, &gradient_config()).expect(c.name)))
        .collect()
}

pub fn layer_tags_covered() -> std::collections::BTreeSet<&'static str> {
    gradient_cases().iter().flat_map(|c| c.model.layers.iter().map(|l| l.kind.tag()).collect::<Vec<_>>()).collect()
}

/// A 10 fps stream of `n` frames with the given validity pattern.
pub fn stream(id: &str, valid: &[bool], fps: u32, rng: &mut RngStream) -> VideoStream {
    let n = valid.len();
    VideoStream {
        id: id.into(),
        frames: (0..n)
            .map(|i| FrameRecord { frame_index: i, timestamp_ms: i as u64 * 1000 / fps as u64, face: None, valid: valid[i] })
            .collect(),
        track: AnnotationTrack {
            valence: (0..n).map(|_| rng.uniform(-1.0, 1.0) as f32).collect(),
            arousal: (0..n).map(|_| rng.uniform(-1.0, 1.0) as f32).collect(),
            rate_fps: fps,
        },
    }
}

/// Enumerates every run of `seq_len` consecutive valid frames by scanning
/// the raw stream, keeps runs whose first frame has a valid-rank divisible by
/// the stride and whose gaps fit, and fuses labels from first principles.
pub fn window_oracle(s: &VideoStream, cfg: &WindowConfig) -> Vec<Clip> {
    let stride = ((cfg.seq_len as f64 * (1.0 - cfg.overlap)).round() as usize).max(1);
    let mut out = vec![];
    let mut rank = 0;
    for start in 0..s.frames.len() {
        if !s.frames[start].valid {
            continue;
        }
        let this_rank = rank;
        rank += 1;
        if this_rank % stride != 0 {
            continue;
        }
        let positions: Vec<usize> = (start..s.frames.len()).filter(|&p| s.frames[p].valid).take(cfg.seq_len).collect();
        if positions.len() < cfg.seq_len {
            break;
        }
        let indices: Vec<usize> = positions.iter().map(|&p| s.frames[p].frame_index).collect();
        if (1..indices.len()).any(|i| indices[i] - indices[i - 1] > cfg.gap_tolerance) {
            continue;
        }
        let fuse = |vals: Vec<f32>| -> f32 {
            match cfg.fusion {
                Fusion::Mean => (vals.iter().map(|&v| v as f64).sum::<f64>() / vals.len() as f64) as f32,
                Fusion::Extremum => {
                    let m = vals.iter().map(|v| v.abs()).fold(0f32, f32::max);
                    *vals.iter().find(|v| v.abs() == m).unwrap()
                }
            }
        };
        out.push(Clip {
            source: s.id.clone(),
            indices,
            valence: fuse(positions.iter().map(|&p| s.track.valence[p]).collect()),
            arousal: fuse(positions.iter().map(|&p| s.track.arousal[p]).collect()),
            positions,
        });
    }
    out
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Two-pass population covariance.
pub fn cov(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / x.len() as f64
}

pub fn pcc(y: &[f64], p: &[f64]) -> f64 {
    cov(y, p) / (cov(y, y).sqrt() * cov(p, p).sqrt())
}

pub fn ccc(y: &[f64], p: &[f64]) -> f64 {
    2.0 * cov(y, p) / (cov(y, y) + cov(p, p) + (mean(y) - mean(p)).powi(2))
}

pub fn mae(y: &[f64], p: &[f64]) -> f64 {
    y.iter().zip(p).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64
}

/// Percent, skipping labels with `|y| < eps`.
pub fn mape(y: &[f64], p: &[f64], eps: f64) -> f64 {
    let kept: Vec<f64> = y.iter().zip(p).filter(|(a, _)| a.abs() >= eps).map(|(a, b)| ((a - b) / a).abs()).collect();
    100.0 * kept.iter().sum::<f64>() / kept.len() as f64
}

pub mod equivalence {
    use inflatenn::inflation::{build_gradient_mask, inflate_model, InflationConfig, InflationMode, TemporalPadding};
    use inflatenn::layers::{conv_forward, ConvGeometry};
    use inflatenn::model::{build_i3d, build_vgg_mini, model_backward, model_forward, Head, Mode, ModelSpec, Profile};
    use inflatenn::training::{adam_step, mse_loss, AdamConfig, OptimizerState};
    use inflatenn::{RngStream, Tensor};

    /// Desk trunk with non-zero biases so every conv output depends on them.
    pub fn desk_trunk(seed: u64) -> ModelSpec {
        let mut rng = RngStream::new(seed);
        let mut m = build_vgg_mini(&Profile::desk(), Head::None, &mut rng).unwrap();
        for name in m.trainable_names().into_iter().filter(|n| n.ends_with(".bias")) {
            let s = m.weights[&name].shape().to_vec();
            m.weights.insert(name, Tensor::seeded_uniform(&mut rng, &s, -0.1, 0.1).unwrap());
        }
        m
    }

    /// Runs the 2D trunk on every frame of `clip: [1, c, t, h, w]` and
    /// returns `[1, c', t, h', w']`.
    pub fn per_frame_2d(trunk: &ModelSpec, clip: &Tensor) -> Tensor {
        let s = clip.shape();
        let (c, t, h, w) = (s[1], s[2], s[3], s[4]);
        let frames = Tensor::from_fn(&[t, c, h, w], |i| clip.get(&[0, i[1], i[0], i[2], i[3]]));
        let y = model_forward(trunk, &frames, Mode::Eval, &mut RngStream::new(0)).unwrap().output;
        let ys = y.shape().to_vec();
        Tensor::from_fn(&[1, ys[1], t, ys[2], ys[3]], |i| y.get(&[i[2], i[1], i[3], i[4]]))
    }

    /// Largest deviation between the inflated trunk and the per-frame 2D
    /// trunk over `clips` seeded random clips of 16 frames.
    pub fn centered_max_diff(cfg: &InflationConfig, clips: usize, seed: u64) -> f64 {
        let trunk = desk_trunk(seed);
        let i3d = inflate_model(&trunk, cfg, &mut RngStream::new(seed + 1)).unwrap();
        let mut rng = RngStream::new(seed + 2);
        let mut worst = 0f64;
        for _ in 0..clips {
            let clip = Tensor::seeded_uniform(&mut rng, &i3d.batch_shape(1, 16), 0.0, 1.0).unwrap();
            let y3 = model_forward(&i3d, &clip, Mode::Eval, &mut RngStream::new(0)).unwrap().output;
            worst = worst.max(y3.max_abs_diff(&per_frame_2d(&trunk, &clip)));
        }
        worst
    }

    /// Copied kernels with 1/n rescale on static clips, valid temporal
    /// padding, against the 2D trunk on the repeated frame.
    pub fn copied_static_max_diff(clips: usize, seed: u64) -> f64 {
        let cfg = InflationConfig {
            mode: InflationMode::Copied,
            copied_rescale: true,
            temporal_padding: TemporalPadding::Valid,
            ..Default::default()
        };
        let trunk = desk_trunk(seed);
        let i3d = inflate_model(&trunk, &cfg, &mut RngStream::new(seed + 1)).unwrap();
        let mut rng = RngStream::new(seed + 2);
        let mut worst = 0f64;
        for _ in 0..clips {
            let frame = Tensor::<f32>::seeded_uniform(&mut rng, &trunk.input_shape, 0.0, 1.0).unwrap();
            let t = 12;
            let clip = Tensor::from_fn(&i3d.batch_shape(1, t), |i| frame.get(&[i[1], i[3], i[4]]));
            let y3 = model_forward(&i3d, &clip, Mode::Eval, &mut RngStream::new(0)).unwrap().output;
            let y2 = per_frame_2d(&trunk, &clip);
            // every remaining position saw only copies of `frame`
            let s = y3.shape().to_vec();
            for ti in 0..s[2] {
                let a = Tensor::from_fn(&[s[1], s[3], s[4]], |i| y3.get(&[0, i[0], ti, i[1], i[2]]));
                let b = Tensor::from_fn(&[s[1], s[3], s[4]], |i| y2.get(&[0, i[0], 0, i[1], i[2]]));
                worst = worst.max(a.max_abs_diff(&b));
            }
        }
        worst
    }

    /// Centre slices of every conv kernel, flattened.
    pub fn centre_slices(m: &ModelSpec, centre: usize) -> Vec<Vec<u32>> {
        m.weights
            .iter()
            .filter(|(_, w)| w.rank() == 5)
            .map(|(_, w)| {
                let s = w.shape();
                let mut v = vec![];
                for o in 0..s[0] {
                    for i in 0..s[1] {
                        for y in 0..s[3] {
                            for x in 0..s[4] {
                                v.push(w.get(&[o, i, centre, y, x]).to_bits());
                            }
                        }
                    }
                }
                v
            })
            .collect()
    }

    /// `steps` masked Adam steps on the desk i3D; returns whether the centre
    /// slices stayed bit-identical and whether anything else moved.
    pub fn masked_training(steps: usize) -> (bool, bool) {
        let cfg = InflationConfig { masking: true, ..InflationConfig::c2() };
        let base = build_vgg_mini(&Profile::desk(), Head::Classification, &mut RngStream::new(3)).unwrap();
        let mut m = build_i3d(&base, &cfg, &Profile::desk(), &mut RngStream::new(4)).unwrap();
        let mask = build_gradient_mask(&m, &cfg).unwrap();
        let before = centre_slices(&m, cfg.center());
        let start = m.weights.clone();
        let mut state = OptimizerState::default();
        let adam = AdamConfig { learning_rate: 1e-2, ..Default::default() };
        let mut rng = RngStream::new(5);
        for _ in 0..steps {
            let x = Tensor::seeded_uniform(&mut rng, &m.batch_shape(2, 16), 0.0, 1.0).unwrap();
            let y = Tensor::seeded_uniform(&mut rng, &[2, 2], -100.0, 100.0).unwrap();
            let pass = model_forward(&m, &x, Mode::Train, &mut rng).unwrap();
            let (_, g) = mse_loss(&pass.output, &y).unwrap();
            let back = model_backward(&m, &pass, &g).unwrap();
            adam_step(&mut m.weights, &back.params, &mut state, &adam, Some(&mask)).unwrap();
        }
        let moved = m.weights.iter().filter(|(_, w)| w.rank() == 5).any(|(n, w)| w != &start[n]);
        (centre_slices(&m, cfg.center()) == before, moved)
    }

    /// Dilated conv against the dilation-1 conv with the kernel zero-stuffed
    /// to `d * (kt - 1) + 1` taps.
    pub fn dilation_max_diff(d: usize, seed: u64) -> f64 {
        let mut rng = RngStream::new(seed);
        let (cin, cout, kt) = (3, 4, 3);
        let x = Tensor::<f32>::seeded_uniform(&mut rng, &[2, cin, 2 * d * (kt - 1) + 3, 6, 5], -1.0, 1.0).unwrap();
        let w = Tensor::<f32>::seeded_uniform(&mut rng, &[cout, cin, kt, 3, 3], -0.5, 0.5).unwrap();
        let b = Tensor::<f32>::seeded_uniform(&mut rng, &[cout], -0.5, 0.5).unwrap();
        let span = d * (kt - 1) + 1;
        let stuffed = Tensor::from_fn(&[cout, cin, span, 3, 3], |i| {
            if i[2] % d == 0 { w.get(&[i[0], i[1], i[2] / d, i[3], i[4]]) } else { 0.0 }
        });
        let geom = |kt: usize, dil: usize| ConvGeometry {
            in_ch: cin,
            out_ch: cout,
            kt,
            kh: 3,
            kw: 3,
            stride: 1,
            pad_t: d,
            pad_h: 1,
            pad_w: 1,
            dilation_t: dil,
        };
        let a = conv_forward(&x, &w, &b, &geom(kt, d)).unwrap();
        let c = conv_forward(&x, &stuffed, &b, &geom(span, 1)).unwrap();
        a.max_abs_diff(&c)
    }
}

pub mod cli {
    use std::path::{Path, PathBuf};
    use std::process::{Command, Output};

    pub fn bin() -> &'static str {
        env!("CARGO_BIN_EXE_inflatenn")
    }

    pub fn run(dir: &Path, args: &[&str]) -> Output {
        Command::new(bin()).current_dir(dir).args(args).env("INFLATENN_THREADS", "1").output().expect("spawn")
    }

    pub fn ok(dir: &Path, args: &[&str]) -> String {
        let out = run(dir, args);
        assert!(
            out.status.success(),
            "{args:?} failed ({:?}):\n{}",
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    pub const RUN_TOML: &str = r#"
corpus = "corpus"
train_clips = "train.csv"
val_clips = "val.csv"
out = "run"
arch = "cascade"

[pretrain]
epochs = 1
batch_size = 32
seed = 1
[pretrain.adam]
learning_rate = 1e-3

[train]
epochs = 2
batch_size = 8
seed = 2
[train.adam]
learning_rate = 1e-3
"#;

    pub const I3D_TOML: &str = r#"
corpus = "corpus"
train_clips = "train.csv"
val_clips = "val.csv"
out = "run_i3d"
arch = "i3d"
base = "run/base.wpk"

[train]
epochs = 2
batch_size = 8
seed = 3
[train.adam]
learning_rate = 1e-3

[inflation]
mode = "copied"
masking = true
dilation_schedule = [1, 2, 2, 1]
target_multiplier = 10.0
"#;

    /// gen-data -> window -> train (cascade, then i3D on the same base)
    /// -> eval -> postprocess. Returns every artifact written.
    pub fn full_pipeline(dir: &Path) -> Vec<PathBuf> {
        ok(dir, &["gen-data", "--out", "corpus", "--videos", "6", "--frames", "120", "--seed", "9"]);
        ok(dir, &["window", "--corpus", "corpus", "--videos", "0..4", "--seq-len", "16", "--overlap", "0.5",
            "--out", "train.csv", "--table", "train_counts.csv"]);
        ok(dir, &["window", "--corpus", "corpus", "--videos", "4..6", "--seq-len", "16", "--overlap", "0.5",
            "--out", "val.csv"]);
        std::fs::write(dir.join("run.toml"), RUN_TOML).unwrap();
        std::fs::write(dir.join("i3d.toml"), I3D_TOML).unwrap();
        ok(dir, &["train", "--config", "run.toml"]);
        ok(dir, &["train", "--config", "i3d.toml"]);
        for (m, tag) in [("run/best.wpk", "cascade"), ("run_i3d/best.wpk", "i3d")] {
            ok(dir, &["eval", "--model", m, "--corpus", "corpus", "--clips", "train.csv",
                "--out", &format!("{tag}_train_report.csv"), "--stats-out", &format!("{tag}_stats.csv")]);
            ok(dir, &["eval", "--model", m, "--corpus", "corpus", "--clips", "val.csv",
                "--out", &format!("{tag}_val_report.csv"), "--predictions-dir", &format!("{tag}_preds")]);
            ok(dir, &["postprocess", "--labels", "corpus/video_004.csv",
                "--predictions", &format!("{tag}_preds/video_004.csv"), "--stats", &format!("{tag}_stats.csv"),
                "--steps", "sn,mf,td", "--out", &format!("{tag}_repaired.csv"),
                "--delay-out", &format!("{tag}_delay.csv")]);
        }
        let mut files = vec![];
        collect(dir, &mut files);
        files.sort();
        files
    }

    fn collect(dir: &Path, out: &mut Vec<PathBuf>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                collect(&p, out);
            } else {
                out.push(p);
            }
        }
    }
}
