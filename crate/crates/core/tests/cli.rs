mod common;

use common::cli::{full_pipeline, ok, run};
use inflatenn::storage::{read_clip_manifest, read_predictions};

fn tmp() -> tempfile::TempDir {
    tempfile::tempdir().unwrap()
}

#[test]
fn window_counts_a_100_frame_video() {
    let d = tmp();
    ok(d.path(), &["gen-data", "--out", "c", "--videos", "1", "--frames", "100", "--dropout-rate", "0"]);
    let table = ok(d.path(), &["window", "--corpus", "c", "--seq-len", "16", "--overlap", "0.5", "--fps", "10"]);
    assert_eq!(table.lines().nth(1).unwrap().rsplit(',').next().unwrap(), "11");
    let table = ok(d.path(), &["window", "--corpus", "c", "--seq-len", "16", "--overlap", "0.2,0.5,0.8"]);
    let counts: Vec<&str> = table.lines().skip(1).map(|l| l.rsplit(',').next().unwrap()).collect();
    assert_eq!(counts, ["7", "11", "29"]);
}

#[test]
fn window_decimates_50fps_corpora() {
    let d = tmp();
    ok(d.path(), &["gen-data", "--out", "c", "--videos", "1", "--frames", "500", "--fps", "50", "--dropout-rate", "0"]);
    let table = ok(d.path(), &["window", "--corpus", "c", "--fps", "10,50", "--seq-len", "16", "--overlap", "0.5"]);
    assert_eq!(table, "fps,seq_len,overlap,stride,clips\n10,16,0.5,8,11\n50,16,0.5,8,61\n");
    ok(d.path(), &["window", "--corpus", "c", "--fps", "10", "--seq-len", "16", "--overlap", "0.5", "--out", "m.csv"]);
    let clips = read_clip_manifest(&d.path().join("m.csv")).unwrap();
    assert_eq!(clips[1].indices[..3], [40, 45, 50]);
}

#[test]
fn inflate_then_describe_reports_rank5_kernels() {
    let d = tmp();
    std::fs::write(d.path().join("run.toml"), common::cli::RUN_TOML.replace("arch = \"cascade\"", "arch = \"vgg\"")).unwrap();
    ok(d.path(), &["gen-data", "--out", "corpus", "--videos", "3", "--frames", "60"]);
    ok(d.path(), &["window", "--corpus", "corpus", "--videos", "0..2", "--out", "train.csv"]);
    ok(d.path(), &["window", "--corpus", "corpus", "--videos", "2..3", "--out", "val.csv"]);
    ok(d.path(), &["train", "--config", "run.toml"]);
    ok(d.path(), &["inflate", "--base", "run/base.wpk", "--out", "i3d.wpk", "--inflate-mode", "centered", "--init", "zero"]);
    let text = ok(d.path(), &["describe", "--model", "i3d.wpk"]);
    let convs: Vec<&str> = text.lines().filter(|l| l.contains(" conv")).collect();
    assert_eq!(convs.len(), 4);
    for l in convs {
        assert!(l.contains("conv3d") && l.contains("param:weight=rank5") && l.contains("kt=3"), "{l}");
    }
}

#[test]
fn describe_builds_fresh_architectures() {
    let d = tmp();
    let text = ok(d.path(), &["describe", "--arch", "i3d", "--dilation", "1,2,4,8", "--temporal-extent", "5"]);
    assert!(text.contains("kt=5 dilation=8"));
    let text = ok(d.path(), &["describe", "--arch", "cascade", "--scale", "paper"]);
    assert!(text.contains("lstm") && text.contains("[1, 3, 16, 100, 80]"));
}

#[test]
fn usage_and_config_errors_exit_2() {
    let d = tmp();
    for args in [
        vec!["--no-such-flag"],
        vec!["window", "--corpus", "c", "--bogus"],
        vec!["describe"],
        vec!["describe", "--arch", "i3d", "--temporal-extent", "4"],
        vec!["describe", "--arch", "i3d", "--dilation", "1,2,3,4"],
        vec!["postprocess", "--labels", "a", "--predictions", "b", "--stats", "c", "--steps", "sn,xx", "--out", "o"],
        vec!["gen-data", "--out", "c", "--fps", "25"],
    ] {
        let out = run(d.path(), &args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(!out.stderr.is_empty());
    }
    assert_eq!(run(d.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn missing_inputs_exit_3() {
    let d = tmp();
    let out = run(d.path(), &["window", "--corpus", "nowhere"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn full_pipeline_emits_all_artifacts() {
    let d = tmp();
    let files = full_pipeline(d.path());
    let names: Vec<String> =
        files.iter().map(|p| p.strip_prefix(d.path()).unwrap().to_string_lossy().into_owned()).collect();
    for want in [
        "corpus/manifest.csv", "corpus/video_000.fpk", "corpus/video_005.csv", "train.csv", "val.csv",
        "train_counts.csv", "run/base.wpk", "run/base.toml", "run/pretrain_log.csv", "run/log.csv", "run/best.wpk",
        "run/best.toml", "run_i3d/log.csv", "run_i3d/best.wpk", "cascade_val_report.csv", "cascade_stats.csv",
        "cascade_preds/video_004.csv", "cascade_repaired.csv", "cascade_delay.csv", "i3d_val_report.csv",
        "i3d_repaired.csv", "i3d_delay.csv",
    ] {
        assert!(names.iter().any(|n| n == want), "missing {want} in {names:?}");
    }
    let log = std::fs::read_to_string(d.path().join("run/log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 2 * 2);
    let report = std::fs::read_to_string(d.path().join("i3d_val_report.csv")).unwrap();
    assert_eq!(report.lines().next().unwrap(), "target,metric,value,n,excluded");
    assert_eq!(report.lines().count(), 9);
    let preds = read_predictions(&d.path().join("cascade_preds/video_004.csv")).unwrap();
    let repaired = read_predictions(&d.path().join("cascade_repaired.csv")).unwrap();
    assert!(!repaired.is_empty() && repaired.len() <= preds.len());
    let card = std::fs::read_to_string(d.path().join("run_i3d/best.toml")).unwrap();
    assert!(card.contains("target_multiplier = 10.0") && card.contains("masking = true"));
}

#[test]
fn identical_seeds_give_identical_artifacts() {
    let (a, b) = (tmp(), tmp());
    let fa = full_pipeline(a.path());
    let fb = full_pipeline(b.path());
    assert_eq!(fa.len(), fb.len());
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(x.strip_prefix(a.path()).unwrap(), y.strip_prefix(b.path()).unwrap());
        assert!(std::fs::read(x).unwrap() == std::fs::read(y).unwrap(), "{} differs", x.display());
    }
}
