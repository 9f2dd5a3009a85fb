mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use fusion::cli::run;
use fusion::dataset::DatasetManifest;
use fusion::inspect::WindowReport;
use fusion::report::read_windows;

fn fusion(args: &[&str]) -> i32 {
    let mut argv = vec!["fusion"];
    argv.extend_from_slice(args);
    run(argv)
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

const TINY: [&str; 6] = [
    "model.width_multiplier=0.125",
    "model.map_size=16",
    "model.clip_size=16",
    "train.batch_size=4",
    "train.epochs=2",
    "train.validation_fraction=0.1",
];

fn train_args<'a>(data: &'a str, out: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut a = vec!["train", "--data", data, "--out", out, "--mode", "fusion", "--T", "4", "--seed", "3", "--deterministic"];
    a.extend_from_slice(&TINY);
    a.extend_from_slice(extra);
    a
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(d: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in std::fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(&p, out);
            } else {
                out.insert(p.clone(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut m = BTreeMap::new();
    walk(dir, &mut m);
    m
}

#[test]
fn synth_writes_a_dataset_with_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ds");
    assert_eq!(fusion(&["synth", "--classes", "4", "--per-class", "32", "--seed", "7", "--out", &s(&out)]), 0);
    let m = DatasetManifest::load(&out).unwrap();
    assert_eq!(m.samples.len(), 128);
    assert_eq!(m.synthetic.unwrap().seed, 7);
}

#[test]
fn train_then_eval_writes_metrics_with_accuracy() {
    let d = common::dataset(3, 6, 1);
    let before = tree(d.path());
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    assert_eq!(fusion(&train_args(&s(d.path()), &s(&run_dir), &[])), 0);
    for f in ["metrics.json", "epochs.csv", "confusion.csv", "manifest.json", "config.toml", "model.ckpt", "steps.csv"] {
        assert!(run_dir.join(f).exists(), "{f} missing");
    }
    let eval_dir = dir.path().join("eval");
    assert_eq!(fusion(&["eval", "--checkpoint", &s(&run_dir), "--out", &s(&eval_dir)]), 0);
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(eval_dir.join("metrics.json")).unwrap()).unwrap();
    let acc = m["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    let trained: serde_json::Value = serde_json::from_slice(&std::fs::read(run_dir.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(trained["accuracy"], m["accuracy"]);
    let epochs = std::fs::read_to_string(run_dir.join("epochs.csv")).unwrap();
    assert!(epochs.starts_with("epoch,train_loss,train_acc,val_acc,seconds\n"));
    assert_eq!(epochs.lines().count(), 3);
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(run_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 3);
    assert!(manifest["version"].is_string());
    assert_eq!(tree(d.path()), before, "the dataset must not be modified");
}

#[test]
fn runs_are_reproducible_from_their_stored_config() {
    let d = common::dataset(3, 6, 2);
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    assert_eq!(fusion(&train_args(&s(d.path()), &s(&a), &[])), 0);
    assert_eq!(fusion(&train_args(&s(d.path()), &s(&b), &[])), 0);
    assert_eq!(fusion(&["train", "--config", &s(&a.join("config.toml")), "--out", &s(&c)]), 0);
    for f in ["epochs.csv", "metrics.json", "steps.csv", "confusion.csv"] {
        let x = std::fs::read(a.join(f)).unwrap();
        assert_eq!(x, std::fs::read(b.join(f)).unwrap(), "{f}");
        assert_eq!(x, std::fs::read(c.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn stop_and_resume_matches_an_uninterrupted_run() {
    let d = common::dataset(3, 6, 2);
    let dir = tempfile::tempdir().unwrap();
    let (full, part) = (dir.path().join("full"), dir.path().join("part"));
    assert_eq!(fusion(&train_args(&s(d.path()), &s(&full), &[])), 0);
    assert_eq!(fusion(&train_args(&s(d.path()), &s(&part), &["--stop-after", "3"])), 0);
    assert!(part.join("resume.ckpt").exists() && !part.join("metrics.json").exists());
    assert_eq!(fusion(&["train", "--resume", &s(&part.join("resume.ckpt")), "--out", &s(&part)]), 0);
    for f in ["steps.csv", "epochs.csv", "metrics.json"] {
        assert_eq!(std::fs::read(full.join(f)).unwrap(), std::fs::read(part.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn ablate_emits_one_row_per_mode_and_clip_length() {
    let d = common::dataset(3, 6, 5);
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("abl");
    let mut args = vec!["ablate", "--data", &*s(d.path()).leak(), "--out", &*s(&out).leak(), "--T", "8,12,16,20"];
    args.extend_from_slice(&TINY);
    args.push("train.epochs=1");
    assert_eq!(fusion(&args), 0);
    let csv = std::fs::read_to_string(out.join("ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 4);
    let md = std::fs::read_to_string(out.join("ablation.md")).unwrap();
    let lines: Vec<&str> = md.lines().collect();
    assert_eq!(lines[0], "| Method | Pose features | IR features | Fused | T=8 | T=12 | T=16 | T=20 |");
    assert_eq!(lines.len(), 2 + 3);
    let fusion_row = lines.iter().find(|l| l.starts_with("| Fusion |")).unwrap();
    assert!(fusion_row.starts_with("| Fusion | 64 | 64 | 128 |"), "{fusion_row}");
}

#[test]
fn inspect_writes_map_overlays_and_matching_windows() {
    let d = common::dataset(4, 3, 6);
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    assert_eq!(fusion(&train_args(&s(d.path()), &s(&run_dir), &[])), 0);
    let logged = read_windows(&run_dir.join("windows.csv")).unwrap();
    let entry = &logged[logged.len() / 2];

    let out = dir.path().join("dbg");
    let epoch = entry.epoch.to_string();
    let args = vec!["inspect", "--config", &*s(&run_dir.join("config.toml")).leak(), "--sample", &entry.sample, "--epoch", &epoch, "--out", &*s(&out).leak()];
    assert_eq!(fusion(&args), 0);
    let insp = out.join("inspect");
    let report: WindowReport =
        serde_json::from_slice(&std::fs::read(insp.join(format!("{}_windows.json", entry.sample))).unwrap()).unwrap();
    assert_eq!(report.indices, entry.indices);
    assert_eq!(report.flipped, entry.flipped);
    for (k, &i) in report.indices.iter().enumerate() {
        let (lo, hi) = report.windows[k];
        assert!(lo <= i && (i < hi || lo == hi), "index {i} outside window {k}");
    }

    // Overlays: same red outline on every exported frame.
    let mut outlines = Vec::new();
    for e in std::fs::read_dir(&insp).unwrap() {
        let p = e.unwrap().path();
        if p.file_name().unwrap().to_string_lossy().contains("_crop_") {
            let img = image::open(&p).unwrap().to_rgb8();
            let red: Vec<(u32, u32)> = img.enumerate_pixels().filter(|(_, _, px)| px.0 == [255, 0, 0]).map(|(x, y, _)| (x, y)).collect();
            assert!(!red.is_empty());
            outlines.push(red);
        }
    }
    assert_eq!(outlines.len(), 4);
    assert!(outlines.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn one_subject_map_has_a_black_lower_half() {
    let d = common::dataset(1 + 1, 1, 6);
    let dir = tempfile::tempdir().unwrap();
    let m = DatasetManifest::load(d.path()).unwrap();
    let id = &m.samples[0].id;
    let args = vec!["inspect", "--data", &*s(d.path()).leak(), "--sample", id, "--out", &*s(dir.path()).leak(), "data.split=all"];
    assert_eq!(fusion(&args), 0);
    let img = image::open(dir.path().join("inspect").join(format!("{id}_map.png"))).unwrap().to_rgb8();
    assert_eq!(img.height(), 50);
    let lower_black = img.enumerate_pixels().filter(|(_, y, _)| *y >= 25).all(|(_, _, p)| p.0 == [0, 0, 0]);
    let upper_lit = img.enumerate_pixels().filter(|(_, y, _)| *y < 25).any(|(_, _, p)| p.0 != [0, 0, 0]);
    assert!(lower_black && upper_lit);
}

#[test]
fn exit_codes_follow_the_error_class() {
    let d = common::dataset(2, 3, 6);
    let ds = s(d.path());
    let dir = tempfile::tempdir().unwrap();
    let out = s(dir.path());
    assert_eq!(fusion(&["frobnicate"]), 1);
    assert_eq!(fusion(&["train", "--bogus-flag"]), 1);
    assert_eq!(fusion(&["train", "--data", &ds, "--out", &out, "train.no_such_key=1"]), 1);
    assert_eq!(fusion(&["train", "--data", &ds, "--out", &out, "--mode", "rgb"]), 1);
    assert_eq!(fusion(&["train", "--out", &out]), 1);
    assert_eq!(fusion(&["train", "--data", "/nonexistent/dataset", "--out", &out]), 2);
    assert_eq!(fusion(&["inspect", "--data", &ds, "--sample", "S001C001P001R001A099", "--out", &out]), 2);
    assert_eq!(fusion(&["eval", "--checkpoint", "/nonexistent/model.ckpt", "--out", &out]), 2);
    let mut diverge = vec!["train", "--data", ds.as_str(), "--out", out.as_str(), "--T", "4", "train.learning_rate=1e30", "train.epochs=4"];
    diverge.extend_from_slice(&TINY[..4]);
    assert_eq!(fusion(&diverge), 3);
    assert_eq!(fusion(&["--help"]), 0);
}
