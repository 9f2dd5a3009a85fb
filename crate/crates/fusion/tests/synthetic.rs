mod common;

use std::collections::BTreeMap;
use std::path::Path;

use fusion::dataset::{load_raw_sample, DatasetManifest};
use fusion::ntu::load_skeleton;
use fusion::synth::{generate_dataset, SynthConfig, MOTIONS};
use fusion_core::infrared::{compute_crop_box, CROP_OFFSET_PX};

fn tree_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for sub in ["skeletons", "ir"] {
        for e in std::fs::read_dir(dir.join(sub)).unwrap() {
            let p = e.unwrap().path();
            out.insert(format!("{sub}/{}", p.file_name().unwrap().to_string_lossy()), std::fs::read(&p).unwrap());
        }
    }
    out.insert("manifest.json".into(), std::fs::read(dir.join("manifest.json")).unwrap());
    out
}

#[test]
fn fixed_seed_regenerates_byte_identical_files() {
    let a = common::dataset(4, 3, 21);
    let b = common::dataset(4, 3, 21);
    assert_eq!(tree_bytes(a.path()), tree_bytes(b.path()));
    let c = common::dataset(4, 3, 22);
    assert_ne!(tree_bytes(a.path())["ir/S001C001P001R001A001.ir"], tree_bytes(c.path())["ir/S001C001P001R001A001.ir"]);
}

#[test]
fn manifest_records_camera_model_and_names() {
    let d = common::dataset(4, 6, 1);
    let m = DatasetManifest::load(d.path()).unwrap();
    assert_eq!(m.samples.len(), 24);
    assert_eq!(m.class_names[..4], MOTIONS[..4].iter().map(|s| s.to_string()).collect::<Vec<_>>()[..]);
    let info = m.synthetic.unwrap();
    assert_eq!(info.seed, 1);
    assert_eq!(info.camera_yaw_deg.len(), 3);
    assert!(info.intrinsics.fx > 0.0);
    let cams: Vec<u32> = m.samples.iter().map(|s| s.meta.camera_id).collect();
    assert!(cams.contains(&1) && cams.contains(&2) && cams.contains(&3));
}

#[test]
fn two_subject_class_writes_two_bodies() {
    let d = common::dataset(4, 2, 3);
    let m = DatasetManifest::load(d.path()).unwrap();
    for s in &m.samples {
        let parsed = load_skeleton(&d.path().join(&s.skeleton)).unwrap();
        let expected = if MOTIONS[s.meta.label()] == "approach" { 2 } else { 1 };
        assert_eq!(parsed.bodies_seen, expected, "{}", s.id);
        assert_eq!(parsed.sequence.subject_count(), expected);
    }
}

#[test]
fn every_projected_joint_lies_in_its_crop_box() {
    let d = common::dataset(4, 6, 5);
    let m = DatasetManifest::load(d.path()).unwrap();
    let mut checked = 0;
    for i in 0..m.samples.len() {
        let raw = load_raw_sample(d.path(), &m, i).unwrap();
        let parsed = load_skeleton(&d.path().join(&m.samples[i].skeleton)).unwrap();
        let b = compute_crop_box(parsed.sequence.projections(), CROP_OFFSET_PX).unwrap();
        assert_eq!(b, raw.crop);
        for p in parsed.sequence.projections() {
            assert!(b.contains(p), "{}: {p:?} outside {b:?}", m.samples[i].id);
            checked += 1;
        }
    }
    assert!(checked > 24 * 24 * 25);
}

#[test]
fn rendered_figure_is_brighter_inside_the_box() {
    let d = common::dataset(2, 2, 8);
    let m = DatasetManifest::load(d.path()).unwrap();
    let raw = load_raw_sample(d.path(), &m, 0).unwrap();
    let (mut inside, mut n_in, mut outside, mut n_out) = (0.0, 0, 0.0, 0);
    for t in 0..raw.ir.frames {
        for y in 0..raw.ir.height {
            for x in 0..raw.ir.width {
                let v = raw.ir.pixel(t, y, x) as f64;
                if raw.crop.contains([x as f64, y as f64]) {
                    inside += v;
                    n_in += 1;
                } else {
                    outside += v;
                    n_out += 1;
                }
            }
        }
    }
    assert!(inside / n_in as f64 > outside / n_out as f64 + 0.05);
}

/// Per-joint mean and standard deviation of the normalized 3D coordinates.
fn joint_statistics(seq: &fusion_core::skeleton::SkeletonSequence) -> Vec<f64> {
    let mut f = Vec::new();
    for j in 0..seq.joint_count {
        for k in 0..3 {
            let vals: Vec<f64> = (0..seq.frames).map(|t| seq.joint(0, t, j)[k]).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            f.push(mean);
            f.push(var.sqrt());
        }
    }
    f
}

#[test]
fn nearest_centroid_on_joint_statistics_beats_chance() {
    let classes = 4;
    let d = common::dataset(classes, 16, 13);
    let m = DatasetManifest::load(d.path()).unwrap();
    let feats: Vec<(usize, Vec<f64>, bool)> = (0..m.samples.len())
        .map(|i| {
            let s = load_raw_sample(d.path(), &m, i).unwrap();
            (s.label, joint_statistics(&s.sequence), i % 2 == 0)
        })
        .collect();
    let dim = feats[0].1.len();
    let mut centroids = vec![vec![0.0; dim]; classes];
    let mut counts = vec![0.0; classes];
    for (c, f, train) in &feats {
        if *train {
            counts[*c] += 1.0;
            for (a, b) in centroids[*c].iter_mut().zip(f) {
                *a += b;
            }
        }
    }
    for (c, n) in centroids.iter_mut().zip(&counts) {
        c.iter_mut().for_each(|v| *v /= n);
    }
    let test: Vec<_> = feats.iter().filter(|f| !f.2).collect();
    let correct = test
        .iter()
        .filter(|(c, f, _)| {
            let d2 = |k: usize| centroids[k].iter().zip(f).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            (0..classes).min_by(|&a, &b| d2(a).total_cmp(&d2(b))).unwrap() == *c
        })
        .count();
    let acc = correct as f64 / test.len() as f64;
    assert!(acc > 0.5, "nearest-centroid accuracy {acc} (chance 0.25)");
}

#[test]
fn invalid_generator_settings_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig { classes: 1, ..SynthConfig::default() };
    assert!(generate_dataset(&cfg, 0, dir.path()).is_err());
}
