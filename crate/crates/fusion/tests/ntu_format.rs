use std::path::Path;

use fusion::ntu::{format_skeleton, from_sequence, parse_skeleton_text, to_sequence};
use fusion::Error;
use fusion_core::skeleton::{SkeletonSequence, SubjectTrack};

fn joint_line(x: f64, y: f64, z: f64) -> String {
    format!("{x} {y} {z} 250.5 200.25 960 540 1 0 0 0 2")
}

fn body(id: &str, offset: f64, moving: f64) -> String {
    let mut s = format!("{id} 0 1 1 1 1 0 0.1 -0.2 2\n25\n");
    for j in 0..25 {
        s += &joint_line(offset + j as f64 * 0.01 + moving, 0.5 - j as f64 * 0.02, 3.0);
        s.push('\n');
    }
    s
}

fn file(frames: &[Vec<(&str, f64, f64)>]) -> String {
    let mut s = format!("{}\n", frames.len());
    for bodies in frames {
        s += &format!("{}\n", bodies.len());
        for (id, off, mv) in bodies {
            s += &body(id, *off, *mv);
        }
    }
    s
}

#[test]
fn minimal_file_gives_one_frame_of_25_joints() {
    let text = file(&[vec![("72057594037931101", 0.0, 0.0)]]);
    let parsed = to_sequence(&parse_skeleton_text(&text, Path::new("a.skeleton")).unwrap()).unwrap();
    let seq = &parsed.sequence;
    assert_eq!((seq.frames, seq.joint_count, seq.subject_count()), (1, 25, 1));
    assert_eq!(seq.joint(0, 0, 3), [0.03, 0.44, 3.0]);
    assert_eq!(seq.subjects[0].joints2d.as_ref().unwrap()[0], [250.5, 200.25]);
}

#[test]
fn two_bodies_become_two_subjects_with_the_more_active_one_first() {
    // Body B moves 0.1 per frame, body A stays put.
    let frames: Vec<Vec<(&str, f64, f64)>> =
        (0..3).map(|t| vec![("A", 0.0, 0.0), ("B", 1.0, 0.1 * t as f64)]).collect();
    let parsed = to_sequence(&parse_skeleton_text(&file(&frames), Path::new("b")).unwrap()).unwrap();
    assert_eq!(parsed.sequence.subject_count(), 2);
    assert_eq!(parsed.body_ids, vec!["B", "A"]);
}

#[test]
fn more_than_two_bodies_keep_the_two_most_active() {
    let frames: Vec<Vec<(&str, f64, f64)>> = (0..4)
        .map(|t| vec![("still", 0.0, 0.0), ("slow", 1.0, 0.01 * t as f64), ("fast", 2.0, 0.2 * t as f64)])
        .collect();
    let parsed = to_sequence(&parse_skeleton_text(&file(&frames), Path::new("c")).unwrap()).unwrap();
    assert_eq!(parsed.bodies_seen, 3);
    assert_eq!(parsed.body_ids, vec!["fast", "slow"]);
}

#[test]
fn absent_frames_are_zero_filled() {
    let frames = vec![vec![("A", 0.0, 0.0), ("B", 1.0, 0.0)], vec![("A", 0.0, 0.5)]];
    let parsed = to_sequence(&parse_skeleton_text(&file(&frames), Path::new("d")).unwrap()).unwrap();
    let b = parsed.body_ids.iter().position(|id| id == "B").unwrap();
    assert_eq!(parsed.sequence.joint(b, 1, 0), [0.0; 3]);
    assert!(parsed.sequence.subjects[b].joints2d.as_ref().unwrap()[25][0].is_nan());
}

#[test]
fn writer_then_parser_round_trips_within_1e_5() {
    let mut rng = 12345u64;
    let mut next = || {
        rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (rng >> 11) as f64 / (1u64 << 53) as f64 * 4.0 - 2.0
    };
    let tracks: Vec<SubjectTrack> = (0..2)
        .map(|_| SubjectTrack {
            joints3d: (0..7 * 25).map(|_| [next(), next(), next() + 3.0]).collect(),
            joints2d: Some((0..7 * 25).map(|_| [next() * 100.0 + 256.0, next() * 100.0 + 212.0]).collect()),
        })
        .collect();
    let seq = SkeletonSequence::new(7, 25, tracks).unwrap();
    let text = format_skeleton(&from_sequence(&seq, 3.75));
    let back = to_sequence(&parse_skeleton_text(&text, Path::new("rt")).unwrap()).unwrap().sequence;
    assert_eq!(back.frames, 7);
    // Subject order may swap (ranked by displacement); match by first joint.
    for s in &seq.subjects {
        let other = back
            .subjects
            .iter()
            .find(|b| (b.joints3d[0][0] - s.joints3d[0][0]).abs() < 1e-5)
            .expect("subject recovered");
        for (a, b) in s.joints3d.iter().zip(&other.joints3d) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() <= 1e-5, "{a:?} vs {b:?}");
            }
        }
        for (a, b) in s.joints2d.as_ref().unwrap().iter().zip(other.joints2d.as_ref().unwrap()) {
            assert!((a[0] - b[0]).abs() <= 1e-5 && (a[1] - b[1]).abs() <= 1e-5);
        }
    }
}

fn parse_error_line(text: &str) -> (usize, String) {
    match parse_skeleton_text(text, Path::new("bad.skeleton")) {
        Err(Error::Parse { line, message, .. }) => (line, message),
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn malformed_files_report_the_offending_line() {
    let good = file(&[vec![("A", 0.0, 0.0)]]);

    let wrong_joint_count = good.replacen("\n25\n", "\n24\n", 1);
    // 24 joints are consumed, so the 25th joint line is left over.
    let (line, message) = parse_error_line(&wrong_joint_count);
    assert_eq!(line, 29);
    assert!(message.contains("trailing"), "{message}");

    let mut lines: Vec<&str> = good.lines().collect();
    lines[6] = "0.1 0.2 oops 1 2 3 4 1 0 0 0 2";
    assert_eq!(parse_error_line(&lines.join("\n")).0, 7);

    let truncated: String = good.lines().take(10).collect::<Vec<_>>().join("\n");
    assert!(matches!(parse_skeleton_text(&truncated, Path::new("t")), Err(Error::Parse { .. })));

    let nan = good.replacen("3 250.5", "NaN 250.5", 1);
    assert!(parse_error_line(&nan).1.to_lowercase().contains("finite"));

    let bad_count = "x\n";
    assert_eq!(parse_error_line(bad_count).0, 1);
}
