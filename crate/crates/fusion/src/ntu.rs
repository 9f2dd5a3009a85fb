//! NTU RGB+D `.skeleton` text files.
//!
//! Layout: frame count; per frame a body count; per body a 10-field info
//! line (body id first), the joint count, then one line per joint with
//! `x y z depthX depthY colorX colorY qw qx qy qz state`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use fusion_core::skeleton::{SkeletonSequence, SubjectTrack, MAX_SUBJECTS};

use crate::error::{Error, IoContext, Result};

/// One joint record as stored in the file.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct JointRecord {
    pub position: [f64; 3],
    pub depth: [f64; 2],
    pub color: [f64; 2],
    pub orientation: [f64; 4],
    pub tracking_state: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BodyFrame {
    pub body_id: String,
    /// The nine info fields after the id, kept verbatim.
    pub info: Vec<String>,
    pub joints: Vec<JointRecord>,
}

/// Frame-by-frame contents of a skeleton file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SkeletonFile {
    pub frames: Vec<Vec<BodyFrame>>,
}

struct Lines<'a> {
    path: &'a Path,
    iter: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse { path: self.path.to_path_buf(), line: self.line, message: message.into() }
    }

    fn next_fields(&mut self, what: &str) -> Result<Vec<&'a str>> {
        loop {
            match self.iter.next() {
                Some((i, l)) => {
                    self.line = i + 1;
                    let fields: Vec<&str> = l.split_whitespace().collect();
                    if !fields.is_empty() {
                        return Ok(fields);
                    }
                }
                None => {
                    self.line += 1;
                    return Err(self.err(format!("unexpected end of file, expected {what}")));
                }
            }
        }
    }

    fn count(&mut self, what: &str) -> Result<usize> {
        let f = self.next_fields(what)?;
        if f.len() != 1 {
            return Err(self.err(format!("expected a single {what}, found {} fields", f.len())));
        }
        f[0].parse().map_err(|_| self.err(format!("{what} `{}` is not a non-negative integer", f[0])))
    }

    fn float(&self, s: &str) -> Result<f64> {
        let v: f64 = s.parse().map_err(|_| self.err(format!("`{s}` is not a number")))?;
        if !v.is_finite() {
            return Err(self.err(format!("non-finite value `{s}`")));
        }
        Ok(v)
    }
}

/// Parse the text of a skeleton file; `path` is only used in error messages.
pub fn parse_skeleton_text(text: &str, path: &Path) -> Result<SkeletonFile> {
    let mut lines = Lines { path, iter: text.lines().enumerate(), line: 0 };
    let frame_count = lines.count("frame count")?;
    let mut frames = Vec::with_capacity(frame_count);
    for _ in 0..frame_count {
        let body_count = lines.count("body count")?;
        let mut bodies = Vec::with_capacity(body_count);
        for _ in 0..body_count {
            let info = lines.next_fields("body info line")?;
            if info.len() != 10 {
                return Err(lines.err(format!("body info line has {} fields, expected 10", info.len())));
            }
            let joint_count = lines.count("joint count")?;
            let mut joints = Vec::with_capacity(joint_count);
            for _ in 0..joint_count {
                let f = lines.next_fields("joint line")?;
                if f.len() < 11 {
                    return Err(lines.err(format!("joint line has {} fields, expected 12", f.len())));
                }
                let mut v = [0.0; 11];
                for (dst, s) in v.iter_mut().zip(&f) {
                    *dst = lines.float(s)?;
                }
                let tracking_state = match f.get(11) {
                    Some(s) => s.parse().map_err(|_| lines.err(format!("tracking state `{s}` is not an integer")))?,
                    None => 2,
                };
                joints.push(JointRecord {
                    position: [v[0], v[1], v[2]],
                    depth: [v[3], v[4]],
                    color: [v[5], v[6]],
                    orientation: [v[7], v[8], v[9], v[10]],
                    tracking_state,
                });
            }
            bodies.push(BodyFrame {
                body_id: info[0].to_string(),
                info: info[1..].iter().map(|s| s.to_string()).collect(),
                joints,
            });
        }
        frames.push(bodies);
    }
    if let Some((i, l)) = lines.iter.find(|(_, l)| !l.trim().is_empty()) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: format!("trailing content after {frame_count} frames: `{}`", l.trim()),
        });
    }
    Ok(SkeletonFile { frames })
}

pub fn read_skeleton_file(path: &Path) -> Result<SkeletonFile> {
    let text = std::fs::read_to_string(path).at(path)?;
    parse_skeleton_text(&text, path)
}

/// Body id → its per-frame records (`None` where the body is absent).
fn tracks(file: &SkeletonFile) -> Result<(Vec<String>, Vec<Vec<Option<&BodyFrame>>>, usize)> {
    let mut order: Vec<String> = Vec::new();
    let mut index: BTreeMap<&str, usize> = BTreeMap::new();
    let mut joint_count = None;
    for bodies in &file.frames {
        for b in bodies {
            match joint_count {
                None => joint_count = Some(b.joints.len()),
                Some(j) if j != b.joints.len() => {
                    return Err(Error::data(format!("body {} has {} joints, others {j}", b.body_id, b.joints.len())))
                }
                _ => {}
            }
            if !index.contains_key(b.body_id.as_str()) {
                index.insert(&b.body_id, order.len());
                order.push(b.body_id.clone());
            }
        }
    }
    let joints = joint_count.ok_or_else(|| Error::data("skeleton file has no tracked body"))?;
    let mut per_body = vec![vec![None; file.frames.len()]; order.len()];
    for (t, bodies) in file.frames.iter().enumerate() {
        for b in bodies {
            per_body[index[b.body_id.as_str()]][t] = Some(b);
        }
    }
    Ok((order, per_body, joints))
}

/// Sum over frames and joints of the 3D displacement between consecutive
/// frames where the body is present.
fn displacement(track: &[Option<&BodyFrame>]) -> f64 {
    track
        .windows(2)
        .filter_map(|w| match (w[0], w[1]) {
            (Some(a), Some(b)) => Some(
                a.joints
                    .iter()
                    .zip(&b.joints)
                    .map(|(p, q)| {
                        let d: f64 = (0..3).map(|k| (p.position[k] - q.position[k]).powi(2)).sum();
                        d.sqrt()
                    })
                    .sum::<f64>(),
            ),
            _ => None,
        })
        .sum()
}

/// Bodies selected from a file, main subject first.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedSkeleton {
    pub sequence: SkeletonSequence,
    pub body_ids: Vec<String>,
    pub bodies_seen: usize,
}

/// Keep the (at most two) bodies with the largest total joint displacement;
/// the larger one is the main subject. Frames where a kept body is absent
/// hold zeros, the same convention the capture uses for untracked joints.
pub fn to_sequence(file: &SkeletonFile) -> Result<ParsedSkeleton> {
    if file.frames.is_empty() {
        return Err(Error::data("skeleton file has zero frames"));
    }
    let (ids, per_body, joints) = tracks(file)?;
    let mut ranked: Vec<(usize, f64)> = per_body.iter().enumerate().map(|(i, t)| (i, displacement(t))).collect();
    // Stable: ties keep first-appearance order.
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    ranked.truncate(MAX_SUBJECTS);
    let frames = file.frames.len();
    let subjects = ranked
        .iter()
        .map(|&(i, _)| {
            let mut joints3d = Vec::with_capacity(frames * joints);
            let mut joints2d = Vec::with_capacity(frames * joints);
            for slot in &per_body[i] {
                match slot {
                    Some(b) => {
                        joints3d.extend(b.joints.iter().map(|j| j.position));
                        joints2d.extend(b.joints.iter().map(|j| j.depth));
                    }
                    None => {
                        joints3d.extend(std::iter::repeat_n([0.0; 3], joints));
                        joints2d.extend(std::iter::repeat_n([f64::NAN; 2], joints));
                    }
                }
            }
            SubjectTrack { joints3d, joints2d: Some(joints2d) }
        })
        .collect();
    let sequence = SkeletonSequence::new(frames, joints, subjects)?;
    Ok(ParsedSkeleton { sequence, body_ids: ranked.iter().map(|&(i, _)| ids[i].clone()).collect(), bodies_seen: ids.len() })
}

pub fn load_skeleton(path: &Path) -> Result<ParsedSkeleton> {
    to_sequence(&read_skeleton_file(path)?)
}

/// Serialize in the NTU layout. Floats carry 7 decimals.
pub fn format_skeleton(file: &SkeletonFile) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{}", file.frames.len());
    for bodies in &file.frames {
        let _ = writeln!(out, "{}", bodies.len());
        for b in bodies {
            let _ = writeln!(out, "{} {}", b.body_id, b.info.join(" "));
            let _ = writeln!(out, "{}", b.joints.len());
            for j in &b.joints {
                let p = j.position;
                let o = j.orientation;
                let _ = writeln!(
                    out,
                    "{:.7} {:.7} {:.7} {:.7} {:.7} {:.7} {:.7} {:.7} {:.7} {:.7} {:.7} {}",
                    p[0], p[1], p[2], j.depth[0], j.depth[1], j.color[0], j.color[1], o[0], o[1], o[2], o[3], j.tracking_state
                );
            }
        }
    }
    out
}

pub fn write_skeleton_file(path: &Path, file: &SkeletonFile) -> Result<()> {
    std::fs::write(path, format_skeleton(file)).at(path)
}

/// Build file records from a sequence whose subjects all carry 2D
/// projections. Body ids are synthetic; every subject appears in every frame.
pub fn from_sequence(seq: &SkeletonSequence, color_scale: f64) -> SkeletonFile {
    let j = seq.joint_count;
    let frames = (0..seq.frames)
        .map(|t| {
            seq.subjects
                .iter()
                .enumerate()
                .map(|(s, subject)| BodyFrame {
                    body_id: format!("7205759403792{:02}", 10 + s),
                    info: ["0", "1", "0", "1", "0", "0", "0", "0", "2"].iter().map(|s| s.to_string()).collect(),
                    joints: (0..j)
                        .map(|k| {
                            let d = subject.joints2d.as_ref().map(|p| p[t * j + k]).unwrap_or([0.0; 2]);
                            JointRecord {
                                position: subject.joints3d[t * j + k],
                                depth: d,
                                color: [d[0] * color_scale, d[1] * color_scale],
                                orientation: [1.0, 0.0, 0.0, 0.0],
                                tracking_state: 2,
                            }
                        })
                        .collect(),
                })
                .collect()
        })
        .collect();
    SkeletonFile { frames }
}
