//! Per-frame pose data and the JSON-Lines pose file format.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DataError;
use crate::Real;

/// Joint layout: one entry per side, left block first.
pub const JOINT_NAMES: [&str; 12] = [
    "wrist_l", "elbow_l", "shoulder_l", "hip_l", "knee_l", "ankle_l",
    "wrist_r", "elbow_r", "shoulder_r", "hip_r", "knee_r", "ankle_r",
];

pub const DEFAULT_JOINT_COUNT: usize = 12;
pub const DEFAULT_ANGLE_COUNT: usize = 4;

/// Bending-angle definitions as (a, b, c) joint triples, interior angle
/// at `b`: hips then knees, left then right.
pub const ANGLE_TRIPLES: [(usize, usize, usize); 4] = [
    (2, 3, 4),   // shoulder_l, hip_l, knee_l
    (8, 9, 10),  // shoulder_r, hip_r, knee_r
    (3, 4, 5),   // hip_l, knee_l, ankle_l
    (9, 10, 11), // hip_r, knee_r, ankle_r
];

/// Region-of-interest joints for action-unit images: shoulders, hips,
/// knees, ankles.
pub const DEFAULT_ROI_JOINTS: [usize; 8] = [2, 8, 3, 9, 4, 10, 5, 11];

/// Normalized bounding box, `w > 0`, `h > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: Real,
    pub y: Real,
    pub w: Real,
    pub h: Real,
}

impl BBox {
    pub fn aspect_ratio(&self) -> Real {
        self.h / self.w
    }

    pub fn diagonal(&self) -> Real {
        (self.w * self.w + self.h * self.h).sqrt()
    }
}

/// One frame of pose data: joint coordinates in [0,1], bending angles in
/// [0, pi], bounding box, and its aspect ratio (h/w).
#[derive(Debug, Clone, PartialEq)]
pub struct PoseFrame {
    pub joints: Vec<(Real, Real)>,
    pub angles: Vec<Real>,
    pub bbox: BBox,
    pub aspect_ratio: Real,
}

impl PoseFrame {
    pub fn new(joints: Vec<(Real, Real)>, angles: Vec<Real>, bbox: BBox) -> Result<Self, DataError> {
        let inv = |field: &str, msg: String| {
            Err(DataError::Invariant {
                field: field.to_string(),
                msg,
            })
        };
        if joints.is_empty() {
            return inv("joints", "no joints".into());
        }
        if let Some((x, y)) = joints
            .iter()
            .find(|(x, y)| !(0.0..=1.0).contains(x) || !(0.0..=1.0).contains(y) )
        {
            return inv("joints", format!("coordinate ({x}, {y}) outside [0,1]"));
        }
        if let Some(a) = angles
            .iter()
            .find(|a| !a.is_finite() || **a < 0.0 || **a > std::f64::consts::PI)
        {
            return inv("angles", format!("angle {a} outside [0, pi]"));
        }
        if !(bbox.w > 0.0 && bbox.h > 0.0) {
            return inv("bbox", format!("non-positive extent w={} h={}", bbox.w, bbox.h));
        }
        let aspect_ratio = bbox.aspect_ratio();
        Ok(PoseFrame {
            joints,
            angles,
            bbox,
            aspect_ratio,
        })
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn angle_count(&self) -> usize {
        self.angles.len()
    }
}

/// Ordered pose frames, length at least 4, uniform joint/angle counts.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSequence {
    frames: Vec<PoseFrame>,
}

impl PoseSequence {
    pub fn new(frames: Vec<PoseFrame>) -> Result<Self, DataError> {
        if frames.len() < 4 {
            return Err(DataError::Invariant {
                field: "frames".into(),
                msg: format!("sequence length {} < 4", frames.len()),
            });
        }
        let j = frames[0].joint_count();
        let u = frames[0].angle_count();
        for (i, f) in frames.iter().enumerate() {
            if f.joint_count() != j || f.angle_count() != u {
                return Err(DataError::Invariant {
                    field: "frames".into(),
                    msg: format!(
                        "frame {i} has {}/{} joints/angles, expected {j}/{u}",
                        f.joint_count(),
                        f.angle_count()
                    ),
                });
            }
        }
        Ok(PoseSequence { frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[PoseFrame] {
        &self.frames
    }

    pub fn joint_count(&self) -> usize {
        self.frames[0].joint_count()
    }

    pub fn angle_count(&self) -> usize {
        self.frames[0].angle_count()
    }
}

/// Interior angle at `b` between segments `b->a` and `b->c`, in [0, pi].
pub fn joint_angle(a: (Real, Real), b: (Real, Real), c: (Real, Real)) -> Result<Real, DataError> {
    let u = (a.0 - b.0, a.1 - b.1);
    let v = (c.0 - b.0, c.1 - b.1);
    let nu = (u.0 * u.0 + u.1 * u.1).sqrt();
    let nv = (v.0 * v.0 + v.1 * v.1).sqrt();
    if nu < 1e-12 || nv < 1e-12 {
        return Err(DataError::DegenerateAngle(format!(
            "zero-length segment at joint ({}, {})",
            b.0, b.1
        )));
    }
    let cos = ((u.0 * v.0 + u.1 * v.1) / (nu * nv)).clamp(-1.0, 1.0);
    Ok(cos.acos())
}

/// Flat per-frame vector: joint coords, angles, aspect ratio
/// (length `2J + U + 1`).
pub fn pose_vector(frame: &PoseFrame) -> Vec<Real> {
    let mut v = Vec::with_capacity(2 * frame.joint_count() + frame.angle_count() + 1);
    for &(x, y) in &frame.joints {
        v.push(x);
        v.push(y);
    }
    v.extend_from_slice(&frame.angles);
    v.push(frame.aspect_ratio);
    v
}

#[derive(Serialize, Deserialize)]
struct PoseRecord {
    joints: Vec<[Real; 2]>,
    angles: Vec<Real>,
    bbox: [Real; 4],
}

/// A stored angle disagreeing with the joint-derived one by more than
/// 0.05 rad.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleWarning {
    pub frame: usize,
    pub angle_index: usize,
    pub stored: Real,
    pub recomputed: Real,
}

#[derive(Debug)]
pub struct PoseLoad {
    pub sequence: PoseSequence,
    pub warnings: Vec<AngleWarning>,
}

const ANGLE_CHECK_TOLERANCE: Real = 0.05;

/// Loads the JSON-Lines pose format: one object per frame with `joints`
/// (J pairs), `angles` (U values), `bbox` ([x, y, w, h]).
///
/// When the sequence uses the default 12/4 layout, angles are recomputed
/// from the joints and mismatches beyond 0.05 rad are reported as
/// warnings.
pub fn load_pose_sequence(
    path: &Path,
    expected_joints: usize,
    expected_angles: usize,
) -> Result<PoseLoad, DataError> {
    let file = File::open(path).map_err(|e| DataError::io(path, e))?;
    let reader = BufReader::new(file);
    let mut frames = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| DataError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PoseRecord =
            serde_json::from_str(&line).map_err(|e| DataError::MalformedLine {
                path: path.display().to_string(),
                line: idx + 1,
                msg: e.to_string(),
            })?;
        if rec.joints.len() != expected_joints {
            return Err(DataError::Invariant {
                field: "joints".into(),
                msg: format!(
                    "{}:{}: frame has {} joints, expected {expected_joints}",
                    path.display(),
                    idx + 1,
                    rec.joints.len()
                ),
            });
        }
        if rec.angles.len() != expected_angles {
            return Err(DataError::Invariant {
                field: "angles".into(),
                msg: format!(
                    "{}:{}: frame has {} angles, expected {expected_angles}",
                    path.display(),
                    idx + 1,
                    rec.angles.len()
                ),
            });
        }
        let joints = rec.joints.iter().map(|j| (j[0], j[1])).collect();
        let bbox = BBox {
            x: rec.bbox[0],
            y: rec.bbox[1],
            w: rec.bbox[2],
            h: rec.bbox[3],
        };
        frames.push(PoseFrame::new(joints, rec.angles, bbox)?);
    }
    let sequence = PoseSequence::new(frames)?;

    let mut warnings = Vec::new();
    if expected_joints == DEFAULT_JOINT_COUNT && expected_angles == DEFAULT_ANGLE_COUNT {
        for (fi, frame) in sequence.frames().iter().enumerate() {
            for (ai, &(a, b, c)) in ANGLE_TRIPLES.iter().enumerate() {
                let recomputed =
                    joint_angle(frame.joints[a], frame.joints[b], frame.joints[c])?;
                let stored = frame.angles[ai];
                if (recomputed - stored).abs() > ANGLE_CHECK_TOLERANCE {
                    log::warn!(
                        "{}: frame {fi} angle {ai}: stored {stored:.4} vs joint-derived {recomputed:.4}",
                        path.display()
                    );
                    warnings.push(AngleWarning {
                        frame: fi,
                        angle_index: ai,
                        stored,
                        recomputed,
                    });
                }
            }
        }
    }
    Ok(PoseLoad { sequence, warnings })
}

pub fn write_pose_jsonl(seq: &PoseSequence, path: &Path) -> Result<(), DataError> {
    let file = File::create(path).map_err(|e| DataError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for frame in seq.frames() {
        let rec = PoseRecord {
            joints: frame.joints.iter().map(|&(x, y)| [x, y]).collect(),
            angles: frame.angles.clone(),
            bbox: [frame.bbox.x, frame.bbox.y, frame.bbox.w, frame.bbox.h],
        };
        let line = serde_json::to_string(&rec).expect("pose record serializes");
        writeln!(w, "{line}").map_err(|e| DataError::io(path, e))?;
    }
    w.flush().map_err(|e| DataError::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn right_angle() {
        let a = joint_angle((0.0, 1.0), (0.0, 0.0), (1.0, 0.0)).unwrap();
        assert!((a - PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn collinear_is_pi() {
        let a = joint_angle((0.0, 0.0), (1.0, 0.0), (2.0, 0.0)).unwrap();
        assert!((a - PI).abs() < 1e-12);
    }

    #[test]
    fn analytic_construction() {
        // c at angle theta from the b->a back-direction gives pi - theta
        let theta: f64 = 0.7;
        let a = joint_angle(
            (0.0, 0.0),
            (1.0, 0.0),
            (1.0 + theta.cos(), theta.sin()),
        )
        .unwrap();
        assert!((a - (PI - 0.7)).abs() < 1e-9);
    }

    #[test]
    fn degenerate_rejected() {
        assert!(joint_angle((0.5, 0.5), (0.5, 0.5), (1.0, 0.0)).is_err());
    }

    #[test]
    fn angle_invariant_under_similarity() {
        // rotation + translation + uniform scale preserve the angle
        let pts = [(0.1, 0.2), (0.4, 0.3), (0.2, 0.7)];
        let base = joint_angle(pts[0], pts[1], pts[2]).unwrap();
        let (s, rot, tx, ty) = (2.7, 0.9_f64, 0.31, -0.12);
        let xf = |(x, y): (f64, f64)| {
            (
                s * (x * rot.cos() - y * rot.sin()) + tx,
                s * (x * rot.sin() + y * rot.cos()) + ty,
            )
        };
        let moved = joint_angle(xf(pts[0]), xf(pts[1]), xf(pts[2])).unwrap();
        assert!((base - moved).abs() < 1e-9);
    }

    fn simple_frame(j: usize, u: usize) -> PoseFrame {
        PoseFrame::new(
            (0..j).map(|i| (0.1 + 0.01 * i as f64, 0.5)).collect(),
            vec![1.0; u],
            BBox {
                x: 0.1,
                y: 0.4,
                w: 0.3,
                h: 0.2,
            },
        )
        .unwrap()
    }

    #[test]
    fn aspect_ratio_is_h_over_w() {
        let f = simple_frame(12, 4);
        assert!((f.aspect_ratio - 2.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn jsonl_roundtrip_and_joint_count_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pose.jsonl");
        let seq = PoseSequence::new((0..5).map(|_| simple_frame(12, 4)).collect()).unwrap();
        write_pose_jsonl(&seq, &path).unwrap();
        let loaded = load_pose_sequence(&path, 12, 4).unwrap();
        assert_eq!(loaded.sequence, seq);
        // wrong expected joint count is rejected
        assert!(load_pose_sequence(&path, 11, 4).is_err());
    }

    #[test]
    fn malformed_line_reports_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pose.jsonl");
        let seq = PoseSequence::new((0..4).map(|_| simple_frame(12, 4)).collect()).unwrap();
        write_pose_jsonl(&seq, &path).unwrap();
        let mut contents = std::fs::read_to_string(&path).unwrap();
        contents.push_str("{ not json\n");
        std::fs::write(&path, contents).unwrap();
        match load_pose_sequence(&path, 12, 4) {
            Err(DataError::MalformedLine { line, .. }) => assert_eq!(line, 5),
            other => panic!("expected malformed-line error, got {other:?}"),
        }
    }

    #[test]
    fn angle_mismatch_warns_with_frame_index() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pose.jsonl");
        // joints on a straight vertical line: all interior angles are pi
        let joints: Vec<(f64, f64)> = (0..12).map(|i| (0.5, 0.05 + 0.05 * i as f64)).collect();
        let good = PoseFrame::new(
            joints.clone(),
            vec![PI; 4],
            BBox { x: 0.4, y: 0.0, w: 0.2, h: 0.7 },
        )
        .unwrap();
        let mut bad_angles = vec![PI; 4];
        bad_angles[2] = PI - 0.2;
        let bad = PoseFrame::new(
            joints,
            bad_angles,
            BBox { x: 0.4, y: 0.0, w: 0.2, h: 0.7 },
        )
        .unwrap();
        let seq =
            PoseSequence::new(vec![good.clone(), good.clone(), bad, good]).unwrap();
        write_pose_jsonl(&seq, &path).unwrap();
        let loaded = load_pose_sequence(&path, 12, 4).unwrap();
        assert_eq!(loaded.warnings.len(), 1);
        assert_eq!(loaded.warnings[0].frame, 2);
        assert_eq!(loaded.warnings[0].angle_index, 2);
    }
}
