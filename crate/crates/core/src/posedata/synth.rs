//! Synthetic dive generator: an articulated stick figure executing
//! take-off, turning, entry, then splash frames, with a closed-form
//! execution score so end-to-end learnability is verifiable.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

use super::action_unit::GrayImage;
use super::pose::{BBox, PoseFrame, PoseSequence};
use super::DataError;
use crate::Real;

/// Score ceiling of the synthetic corpus.
pub const DEFAULT_SCORE_MAX: Real = 100.0;
/// Points lost per radian of mean limb-angle deviation.
pub const DEFAULT_ANGLE_PENALTY: Real = 25.0;
/// Points lost per unit of splash intensity.
pub const DEFAULT_SPLASH_PENALTY: Real = 8.0;

const IMG_SIZE: usize = 64;
const WATER_Y: Real = 0.78;

#[derive(Debug, Clone, PartialEq)]
pub struct DiveParams {
    /// Phase durations in frames, each at least 4.
    pub takeoff_frames: usize,
    pub turning_frames: usize,
    pub entry_frames: usize,
    pub splash_frames: usize,
    /// Somersault turns during the turning phase; half-integers end
    /// head-down.
    pub somersaults: Real,
    /// Limb-angle deviation magnitudes (radians): a slow posture offset
    /// and a faster wobble.
    pub dev_offset: Real,
    pub dev_wobble: Real,
    /// Splash size scalar, >= 0.
    pub splash_intensity: Real,
    pub seed: u64,
}

impl DiveParams {
    pub fn validate(&self) -> Result<(), DataError> {
        for (name, v) in [
            ("takeoff_frames", self.takeoff_frames),
            ("turning_frames", self.turning_frames),
            ("entry_frames", self.entry_frames),
            ("splash_frames", self.splash_frames),
        ] {
            if v < 4 {
                return Err(DataError::BadParams(format!("{name} = {v}, minimum is 4")));
            }
        }
        if !(self.splash_intensity >= 0.0) {
            return Err(DataError::BadParams(format!(
                "splash_intensity = {}",
                self.splash_intensity
            )));
        }
        if !(self.dev_offset >= 0.0 && self.dev_wobble >= 0.0) {
            return Err(DataError::BadParams("deviation magnitudes must be >= 0".into()));
        }
        if self.somersaults <= 0.0 {
            return Err(DataError::BadParams(format!(
                "somersaults = {}",
                self.somersaults
            )));
        }
        Ok(())
    }

    pub fn total_frames(&self) -> usize {
        self.takeoff_frames + self.turning_frames + self.entry_frames + self.splash_frames
    }
}

#[derive(Debug, Clone)]
pub struct SynthDive {
    pub frames: Vec<GrayImage>,
    pub pose: PoseSequence,
    /// Phase-change frame indices: take-off->turning, turning->entry,
    /// entry->splash.
    pub gt_keyframes: Vec<usize>,
    pub score: Real,
    /// Mean absolute limb-angle deviation over motion frames, the first
    /// term of the score.
    pub mean_deviation: Real,
}

#[derive(Debug, Clone, Copy)]
struct PhasePose {
    hip: Real,
    knee: Real,
    /// Arm direction offset from the body axis.
    arm_abduction: Real,
    elbow: Real,
}

fn phase_pose(phase: usize) -> PhasePose {
    match phase {
        0 => PhasePose {
            hip: PI - 0.18,
            knee: PI - 0.12,
            arm_abduction: 0.25,
            elbow: PI - 0.10,
        },
        1 => PhasePose {
            hip: 1.05,
            knee: 1.25,
            arm_abduction: 1.30,
            elbow: 1.10,
        },
        _ => PhasePose {
            hip: PI - 0.10,
            knee: PI - 0.06,
            arm_abduction: 0.15,
            elbow: PI - 0.05,
        },
    }
}

fn rotate(v: (Real, Real), angle: Real) -> (Real, Real) {
    let (s, c) = angle.sin_cos();
    (v.0 * c - v.1 * s, v.0 * s + v.1 * c)
}

fn norm(v: (Real, Real)) -> (Real, Real) {
    let n = (v.0 * v.0 + v.1 * v.1).sqrt();
    (v.0 / n, v.1 / n)
}

struct Skeleton {
    joints: [(Real, Real); 12],
    /// Realized bending angles (hip_l, hip_r, knee_l, knee_r).
    angles: [Real; 4],
}

/// Builds the 12-joint figure from the body center, axis angle theta
/// (0 = upright, pi = head-down), and the target limb angles. The target
/// interior angles are realized exactly by construction.
fn build_skeleton(
    center: (Real, Real),
    theta: Real,
    hip: [Real; 2],
    knee: [Real; 2],
    arm_abduction: [Real; 2],
    elbow: [Real; 2],
) -> Skeleton {
    // body axis "up" and lateral direction
    let up = (theta.sin(), -theta.cos());
    let lat = (theta.cos(), theta.sin());
    let mid_shoulder = (center.0 + 0.10 * up.0, center.1 + 0.10 * up.1);
    let mid_hip = (center.0 - 0.06 * up.0, center.1 - 0.06 * up.1);

    let mut joints = [(0.0, 0.0); 12];
    let mut angles = [0.0; 4];
    for side in 0..2 {
        let off = if side == 0 { -0.012 } else { 0.012 };
        let base = side * 6;
        let shoulder = (mid_shoulder.0 + off * lat.0, mid_shoulder.1 + off * lat.1);
        let hip_j = (mid_hip.0 + off * lat.0, mid_hip.1 + off * lat.1);

        // legs: thigh at the hip interior angle off the torso line, shank
        // folds back at the knee
        let torso_dir = norm((shoulder.0 - hip_j.0, shoulder.1 - hip_j.1));
        let thigh_dir = rotate(torso_dir, hip[side]);
        let knee_j = (hip_j.0 + 0.095 * thigh_dir.0, hip_j.1 + 0.095 * thigh_dir.1);
        let shank_base = norm((knee_j.0 - hip_j.0, knee_j.1 - hip_j.1));
        let shank_dir = rotate(shank_base, -(PI - knee[side]));
        let ankle_j = (knee_j.0 + 0.10 * shank_dir.0, knee_j.1 + 0.10 * shank_dir.1);

        // arms: off the body axis by the abduction angle
        let arm_dir = rotate(up, arm_abduction[side] * if side == 0 { 1.0 } else { -1.0 });
        let elbow_j = (shoulder.0 + 0.085 * arm_dir.0, shoulder.1 + 0.085 * arm_dir.1);
        let fore_base = norm((elbow_j.0 - shoulder.0, elbow_j.1 - shoulder.1));
        let fore_dir = rotate(fore_base, PI - elbow[side]);
        let wrist_j = (elbow_j.0 + 0.080 * fore_dir.0, elbow_j.1 + 0.080 * fore_dir.1);

        joints[base] = wrist_j;
        joints[base + 1] = elbow_j;
        joints[base + 2] = shoulder;
        joints[base + 3] = hip_j;
        joints[base + 4] = knee_j;
        joints[base + 5] = ankle_j;
        angles[side] = hip[side];
        angles[2 + side] = knee[side];
    }
    Skeleton { joints, angles }
}

const BONES: [(usize, usize); 12] = [
    (2, 8),  // shoulders
    (3, 9),  // hips
    (2, 3),  // left torso side
    (8, 9),  // right torso side
    (2, 1),
    (1, 0), // left arm
    (8, 7),
    (7, 6), // right arm
    (3, 4),
    (4, 5), // left leg
    (9, 10),
    (10, 11), // right leg
];

fn dist_to_segment(p: (Real, Real), a: (Real, Real), b: (Real, Real)) -> Real {
    let ab = (b.0 - a.0, b.1 - a.1);
    let ap = (p.0 - a.0, p.1 - a.1);
    let len2 = ab.0 * ab.0 + ab.1 * ab.1;
    let t = if len2 > 0.0 {
        ((ap.0 * ab.0 + ap.1 * ab.1) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let proj = (a.0 + t * ab.0, a.1 + t * ab.1);
    ((p.0 - proj.0).powi(2) + (p.1 - proj.1).powi(2)).sqrt()
}

struct Splash {
    cx: Real,
    cy: Real,
    rx: Real,
    ry: Real,
    brightness: Real,
}

fn render_frame(joints: &[(Real, Real); 12], splash: Option<&Splash>) -> GrayImage {
    let mut img = GrayImage::zeros(IMG_SIZE, IMG_SIZE);
    let scale = (IMG_SIZE - 1) as Real;
    let px = |v: (Real, Real)| (v.0 * scale, v.1 * scale);
    let thickness = 1.0;

    let segs: Vec<((Real, Real), (Real, Real))> = BONES
        .iter()
        .map(|&(a, b)| (px(joints[a]), px(joints[b])))
        .collect();

    // head disk above the shoulder midpoint
    let mid_sh = (
        (joints[2].0 + joints[8].0) / 2.0,
        (joints[2].1 + joints[8].1) / 2.0,
    );
    let mid_hip = (
        (joints[3].0 + joints[9].0) / 2.0,
        (joints[3].1 + joints[9].1) / 2.0,
    );
    let up = norm((mid_sh.0 - mid_hip.0, mid_sh.1 - mid_hip.1));
    let head = px((mid_sh.0 + 0.05 * up.0, mid_sh.1 + 0.05 * up.1));
    let head_r = 0.028 * scale;

    let water_px = WATER_Y * scale;
    for y in 0..IMG_SIZE {
        for x in 0..IMG_SIZE {
            let p = (x as Real, y as Real);
            let mut v: Real = 0.0;
            for (a, b) in &segs {
                let d = dist_to_segment(p, *a, *b);
                if d < thickness + 1.0 {
                    v = v.max((thickness + 1.0 - d).clamp(0.0, 1.0) * 0.85);
                }
            }
            let dh = ((p.0 - head.0).powi(2) + (p.1 - head.1).powi(2)).sqrt();
            if dh < head_r + 1.0 {
                v = v.max((head_r + 1.0 - dh).clamp(0.0, 1.0) * 0.9);
            }
            // submerged body is attenuated
            if p.1 > water_px {
                v *= 0.3;
            }
            if let Some(s) = splash {
                let dx = (p.0 / scale - s.cx) / s.rx;
                let dy = (p.1 / scale - s.cy) / s.ry;
                let e = dx * dx + dy * dy;
                if e < 9.0 {
                    v = v.max(s.brightness * (-e).exp());
                }
            }
            img.set(y, x, v.clamp(0.0, 1.0) as f32);
        }
    }
    img
}

/// Renders a full synthetic dive. Deterministic for a fixed seed; the
/// ground-truth score is `score_max - angle_penalty * mean_deviation -
/// splash_penalty * splash_intensity`.
pub fn synth_dive(params: &DiveParams) -> Result<SynthDive, DataError> {
    synth_dive_scored(
        params,
        DEFAULT_SCORE_MAX,
        DEFAULT_ANGLE_PENALTY,
        DEFAULT_SPLASH_PENALTY,
    )
}

pub fn synth_dive_scored(
    params: &DiveParams,
    score_max: Real,
    angle_penalty: Real,
    splash_penalty: Real,
) -> Result<SynthDive, DataError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let k1 = params.takeoff_frames;
    let k2 = k1 + params.turning_frames;
    let k3 = k2 + params.entry_frames;
    let t_total = params.total_frames();

    // per-channel deviation structure: hips then knees, left then right
    let base: [Real; 4] = std::array::from_fn(|_| {
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        sign * rng.gen_range(0.6..1.0)
    });
    let wobble_phase: [Real; 4] = std::array::from_fn(|_| rng.gen_range(0.0..2.0 * PI));
    let arm_dev_scale = rng.gen_range(0.3..0.6);

    let total_rot = 2.0 * PI * params.somersaults;
    let mut frames = Vec::with_capacity(t_total);
    let mut pose_frames = Vec::with_capacity(t_total);
    let mut dev_sum = 0.0;
    let x0 = 0.32;
    let x1 = 0.58;
    let y0 = 0.30;

    for t in 0..t_total {
        let phase = if t < k1 {
            0
        } else if t < k2 {
            1
        } else if t < k3 {
            2
        } else {
            3
        };
        let motion = t < k3;
        let tau = (t.min(k3) as Real) / k3 as Real;
        let center = if motion {
            (
                x0 + (x1 - x0) * tau,
                y0 + (WATER_Y - y0) * tau * tau - 0.08 * (PI * tau).sin(),
            )
        } else {
            // slow sink below the surface
            let s = (t - k3 + 1) as Real / params.splash_frames as Real;
            (x1, WATER_Y + 0.08 * s)
        };
        let theta = if t < k1 {
            0.0
        } else if t < k2 {
            total_rot * (t - k1 + 1) as Real / params.turning_frames as Real
        } else {
            total_rot
        };

        let template = phase_pose(phase.min(2));
        let mut hip = [0.0; 2];
        let mut knee = [0.0; 2];
        let mut arm = [0.0; 2];
        let mut elbow = [0.0; 2];
        for side in 0..2 {
            // channel order: hip_l, hip_r, knee_l, knee_r
            let dev = |c: usize| -> Real {
                params.dev_offset * base[c]
                    + params.dev_wobble
                        * (2.0 * PI * 3.0 * t as Real / t_total as Real + wobble_phase[c]).sin()
            };
            let dh = dev(side);
            let dk = dev(2 + side);
            // near-straight templates only bend inward; the tuck moves both ways
            let apply = |template: Real, d: Real| -> Real {
                let raw = if template > 2.5 { template - d.abs() } else { template + d };
                raw.clamp(0.15, PI)
            };
            hip[side] = apply(template.hip, dh);
            knee[side] = apply(template.knee, dk);
            if motion {
                dev_sum += (hip[side] - template.hip).abs() + (knee[side] - template.knee).abs();
            }
            arm[side] = (template.arm_abduction + arm_dev_scale * dh).clamp(0.05, 2.6);
            elbow[side] = apply(template.elbow, arm_dev_scale * dk);
        }

        let skel = build_skeleton(center, theta, hip, knee, arm, elbow);
        let clamp01 = |v: Real| v.clamp(0.005, 0.995);
        let mut joints = skel.joints;
        for j in joints.iter_mut() {
            *j = (clamp01(j.0), clamp01(j.1));
        }

        let splash = if phase == 3 {
            let s = 1.0 - 0.55 * (t - k3) as Real / params.splash_frames as Real;
            Some(Splash {
                cx: x1,
                cy: WATER_Y,
                rx: (0.030 + 0.110 * params.splash_intensity) * s,
                ry: (0.014 + 0.050 * params.splash_intensity) * s,
                brightness: 0.95,
            })
        } else {
            None
        };
        frames.push(render_frame(&joints, splash.as_ref()));

        let (mut min_x, mut min_y, mut max_x, mut max_y) = (1.0f64, 1.0f64, 0.0f64, 0.0f64);
        for &(x, y) in joints.iter() {
            min_x = min_x.min(x);
            min_y = min_y.min(y);
            max_x = max_x.max(x);
            max_y = max_y.max(y);
        }
        let bbox = BBox {
            x: (min_x - 0.02).max(0.0),
            y: (min_y - 0.02).max(0.0),
            w: (max_x - min_x + 0.04).max(0.05),
            h: (max_y - min_y + 0.04).max(0.05),
        };
        pose_frames.push(PoseFrame::new(
            joints.to_vec(),
            skel.angles.to_vec(),
            bbox,
        )?);
    }

    let mean_deviation = dev_sum / (k3 * 4) as Real;
    let score = score_max
        - angle_penalty * mean_deviation
        - splash_penalty * params.splash_intensity;
    Ok(SynthDive {
        frames,
        pose: PoseSequence::new(pose_frames)?,
        gt_keyframes: vec![k1, k2, k3],
        score,
        mean_deviation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_params() -> DiveParams {
        DiveParams {
            takeoff_frames: 9,
            turning_frames: 16,
            entry_frames: 7,
            splash_frames: 9,
            somersaults: 1.5,
            dev_offset: 0.2,
            dev_wobble: 0.15,
            splash_intensity: 0.6,
            seed: 77,
        }
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let a = synth_dive(&base_params()).unwrap();
        let b = synth_dive(&base_params()).unwrap();
        assert_eq!(a.pose, b.pose);
        assert_eq!(a.frames, b.frames);
        assert_eq!(a.score, b.score);
    }

    #[test]
    fn perfect_dive_scores_max() {
        let mut p = base_params();
        p.dev_offset = 0.0;
        p.dev_wobble = 0.0;
        p.splash_intensity = 0.0;
        let d = synth_dive(&p).unwrap();
        assert_eq!(d.score, DEFAULT_SCORE_MAX);
        assert_eq!(d.mean_deviation, 0.0);
    }

    #[test]
    fn doubled_deviation_scores_strictly_lower() {
        let p = base_params();
        let mut p2 = p.clone();
        p2.dev_offset *= 2.0;
        p2.dev_wobble *= 2.0;
        let d1 = synth_dive(&p).unwrap();
        let d2 = synth_dive(&p2).unwrap();
        assert!(d2.score < d1.score, "{} !< {}", d2.score, d1.score);
    }

    #[test]
    fn keyframes_strictly_increasing_and_interior() {
        let d = synth_dive(&base_params()).unwrap();
        let t = d.pose.len();
        let k = &d.gt_keyframes;
        assert!(k.windows(2).all(|w| w[0] < w[1]));
        assert!(k[0] >= 1 && *k.last().unwrap() < t);
    }

    #[test]
    fn short_phase_rejected() {
        let mut p = base_params();
        p.entry_frames = 3;
        assert!(synth_dive(&p).is_err());
    }

    #[test]
    fn stored_angles_match_joint_geometry() {
        use crate::posedata::pose::{joint_angle, ANGLE_TRIPLES};
        let d = synth_dive(&base_params()).unwrap();
        // motion frames: angles are realized exactly unless clamping to
        // the image border moved a joint
        for frame in d.pose.frames().iter().take(8) {
            for (ai, &(a, b, c)) in ANGLE_TRIPLES.iter().enumerate() {
                let recomputed =
                    joint_angle(frame.joints[a], frame.joints[b], frame.joints[c]).unwrap();
                assert!(
                    (recomputed - frame.angles[ai]).abs() < 1e-9,
                    "angle {ai}: {} vs {}",
                    recomputed,
                    frame.angles[ai]
                );
            }
        }
    }

    #[test]
    fn splash_changes_condition_frames() {
        let mut quiet = base_params();
        quiet.splash_intensity = 0.0;
        let mut loud = base_params();
        loud.splash_intensity = 1.2;
        let dq = synth_dive(&quiet).unwrap();
        let dl = synth_dive(&loud).unwrap();
        let k3 = dq.gt_keyframes[2];
        let energy = |img: &GrayImage| img.data.iter().map(|&v| v as f64).sum::<f64>();
        let eq: f64 = dq.frames[k3..].iter().map(energy).sum();
        let el: f64 = dl.frames[k3..].iter().map(energy).sum();
        assert!(el > eq * 1.5, "splash energy {el} vs {eq}");
    }
}
