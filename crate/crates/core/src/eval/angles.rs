//! Joint-angle representation: invariant to global rotation, translation and
//! uniform scale.

use super::{EvalError, Result};
use crate::motiondata::{MotionClip, Pose, SkeletonSpec};

/// Bones shorter than this make an angle undefined.
const MIN_BONE: f64 = 1e-12;

/// The angle at `joint` between bones `a` and `b`, both incident to it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnglePair {
    pub joint: usize,
    pub a: usize,
    pub b: usize,
}

/// Angle pairs for every joint with at least two incident bones;
/// consecutive pairs in bone order when there are more than two.
pub fn angle_pairs(skeleton: &SkeletonSpec) -> Vec<AnglePair> {
    let mut out = Vec::new();
    for joint in 0..skeleton.joint_count() {
        let inc = skeleton.incident_bones(joint);
        for w in inc.windows(2) {
            out.push(AnglePair { joint, a: w[0], b: w[1] });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct AngleSpaceMotion {
    pub pairs: Vec<AnglePair>,
    /// `angles[t][k]` in radians, within `[0, pi]`.
    pub angles: Vec<Vec<f64>>,
    /// Frames where some bone had zero length; their angles are
    /// meaningless and excluded from averages.
    pub flagged: Vec<bool>,
}

impl AngleSpaceMotion {
    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }
}

fn away(skeleton: &SkeletonSpec, pose: &Pose, joint: usize, bone: usize) -> [f64; 3] {
    let (i, j) = skeleton.bones()[bone];
    let other = if i == joint { j } else { i };
    let (p, q) = (pose.joints[joint], pose.joints[other]);
    [q[0] - p[0], q[1] - p[1], q[2] - p[2]]
}

fn angle_between(u: [f64; 3], v: [f64; 3]) -> Option<f64> {
    let norm = |w: [f64; 3]| (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
    if norm(u) < MIN_BONE || norm(v) < MIN_BONE {
        return None;
    }
    let cross = [
        u[1] * v[2] - u[2] * v[1],
        u[2] * v[0] - u[0] * v[2],
        u[0] * v[1] - u[1] * v[0],
    ];
    let dot = u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
    Some(norm(cross).atan2(dot))
}

pub fn to_angle_space(clip: &MotionClip, skeleton: &SkeletonSpec) -> Result<AngleSpaceMotion> {
    if clip.joint_count() != skeleton.joint_count() {
        return Err(EvalError::Input(format!(
            "clip has {} joints, skeleton {}",
            clip.joint_count(),
            skeleton.joint_count()
        )));
    }
    let pairs = angle_pairs(skeleton);
    let mut angles = Vec::with_capacity(clip.len());
    let mut flagged = Vec::with_capacity(clip.len());
    for pose in &clip.frames {
        let mut bad = false;
        let row = pairs
            .iter()
            .map(|p| {
                let u = away(skeleton, pose, p.joint, p.a);
                let v = away(skeleton, pose, p.joint, p.b);
                angle_between(u, v).unwrap_or_else(|| {
                    bad = true;
                    0.0
                })
            })
            .collect();
        angles.push(row);
        flagged.push(bad);
    }
    Ok(AngleSpaceMotion { pairs, angles, flagged })
}

fn check_matched(generated: &[MotionClip], reference: &[MotionClip], horizon: usize) -> Result<()> {
    if generated.len() != reference.len() || generated.is_empty() {
        return Err(EvalError::Input(format!(
            "{} generated clips for {} references",
            generated.len(),
            reference.len()
        )));
    }
    let shortest = generated.iter().chain(reference).map(MotionClip::len).min().unwrap_or(0);
    if horizon > shortest {
        return Err(EvalError::Input(format!("horizon {horizon} exceeds shortest clip ({shortest} frames)")));
    }
    Ok(())
}

/// Per-frame mean over matched pairs and angles of `|angle_gen - angle_ref|`,
/// for the first `horizon` frames. Flagged frames are skipped; a frame with
/// no usable pair reports NaN.
pub fn mean_angle_curve(
    generated: &[MotionClip],
    reference: &[MotionClip],
    skeleton: &SkeletonSpec,
    horizon: usize,
) -> Result<Vec<f64>> {
    check_matched(generated, reference, horizon)?;
    let mut sum = vec![0.0; horizon];
    let mut count = vec![0usize; horizon];
    for (g, r) in generated.iter().zip(reference) {
        let (ga, ra) = (to_angle_space(g, skeleton)?, to_angle_space(r, skeleton)?);
        for t in 0..horizon {
            if ga.flagged[t] || ra.flagged[t] {
                continue;
            }
            sum[t] += ga.angles[t].iter().zip(&ra.angles[t]).map(|(a, b)| (a - b).abs()).sum::<f64>();
            count[t] += ga.pairs.len();
        }
    }
    Ok(sum.iter().zip(&count).map(|(s, &n)| if n == 0 { f64::NAN } else { s / n as f64 }).collect())
}

/// Per-frame mean angle over clips and angle pairs (the trajectory itself,
/// not an error).
pub fn mean_angle_trajectory(clips: &[MotionClip], skeleton: &SkeletonSpec, horizon: usize) -> Result<Vec<f64>> {
    check_matched(clips, clips, horizon)?;
    let mut sum = vec![0.0; horizon];
    let mut count = vec![0usize; horizon];
    for c in clips {
        let a = to_angle_space(c, skeleton)?;
        for t in 0..horizon {
            if !a.flagged[t] {
                sum[t] += a.angles[t].iter().sum::<f64>();
                count[t] += a.pairs.len();
            }
        }
    }
    Ok(sum.iter().zip(&count).map(|(s, &n)| if n == 0 { f64::NAN } else { s / n as f64 }).collect())
}

/// Trapezoidal area under a per-frame curve, in radian-frames.
pub fn curve_auc(curve: &[f64]) -> f64 {
    curve.windows(2).map(|w| 0.5 * (w[0] + w[1])).sum()
}
