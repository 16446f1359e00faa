use log::warn;
use serde::{Deserialize, Serialize};

use super::{MotionClip, MotionError, MotionWindow, Pose, SkeletonSpec};

pub const STD_FLOOR: f64 = 1e-6;

/// Horizontal direction the left-to-right hip axis is rotated onto.
const CANONICAL_HIP_HEADING: f64 = -std::f64::consts::FRAC_PI_2;

/// Moves the root to the origin and removes heading (rotation about the
/// vertical `z` axis) so that the hip axis points along a fixed direction.
///
/// Returns the transformed clip and the frames whose hip axis was degenerate;
/// those reuse the previous frame's rotation.
pub fn remove_global_motion(clip: &MotionClip, skeleton: &SkeletonSpec) -> (MotionClip, Vec<usize>) {
    let root = skeleton.root();
    let hips = skeleton.joint_index("l_hip").zip(skeleton.joint_index("r_hip"));
    let mut flagged = Vec::new();
    let mut last_angle = 0.0;
    let frames = clip
        .frames
        .iter()
        .enumerate()
        .map(|(t, pose)| {
            let origin = pose.joints[root];
            let angle = match hips {
                Some((l, r)) => {
                    let dx = pose.joints[r][0] - pose.joints[l][0];
                    let dy = pose.joints[r][1] - pose.joints[l][1];
                    if dx.hypot(dy) < 1e-9 {
                        flagged.push(t);
                        last_angle
                    } else {
                        CANONICAL_HIP_HEADING - dy.atan2(dx)
                    }
                }
                None => 0.0,
            };
            last_angle = angle;
            let (s, c) = angle.sin_cos();
            Pose::new(
                pose.joints
                    .iter()
                    .map(|p| {
                        let (x, y, z) = (p[0] - origin[0], p[1] - origin[1], p[2] - origin[2]);
                        [c * x - s * y, s * x + c * y, z]
                    })
                    .collect(),
            )
        })
        .collect();
    if !flagged.is_empty() {
        warn!("{} frame(s) with degenerate hip axis reused the previous heading", flagged.len());
    }
    (
        MotionClip {
            frames,
            ..clip.clone()
        },
        flagged,
    )
}

/// Per-channel mean and standard deviation over `3J` coordinate channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormalizationStats {
    pub fn fit<'a>(poses: impl IntoIterator<Item = &'a Pose>) -> Result<Self, MotionError> {
        let mut sum: Vec<f64> = Vec::new();
        let mut count = 0usize;
        let poses: Vec<&Pose> = poses.into_iter().collect();
        for p in &poses {
            let flat = p.flat();
            if sum.is_empty() {
                sum = vec![0.0; flat.len()];
            } else if flat.len() != sum.len() {
                return Err(MotionError::InvalidClip("inconsistent joint count across corpus".into()));
            }
            for (s, v) in sum.iter_mut().zip(&flat) {
                *s += v;
            }
            count += 1;
        }
        if count == 0 {
            return Err(MotionError::InvalidClip("cannot normalize an empty corpus".into()));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut var = vec![0.0; mean.len()];
        for p in &poses {
            for ((v, x), m) in var.iter_mut().zip(p.flat()).zip(&mean) {
                *v += (x - m).powi(2);
            }
        }
        let std = var
            .iter()
            .map(|v| (v / count as f64).sqrt().max(STD_FLOOR))
            .collect();
        Ok(Self { mean, std })
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, pose: &Pose) -> Pose {
        let flat: Vec<f64> = pose
            .flat()
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| (x - m) / s)
            .collect();
        Pose::from_flat(&flat)
    }

    pub fn invert(&self, pose: &Pose) -> Pose {
        let flat: Vec<f64> = pose
            .flat()
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| x * s + m)
            .collect();
        Pose::from_flat(&flat)
    }

    pub fn apply_window(&self, window: &MotionWindow) -> MotionWindow {
        MotionWindow {
            frames: window.frames.iter().map(|p| self.apply(p)).collect(),
            ..window.clone()
        }
    }

    pub fn invert_clip(&self, clip: &MotionClip) -> MotionClip {
        MotionClip {
            frames: clip.frames.iter().map(|p| self.invert(p)).collect(),
            ..clip.clone()
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("channel,mean,std\n");
        for (i, (m, d)) in self.mean.iter().zip(&self.std).enumerate() {
            s.push_str(&format!("{i},{m:?},{d:?}\n"));
        }
        s
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self, MotionError> {
        let mut mean = Vec::new();
        let mut std = Vec::new();
        for (n, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let err = || MotionError::Parse {
                path: origin.to_string(),
                line: n + 1,
                msg: format!("expected `channel,mean,std`, got `{line}`"),
            };
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 3 {
                return Err(err());
            }
            mean.push(parts[1].trim().parse::<f64>().map_err(|_| err())?);
            std.push(parts[2].trim().parse::<f64>().map_err(|_| err())?);
        }
        Ok(Self { mean, std })
    }
}

/// Centre-mean unit-variance normalization over the whole corpus.
pub fn normalize(clips: &[MotionClip]) -> Result<(Vec<MotionClip>, NormalizationStats), MotionError> {
    let stats = NormalizationStats::fit(clips.iter().flat_map(|c| c.frames.iter()))?;
    let out = clips
        .iter()
        .map(|c| MotionClip {
            frames: c.frames.iter().map(|p| stats.apply(p)).collect(),
            ..c.clone()
        })
        .collect();
    Ok((out, stats))
}

pub fn normalize_windows(windows: &[MotionWindow]) -> Result<(Vec<MotionWindow>, NormalizationStats), MotionError> {
    let stats = NormalizationStats::fit(windows.iter().flat_map(|w| w.frames.iter()))?;
    let out = windows
        .iter()
        .map(|w| MotionWindow {
            frames: w.frames.iter().map(|p| stats.apply(p)).collect(),
            ..w.clone()
        })
        .collect();
    Ok((out, stats))
}

/// Cuts `clip` into windows of `target_len` frames every `stride` frames;
/// the trailing remainder is discarded.
pub fn window_actions(clip: &MotionClip, target_len: usize, stride: usize) -> Vec<MotionWindow> {
    if target_len == 0 || stride == 0 {
        warn!("window length and stride must be positive");
        return Vec::new();
    }
    if clip.len() < target_len {
        warn!(
            "clip of {} frames is shorter than the {target_len}-frame window; no windows produced",
            clip.len()
        );
        return Vec::new();
    }
    (0..=clip.len() - target_len)
        .step_by(stride)
        .map(|start| MotionWindow {
            frames: clip.frames[start..start + target_len].to_vec(),
            fps: clip.fps,
            action: clip.action,
            subject: clip.subject,
        })
        .collect()
}
