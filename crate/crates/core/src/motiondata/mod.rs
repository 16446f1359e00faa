//! Skeleton and motion data model, CSV ingestion, preprocessing and the
//! procedural motion generator.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

mod gait;
mod io;
mod preprocess;
mod procedural;
mod skeleton;

pub use gait::{detect_heel_strikes, resample_span, segment_gait, GaitDetector};
pub use io::{clip_to_csv, load_clip_file, load_clips, parse_clip, write_clip};
pub use preprocess::{
    normalize, normalize_windows, remove_global_motion, window_actions, NormalizationStats, STD_FLOOR,
};
pub use procedural::{
    build_procedural_corpus, prepare_windows, segment_corpus, synth_procedural, CorpusSpec, PreparedDataset, SubjectParams,
    DEFAULT_WINDOWS_PER_ACTION,
};
pub use skeleton::SkeletonSpec;

pub const DEFAULT_FPS: f64 = 30.0;
pub const CLASSIFICATION_WINDOW: usize = 125;

#[derive(Debug, Error)]
pub enum MotionError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("invalid skeleton: {0}")]
    InvalidSkeleton(String),
    #[error("invalid clip: {0}")]
    InvalidClip(String),
    #[error("unknown action `{0}` (valid: knock, lift, throw, walk)")]
    UnknownAction(String),
}

impl MotionError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        MotionError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Knock,
    Lift,
    Throw,
    Walk,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Knock, Action::Lift, Action::Throw, Action::Walk];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Action::Knock => "knock",
            Action::Lift => "lift",
            Action::Throw => "throw",
            Action::Walk => "walk",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Action {
    type Err = MotionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| MotionError::UnknownAction(s.to_string()))
    }
}

/// Joint positions in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    pub joints: Vec<[f64; 3]>,
}

impl Pose {
    pub fn new(joints: Vec<[f64; 3]>) -> Self {
        Self { joints }
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn is_finite(&self) -> bool {
        self.joints.iter().flatten().all(|v| v.is_finite())
    }

    /// Coordinates as `x0, y0, z0, x1, ...`.
    pub fn flat(&self) -> Vec<f64> {
        self.joints.iter().flatten().copied().collect()
    }

    pub fn from_flat(values: &[f64]) -> Self {
        Self {
            joints: values.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionClip {
    pub frames: Vec<Pose>,
    pub fps: f64,
    pub subject: u32,
    pub action: Action,
    /// Left-heel strike frames, known only for procedural walks.
    pub heel_strikes: Option<Vec<usize>>,
}

impl MotionClip {
    pub fn new(frames: Vec<Pose>, fps: f64, subject: u32, action: Action) -> Result<Self, MotionError> {
        let clip = Self {
            frames,
            fps,
            subject,
            action,
            heel_strikes: None,
        };
        clip.validate()?;
        Ok(clip)
    }

    pub fn validate(&self) -> Result<(), MotionError> {
        let Some(first) = self.frames.first() else {
            return Err(MotionError::InvalidClip("clip has no frames".into()));
        };
        if !(self.fps > 0.0) {
            return Err(MotionError::InvalidClip(format!("frame rate {} must be positive", self.fps)));
        }
        let j = first.joint_count();
        for (t, p) in self.frames.iter().enumerate() {
            if p.joint_count() != j {
                return Err(MotionError::InvalidClip(format!(
                    "frame {t} has {} joints, expected {j}",
                    p.joint_count()
                )));
            }
            if !p.is_finite() {
                return Err(MotionError::InvalidClip(format!("frame {t} has non-finite coordinates")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn joint_count(&self) -> usize {
        self.frames.first().map_or(0, Pose::joint_count)
    }
}

/// Fixed-length frame sequence, the unit of training and generation.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionWindow {
    pub frames: Vec<Pose>,
    pub fps: f64,
    pub action: Action,
    pub subject: u32,
}

impl MotionWindow {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn joint_count(&self) -> usize {
        self.frames.first().map_or(0, Pose::joint_count)
    }

    /// Frames `start..end` as a new window.
    pub fn slice(&self, start: usize, end: usize) -> MotionWindow {
        MotionWindow {
            frames: self.frames[start..end].to_vec(),
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> MotionWindow {
        MotionWindow {
            frames: Vec::new(),
            fps: self.fps,
            action: self.action,
            subject: self.subject,
        }
    }

    /// Channel-major layout `[3J, T]`: channel `3j + axis`, then time.
    pub fn to_channels(&self) -> Vec<f64> {
        let t = self.len();
        let c = 3 * self.joint_count();
        let mut out = vec![0.0; c * t];
        for (ti, pose) in self.frames.iter().enumerate() {
            for (ci, v) in pose.joints.iter().flatten().enumerate() {
                out[ci * t + ti] = *v;
            }
        }
        out
    }

    pub fn frames_from_channels(data: &[f64], channels: usize, len: usize) -> Vec<Pose> {
        (0..len)
            .map(|t| Pose::from_flat(&(0..channels).map(|c| data[c * len + t]).collect::<Vec<_>>()))
            .collect()
    }

    pub fn into_clip(self) -> MotionClip {
        MotionClip {
            frames: self.frames,
            fps: self.fps,
            subject: self.subject,
            action: self.action,
            heel_strikes: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn action_parse_and_display() {
        for a in Action::ALL {
            assert_eq!(a.as_str().parse::<Action>().unwrap(), a);
        }
        assert!(matches!("dance".parse::<Action>(), Err(MotionError::UnknownAction(_))));
    }

    #[test]
    fn channel_layout_round_trip() {
        let frames = vec![
            Pose::new(vec![[1., 2., 3.], [4., 5., 6.]]),
            Pose::new(vec![[7., 8., 9.], [10., 11., 12.]]),
        ];
        let w = MotionWindow {
            frames: frames.clone(),
            fps: 30.0,
            action: Action::Walk,
            subject: 0,
        };
        let ch = w.to_channels();
        assert_eq!(&ch[..4], &[1., 7., 2., 8.]);
        assert_eq!(MotionWindow::frames_from_channels(&ch, 6, 2), frames);
    }

    #[test]
    fn clip_validation() {
        assert!(MotionClip::new(vec![], 30.0, 0, Action::Walk).is_err());
        let p = Pose::new(vec![[0.0; 3]]);
        assert!(MotionClip::new(vec![p.clone()], 0.0, 0, Action::Walk).is_err());
        let q = Pose::new(vec![[0.0; 3], [0.0; 3]]);
        assert!(MotionClip::new(vec![p.clone(), q], 30.0, 0, Action::Walk).is_err());
        assert!(MotionClip::new(vec![p], 30.0, 0, Action::Walk).is_ok());
    }
}
