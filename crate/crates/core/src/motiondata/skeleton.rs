use std::fmt::Write as _;
use std::path::Path;

use super::{MotionError, Pose};

/// Joint list plus bone pairs and reference bone lengths (meters).
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonSpec {
    joints: Vec<String>,
    bones: Vec<(usize, usize)>,
    lengths: Vec<f64>,
}

const STANDARD_JOINTS: [&str; 16] = [
    "pelvis",
    "spine",
    "neck",
    "head",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
    "r_shoulder",
    "r_elbow",
    "r_wrist",
    "l_hip",
    "l_knee",
    "l_ankle",
    "r_hip",
    "r_knee",
    "r_ankle",
];

const STANDARD_BONES: [(usize, usize, f64); 15] = [
    (0, 1, 0.25),
    (1, 2, 0.25),
    (2, 3, 0.15),
    (2, 4, 0.18),
    (4, 5, 0.28),
    (5, 6, 0.25),
    (2, 7, 0.18),
    (7, 8, 0.28),
    (8, 9, 0.25),
    (0, 10, 0.10),
    (10, 11, 0.42),
    (11, 12, 0.42),
    (0, 13, 0.10),
    (13, 14, 0.42),
    (14, 15, 0.42),
];

impl SkeletonSpec {
    pub fn new(joints: Vec<String>, bones: Vec<(usize, usize)>, lengths: Vec<f64>) -> Result<Self, MotionError> {
        let j = joints.len();
        if j == 0 {
            return Err(MotionError::InvalidSkeleton("no joints".into()));
        }
        if bones.len() != lengths.len() {
            return Err(MotionError::InvalidSkeleton(format!(
                "{} bones but {} lengths",
                bones.len(),
                lengths.len()
            )));
        }
        for (k, &(a, b)) in bones.iter().enumerate() {
            if a >= j || b >= j {
                return Err(MotionError::InvalidSkeleton(format!("bone {k} ({a}, {b}) out of range for {j} joints")));
            }
            if a == b {
                return Err(MotionError::InvalidSkeleton(format!("bone {k} joins joint {a} to itself")));
            }
            if !(lengths[k] > 0.0) || !lengths[k].is_finite() {
                return Err(MotionError::InvalidSkeleton(format!("bone {k} has length {}", lengths[k])));
            }
        }
        // connectivity by union-find
        let mut parent: Vec<usize> = (0..j).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for &(a, b) in &bones {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            parent[ra] = rb;
        }
        let root = find(&mut parent, 0);
        if (0..j).any(|x| find(&mut parent, x) != root) {
            return Err(MotionError::InvalidSkeleton("bone set does not connect all joints".into()));
        }
        Ok(Self { joints, bones, lengths })
    }

    /// 16-joint body used by the procedural generator.
    pub fn standard() -> Self {
        Self::new(
            STANDARD_JOINTS.iter().map(|s| s.to_string()).collect(),
            STANDARD_BONES.iter().map(|&(a, b, _)| (a, b)).collect(),
            STANDARD_BONES.iter().map(|&(_, _, l)| l).collect(),
        )
        .expect("standard skeleton is valid")
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn joint_names(&self) -> &[String] {
        &self.joints
    }

    pub fn bones(&self) -> &[(usize, usize)] {
        &self.bones
    }

    pub fn reference_lengths(&self) -> &[f64] {
        &self.lengths
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j == name)
    }

    /// Pelvis if present, otherwise joint 0.
    pub fn root(&self) -> usize {
        self.joint_index("pelvis").unwrap_or(0)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            joints: self.joints.clone(),
            bones: self.bones.clone(),
            lengths: self.lengths.iter().map(|l| l * factor).collect(),
        }
    }

    pub fn bone_lengths(&self, pose: &Pose) -> Vec<f64> {
        self.bones
            .iter()
            .map(|&(a, b)| {
                let (p, q) = (pose.joints[a], pose.joints[b]);
                ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
            })
            .collect()
    }

    /// Bone indices touching `joint`, in bone order.
    pub fn incident_bones(&self, joint: usize) -> Vec<usize> {
        self.bones
            .iter()
            .enumerate()
            .filter(|(_, &(a, b))| a == joint || b == joint)
            .map(|(k, _)| k)
            .collect()
    }

    /// Text format: `<index> <name>` per joint, `BONES`, then `<i> <j> <length_m>`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (i, n) in self.joints.iter().enumerate() {
            let _ = writeln!(s, "{i} {n}");
        }
        s.push_str("BONES\n");
        for (&(a, b), l) in self.bones.iter().zip(&self.lengths) {
            let _ = writeln!(s, "{a} {b} {l}");
        }
        s
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self, MotionError> {
        let err = |line: usize, msg: String| MotionError::Parse {
            path: origin.to_string(),
            line,
            msg,
        };
        let mut joints = Vec::new();
        let mut bones = Vec::new();
        let mut lengths = Vec::new();
        let mut in_bones = false;
        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if line == "BONES" {
                in_bones = true;
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if !in_bones {
                if parts.len() != 2 {
                    return Err(err(line_no, format!("expected `<index> <name>`, got `{line}`")));
                }
                let idx: usize = parts[0].parse().map_err(|_| err(line_no, format!("bad joint index `{}`", parts[0])))?;
                if idx != joints.len() {
                    return Err(err(line_no, format!("joint index {idx} out of sequence")));
                }
                joints.push(parts[1].to_string());
            } else {
                if parts.len() != 3 {
                    return Err(err(line_no, format!("expected `<i> <j> <length_m>`, got `{line}`")));
                }
                let a: usize = parts[0].parse().map_err(|_| err(line_no, format!("bad joint index `{}`", parts[0])))?;
                let b: usize = parts[1].parse().map_err(|_| err(line_no, format!("bad joint index `{}`", parts[1])))?;
                let l: f64 = parts[2].parse().map_err(|_| err(line_no, format!("bad length `{}`", parts[2])))?;
                bones.push((a, b));
                lengths.push(l);
            }
        }
        Self::new(joints, bones, lengths)
    }

    pub fn load(path: &Path) -> Result<Self, MotionError> {
        let text = std::fs::read_to_string(path).map_err(|e| MotionError::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn save(&self, path: &Path) -> Result<(), MotionError> {
        std::fs::write(path, self.to_text()).map_err(|e| MotionError::io(path, e))
    }
}
