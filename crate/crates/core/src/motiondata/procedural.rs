//! Procedural skeletal motion: forward kinematics from smooth joint-angle
//! trajectories, so every bone keeps its length exactly. Walks record their
//! left-heel strike frames.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    normalize_windows, remove_global_motion, segment_gait, window_actions, Action, GaitDetector, MotionClip,
    MotionError, MotionWindow, NormalizationStats, Pose, SkeletonSpec, CLASSIFICATION_WINDOW, DEFAULT_FPS,
};

/// Windows per subject for knock, lift, throw and walk.
pub const DEFAULT_WINDOWS_PER_ACTION: [usize; 4] = [64, 88, 64, 80];

/// Per-subject body and style parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectParams {
    pub id: u32,
    pub scale: f64,
    pub tempo: f64,
    pub amplitude: f64,
    pub lean: f64,
    /// Gait cycle length in frames.
    pub stride_frames: usize,
    /// Frame of the first left-heel strike in a walk.
    pub first_strike: usize,
    pub phase: f64,
    /// Amplitude of the per-clip joint-angle jitter (radians).
    pub jitter: f64,
}

impl SubjectParams {
    pub fn sample(id: u32, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ u64::from(id));
        let tempo: f64 = rng.gen_range(0.85..1.15);
        Self {
            id,
            scale: rng.gen_range(0.9..1.1),
            tempo,
            amplitude: rng.gen_range(0.8..1.2),
            lean: rng.gen_range(-0.05..0.1),
            stride_frames: (1.1 * DEFAULT_FPS / tempo).round() as usize,
            first_strike: rng.gen_range(3..10),
            phase: rng.gen_range(0.0..1.0),
            jitter: rng.gen_range(0.03..0.07),
        }
    }
}

/// Smooth random perturbation: a sum of three slow sinusoids.
struct Jitter {
    terms: [(f64, f64, f64); 3],
}

impl Jitter {
    fn new(rng: &mut ChaCha8Rng, amplitude: f64) -> Self {
        let mut term = || {
            (
                amplitude * rng.gen_range(0.3..1.0) / 3f64.sqrt(),
                rng.gen_range(0.15..1.2),
                rng.gen_range(0.0..2.0 * PI),
            )
        };
        Self {
            terms: [term(), term(), term()],
        }
    }

    fn at(&self, seconds: f64) -> f64 {
        self.terms
            .iter()
            .map(|&(a, f, p)| a * (2.0 * PI * f * seconds + p).sin())
            .sum()
    }
}

#[derive(Default, Clone, Copy)]
struct Arm {
    flex: f64,
    abduct: f64,
    elbow: f64,
}

struct Frame {
    pelvis_height: f64,
    lean: f64,
    sway: f64,
    twist: f64,
    left_arm: Arm,
    right_arm: Arm,
    /// Ankle targets in the body frame (z above ground).
    left_ankle: [f64; 3],
    right_ankle: [f64; 3],
}

fn add(a: [f64; 3], b: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2]]
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

fn rot_z(v: [f64; 3], angle: f64) -> [f64; 3] {
    let (s, c) = angle.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1], v[2]]
}

fn arm_dir(flex: f64, abduct: f64, side: f64, twist: f64) -> [f64; 3] {
    rot_z(
        [flex.sin() * abduct.cos(), side * abduct.sin(), -flex.cos() * abduct.cos()],
        twist,
    )
}

/// Two-link planar IK: knee position for hip `h`, ankle target `a`.
fn knee(h: [f64; 3], a: [f64; 3], l1: f64, l2: f64) -> ([f64; 3], [f64; 3]) {
    let mut d_vec = sub(a, h);
    let mut d = norm(d_vec);
    let reach = 0.999 * (l1 + l2);
    if d > reach {
        d_vec = [d_vec[0] * reach / d, d_vec[1] * reach / d, d_vec[2] * reach / d];
        d = reach;
    }
    let min_reach = (l1 - l2).abs() + 1e-6;
    if d < min_reach {
        d_vec = [d_vec[0], d_vec[1], -min_reach];
        d = norm(d_vec);
    }
    let ankle = add(h, d_vec, 1.0);
    let u = [d_vec[0] / d, d_vec[1] / d, d_vec[2] / d];
    let fwd = [1.0, 0.0, 0.0];
    let dot = u[0];
    let mut n = sub(fwd, [u[0] * dot, u[1] * dot, u[2] * dot]);
    let nn = norm(n);
    n = [n[0] / nn, n[1] / nn, n[2] / nn];
    let cos_a = ((l1 * l1 + d * d - l2 * l2) / (2.0 * l1 * d)).clamp(-1.0, 1.0);
    let sin_a = (1.0 - cos_a * cos_a).sqrt();
    let k = add(h, [cos_a * u[0] + sin_a * n[0], cos_a * u[1] + sin_a * n[1], cos_a * u[2] + sin_a * n[2]], l1);
    (k, ankle)
}

fn assemble(f: &Frame, lengths: &[f64], root: [f64; 2], heading: f64) -> Pose {
    let pelvis = [0.0, 0.0, f.pelvis_height];
    let trunk = |lean: f64| [lean.sin() * f.sway.cos(), f.sway.sin(), lean.cos() * f.sway.cos()];
    let spine = add(pelvis, trunk(f.lean), lengths[0]);
    let neck = add(spine, trunk(f.lean * 1.2), lengths[1]);
    let head = add(neck, trunk(f.lean * 0.6), lengths[2]);
    let lat = [-f.twist.sin(), f.twist.cos(), 0.0];
    let l_sh = add(neck, lat, lengths[3]);
    let l_el = add(l_sh, arm_dir(f.left_arm.flex, f.left_arm.abduct, 1.0, f.twist), lengths[4]);
    let l_wr = add(
        l_el,
        arm_dir(f.left_arm.flex + f.left_arm.elbow, f.left_arm.abduct, 1.0, f.twist),
        lengths[5],
    );
    let r_sh = add(neck, lat, -lengths[6]);
    let r_el = add(r_sh, arm_dir(f.right_arm.flex, f.right_arm.abduct, -1.0, f.twist), lengths[7]);
    let r_wr = add(
        r_el,
        arm_dir(f.right_arm.flex + f.right_arm.elbow, f.right_arm.abduct, -1.0, f.twist),
        lengths[8],
    );
    let plat = [(0.5 * f.twist).sin(), (-0.5 * f.twist).cos(), 0.0];
    let l_hip = add(pelvis, [-plat[0], -plat[1], 0.0], lengths[9]);
    let (l_knee, l_ankle) = knee(l_hip, f.left_ankle, lengths[10], lengths[11]);
    let r_hip = add(pelvis, plat, lengths[12]);
    let (r_knee, r_ankle) = knee(r_hip, f.right_ankle, lengths[13], lengths[14]);
    let body = [
        pelvis, spine, neck, head, l_sh, l_el, l_wr, r_sh, r_el, r_wr, l_hip, l_knee, l_ankle, r_hip, r_knee, r_ankle,
    ];
    Pose::new(
        body.iter()
            .map(|p| {
                let w = rot_z(*p, heading);
                [w[0] + root[0], w[1] + root[1], w[2]]
            })
            .collect(),
    )
}

fn smoothstep(w: f64) -> f64 {
    let w = w.clamp(0.0, 1.0);
    w * w * (3.0 - 2.0 * w)
}

const STANCE: f64 = 0.6;

/// Ankle (forward offset, height) over one gait cycle; strike at phase 0.
fn foot(phase: f64, stride: f64, lift: f64, rise: f64) -> (f64, f64) {
    if phase < STANCE {
        (stride - 2.0 * stride * phase / STANCE, rise * phase * phase)
    } else {
        let w = (phase - STANCE) / (1.0 - STANCE);
        (
            -stride + 2.0 * stride * smoothstep(w),
            rise * STANCE * STANCE * (1.0 - w) + lift * (PI * w).sin(),
        )
    }
}

/// One procedural clip of `frames` frames at 30 Hz.
pub fn synth_procedural(action: Action, subject: &SubjectParams, frames: usize, rng_seed: u64) -> MotionClip {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed ^ (u64::from(subject.id) << 32) ^ action.index() as u64);
    let skeleton = SkeletonSpec::standard().scaled(subject.scale);
    let lengths = skeleton.reference_lengths().to_vec();
    let s = subject.scale;
    let amp = subject.amplitude;
    let fps = DEFAULT_FPS;
    let hip_w = lengths[9];

    let jitters: Vec<Jitter> = (0..8).map(|_| Jitter::new(&mut rng, subject.jitter)).collect();
    let j = |k: usize, sec: f64| jitters[k].at(sec);
    let mut heading: f64 = rng.gen_range(-PI..PI);
    let turn_rate: f64 = rng.gen_range(-0.15..0.15);
    let mut root = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
    let drift_dir: f64 = rng.gen_range(-PI..PI);
    let clip_phase = subject.phase + rng.gen_range(0.0..1.0);

    let period = subject.stride_frames.max(4) as f64;
    let s0 = subject.first_strike as f64;
    let stride = 0.17 * s * amp.min(1.1);
    let walk_speed = 2.0 * stride / (STANCE * period);

    let mut poses = Vec::with_capacity(frames);
    for t in 0..frames {
        let sec = t as f64 / fps;
        let standing = |lean: f64| Frame {
            pelvis_height: 0.8 * s,
            lean: subject.lean + lean,
            sway: 0.3 * j(6, sec),
            twist: j(7, sec),
            left_arm: Arm {
                flex: 0.08 + j(0, sec),
                abduct: 0.1,
                elbow: 0.2 + j(1, sec).abs(),
            },
            right_arm: Arm {
                flex: 0.08 + j(2, sec),
                abduct: 0.1,
                elbow: 0.2 + j(3, sec).abs(),
            },
            left_ankle: [0.02 * s, hip_w + 0.02 * s, 0.0],
            right_ankle: [0.02 * s, -hip_w - 0.02 * s, 0.0],
        };
        let frame = match action {
            Action::Walk => {
                let pl = ((t as f64 - s0) / period).rem_euclid(1.0);
                let pr = (pl + 0.5).rem_euclid(1.0);
                let (xl, zl) = foot(pl, stride, 0.1 * s, 0.05 * s);
                let (xr, zr) = foot(pr, stride, 0.1 * s, 0.05 * s);
                let swing = (2.0 * PI * pl).cos();
                Frame {
                    pelvis_height: 0.78 * s + 0.01 * s * (2.0 * PI * pl).cos(),
                    lean: subject.lean + 0.05 + 0.5 * j(6, sec),
                    sway: 0.03 * (2.0 * PI * pl).sin(),
                    twist: 0.08 * (2.0 * PI * pl).sin() + 0.5 * j(7, sec),
                    left_arm: Arm {
                        flex: -0.35 * amp * swing + j(0, sec),
                        abduct: 0.08,
                        elbow: 0.25 + 0.1 * (1.0 - swing) + j(1, sec).abs(),
                    },
                    right_arm: Arm {
                        flex: 0.35 * amp * swing + j(2, sec),
                        abduct: 0.08,
                        elbow: 0.25 + 0.1 * (1.0 + swing) + j(3, sec).abs(),
                    },
                    left_ankle: [xl, hip_w, zl],
                    right_ankle: [xr, -hip_w, zr],
                }
            }
            Action::Knock => {
                let cycle = 1.6 / subject.tempo;
                let u = (sec / cycle + clip_phase).rem_euclid(1.0);
                let tap = if u < 0.6 {
                    (2.0 * PI * 3.0 * u / 0.6).sin().max(0.0)
                } else {
                    0.0
                };
                let mut f = standing(0.03);
                f.right_arm = Arm {
                    flex: 1.25 + 0.1 * amp + j(2, sec),
                    abduct: 0.15,
                    elbow: 0.75 + 0.5 * amp * tap + j(3, sec).abs(),
                };
                f
            }
            Action::Lift => {
                let cycle = 2.8 / subject.tempo;
                let u = (sec / cycle + clip_phase).rem_euclid(1.0);
                let depth = 0.5 * (1.0 - (2.0 * PI * u).cos());
                let carry = if u > 0.5 { (PI * (u - 0.5) / 0.5).sin().powi(2) } else { 0.0 };
                let mut f = standing(0.7 * amp * depth);
                f.pelvis_height -= 0.16 * s * depth;
                let arm = Arm {
                    flex: 0.3 + 0.6 * depth + 0.7 * carry,
                    abduct: 0.15,
                    elbow: 0.3 + 1.1 * carry,
                };
                f.left_arm = Arm {
                    flex: arm.flex + j(0, sec),
                    elbow: arm.elbow + j(1, sec).abs(),
                    ..arm
                };
                f.right_arm = Arm {
                    flex: arm.flex + j(2, sec),
                    elbow: arm.elbow + j(3, sec).abs(),
                    ..arm
                };
                f
            }
            Action::Throw => {
                let cycle = 2.2 / subject.tempo;
                let u = (sec / cycle + clip_phase).rem_euclid(1.0);
                let (flex, elbow) = if u < 0.45 {
                    let w = smoothstep(u / 0.45);
                    (0.2 - 1.4 * amp * w, 0.3 + 1.3 * w)
                } else if u < 0.6 {
                    let r = smoothstep((u - 0.45) / 0.15);
                    (0.2 - 1.4 * amp + (1.5 + 1.4 * amp) * r, 1.6 - 1.4 * r)
                } else {
                    let r = smoothstep((u - 0.6) / 0.4);
                    (1.7 - 1.5 * r, 0.2 + 0.1 * r)
                };
                let mut f = standing(0.05);
                f.twist = 0.3 * (flex - 0.2) / 1.5 + j(7, sec);
                f.right_arm = Arm {
                    flex: flex + j(2, sec),
                    abduct: 0.45,
                    elbow: elbow + j(3, sec).abs(),
                };
                f.left_arm.flex = 0.4 * (0.2 - flex).max(0.0) + j(0, sec);
                f
            }
        };
        poses.push(assemble(&frame, &lengths, root, heading));
        // global displacement and rotation
        heading += turn_rate / fps;
        let (dx, dy) = match action {
            Action::Walk => (walk_speed * heading.cos(), walk_speed * heading.sin()),
            _ => (0.05 / fps * drift_dir.cos(), 0.05 / fps * drift_dir.sin()),
        };
        root[0] += dx;
        root[1] += dy;
    }

    let heel_strikes = (action == Action::Walk).then(|| {
        (0..)
            .map(|k| subject.first_strike + k * subject.stride_frames.max(4))
            .take_while(|&f| f < frames)
            .collect()
    });
    MotionClip {
        frames: poses,
        fps,
        subject: subject.id,
        action,
        heel_strikes,
    }
}

/// Sizing of a procedural corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub subjects: u32,
    pub windows_per_action: [usize; 4],
    pub seed: u64,
    /// Upper bound on windows (or gait cycles) per clip.
    pub windows_per_take: usize,
}

impl CorpusSpec {
    pub fn new(subjects: u32, seed: u64) -> Self {
        Self {
            subjects,
            windows_per_action: DEFAULT_WINDOWS_PER_ACTION,
            seed,
            windows_per_take: 8,
        }
    }

    pub fn with_windows(mut self, windows: [usize; 4]) -> Self {
        self.windows_per_action = windows;
        self
    }
}

/// Clips for every subject and action sized so that preprocessing yields the
/// requested window counts.
pub fn build_procedural_corpus(spec: &CorpusSpec) -> Vec<MotionClip> {
    let mut clips = Vec::new();
    let per_take = spec.windows_per_take.max(1);
    for subject in 0..spec.subjects {
        let params = SubjectParams::sample(subject, spec.seed);
        for action in Action::ALL {
            let mut remaining = spec.windows_per_action[action.index()];
            let mut take = 0u64;
            while remaining > 0 {
                let n = remaining.min(per_take);
                let frames = match action {
                    Action::Walk => params.first_strike + n * params.stride_frames + 2,
                    _ => n * CLASSIFICATION_WINDOW,
                };
                let seed = spec
                    .seed
                    .wrapping_add(1_000_003 * u64::from(subject))
                    .wrapping_add(10_007 * action.index() as u64)
                    .wrapping_add(take);
                clips.push(synth_procedural(action, &params, frames, seed));
                remaining -= n;
                take += 1;
            }
        }
    }
    clips
}

/// Normalized 125-frame windows plus the statistics used.
#[derive(Debug, Clone)]
pub struct PreparedDataset {
    pub windows: Vec<MotionWindow>,
    pub stats: NormalizationStats,
}

/// Global-motion removal, then gait segmentation (walks) or fixed
/// windowing (other actions). Coordinates stay in meters.
pub fn segment_corpus(clips: &[MotionClip], skeleton: &SkeletonSpec) -> Vec<MotionWindow> {
    let detector = GaitDetector::default();
    let mut raw = Vec::new();
    for clip in clips {
        let (centred, _) = remove_global_motion(clip, skeleton);
        let windows = match clip.action {
            Action::Walk => segment_gait(&centred, skeleton, CLASSIFICATION_WINDOW, &detector),
            _ => window_actions(&centred, CLASSIFICATION_WINDOW, CLASSIFICATION_WINDOW),
        };
        raw.extend(windows);
    }
    raw
}

/// [`segment_corpus`] followed by corpus normalization.
pub fn prepare_windows(clips: &[MotionClip], skeleton: &SkeletonSpec) -> Result<PreparedDataset, MotionError> {
    let (windows, stats) = normalize_windows(&segment_corpus(clips, skeleton))?;
    Ok(PreparedDataset { windows, stats })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bone_lengths_are_constant() {
        let sk = SkeletonSpec::standard();
        for action in Action::ALL {
            let p = SubjectParams::sample(3, 42);
            let clip = synth_procedural(action, &p, 400, 42);
            let reference = sk.scaled(p.scale);
            for pose in &clip.frames {
                for (l, r) in sk.bone_lengths(pose).iter().zip(reference.reference_lengths()) {
                    assert!((l - r).abs() < 1e-9, "{action}: {l} vs {r}");
                }
            }
        }
    }

    #[test]
    fn deterministic() {
        let p = SubjectParams::sample(1, 42);
        assert_eq!(synth_procedural(Action::Walk, &p, 100, 42), synth_procedural(Action::Walk, &p, 100, 42));
        assert_ne!(synth_procedural(Action::Walk, &p, 100, 42), synth_procedural(Action::Walk, &p, 100, 43));
    }

    #[test]
    fn corpus_yields_requested_window_counts() {
        let spec = CorpusSpec::new(2, 5).with_windows([3, 4, 2, 9]);
        let clips = build_procedural_corpus(&spec);
        let data = prepare_windows(&clips, &SkeletonSpec::standard()).unwrap();
        for subject in 0..2 {
            for action in Action::ALL {
                let n = data
                    .windows
                    .iter()
                    .filter(|w| w.subject == subject && w.action == action)
                    .count();
                assert_eq!(n, spec.windows_per_action[action.index()], "{subject} {action}");
            }
        }
        assert!(data.windows.iter().all(|w| w.len() == CLASSIFICATION_WINDOW));
    }

    #[test]
    fn default_sizing() {
        assert_eq!(CorpusSpec::new(1, 0).windows_per_action, [64, 88, 64, 80]);
    }
}
