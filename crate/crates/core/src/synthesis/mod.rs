//! Autoregressive rollouts: each generated window seeds the next one.

mod svg;

use thiserror::Error;

use crate::diffcore::Tensor;
use crate::model::{ControlVector, Generator, ModelError};
use crate::motiondata::{Action, MotionClip, MotionWindow, NormalizationStats, Pose, SkeletonSpec};

pub use svg::pose_strip_svg;

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("seed: {0}")]
    Seed(String),
    /// Generation produced non-finite values; `partial` holds every frame up
    /// to the last finite window.
    #[error("non-finite output in rollout iteration {iteration}; kept {} finite frames", partial.first().map_or(0, MotionClip::len))]
    NonFinite { iteration: usize, partial: Vec<MotionClip> },
}

pub type Result<T> = std::result::Result<T, SynthesisError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RolloutConfig {
    /// Frames per window, seed included.
    pub window: usize,
    pub iterations: usize,
    /// Omit the seed frames from the output.
    pub drop_seed: bool,
}

impl RolloutConfig {
    pub fn new(iterations: usize, drop_seed: bool) -> Self {
        Self {
            window: 25,
            iterations,
            drop_seed,
        }
    }

    pub fn output_len(&self) -> usize {
        self.window * (self.iterations + usize::from(!self.drop_seed))
    }
}

/// Rolls out one clip per seed. Seeds are normalized windows of exactly
/// `config.window` frames; `actions[i]` is held constant for seed `i`.
pub fn rollout_batch(
    generator: &Generator,
    seeds: &[MotionWindow],
    actions: &[Action],
    config: &RolloutConfig,
) -> Result<Vec<MotionClip>> {
    let t = config.window;
    let c = generator.config.channels();
    if t != generator.config.window {
        return Err(SynthesisError::Seed(format!(
            "rollout window {t} differs from the generator window {}",
            generator.config.window
        )));
    }
    if seeds.len() != actions.len() || seeds.is_empty() {
        return Err(SynthesisError::Seed(format!(
            "{} seeds for {} actions",
            seeds.len(),
            actions.len()
        )));
    }
    if let Some(bad) = seeds.iter().find(|s| s.len() != t || 3 * s.joint_count() != c) {
        return Err(SynthesisError::Seed(format!(
            "expected {t} frames of {} joints, got {} frames of {}",
            c / 3,
            bad.len(),
            bad.joint_count()
        )));
    }
    let b = seeds.len();
    let mut current = Tensor::new(vec![b, c, t], seeds.iter().flat_map(|s| s.to_channels()).collect())
        .map_err(ModelError::from)?;
    let control = ControlVector::batch(actions);
    let mut frames: Vec<Vec<Pose>> = if config.drop_seed {
        vec![Vec::with_capacity(config.output_len()); b]
    } else {
        seeds.iter().map(|s| s.frames.clone()).collect()
    };
    let finish = |frames: Vec<Vec<Pose>>| -> Vec<MotionClip> {
        frames
            .into_iter()
            .zip(seeds.iter().zip(actions))
            .map(|(f, (s, &a))| MotionClip {
                frames: f,
                fps: s.fps,
                subject: s.subject,
                action: a,
                heel_strikes: None,
            })
            .collect()
    };
    for iteration in 0..config.iterations {
        let next = match generator.generate(&current, &control) {
            Ok(x) if x.all_finite() => x,
            Ok(_) | Err(ModelError::NonFinite { .. }) => {
                return Err(SynthesisError::NonFinite {
                    iteration,
                    partial: finish(frames),
                })
            }
            Err(e) => return Err(e.into()),
        };
        for (i, f) in frames.iter_mut().enumerate() {
            f.extend(MotionWindow::frames_from_channels(&next.data()[i * c * t..(i + 1) * c * t], c, t));
        }
        current = next;
    }
    Ok(finish(frames))
}

/// Single-seed convenience wrapper around [`rollout_batch`].
pub fn rollout(
    generator: &Generator,
    seed: &MotionWindow,
    control: ControlVector,
    config: &RolloutConfig,
) -> Result<MotionClip> {
    let mut out = rollout_batch(generator, std::slice::from_ref(seed), &[control.action()], config)?;
    Ok(out.remove(0))
}

/// Maps normalized coordinates back to meters.
pub fn denormalize_motion(clip: &MotionClip, stats: &NormalizationStats) -> MotionClip {
    stats.invert_clip(clip)
}

/// Mean squared coordinate jump across each window boundary (frame
/// `k*window - 1` to `k*window`), the rollout analogue of the blend loss.
pub fn seam_discontinuities(clip: &MotionClip, window: usize) -> Vec<f64> {
    (1..)
        .map(|k| k * window)
        .take_while(|&s| s < clip.len())
        .map(|s| {
            let (a, b) = (clip.frames[s - 1].flat(), clip.frames[s].flat());
            a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
        })
        .collect()
}

/// Relative bone-length deviation `|l - l_ref| / l_ref` over all frames and
/// bones of `clip` (in meters), against the bone lengths of `reference`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoneDeviation {
    /// Mean over frames of the per-frame deviation.
    pub mean: f64,
    /// Largest per-frame deviation.
    pub max: f64,
    /// Largest single-bone relative error over all frames.
    pub worst_bone: f64,
}

/// A frame's deviation is the mean over bones of `|l - l_ref| / l_ref`.
pub fn bone_length_deviation(clip: &MotionClip, reference: &Pose, skeleton: &SkeletonSpec) -> BoneDeviation {
    let reference = skeleton.bone_lengths(reference);
    let (mut sum, mut max, mut worst) = (0.0, 0.0_f64, 0.0_f64);
    for pose in &clip.frames {
        let errs: Vec<f64> = skeleton
            .bone_lengths(pose)
            .iter()
            .zip(&reference)
            .map(|(l, r)| (l - r).abs() / r.max(1e-9))
            .collect();
        let frame = errs.iter().sum::<f64>() / errs.len().max(1) as f64;
        sum += frame;
        max = max.max(frame);
        worst = errs.iter().fold(worst, |m, &e| m.max(e));
    }
    let n = clip.frames.len();
    BoneDeviation {
        mean: if n == 0 { 0.0 } else { sum / n as f64 },
        max,
        worst_bone: worst,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::motiondata::{build_procedural_corpus, prepare_windows, CorpusSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn generator() -> Generator {
        Generator::new(ModelConfig::desk(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap()
    }

    fn seed() -> (MotionWindow, NormalizationStats) {
        let clips = build_procedural_corpus(&CorpusSpec::new(1, 2).with_windows([1, 1, 1, 1]));
        let data = prepare_windows(&clips, &SkeletonSpec::standard()).unwrap();
        (data.windows[3].slice(0, 25), data.stats)
    }

    #[test]
    fn frame_counts() {
        let (s, _) = seed();
        let g = generator();
        let walk = ControlVector::new(Action::Walk);
        assert_eq!(rollout(&g, &s, walk, &RolloutConfig::new(4, false)).unwrap().len(), 125);
        assert_eq!(rollout(&g, &s, walk, &RolloutConfig::new(4, true)).unwrap().len(), 100);
        let echo = rollout(&g, &s, walk, &RolloutConfig::new(0, false)).unwrap();
        assert_eq!(echo.frames, s.frames);
    }

    #[test]
    fn long_rollout_stays_finite() {
        let (s, _) = seed();
        let clip = rollout(&generator(), &s, ControlVector::new(Action::Knock), &RolloutConfig::new(40, false)).unwrap();
        assert_eq!(clip.len(), 1025);
        assert!(clip.frames.iter().all(Pose::is_finite));
    }

    #[test]
    fn deterministic_and_batch_consistent() {
        let (s, _) = seed();
        let g = generator();
        let cfg = RolloutConfig::new(3, true);
        let a = rollout(&g, &s, ControlVector::new(Action::Lift), &cfg).unwrap();
        let b = rollout_batch(&g, &[s.clone(), s.clone()], &[Action::Throw, Action::Lift], &cfg).unwrap();
        assert_eq!(a.frames, b[1].frames);
        assert_eq!(b[1].action, Action::Lift);
    }

    #[test]
    fn rejects_bad_seed() {
        let (s, _) = seed();
        let short = s.slice(0, 10);
        let err = rollout(&generator(), &short, ControlVector::new(Action::Walk), &RolloutConfig::new(1, false));
        assert!(matches!(err, Err(SynthesisError::Seed(_))));
    }

    #[test]
    fn non_finite_output_truncates() {
        let (s, _) = seed();
        let mut g = generator();
        let e = g.params.entries()[0].clone();
        g.params.set(&e.name, vec![f64::NAN; e.data.len()]).unwrap();
        match rollout(&g, &s, ControlVector::new(Action::Walk), &RolloutConfig::new(3, false)) {
            Err(SynthesisError::NonFinite { iteration, partial }) => {
                assert_eq!(iteration, 0);
                assert_eq!(partial[0].frames, s.frames);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn denormalize_inverts_normalization() {
        let (s, stats) = seed();
        let clip = s.clone().into_clip();
        let back = denormalize_motion(&clip, &stats);
        for (p, q) in back.frames.iter().zip(&clip.frames) {
            let renorm = stats.apply(p);
            for (a, b) in renorm.flat().iter().zip(q.flat()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
        let zero = MotionClip {
            frames: vec![Pose::from_flat(&vec![0.0; 48])],
            ..clip
        };
        assert_eq!(denormalize_motion(&zero, &stats).frames[0].flat(), stats.mean);
    }

    #[test]
    fn seams_and_bone_deviation() {
        let sk = SkeletonSpec::standard();
        let p = Pose::new(vec![[0.0; 3]; 16]);
        let q = Pose::from_flat(&vec![1.0; 48]);
        let clip = MotionClip::new(vec![p.clone(), p.clone(), q.clone(), q], 30.0, 0, Action::Walk).unwrap();
        assert_eq!(seam_discontinuities(&clip, 2), vec![1.0]);
        assert_eq!(seam_discontinuities(&clip, 1), vec![0.0, 1.0, 0.0]);
        let rest = crate::motiondata::synth_procedural(
            Action::Walk,
            &crate::motiondata::SubjectParams::sample(0, 1),
            4,
            1,
        );
        let d = bone_length_deviation(&rest, &rest.frames[0], &sk);
        assert!(d.worst_bone < 1e-9, "{d:?}");
    }
}
