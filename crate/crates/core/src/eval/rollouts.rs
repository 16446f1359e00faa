//! Quality measures of generated continuations of real seed windows.

use serde::{Deserialize, Serialize};

use super::angles::{curve_auc, mean_angle_curve};
use super::{EvalError, Result};
use crate::model::Generator;
use crate::motiondata::{Action, MotionClip, MotionWindow, NormalizationStats, Pose, SkeletonSpec};
use crate::synthesis::{bone_length_deviation, denormalize_motion, rollout_batch, seam_discontinuities, RolloutConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutMetrics {
    pub clips: usize,
    pub frames_per_clip: usize,
    /// Mean squared normalized-coordinate jump over all window seams.
    pub seam_blend: f64,
    /// Relative bone-length deviation of generated frames from each seed's
    /// first frame, in meters. A frame's deviation averages over bones.
    pub bone_mean: f64,
    /// Largest per-frame deviation over all clips.
    pub bone_max: f64,
    /// Largest single-bone deviation over all clips and frames.
    pub bone_worst: f64,
    pub all_finite: bool,
    /// Mean absolute joint-angle error against the real continuation, per
    /// generated frame; empty when the reference is too short.
    pub angle_curve: Vec<f64>,
    pub angle_auc: f64,
}

/// Rolls out `iterations` windows from the first `window` frames of each
/// normalized real window and scores the result. The angle curve compares
/// generated frames with the real frames that follow the seed, over
/// `horizon` frames.
pub fn rollout_metrics(
    generator: &Generator,
    windows: &[MotionWindow],
    stats: &NormalizationStats,
    skeleton: &SkeletonSpec,
    iterations: usize,
    horizon: usize,
) -> Result<RolloutMetrics> {
    let t = generator.config.window;
    if windows.is_empty() || windows.iter().any(|w| w.len() < t) {
        return Err(EvalError::Input(format!("need windows of at least {t} frames")));
    }
    let cfg = RolloutConfig {
        window: t,
        iterations,
        drop_seed: false,
    };
    let seeds: Vec<MotionWindow> = windows.iter().map(|w| w.slice(0, t)).collect();
    let actions: Vec<Action> = windows.iter().map(|w| w.action).collect();
    let mut clips = Vec::with_capacity(seeds.len());
    for (s, a) in seeds.chunks(32).zip(actions.chunks(32)) {
        clips.extend(rollout_batch(generator, s, a, &cfg)?);
    }
    let all_finite = clips.iter().all(|c| c.frames.iter().all(Pose::is_finite));
    let seams: Vec<f64> = clips.iter().flat_map(|c| seam_discontinuities(c, t)).collect();
    let seam_blend = if seams.is_empty() { 0.0 } else { seams.iter().sum::<f64>() / seams.len() as f64 };

    let metric: Vec<MotionClip> = clips.iter().map(|c| denormalize_motion(c, stats)).collect();
    let generated: Vec<MotionClip> = metric
        .iter()
        .map(|c| MotionClip {
            frames: c.frames[t..].to_vec(),
            ..c.clone()
        })
        .collect();
    let (mut sum, mut max, mut worst) = (0.0, 0.0_f64, 0.0_f64);
    for (g, m) in generated.iter().zip(&metric) {
        let d = bone_length_deviation(g, &m.frames[0], skeleton);
        sum += d.mean;
        max = max.max(d.max);
        worst = worst.max(d.worst_bone);
    }
    let n = clips.len() as f64;

    let real_len = windows.iter().map(|w| w.len()).min().unwrap_or(0);
    let horizon = horizon.min(real_len - t).min(iterations * t);
    let (angle_curve, angle_auc) = if horizon >= 2 {
        let reference: Vec<MotionClip> = windows
            .iter()
            .map(|w| denormalize_motion(&w.slice(t, t + horizon).into_clip(), stats))
            .collect();
        let curve = mean_angle_curve(&generated, &reference, skeleton, horizon)?;
        let auc = curve_auc(&curve);
        (curve, auc)
    } else {
        (Vec::new(), f64::NAN)
    };
    Ok(RolloutMetrics {
        clips: clips.len(),
        frames_per_clip: cfg.output_len(),
        seam_blend,
        bone_mean: if generated.iter().all(|g| g.is_empty()) { 0.0 } else { sum / n },
        bone_max: max,
        bone_worst: worst,
        all_finite,
        angle_curve,
        angle_auc,
    })
}
