//! Gait-cycle segmentation: left-heel strikes are local minima of heel
//! height below an adaptive threshold, separated by a refractory period.

use log::warn;

use super::{MotionClip, MotionWindow, Pose, SkeletonSpec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaitDetector {
    /// Candidate minima must lie below `min + threshold_frac * (max - min)`.
    pub threshold_frac: f64,
    /// Refractory period as a fraction of the expected stride period.
    pub refractory_frac: f64,
    /// Stride period in frames; estimated by autocorrelation when `None`.
    pub expected_period: Option<f64>,
}

impl Default for GaitDetector {
    fn default() -> Self {
        Self {
            threshold_frac: 0.35,
            refractory_frac: 0.4,
            expected_period: None,
        }
    }
}

/// First autocorrelation peak in 0.4 s..2.5 s, falling back to 1.1 s.
fn estimate_period(signal: &[f64], fps: f64) -> f64 {
    let n = signal.len();
    let mean = signal.iter().sum::<f64>() / n as f64;
    let centred: Vec<f64> = signal.iter().map(|v| v - mean).collect();
    let r0: f64 = centred.iter().map(|v| v * v).sum();
    let fallback = 1.1 * fps;
    if r0 <= 0.0 {
        return fallback;
    }
    let lo = ((0.4 * fps) as usize).max(2);
    let hi = ((2.5 * fps) as usize).min(n.saturating_sub(2));
    let ac = |lag: usize| -> f64 { (0..n - lag).map(|i| centred[i] * centred[i + lag]).sum::<f64>() / r0 };
    let mut prev = ac(lo.saturating_sub(1).max(1));
    let mut cur = ac(lo);
    for lag in lo..hi {
        let next = ac(lag + 1);
        if cur > prev && cur >= next && cur > 0.3 {
            return lag as f64;
        }
        prev = cur;
        cur = next;
    }
    fallback
}

/// Frames of heel strikes in a heel-height signal.
pub fn detect_heel_strikes(height: &[f64], fps: f64, detector: &GaitDetector) -> Vec<usize> {
    if height.len() < 3 {
        return Vec::new();
    }
    let (lo, hi) = height
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let threshold = lo + detector.threshold_frac * (hi - lo);
    let period = detector
        .expected_period
        .unwrap_or_else(|| estimate_period(height, fps));
    let refractory = detector.refractory_frac * period;
    let mut strikes: Vec<usize> = Vec::new();
    for t in 1..height.len() - 1 {
        let h = height[t];
        if !(h <= height[t - 1] && h < height[t + 1] && h < threshold) {
            continue;
        }
        match strikes.last().copied() {
            Some(last) if ((t - last) as f64) < refractory => {
                if h < height[last] {
                    *strikes.last_mut().unwrap() = t;
                }
            }
            _ => strikes.push(t),
        }
    }
    strikes
}

/// Linear time-resampling of frames `start..=end` to exactly `target_len` frames.
pub fn resample_span(frames: &[Pose], start: usize, end: usize, target_len: usize) -> Vec<Pose> {
    let span = (end - start) as f64;
    (0..target_len)
        .map(|k| {
            let u = if target_len > 1 {
                start as f64 + span * k as f64 / (target_len - 1) as f64
            } else {
                start as f64
            };
            let i0 = (u.floor() as usize).min(end);
            let i1 = (i0 + 1).min(end);
            let w = u - i0 as f64;
            let (a, b) = (&frames[i0], &frames[i1]);
            Pose::new(
                a.joints
                    .iter()
                    .zip(&b.joints)
                    .map(|(p, q)| {
                        [
                            p[0] + w * (q[0] - p[0]),
                            p[1] + w * (q[1] - p[1]),
                            p[2] + w * (q[2] - p[2]),
                        ]
                    })
                    .collect(),
            )
        })
        .collect()
}

/// Splits a walking clip into gait cycles (consecutive left-heel strikes),
/// each resampled to `target_len` frames.
pub fn segment_gait(clip: &MotionClip, skeleton: &SkeletonSpec, target_len: usize, detector: &GaitDetector) -> Vec<MotionWindow> {
    let heel = skeleton.joint_index("l_ankle").unwrap_or(skeleton.joint_count() - 1);
    let height: Vec<f64> = clip.frames.iter().map(|p| p.joints[heel][2]).collect();
    let strikes = detect_heel_strikes(&height, clip.fps, detector);
    if strikes.len() < 2 {
        warn!(
            "subject {} {}: {} heel strike(s) detected, no gait cycles",
            clip.subject,
            clip.action,
            strikes.len()
        );
        return Vec::new();
    }
    strikes
        .windows(2)
        .map(|w| MotionWindow {
            frames: resample_span(&clip.frames, w[0], w[1], target_len),
            fps: clip.fps,
            action: clip.action,
            subject: clip.subject,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motiondata::{remove_global_motion, synth_procedural, Action, SubjectParams};

    #[test]
    fn walk_with_known_strikes_gives_two_cycles() {
        let sk = SkeletonSpec::standard();
        let mut params = SubjectParams::sample(0, 1);
        params.stride_frames = 60;
        params.first_strike = 10;
        let clip = synth_procedural(Action::Walk, &params, 150, 3);
        assert_eq!(clip.heel_strikes.as_deref(), Some(&[10usize, 70, 130][..]));
        let (centred, _) = remove_global_motion(&clip, &sk);
        let height: Vec<f64> = centred.frames.iter().map(|p| p.joints[12][2]).collect();
        assert_eq!(detect_heel_strikes(&height, 30.0, &GaitDetector::default()), vec![10, 70, 130]);
        let windows = segment_gait(&centred, &sk, 125, &GaitDetector::default());
        assert_eq!(windows.len(), 2);
        assert!(windows.iter().all(|w| w.len() == 125));
        // cycle boundaries land on the strike frames
        assert_eq!(windows[0].frames[0], centred.frames[10]);
        assert_eq!(windows[0].frames[124], centred.frames[70]);
        assert_eq!(windows[1].frames[124], centred.frames[130]);
    }

    #[test]
    fn single_strike_gives_nothing() {
        let sk = SkeletonSpec::standard();
        let mut params = SubjectParams::sample(0, 1);
        params.stride_frames = 60;
        params.first_strike = 10;
        let clip = synth_procedural(Action::Walk, &params, 50, 3);
        assert!(segment_gait(&clip, &sk, 125, &GaitDetector::default()).is_empty());
    }

    #[test]
    fn exact_length_span_is_identity() {
        let clip = synth_procedural(Action::Knock, &SubjectParams::sample(1, 2), 140, 4);
        let out = resample_span(&clip.frames, 5, 129, 125);
        for (a, b) in out.iter().zip(&clip.frames[5..130]) {
            for (x, y) in a.flat().iter().zip(b.flat()) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
