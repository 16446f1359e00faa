//! Pose-strip rendering: one side-view skeleton drawing every few frames.

use std::fmt::Write as _;

use crate::motiondata::{MotionClip, SkeletonSpec};

const PANEL: f64 = 120.0;
const MARGIN: f64 = 10.0;

/// Draws frames `0, every, 2*every, ...` left to right, projecting onto the
/// `x`/`z` plane (`z` up). Coordinates should be in meters.
pub fn pose_strip_svg(clip: &MotionClip, skeleton: &SkeletonSpec, every: usize) -> String {
    let every = every.max(1);
    let shown: Vec<usize> = (0..clip.len()).step_by(every).collect();
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for &t in &shown {
        for p in &clip.frames[t].joints {
            for (k, v) in [p[0], p[2]].into_iter().enumerate() {
                if v.is_finite() {
                    lo[k] = lo[k].min(v);
                    hi[k] = hi[k].max(v);
                }
            }
        }
    }
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-6);
    let scale = if span.is_finite() { (PANEL - 2.0 * MARGIN) / span } else { 1.0 };
    let width = PANEL * shown.len().max(1) as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{PANEL}" viewBox="0 0 {width} {PANEL}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (panel, &t) in shown.iter().enumerate() {
        let pose = &clip.frames[t];
        let px = |p: &[f64; 3]| PANEL * panel as f64 + MARGIN + (p[0] - lo[0]) * scale;
        let pz = |p: &[f64; 3]| PANEL - MARGIN - (p[2] - lo[1]) * scale;
        let _ = writeln!(s, r#"<g stroke="black" stroke-width="2" stroke-linecap="round"><title>frame {t}</title>"#);
        for &(a, b) in skeleton.bones() {
            let (pa, pb) = (&pose.joints[a], &pose.joints[b]);
            if pa.iter().chain(pb).all(|v| v.is_finite()) {
                let _ = writeln!(
                    s,
                    r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}"/>"#,
                    px(pa),
                    pz(pa),
                    px(pb),
                    pz(pb)
                );
            }
        }
        let _ = writeln!(s, "</g>");
    }
    s.push_str("</svg>\n");
    s
}
