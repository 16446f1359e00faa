//! Report files: per-fold CSV, JSON summaries, curve CSV and SVG plots.

use std::fmt::Write as _;

use super::protocol::{FoldReport, FractionSummary};

pub fn folds_csv(reports: &[FoldReport]) -> String {
    let mut s = String::from(
        "protocol,fold,held_out,condition,fraction,real_train,synthetic_train,test,\
         f1_knock,f1_lift,f1_throw,f1_walk,support_knock,support_lift,support_throw,support_walk,macro_f1\n",
    );
    for r in reports {
        let held: Vec<String> = r.held_out.iter().map(u32::to_string).collect();
        let _ = write!(
            s,
            "{},{},{},{},{:?},{},{},{}",
            r.protocol,
            r.fold,
            held.join(";"),
            r.condition.as_str(),
            r.fraction,
            r.real_train,
            r.synthetic_train,
            r.test
        );
        for f in r.scores.per_class_f1 {
            let _ = write!(s, ",{f:?}");
        }
        for n in r.scores.support {
            let _ = write!(s, ",{n}");
        }
        let _ = writeln!(s, ",{:?}", r.scores.macro_f1);
    }
    s
}

pub fn summary_json(summary: &[FractionSummary]) -> String {
    serde_json::to_string_pretty(summary).expect("summary serializes") + "\n"
}

/// `frame,<name>...` with one column per named curve.
pub fn curves_csv(curves: &[(&str, &[f64])]) -> String {
    let mut s = String::from("frame");
    for (name, _) in curves {
        let _ = write!(s, ",{name}");
    }
    s.push('\n');
    let len = curves.iter().map(|(_, c)| c.len()).max().unwrap_or(0);
    for t in 0..len {
        let _ = write!(s, "{t}");
        for (_, c) in curves {
            match c.get(t) {
                Some(v) => {
                    let _ = write!(s, ",{v:?}");
                }
                None => s.push(','),
            }
        }
        s.push('\n');
    }
    s
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Line plot of per-frame curves with a legend.
pub fn curves_svg(title: &str, y_label: &str, curves: &[(&str, &[f64])]) -> String {
    let (w, h, left, right, top, bottom) = (640.0, 400.0, 60.0, 150.0, 30.0, 40.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let len = curves.iter().map(|(_, c)| c.len()).max().unwrap_or(0).max(2);
    let ymax = curves
        .iter()
        .flat_map(|(_, c)| c.iter())
        .copied()
        .filter(|v| v.is_finite())
        .fold(0.0_f64, f64::max)
        .max(1e-9);
    let px = |t: usize| left + pw * t as f64 / (len - 1) as f64;
    let py = |v: f64| top + ph * (1.0 - v / ymax);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{left}" y="18">{}</text>"#, escape(title));
    let _ = writeln!(
        s,
        r#"<path d="M{left},{top} V{} H{}" fill="none" stroke="black"/>"#,
        top + ph,
        left + pw
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{ymax:.3}</text>"#, left - 4.0, top + 4.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">0</text>"#, left - 4.0, top + ph + 4.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">frame</text>"#, left + pw / 2.0, h - 8.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, left + pw, h - 8.0, len - 1);
    let _ = writeln!(
        s,
        r#"<text transform="translate(14 {}) rotate(-90)" text-anchor="middle">{}</text>"#,
        top + ph / 2.0,
        escape(y_label)
    );
    for (k, (name, c)) in curves.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let pts: Vec<String> = c
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .map(|(t, &v)| format!("{:.2},{:.2}", px(t), py(v)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            pts.join(" ")
        );
        let ly = top + 16.0 * k as f64 + 8.0;
        let lx = left + pw + 10.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 20.0,
            lx + 25.0,
            ly + 4.0,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curves_csv_layout() {
        let a = [0.5, 0.25];
        let b = [1.0];
        let csv = curves_csv(&[("full", &a), ("no-attn", &b)]);
        assert_eq!(csv, "frame,full,no-attn\n0,0.5,1.0\n1,0.25,\n");
    }

    #[test]
    fn svg_has_one_polyline_per_curve() {
        let a = [0.1, 0.2, 0.3];
        let svg = curves_svg("t <1>", "rad", &[("x", &a), ("y", &a)]);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("t &lt;1&gt;"));
    }
}
