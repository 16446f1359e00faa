//! Motion CSV: a `# subject=<id> action=<label> fps=<int> joints=<J>` header
//! followed by one row of `3J` comma-separated coordinates per frame.

use std::fmt::Write as _;
use std::path::Path;

use super::{Action, MotionClip, MotionError, Pose, SkeletonSpec};

fn parse_header(line: &str, path: &str) -> Result<(u32, Action, f64, usize), MotionError> {
    let err = |msg: String| MotionError::Parse {
        path: path.to_string(),
        line: 1,
        msg,
    };
    let body = line
        .strip_prefix('#')
        .ok_or_else(|| err("missing `#` metadata header".into()))?;
    let (mut subject, mut action, mut fps, mut joints) = (None, None, None, None);
    for field in body.split_whitespace() {
        let (k, v) = field
            .split_once('=')
            .ok_or_else(|| err(format!("malformed header field `{field}`")))?;
        match k {
            "subject" => subject = Some(v.parse::<u32>().map_err(|_| err(format!("bad subject `{v}`")))?),
            "action" => action = Some(v.parse::<Action>().map_err(|e| err(e.to_string()))?),
            "fps" => fps = Some(v.parse::<f64>().map_err(|_| err(format!("bad fps `{v}`")))?),
            "joints" => joints = Some(v.parse::<usize>().map_err(|_| err(format!("bad joint count `{v}`")))?),
            _ => return Err(err(format!("unknown header key `{k}`"))),
        }
    }
    match (subject, action, fps, joints) {
        (Some(s), Some(a), Some(f), Some(j)) if f > 0.0 && j > 0 => Ok((s, a, f, j)),
        _ => Err(err("header needs subject, action, positive fps and joints".into())),
    }
}

/// Parses one clip from CSV text; `origin` names the source in diagnostics.
pub fn parse_clip(text: &str, origin: &str, skeleton: &SkeletonSpec) -> Result<MotionClip, MotionError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| MotionError::Parse {
        path: origin.to_string(),
        line: 1,
        msg: "empty file".into(),
    })?;
    let (subject, action, fps, joints) = parse_header(header.trim(), origin)?;
    if joints != skeleton.joint_count() {
        return Err(MotionError::Parse {
            path: origin.to_string(),
            line: 1,
            msg: format!("header declares {joints} joints, skeleton has {}", skeleton.joint_count()),
        });
    }
    let mut frames = Vec::new();
    for (n, raw) in lines {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| MotionError::Parse {
            path: origin.to_string(),
            line: n + 1,
            msg,
        };
        let values = line
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| err(format!("bad number `{}`", v.trim()))))
            .collect::<Result<Vec<f64>, _>>()?;
        if values.len() != 3 * joints {
            return Err(err(format!("row has {} values, expected {}", values.len(), 3 * joints)));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(err("non-finite coordinate".into()));
        }
        frames.push(Pose::from_flat(&values));
    }
    MotionClip::new(frames, fps, subject, action).map_err(|e| MotionError::Parse {
        path: origin.to_string(),
        line: 1,
        msg: e.to_string(),
    })
}

pub fn load_clip_file(path: &Path, skeleton: &SkeletonSpec) -> Result<MotionClip, MotionError> {
    let text = std::fs::read_to_string(path).map_err(|e| MotionError::io(path, e))?;
    parse_clip(&text, &path.display().to_string(), skeleton)
}

/// Loads every `*.csv` in `dir`, in file-name order.
pub fn load_clips(dir: &Path, skeleton: &SkeletonSpec) -> Result<Vec<MotionClip>, MotionError> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| MotionError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    paths.iter().map(|p| load_clip_file(p, skeleton)).collect()
}

/// CSV text for a clip. Numbers use shortest round-trip formatting.
pub fn clip_to_csv(clip: &MotionClip) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "# subject={} action={} fps={} joints={}",
        clip.subject,
        clip.action,
        clip.fps.round() as i64,
        clip.joint_count()
    );
    for pose in &clip.frames {
        let mut first = true;
        for v in pose.joints.iter().flatten() {
            if !first {
                s.push(',');
            }
            first = false;
            let _ = write!(s, "{v:?}");
        }
        s.push('\n');
    }
    s
}

pub fn write_clip(path: &Path, clip: &MotionClip) -> Result<(), MotionError> {
    std::fs::write(path, clip_to_csv(clip)).map_err(|e| MotionError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_skeleton() -> SkeletonSpec {
        SkeletonSpec::new(vec!["a".into(), "b".into()], vec![(0, 1)], vec![1.0]).unwrap()
    }

    fn csv(rows: usize, cols: usize) -> String {
        let mut s = "# subject=3 action=lift fps=30 joints=2\n".to_string();
        for r in 0..rows {
            let row: Vec<String> = (0..cols).map(|c| format!("{}", r as f64 + c as f64 * 0.1)).collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }

    #[test]
    fn parses_valid_file() {
        let clip = parse_clip(&csv(125, 6), "m.csv", &tiny_skeleton()).unwrap();
        assert_eq!(clip.len(), 125);
        assert_eq!(clip.subject, 3);
        assert_eq!(clip.action, Action::Lift);
        assert_eq!(clip.frames[2].joints[1], [2.3, 2.4, 2.5]);
    }

    #[test]
    fn short_row_cites_line() {
        let mut text = csv(4, 6);
        text.push_str("1,2,3,4,5\n");
        match parse_clip(&text, "m.csv", &tiny_skeleton()).unwrap_err() {
            MotionError::Parse { line, msg, .. } => {
                assert_eq!(line, 6);
                assert!(msg.contains("5 values"), "{msg}");
            }
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn unknown_label_rejected() {
        let text = csv(2, 6).replace("lift", "dance");
        assert!(parse_clip(&text, "m.csv", &tiny_skeleton()).is_err());
    }

    #[test]
    fn empty_directory_is_empty_list() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_clips(dir.path(), &tiny_skeleton()).unwrap().is_empty());
    }

    #[test]
    fn write_then_load_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let clip = MotionClip::new(
            vec![Pose::new(vec![[0.1, 1.0 / 3.0, -2.5e-7], [1e10, 0.0, 7.0]])],
            30.0,
            1,
            Action::Throw,
        )
        .unwrap();
        let p = dir.path().join("c.csv");
        write_clip(&p, &clip).unwrap();
        let back = load_clip_file(&p, &tiny_skeleton()).unwrap();
        assert_eq!(back, clip);
    }
}
