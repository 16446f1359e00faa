//! Subcommand implementations. Each writes its outputs plus one manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use log::info;
use motionforge::eval::{
    curves_csv, curves_svg, folds_csv, rollout_metrics, run_loso, run_stratified_kfold, summarize_pairs,
    ClassifierTrainConfig, Condition, EvalDataset, EvalOptions, FoldReport, FractionSummary,
};
use motionforge::model::{Checkpoint, ControlVector, Generator, ModelConfig};
use motionforge::motiondata::{
    build_procedural_corpus, clip_to_csv, load_clips, prepare_windows, Action, CorpusSpec, MotionWindow,
    NormalizationStats, SkeletonSpec,
};
use motionforge::synthesis::{denormalize_motion, pose_strip_svg, rollout, RolloutConfig};
use motionforge::training::{TrainConfig, TrainOptions, Trainer, TrainingSet};
use serde::Serialize;

use crate::manifest::RunManifest;
use crate::{
    ConditionArg, EvaluateArgs, GenerateArgs, PlotArgs, PreprocessArgs, Protocol, SynthDataArgs, TrainArgs, Widths,
};

pub const SKELETON_FILE: &str = "skeleton.txt";
pub const STATS_FILE: &str = "stats.txt";
pub const WINDOWS_DIR: &str = "windows";
pub const CLIPS_DIR: &str = "clips";
pub const THREADS_ENV: &str = "MOTIONFORGE_THREADS";

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).with_context(|| format!("cannot create output directory {}", path.display()))
}

fn write(path: &Path, text: &str, manifest: &mut RunManifest) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    manifest.output(path)
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

pub fn synth_data(args: &SynthDataArgs) -> Result<()> {
    ensure!(args.subjects > 0, "--subjects must be at least 1");
    ensure!(
        args.windows.len() == 4,
        "--windows takes 4 counts (knock, lift, throw, walk), got {}",
        args.windows.len()
    );
    ensure!(args.windows.iter().any(|&w| w > 0), "--windows must request at least one window");
    let mut manifest = RunManifest::start("synth-data");
    manifest.seed = Some(args.seed);
    manifest.setting("subjects", args.subjects);
    manifest.setting("windows", format!("{:?}", args.windows));
    let clips_dir = args.out.join(CLIPS_DIR);
    create_dir(&clips_dir)?;
    let windows = [args.windows[0], args.windows[1], args.windows[2], args.windows[3]];
    let clips = build_procedural_corpus(&CorpusSpec::new(args.subjects, args.seed).with_windows(windows));
    let mut takes: BTreeMap<(u32, Action), usize> = BTreeMap::new();
    for clip in &clips {
        let take = takes.entry((clip.subject, clip.action)).or_default();
        let name = format!("s{:03}_{}_{:03}.csv", clip.subject, clip.action, *take);
        *take += 1;
        write(&clips_dir.join(name), &clip_to_csv(clip), &mut manifest)?;
    }
    write(&args.out.join(SKELETON_FILE), &SkeletonSpec::standard().to_text(), &mut manifest)?;
    info!("wrote {} clips for {} subjects to {}", clips.len(), args.subjects, args.out.display());
    manifest.finish(&args.out)?;
    Ok(())
}

fn skeleton_for(data: &Path, explicit: Option<&Path>) -> Result<SkeletonSpec> {
    let path = explicit.map(Path::to_path_buf).unwrap_or_else(|| data.join(SKELETON_FILE));
    if path.is_file() {
        Ok(SkeletonSpec::load(&path)?)
    } else if let Some(p) = explicit {
        bail!("skeleton file {} not found", p.display())
    } else {
        Ok(SkeletonSpec::standard())
    }
}

pub fn preprocess(args: &PreprocessArgs) -> Result<()> {
    let mut manifest = RunManifest::start("preprocess");
    let skeleton = skeleton_for(&args.data, args.skeleton.as_deref())?;
    let clip_dir = if args.data.join(CLIPS_DIR).is_dir() {
        args.data.join(CLIPS_DIR)
    } else {
        args.data.clone()
    };
    manifest.input(&clip_dir)?;
    let clips = load_clips(&clip_dir, &skeleton)?;
    ensure!(!clips.is_empty(), "no .csv clips in {}", clip_dir.display());
    let data = prepare_windows(&clips, &skeleton)?;
    ensure!(!data.windows.is_empty(), "no window of the required length could be cut");
    let out = args.out.join(WINDOWS_DIR);
    create_dir(&out)?;
    for (i, w) in data.windows.iter().enumerate() {
        let name = format!("w{i:05}_s{:03}_{}.csv", w.subject, w.action);
        write(&out.join(name), &clip_to_csv(&w.clone().into_clip()), &mut manifest)?;
    }
    write(&args.out.join(STATS_FILE), &data.stats.to_text(), &mut manifest)?;
    write(&args.out.join(SKELETON_FILE), &skeleton.to_text(), &mut manifest)?;
    manifest.setting("windows", data.windows.len());
    info!("{} clips -> {} normalized windows", clips.len(), data.windows.len());
    manifest.finish(&args.out)?;
    Ok(())
}

/// A preprocessed dataset directory.
struct Prepared {
    windows: Vec<MotionWindow>,
    stats: NormalizationStats,
    skeleton: SkeletonSpec,
}

fn load_prepared(dir: &Path, manifest: &mut RunManifest) -> Result<Prepared> {
    let skeleton_path = dir.join(SKELETON_FILE);
    let stats_path = dir.join(STATS_FILE);
    ensure!(
        stats_path.is_file(),
        "{} is not a preprocessed dataset (missing {STATS_FILE}); run `motionforge preprocess` first",
        dir.display()
    );
    let skeleton = if skeleton_path.is_file() {
        SkeletonSpec::load(&skeleton_path)?
    } else {
        SkeletonSpec::standard()
    };
    let stats = NormalizationStats::parse(&read(&stats_path)?, &stats_path.display().to_string())?;
    let windows_dir = dir.join(WINDOWS_DIR);
    manifest.input(dir)?;
    let windows: Vec<MotionWindow> = load_clips(&windows_dir, &skeleton)?
        .into_iter()
        .map(|c| MotionWindow {
            frames: c.frames,
            fps: c.fps,
            action: c.action,
            subject: c.subject,
        })
        .collect();
    ensure!(!windows.is_empty(), "no windows in {}", windows_dir.display());
    ensure!(
        stats.channels() == 3 * skeleton.joint_count(),
        "statistics cover {} channels, skeleton has {} joints",
        stats.channels(),
        skeleton.joint_count()
    );
    Ok(Prepared {
        windows,
        stats,
        skeleton,
    })
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let mut manifest = RunManifest::start("train");
    let mut cfg = TrainConfig::parse(&read(&args.config)?).with_context(|| format!("config {}", args.config.display()))?;
    manifest.config_path = Some(args.config.clone());
    manifest.input(&args.config)?;
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let data = load_prepared(&args.data, &mut manifest)?;
    let mut model = match args.widths {
        Widths::Desk => ModelConfig::desk(),
        Widths::Full => ModelConfig::default(),
    };
    model.joints = data.skeleton.joint_count();
    model.window = cfg.window_t;
    let mut options = TrainOptions {
        loops_per_epoch: args.loops_per_epoch,
        ..TrainOptions::default()
    };
    if args.no_attention {
        model = model.without_attention();
    }
    options.terms.blend = !args.no_blend_loss;
    options.terms.skeleton = !args.no_skeleton_loss;
    let set = TrainingSet::from_windows(&data.windows, cfg.window_t, data.stats.clone(), data.skeleton.clone())?;
    let mut trainer = Trainer::new(model.clone(), cfg.clone(), options, data.stats, data.skeleton)?;

    for line in cfg.to_text().lines() {
        if let Some((k, v)) = line.split_once(" = ") {
            manifest.setting(k, v);
        }
    }
    manifest.seed = Some(cfg.seed);
    manifest.setting("widths", format!("{:?}", args.widths).to_lowercase());
    manifest.setting("attention", !args.no_attention);
    manifest.setting("blend_loss", !args.no_blend_loss);
    manifest.setting("skeleton_loss", !args.no_skeleton_loss);
    manifest.setting("loops_per_epoch", trainer.loops_per_epoch(&set));
    manifest.setting("training_pairs", set.len());

    create_dir(&args.out)?;
    let mut saved: Vec<PathBuf> = Vec::new();
    let ckpt_path = |e: usize| args.out.join(format!("ckpt_{e:04}.bin"));
    if cfg.epochs == 0 {
        let p = ckpt_path(0);
        trainer.checkpoint().save(&p)?;
        saved.push(p);
    }
    let out = args.out.clone();
    let result = trainer.fit(&set, |t| {
        let p = out.join(format!("ckpt_{:04}.bin", t.epoch));
        t.checkpoint().save(&p)?;
        info!(
            "epoch {} step {}: critic {:.4} generator {:.4}",
            t.epoch,
            t.step,
            t.history.epoch_mean("critic", "critic", t.epoch - 1).unwrap_or(f64::NAN),
            t.history
                .epoch_mean("generator", "gen_wasserstein", t.epoch - 1)
                .unwrap_or(f64::NAN)
        );
        saved.push(p);
        Ok(())
    });
    // the loss history is kept even when training diverges
    write(&args.out.join("losses.csv"), &trainer.history.to_csv(), &mut manifest)?;
    for p in &saved {
        manifest.output(p)?;
    }
    manifest.finish(&args.out)?;
    result?;
    Ok(())
}

fn parse_actions(raw: &[String]) -> Result<Vec<Action>> {
    raw.iter()
        .map(|s| s.trim().parse::<Action>().map_err(anyhow::Error::from))
        .collect()
}

pub fn generate(args: &GenerateArgs) -> Result<()> {
    let actions = parse_actions(&args.action)?;
    let mut manifest = RunManifest::start("generate");
    manifest.input(&args.ckpt)?;
    let ckpt = Checkpoint::load(&args.ckpt)?;
    let generator: Generator = ckpt.generator()?;
    let stats = ckpt
        .stats
        .clone()
        .context("checkpoint carries no normalization statistics")?;
    let skeleton = match &ckpt.skeleton {
        Some(text) => SkeletonSpec::parse(text, &args.ckpt.display().to_string())?,
        None => SkeletonSpec::standard(),
    };
    let data = load_prepared(&args.data, &mut manifest)?;
    let (j, t) = (generator.config.joints, generator.config.window);
    ensure!(
        data.skeleton.joint_count() == j && stats.channels() == 3 * j,
        "checkpoint expects {j} joints but the dataset has {}",
        data.skeleton.joint_count()
    );
    let cfg = RolloutConfig {
        window: t,
        iterations: args.iterations,
        drop_seed: args.drop_seed,
    };
    manifest.setting("iterations", args.iterations);
    manifest.setting("drop_seed", args.drop_seed);
    manifest.setting("seed_index", args.seed_index);
    manifest.setting("window", t);
    create_dir(&args.out)?;
    for action in actions {
        let pool: Vec<&MotionWindow> = data.windows.iter().filter(|w| w.action == action).collect();
        ensure!(!pool.is_empty(), "dataset has no `{action}` window to seed from");
        let source = pool[args.seed_index % pool.len()];
        ensure!(
            source.len() >= t,
            "seed windows have {} frames but the checkpoint needs {t}",
            source.len()
        );
        let clip = rollout(&generator, &source.slice(0, t), ControlVector::new(action), &cfg)?;
        let metric = denormalize_motion(&clip, &stats);
        write(&args.out.join(format!("{action}.csv")), &clip_to_csv(&metric), &mut manifest)?;
        let svg = pose_strip_svg(&metric, &skeleton, args.every);
        write(&args.out.join(format!("{action}.svg")), &svg, &mut manifest)?;
        info!("{action}: {} frames", metric.len());
    }
    manifest.finish(&args.out)?;
    Ok(())
}

fn conditions(arg: ConditionArg) -> Vec<Condition> {
    match arg {
        ConditionArg::Real => vec![Condition::Real],
        ConditionArg::Augmented => vec![Condition::RealPlusSynthetic],
        ConditionArg::Synthetic => vec![Condition::SyntheticOnly],
        ConditionArg::Both => vec![Condition::Real, Condition::RealPlusSynthetic],
        ConditionArg::All => vec![Condition::Real, Condition::RealPlusSynthetic, Condition::SyntheticOnly],
    }
}

fn threads() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => {
            let n: usize = v
                .trim()
                .parse()
                .with_context(|| format!("{THREADS_ENV}={v} is not a thread count"))?;
            Ok(n.max(1))
        }
        Err(_) => Ok(1),
    }
}

#[derive(Serialize)]
struct EvaluationReport<'a> {
    protocol: &'a str,
    conditions: Vec<&'static str>,
    fractions: &'a [f64],
    summary: Vec<FractionSummary>,
    folds: &'a [FoldReport],
}

pub fn evaluate(args: &EvaluateArgs) -> Result<()> {
    for &f in &args.fraction {
        ensure!(f > 0.0 && f <= 1.0, "fraction {f} must lie in (0, 1]");
    }
    let conds = conditions(args.condition);
    let mut manifest = RunManifest::start("evaluate");
    let generator = match &args.ckpt {
        Some(p) => {
            manifest.input(p)?;
            Some(Checkpoint::load(p)?)
        }
        None if conds.iter().any(|c| c.needs_generator()) => {
            bail!(
                "condition `{}` needs a generator checkpoint (--ckpt)",
                format!("{:?}", args.condition).to_lowercase()
            )
        }
        None => None,
    };
    let data = load_prepared(&args.data, &mut manifest)?;
    let model = generator.as_ref().map(Checkpoint::generator).transpose()?;
    let seed_len = model.as_ref().map_or(25, |g| g.config.window);
    let dataset = EvalDataset::new(data.windows.clone(), seed_len)?;
    let threads = threads()?;
    let opts = EvalOptions {
        classifier: ClassifierTrainConfig {
            epochs: args.classifier_epochs,
            ..ClassifierTrainConfig::default()
        },
        seed: args.seed,
        threads,
    };
    let protocol = match args.protocol {
        Protocol::Loso => "loso",
        Protocol::Kfold => "kfold",
    };
    manifest.seed = Some(args.seed);
    manifest.setting("protocol", protocol);
    manifest.setting("k", args.k);
    manifest.setting("fractions", format!("{:?}", args.fraction));
    manifest.setting("conditions", conds.iter().map(|c| c.as_str()).collect::<Vec<_>>().join(","));
    manifest.setting("classifier_epochs", args.classifier_epochs);
    manifest.setting("threads", threads);

    let mut reports = Vec::new();
    for &f in &args.fraction {
        let r = match args.protocol {
            Protocol::Loso => run_loso(&dataset, model.as_ref(), f, &conds, &opts)?,
            Protocol::Kfold => run_stratified_kfold(&dataset, model.as_ref(), args.k, f, &conds, &opts)?,
        };
        reports.extend(r);
    }
    create_dir(&args.out)?;
    write(&args.out.join("folds.csv"), &folds_csv(&reports), &mut manifest)?;
    let summary = summarize_pairs(&reports);
    for s in &summary {
        info!(
            "{} fraction {}: macro-F1 {:.3} -> {:.3} ({} wins, {} losses, p = {:.4})",
            s.protocol, s.fraction, s.mean_real_f1, s.mean_augmented_f1, s.wins, s.losses, s.sign_test_p
        );
    }
    let report = EvaluationReport {
        protocol,
        conditions: conds.iter().map(|c| c.as_str()).collect(),
        fractions: &args.fraction,
        summary,
        folds: &reports,
    };
    write(&args.out.join("report.json"), &(serde_json::to_string_pretty(&report)? + "\n"), &mut manifest)?;

    if let (Some(g), Some(ckpt)) = (&model, &generator) {
        let stats = ckpt.stats.clone().unwrap_or_else(|| data.stats.clone());
        let iterations = args.horizon.div_ceil(g.config.window).max(1);
        let m = rollout_metrics(g, &data.windows, &stats, &data.skeleton, iterations, args.horizon)?;
        if !m.angle_curve.is_empty() {
            let curves = [("generated", m.angle_curve.as_slice())];
            write(&args.out.join("curves.csv"), &curves_csv(&curves), &mut manifest)?;
            let svg = curves_svg("mean joint-angle error", "radians", &curves);
            write(&args.out.join("curves.svg"), &svg, &mut manifest)?;
        }
    }
    manifest.finish(&args.out)?;
    Ok(())
}

/// Series of a losses.csv (`phase/component`, values in step order) or a
/// curves.csv (`frame,<name>...`).
fn read_series(text: &str) -> Result<Vec<(String, Vec<f64>)>> {
    let mut lines = text.lines();
    let header = lines.next().context("empty plot input")?;
    let mut series: Vec<(String, Vec<f64>)> = Vec::new();
    if header.trim() == "step,phase,component,value" {
        for (n, line) in lines.enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            ensure!(f.len() == 4, "line {}: expected 4 fields", n + 2);
            let name = format!("{}/{}", f[1], f[2]);
            let v: f64 = f[3].parse().with_context(|| format!("line {}: bad value", n + 2))?;
            match series.iter_mut().find(|(s, _)| *s == name) {
                Some((_, vs)) => vs.push(v),
                None => series.push((name, vec![v])),
            }
        }
    } else if let Some(names) = header.strip_prefix("frame,") {
        series = names.split(',').map(|n| (n.to_string(), Vec::new())).collect();
        for (n, line) in lines.enumerate() {
            for (k, cell) in line.split(',').skip(1).enumerate() {
                if cell.is_empty() {
                    continue;
                }
                let v: f64 = cell.parse().with_context(|| format!("line {}: bad value", n + 2))?;
                series.get_mut(k).context("row wider than header")?.1.push(v);
            }
        }
    } else {
        bail!("unrecognized plot input header `{header}`");
    }
    Ok(series)
}

pub fn plot(args: &PlotArgs) -> Result<()> {
    let mut manifest = RunManifest::start("plot");
    manifest.input(&args.input)?;
    let series = read_series(&read(&args.input)?)?;
    ensure!(!series.is_empty(), "nothing to plot in {}", args.input.display());
    let curves: Vec<(&str, &[f64])> = series.iter().map(|(n, v)| (n.as_str(), v.as_slice())).collect();
    let title = args
        .title
        .clone()
        .unwrap_or_else(|| args.input.file_name().map_or("plot".into(), |n| n.to_string_lossy().into_owned()));
    let dir = args.out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    create_dir(dir)?;
    write(&args.out, &curves_svg(&title, "value", &curves), &mut manifest)?;
    manifest.finish(dir)?;
    Ok(())
}
