//! Cross-validation protocols and the fractional-data augmentation study.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};

use super::classify::{f1_scores, predict_actions, train_action_classifier, ClassScores, ClassifierTrainConfig};
use super::{EvalError, Result};
use crate::model::Generator;
use crate::motiondata::{Action, MotionWindow};
use crate::synthesis::{rollout_batch, RolloutConfig};

/// Normalized windows whose first `seed_len` frames serve as generation
/// seeds; the classifier sees the remaining frames.
#[derive(Debug, Clone)]
pub struct EvalDataset {
    pub windows: Vec<MotionWindow>,
    pub seed_len: usize,
}

impl EvalDataset {
    pub fn new(windows: Vec<MotionWindow>, seed_len: usize) -> Result<Self> {
        let first = windows.first().ok_or_else(|| EvalError::Input("empty dataset".into()))?;
        let len = first.len();
        if windows.iter().any(|w| w.len() != len) {
            return Err(EvalError::Input("windows differ in length".into()));
        }
        if seed_len == 0 || len <= seed_len || !(len - seed_len).is_multiple_of(seed_len) {
            return Err(EvalError::Input(format!(
                "window length {len} must be a multiple of the seed length {seed_len} plus one seed"
            )));
        }
        Ok(Self { windows, seed_len })
    }

    /// The classifier's view of window `i`: seed frames dropped.
    pub fn classification_window(&self, i: usize) -> MotionWindow {
        let w = &self.windows[i];
        w.slice(self.seed_len, w.len())
    }

    pub fn subjects(&self) -> Vec<u32> {
        let mut s: Vec<u32> = self.windows.iter().map(|w| w.subject).collect();
        s.sort_unstable();
        s.dedup();
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Condition {
    Real,
    RealPlusSynthetic,
    SyntheticOnly,
}

impl Condition {
    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Real => "real",
            Condition::RealPlusSynthetic => "real+synthetic",
            Condition::SyntheticOnly => "synthetic-only",
        }
    }

    pub fn needs_generator(self) -> bool {
        self != Condition::Real
    }
}

/// Train/test split by window index.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldSpec {
    pub id: usize,
    pub held_out: Vec<u32>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// One fold per subject.
pub fn loso_folds(data: &EvalDataset) -> Result<Vec<FoldSpec>> {
    let subjects = data.subjects();
    if subjects.len() < 2 {
        return Err(EvalError::Input(format!("LOSO needs >= 2 subjects, found {}", subjects.len())));
    }
    Ok(subjects
        .iter()
        .enumerate()
        .map(|(id, &s)| {
            let (test, train) = (0..data.windows.len()).partition(|&i| data.windows[i].subject == s);
            FoldSpec {
                id,
                held_out: vec![s],
                train,
                test,
            }
        })
        .collect())
}

/// Shuffles each class and deals it round-robin over `k` folds, so every
/// fold holds within one sample of each class's exact share.
pub fn stratified_kfold(data: &EvalDataset, k: usize, seed: u64) -> Result<Vec<FoldSpec>> {
    if k < 2 {
        return Err(EvalError::Input(format!("K = {k}, must be >= 2")));
    }
    let by_class = indices_by_class(&data.windows, &(0..data.windows.len()).collect::<Vec<_>>());
    let smallest = by_class.iter().filter(|c| !c.is_empty()).map(Vec::len).min().unwrap_or(0);
    if k > smallest {
        return Err(EvalError::Input(format!("K = {k} exceeds the smallest class count {smallest}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tests = vec![Vec::new(); k];
    // continue dealing where the previous class stopped, balancing fold sizes
    let mut next = 0;
    for mut class in by_class {
        class.shuffle(&mut rng);
        for i in class {
            tests[next % k].push(i);
            next += 1;
        }
    }
    Ok(tests
        .into_iter()
        .enumerate()
        .map(|(id, mut test)| {
            test.sort_unstable();
            let train = (0..data.windows.len()).filter(|i| test.binary_search(i).is_err()).collect();
            FoldSpec {
                id,
                held_out: Vec::new(),
                train,
                test,
            }
        })
        .collect())
}

fn indices_by_class(windows: &[MotionWindow], indices: &[usize]) -> [Vec<usize>; 4] {
    let mut out: [Vec<usize>; 4] = Default::default();
    for &i in indices {
        out[windows[i].action.index()].push(i);
    }
    out
}

/// Keeps `round(fraction * n_c)` random windows of each class present.
/// `None` when some present class would keep no window.
pub fn stratified_subsample(
    windows: &[MotionWindow],
    indices: &[usize],
    fraction: f64,
    rng: &mut ChaCha8Rng,
) -> Option<Vec<usize>> {
    let mut out = Vec::new();
    for mut class in indices_by_class(windows, indices) {
        if class.is_empty() {
            continue;
        }
        let keep = (fraction * class.len() as f64).round() as usize;
        if keep == 0 {
            return None;
        }
        class.shuffle(rng);
        class.truncate(keep);
        out.extend(class);
    }
    out.sort_unstable();
    Some(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub classifier: ClassifierTrainConfig,
    pub seed: u64,
    /// Folds evaluated concurrently.
    pub threads: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            classifier: ClassifierTrainConfig::default(),
            seed: 0,
            threads: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub protocol: String,
    pub fold: usize,
    pub held_out: Vec<u32>,
    pub condition: Condition,
    pub fraction: f64,
    pub real_train: usize,
    pub synthetic_train: usize,
    pub test: usize,
    pub scores: ClassScores,
}

/// One generated window per seed window, same action, seed frames dropped.
pub fn synthesize_windows(generator: &Generator, data: &EvalDataset, seeds: &[usize]) -> Result<Vec<MotionWindow>> {
    let t = data.seed_len;
    let len = data.windows[0].len();
    let cfg = RolloutConfig {
        window: t,
        iterations: (len - t) / t,
        drop_seed: true,
    };
    let mut out = Vec::with_capacity(seeds.len());
    for chunk in seeds.chunks(32) {
        let s: Vec<MotionWindow> = chunk.iter().map(|&i| data.windows[i].slice(0, t)).collect();
        let actions: Vec<Action> = s.iter().map(|w| w.action).collect();
        for clip in rollout_batch(generator, &s, &actions, &cfg)? {
            out.push(MotionWindow {
                frames: clip.frames,
                fps: clip.fps,
                action: clip.action,
                subject: clip.subject,
            });
        }
    }
    Ok(out)
}

fn fold_seed(base: u64, fold: usize, fraction: f64) -> u64 {
    base ^ (fold as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ fraction.to_bits()
}

/// Trains and scores one classifier per condition on one fold. All
/// conditions share the same real subset and classifier initialization.
pub fn evaluate_fold(
    data: &EvalDataset,
    fold: &FoldSpec,
    protocol: &str,
    generator: Option<&Generator>,
    fraction: f64,
    conditions: &[Condition],
    opts: &EvalOptions,
) -> Result<Option<Vec<FoldReport>>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(EvalError::Input(format!("fraction {fraction} must lie in (0, 1]")));
    }
    let seed = fold_seed(opts.seed, fold.id, fraction);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let Some(subset) = stratified_subsample(&data.windows, &fold.train, fraction, &mut rng) else {
        warn!("{protocol} fold {}: fraction {fraction} leaves a class empty; skipped", fold.id);
        return Ok(None);
    };
    let real: Vec<MotionWindow> = subset.iter().map(|&i| data.classification_window(i)).collect();
    let synthetic = if conditions.iter().any(|c| c.needs_generator()) {
        let g = generator.ok_or_else(|| EvalError::Input("condition requires a generator".into()))?;
        synthesize_windows(g, data, &subset)?
    } else {
        Vec::new()
    };
    let test: Vec<MotionWindow> = fold.test.iter().map(|&i| data.classification_window(i)).collect();
    let truth: Vec<Action> = test.iter().map(|w| w.action).collect();
    let cfg = ClassifierTrainConfig {
        seed,
        ..opts.classifier.clone()
    };
    let mut reports = Vec::new();
    for &condition in conditions {
        let train: Vec<MotionWindow> = match condition {
            Condition::Real => real.clone(),
            Condition::RealPlusSynthetic => real.iter().chain(&synthetic).cloned().collect(),
            Condition::SyntheticOnly => synthetic.clone(),
        };
        let (classifier, _) = train_action_classifier(&train, &cfg)?;
        let predicted = predict_actions(&classifier, &test)?;
        reports.push(FoldReport {
            protocol: protocol.to_string(),
            fold: fold.id,
            held_out: fold.held_out.clone(),
            condition,
            fraction,
            real_train: if condition == Condition::SyntheticOnly { 0 } else { real.len() },
            synthetic_train: if condition == Condition::Real { 0 } else { synthetic.len() },
            test: test.len(),
            scores: f1_scores(&truth, &predicted),
        });
    }
    Ok(Some(reports))
}

/// Evaluates folds on up to `opts.threads` threads; output keeps fold order
/// and omits skipped folds.
pub fn run_folds(
    data: &EvalDataset,
    folds: &[FoldSpec],
    protocol: &str,
    generator: Option<&Generator>,
    fraction: f64,
    conditions: &[Condition],
    opts: &EvalOptions,
) -> Result<Vec<FoldReport>> {
    if conditions.iter().any(|c| c.needs_generator()) && generator.is_none() {
        return Err(EvalError::Input("condition requires a generator checkpoint".into()));
    }
    let results: Mutex<Vec<Option<Result<Option<Vec<FoldReport>>>>>> = Mutex::new((0..folds.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let work = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        if i >= folds.len() {
            break;
        }
        let r = evaluate_fold(data, &folds[i], protocol, generator, fraction, conditions, opts);
        results.lock().expect("no poisoned lock")[i] = Some(r);
    };
    let threads = opts.threads.clamp(1, folds.len().max(1));
    if threads == 1 {
        work();
    } else {
        std::thread::scope(|s| {
            for _ in 0..threads {
                s.spawn(work);
            }
        });
    }
    let mut out = Vec::new();
    for r in results.into_inner().expect("no poisoned lock") {
        if let Some(reports) = r.expect("every fold visited")? {
            out.extend(reports);
        }
    }
    Ok(out)
}

pub fn run_loso(
    data: &EvalDataset,
    generator: Option<&Generator>,
    fraction: f64,
    conditions: &[Condition],
    opts: &EvalOptions,
) -> Result<Vec<FoldReport>> {
    run_folds(data, &loso_folds(data)?, "loso", generator, fraction, conditions, opts)
}

pub fn run_stratified_kfold(
    data: &EvalDataset,
    generator: Option<&Generator>,
    k: usize,
    fraction: f64,
    conditions: &[Condition],
    opts: &EvalOptions,
) -> Result<Vec<FoldReport>> {
    let folds = stratified_kfold(data, k, opts.seed)?;
    run_folds(data, &folds, "kfold", generator, fraction, conditions, opts)
}

/// One-sided sign test: probability of at least `wins` successes in
/// `wins + losses` fair coin flips. Ties are discarded beforehand.
pub fn sign_test(wins: usize, losses: usize) -> f64 {
    let n = (wins + losses) as u64;
    if n == 0 || wins == 0 {
        return 1.0;
    }
    let b = Binomial::new(0.5, n).expect("valid binomial");
    b.sf(wins as u64 - 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedFold {
    pub fold: usize,
    pub held_out: Vec<u32>,
    pub real_f1: f64,
    pub augmented_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractionSummary {
    pub protocol: String,
    pub fraction: f64,
    pub folds: Vec<PairedFold>,
    pub mean_real_f1: f64,
    pub mean_augmented_f1: f64,
    pub mean_delta: f64,
    /// `mean_delta / mean_real_f1`.
    pub relative_improvement: f64,
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    pub sign_test_p: f64,
}

/// Pairs real-only and real+synthetic reports of the same folds.
pub fn summarize_pairs(reports: &[FoldReport]) -> Vec<FractionSummary> {
    let mut fractions: Vec<(String, f64)> = Vec::new();
    for r in reports {
        if !fractions.iter().any(|(p, f)| *p == r.protocol && *f == r.fraction) {
            fractions.push((r.protocol.clone(), r.fraction));
        }
    }
    fractions
        .into_iter()
        .map(|(protocol, fraction)| {
            let pick = |c: Condition| {
                reports
                    .iter()
                    .filter(|r| r.protocol == protocol && r.fraction == fraction && r.condition == c)
                    .collect::<Vec<_>>()
            };
            let augmented = pick(Condition::RealPlusSynthetic);
            let folds: Vec<PairedFold> = pick(Condition::Real)
                .into_iter()
                .filter_map(|r| {
                    let a = augmented.iter().find(|a| a.fold == r.fold)?;
                    Some(PairedFold {
                        fold: r.fold,
                        held_out: r.held_out.clone(),
                        real_f1: r.scores.macro_f1,
                        augmented_f1: a.scores.macro_f1,
                    })
                })
                .collect();
            let n = folds.len().max(1) as f64;
            let mean_real_f1 = folds.iter().map(|f| f.real_f1).sum::<f64>() / n;
            let mean_augmented_f1 = folds.iter().map(|f| f.augmented_f1).sum::<f64>() / n;
            let wins = folds.iter().filter(|f| f.augmented_f1 > f.real_f1).count();
            let losses = folds.iter().filter(|f| f.augmented_f1 < f.real_f1).count();
            let mean_delta = mean_augmented_f1 - mean_real_f1;
            FractionSummary {
                protocol,
                fraction,
                mean_real_f1,
                mean_augmented_f1,
                mean_delta,
                relative_improvement: if mean_real_f1 > 0.0 { mean_delta / mean_real_f1 } else { 0.0 },
                wins,
                losses,
                ties: folds.len() - wins - losses,
                sign_test_p: sign_test(wins, losses),
                folds,
            }
        })
        .collect()
}

/// Real-only versus real+synthetic LOSO at each training fraction.
pub fn augmentation_experiment(
    data: &EvalDataset,
    generator: &Generator,
    fractions: &[f64],
    opts: &EvalOptions,
) -> Result<(Vec<FoldReport>, Vec<FractionSummary>)> {
    let conditions = [Condition::Real, Condition::RealPlusSynthetic];
    let mut reports = Vec::new();
    for &f in fractions {
        reports.extend(run_loso(data, Some(generator), f, &conditions, opts)?);
    }
    let summary = summarize_pairs(&reports);
    Ok((reports, summary))
}
