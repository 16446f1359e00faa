//! Action classification on position windows: training, prediction and F1.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EvalError, Result};
use crate::diffcore::{gradients, AdamConfig, AdamState, Tape};
use crate::losses::classification_loss;
use crate::model::{batch_tensor, Classifier, ControlVector, ModelConfig};
use crate::motiondata::{Action, MotionWindow};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierTrainConfig {
    pub channels: [usize; 3],
    pub kernel: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        Self {
            channels: [16, 16, 16],
            kernel: 5,
            epochs: 30,
            batch_size: 16,
            alpha: 0.003,
            beta1: 0.9,
            beta2: 0.999,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierReport {
    pub epoch_losses: Vec<f64>,
    pub train_accuracy: f64,
}

fn check_windows(windows: &[MotionWindow]) -> Result<(usize, usize)> {
    let first = windows.first().ok_or_else(|| EvalError::Input("no windows".into()))?;
    let (len, joints) = (first.len(), first.joint_count());
    if windows.iter().any(|w| w.len() != len || w.joint_count() != joints) || len == 0 {
        return Err(EvalError::Input("windows differ in length or joint count".into()));
    }
    Ok((len, joints))
}

fn inputs(windows: &[&MotionWindow], joints: usize, len: usize) -> Result<crate::diffcore::Tensor> {
    let data: Vec<Vec<f64>> = windows.iter().map(|w| w.to_channels()).collect();
    let refs: Vec<&[f64]> = data.iter().map(Vec::as_slice).collect();
    Ok(batch_tensor(&refs, 3 * joints, len)?)
}

/// Trains a fresh classifier with cross-entropy for `config.epochs` passes
/// over shuffled mini-batches.
pub fn train_action_classifier(
    train: &[MotionWindow],
    config: &ClassifierTrainConfig,
) -> Result<(Classifier, ClassifierReport)> {
    let (len, joints) = check_windows(train)?;
    let mut seen = [false; 4];
    for w in train {
        seen[w.action.index()] = true;
    }
    if seen.iter().filter(|&&s| s).count() < 2 {
        return Err(EvalError::Input("training set contains a single class".into()));
    }
    let model = ModelConfig {
        joints,
        kernel: config.kernel,
        classifier_channels: config.channels,
        ..ModelConfig::desk()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut classifier = Classifier::new(model, &mut rng)?;
    let adam = AdamConfig {
        lr: config.alpha,
        beta1: config.beta1,
        beta2: config.beta2,
        ..AdamConfig::default()
    };
    let mut opt = AdamState::new(adam, classifier.params.sizes());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut batches) = (0.0, 0);
        for chunk in order.chunks(config.batch_size.max(1)) {
            let picked: Vec<&MotionWindow> = chunk.iter().map(|&i| &train[i]).collect();
            let x = inputs(&picked, joints, len)?;
            let actions: Vec<Action> = picked.iter().map(|w| w.action).collect();
            let target = ControlVector::batch(&actions);
            let tape = Tape::new();
            let w = classifier.params.bind(&tape);
            let loss = classification_loss(&classifier.forward(&w, &x)?, &target)?;
            let grads = gradients(&loss, w.tensors(), false)?;
            if !loss.item().is_finite() {
                return Err(EvalError::NonFinite("classifier loss".into()));
            }
            drop(w);
            classifier.params.adam_step(&grads, &mut opt)?;
            total += loss.item();
            batches += 1;
        }
        epoch_losses.push(total / batches as f64);
    }
    let predicted = predict_actions(&classifier, train)?;
    let correct = predicted.iter().zip(train).filter(|(p, w)| **p == w.action).count();
    Ok((
        classifier,
        ClassifierReport {
            epoch_losses,
            train_accuracy: correct as f64 / train.len() as f64,
        },
    ))
}

/// Arg-max action per window.
pub fn predict_actions(classifier: &Classifier, windows: &[MotionWindow]) -> Result<Vec<Action>> {
    if windows.is_empty() {
        return Ok(Vec::new());
    }
    let (len, joints) = check_windows(windows)?;
    let mut out = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(64) {
        let picked: Vec<&MotionWindow> = chunk.iter().collect();
        let probs = classifier.predict(&inputs(&picked, joints, len)?)?;
        for row in probs.data().chunks(4) {
            let best = (0..4).fold(0, |b, k| if row[k] > row[b] { k } else { b });
            out.push(Action::ALL[best]);
        }
    }
    Ok(out)
}

/// Per-class F1 with supports. Classes with neither support nor
/// predictions are left out of the macro average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub per_class_f1: [f64; 4],
    pub support: [usize; 4],
    pub macro_f1: f64,
}

pub fn f1_scores(truth: &[Action], predicted: &[Action]) -> ClassScores {
    let mut tp = [0usize; 4];
    let mut fp = [0usize; 4];
    let mut fnn = [0usize; 4];
    for (&t, &p) in truth.iter().zip(predicted) {
        if t == p {
            tp[t.index()] += 1;
        } else {
            fp[p.index()] += 1;
            fnn[t.index()] += 1;
        }
    }
    let mut per_class_f1 = [0.0; 4];
    let mut support = [0; 4];
    let (mut sum, mut n) = (0.0, 0);
    for k in 0..4 {
        support[k] = tp[k] + fnn[k];
        let denom = 2 * tp[k] + fp[k] + fnn[k];
        if denom > 0 {
            per_class_f1[k] = 2.0 * tp[k] as f64 / denom as f64;
            sum += per_class_f1[k];
            n += 1;
        }
    }
    ClassScores {
        per_class_f1,
        support,
        macro_f1: if n == 0 { 0.0 } else { sum / n as f64 },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motiondata::Pose;
    use Action::*;

    #[test]
    fn f1_hand_computed() {
        let truth = [Knock, Knock, Lift, Walk];
        let pred = [Knock, Lift, Lift, Walk];
        let s = f1_scores(&truth, &pred);
        // knock: tp 1, fn 1 -> 2/3; lift: tp 1, fp 1 -> 2/3; walk: 1
        assert!((s.per_class_f1[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((s.per_class_f1[1] - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(s.per_class_f1[3], 1.0);
        assert_eq!(s.support, [2, 1, 0, 1]);
        assert!((s.macro_f1 - (2.0 / 3.0 + 2.0 / 3.0 + 1.0) / 3.0).abs() < 1e-12);
        assert_eq!(s.support.iter().sum::<usize>(), truth.len());
    }

    fn toy(action: Action, sign: f64, k: usize) -> MotionWindow {
        let frames = (0..20)
            .map(|t| {
                let v = sign * (0.5 + 0.1 * k as f64) * (t as f64 * 0.3).sin();
                Pose::new(vec![[v, 0.0, -v]; 2])
            })
            .collect();
        MotionWindow { frames, fps: 30.0, action, subject: 0 }
    }

    #[test]
    fn overfits_toy_set() {
        let train: Vec<MotionWindow> =
            (0..4).flat_map(|k| [toy(Knock, 1.0, k), toy(Walk, -1.0, k)]).collect();
        let cfg = ClassifierTrainConfig { epochs: 60, batch_size: 4, ..Default::default() };
        let (_, report) = train_action_classifier(&train, &cfg).unwrap();
        assert_eq!(report.train_accuracy, 1.0);
        assert!(report.epoch_losses.last() < report.epoch_losses.first());
    }

    #[test]
    fn deterministic_and_rejects_single_class() {
        let train: Vec<MotionWindow> = (0..4).flat_map(|k| [toy(Knock, 1.0, k), toy(Lift, -1.0, k)]).collect();
        let cfg = ClassifierTrainConfig { epochs: 2, ..Default::default() };
        let (a, _) = train_action_classifier(&train, &cfg).unwrap();
        let (b, _) = train_action_classifier(&train, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        let probs = a.predict(&inputs(&[&train[0]], 2, 20).unwrap()).unwrap();
        assert_eq!(probs.shape(), &[1, 4]);
        let single: Vec<MotionWindow> = (0..3).map(|k| toy(Walk, 1.0, k)).collect();
        assert!(train_action_classifier(&single, &cfg).is_err());
    }
}
