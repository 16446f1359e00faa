//! Adversarial training: interleaved critic, classifier and autoregressive
//! generator updates.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::diffcore::ops::{broadcast_to, concat};
use crate::diffcore::{gradients, AdamConfig, AdamState, Tape, Tensor, TensorError};
use crate::losses::{
    blend_loss, classification_loss, critic_loss, first_frame, generator_loss, gradient_penalty, last_frame,
    sample_epsilon, skeleton_loss, GeneratorTerms, LossBreakdown,
};
use crate::model::{Checkpoint, Classifier, Critic, Generator, ModelConfig, ModelError};
use crate::motiondata::{NormalizationStats, SkeletonSpec};

mod config;
mod data;

pub use config::{TrainConfig, CONFIG_KEYS};
pub use data::{Batch, TrainPair, TrainingSet};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("config: {0}")]
    Config(String),
    #[error("config: missing key `{0}`")]
    MissingKey(String),
    #[error("data: {0}")]
    Data(String),
    #[error("non-finite {phase} loss at step {step}; update skipped")]
    NonFinite { phase: &'static str, step: u64 },
    #[error("training halted: non-finite losses in two consecutive outer loops (step {step})")]
    Diverged { step: u64 },
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Model(ModelError::Tensor(e))
    }
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub phase: &'static str,
    pub component: &'static str,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossHistory {
    pub records: Vec<LossRecord>,
    /// Step counter at the end of each completed epoch.
    pub epoch_ends: Vec<u64>,
}

impl LossHistory {
    fn push(&mut self, step: u64, phase: &'static str, b: &LossBreakdown) {
        for &(component, value) in &b.components {
            self.records.push(LossRecord {
                step,
                phase,
                component,
                value,
            });
        }
    }

    /// `(step, value)` pairs of one series.
    pub fn series(&self, phase: &str, component: &str) -> Vec<(u64, f64)> {
        self.records
            .iter()
            .filter(|r| r.phase == phase && r.component == component)
            .map(|r| (r.step, r.value))
            .collect()
    }

    /// Mean of a series within epoch `e` (0-based).
    pub fn epoch_mean(&self, phase: &str, component: &str, e: usize) -> Option<f64> {
        let end = *self.epoch_ends.get(e)?;
        let start = if e == 0 { 0 } else { self.epoch_ends[e - 1] };
        let v: Vec<f64> = self
            .series(phase, component)
            .into_iter()
            .filter(|&(s, _)| s > start && s <= end)
            .map(|(_, v)| v)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// CSV with columns `step,phase,component,value`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,phase,component,value\n");
        for r in &self.records {
            let _ = writeln!(s, "{},{},{},{:?}", r.step, r.phase, r.component, r.value);
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Critic,
    Classifier,
    Generator { iteration: usize },
}

/// Instrumentation of the update schedule.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Counters {
    pub outer_loops: u64,
    pub critic_updates: u64,
    pub classifier_updates: u64,
    pub generator_steps: u64,
    pub generator_iterations: u64,
    pub generator_forward_calls: u64,
    /// Generator forward passes made while a classifier update ran.
    pub generator_calls_in_classifier: u64,
    /// Generated samples that reached a classifier update.
    pub generated_samples_in_classifier: u64,
}

/// Seeds and outputs of the most recent generator step, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorTrace {
    pub seeds: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
    /// Metric first frame of the real prior, `[B, 3J]`.
    pub reference: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
#[derive(Default)]
pub struct TrainOptions {
    /// Outer loops per epoch; derived from the data size when `None`.
    pub loops_per_epoch: Option<usize>,
    pub terms: GeneratorTerms,
    /// Record the phase sequence in `Trainer::phase_log`.
    pub log_phases: bool,
}


pub struct Trainer {
    pub config: TrainConfig,
    pub options: TrainOptions,
    pub generator: Generator,
    pub critic: Critic,
    pub classifier: Classifier,
    pub generator_opt: AdamState,
    pub critic_opt: AdamState,
    pub classifier_opt: AdamState,
    rng: ChaCha8Rng,
    pub step: u64,
    pub epoch: usize,
    pub history: LossHistory,
    pub counters: Counters,
    pub phase_log: Vec<Phase>,
    pub last_trace: Option<GeneratorTrace>,
    pub stats: NormalizationStats,
    pub skeleton: SkeletonSpec,
    std: Tensor,
    mean: Tensor,
}

impl Trainer {
    pub fn new(
        model: ModelConfig,
        config: TrainConfig,
        options: TrainOptions,
        stats: NormalizationStats,
        skeleton: SkeletonSpec,
    ) -> Result<Self> {
        config.validate()?;
        if model.window != config.window_t {
            return Err(TrainError::Config(format!(
                "window_T {} differs from model window {}",
                config.window_t, model.window
            )));
        }
        if model.joints != skeleton.joint_count() || stats.channels() != model.channels() {
            return Err(TrainError::Config(format!(
                "model has {} joints, skeleton {}, statistics {} channels",
                model.joints,
                skeleton.joint_count(),
                stats.channels()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let generator = Generator::new(model.clone(), &mut rng)?;
        let critic = Critic::new(model.clone(), &mut rng)?;
        let classifier = Classifier::new(model.clone(), &mut rng)?;
        let adam = AdamConfig {
            lr: config.alpha,
            beta1: config.beta1,
            beta2: config.beta2,
            ..AdamConfig::default()
        };
        let c = model.channels();
        Ok(Self {
            generator_opt: AdamState::new(adam, generator.params.sizes()),
            critic_opt: AdamState::new(adam, critic.params.sizes()),
            classifier_opt: AdamState::new(adam, classifier.params.sizes()),
            generator,
            critic,
            classifier,
            rng,
            step: 0,
            epoch: 0,
            history: LossHistory::default(),
            counters: Counters::default(),
            phase_log: Vec::new(),
            last_trace: None,
            std: Tensor::new(vec![c, 1], stats.std.clone())?,
            mean: Tensor::new(vec![c, 1], stats.mean.clone())?,
            stats,
            skeleton,
            config,
            options,
        })
    }

    /// Normalized `[B, 3J, T]` back to meters, differentiably.
    fn metric(&self, x: &Tensor) -> Result<Tensor> {
        let s = broadcast_to(&self.std, x.shape())?;
        let m = broadcast_to(&self.mean, x.shape())?;
        Ok(x.mul(&s)?.add(&m)?)
    }

    fn log(&mut self, phase: Phase) {
        if self.options.log_phases {
            self.phase_log.push(phase);
        }
    }

    fn finite_or_abort(&self, phase: &'static str, loss: f64, grads: &[Tensor]) -> Result<()> {
        if loss.is_finite() && grads.iter().all(Tensor::all_finite) {
            Ok(())
        } else {
            Err(TrainError::NonFinite {
                phase,
                step: self.step + 1,
            })
        }
    }

    /// One Adam step on the critic weights.
    pub fn critic_update(&mut self, batch: &Batch) -> Result<LossBreakdown> {
        let fake = self.generator.generate(&batch.prior, &batch.control)?;
        self.counters.generator_forward_calls += 1;
        let real = concat(&[&batch.prior, &batch.future], 2)?;
        let fake = concat(&[&batch.prior, &fake], 2)?;
        let eps = sample_epsilon(&mut self.rng, batch.actions.len());
        let (breakdown, grads) = {
            let critic = &self.critic;
            let tape = Tape::new();
            let w = critic.params.bind(&tape);
            let rs = critic.forward(&w, &real, &batch.control)?;
            let fs = critic.forward(&w, &fake, &batch.control)?;
            let gp = gradient_penalty(&tape, |m| critic.forward(&w, m, &batch.control), &real, &fake, &eps)?;
            let loss = critic_loss(&rs, &fs, &gp.penalty, self.config.lambda_gp)?;
            let grads = gradients(&loss, w.tensors(), false)?;
            let wasserstein = fs.data().iter().sum::<f64>() / fs.len() as f64 - rs.data().iter().sum::<f64>() / rs.len() as f64;
            let norm = gp.grad_norms.iter().sum::<f64>() / gp.grad_norms.len() as f64;
            let breakdown = LossBreakdown {
                components: vec![
                    ("critic", loss.item()),
                    ("wasserstein", wasserstein),
                    ("gp", gp.penalty.item()),
                    ("grad_norm", norm),
                ],
                total: loss.item(),
            };
            (breakdown, grads)
        };
        self.finite_or_abort("critic", breakdown.total, &grads)?;
        self.critic.params.adam_step(&grads, &mut self.critic_opt)?;
        self.step += 1;
        self.counters.critic_updates += 1;
        self.history.push(self.step, "critic", &breakdown);
        self.log(Phase::Critic);
        Ok(breakdown)
    }

    /// One Adam step on the classifier weights from real futures only.
    pub fn classifier_update(&mut self, batch: &Batch) -> Result<LossBreakdown> {
        let calls_before = self.counters.generator_forward_calls;
        let (loss, grads) = {
            let tape = Tape::new();
            let w = self.classifier.params.bind(&tape);
            let probs = self.classifier.forward(&w, &batch.future)?;
            let loss = classification_loss(&probs, &batch.control)?;
            let grads = gradients(&loss, w.tensors(), false)?;
            (loss.item(), grads)
        };
        self.finite_or_abort("classifier", loss, &grads)?;
        self.classifier.params.adam_step(&grads, &mut self.classifier_opt)?;
        self.step += 1;
        self.counters.classifier_updates += 1;
        self.counters.generator_calls_in_classifier += self.counters.generator_forward_calls - calls_before;
        if batch.synthetic {
            self.counters.generated_samples_in_classifier += batch.actions.len() as u64;
        }
        let breakdown = LossBreakdown {
            components: vec![("class", loss)],
            total: loss,
        };
        self.history.push(self.step, "classifier", &breakdown);
        self.log(Phase::Classifier);
        Ok(breakdown)
    }

    /// `n_generator` autoregressive iterations, one Adam step on the
    /// generator weights each. On a non-finite loss the generator and its
    /// optimizer are restored to their state before the call.
    pub fn generator_update(&mut self, batch: &Batch) -> Result<Vec<LossBreakdown>> {
        let saved = (self.generator.params.clone(), self.generator_opt.clone(), self.step);
        let result = self.generator_iterations(batch);
        if result.is_err() {
            (self.generator.params, self.generator_opt, self.step) = saved;
        }
        result
    }

    fn generator_iterations(&mut self, batch: &Batch) -> Result<Vec<LossBreakdown>> {
        let t = self.config.window_t as f64;
        let reference = first_frame(&self.metric(&batch.prior)?)?;
        let mut seed = self.generator.generate(&batch.prior, &batch.control)?;
        self.counters.generator_forward_calls += 1;
        let mut trace = GeneratorTrace {
            seeds: Vec::new(),
            outputs: Vec::new(),
            reference: reference.to_vec(),
        };
        let (critic, classifier) = (self.critic.clone(), self.classifier.clone());
        let critic_w = critic.params.constants();
        let classifier_w = classifier.params.constants();
        let mut out = Vec::new();
        for iteration in 0..self.config.n_generator {
            let (breakdown, grads, next) = {
                let tape = Tape::new();
                let w = self.generator.params.bind(&tape);
                let x_hat = self.generator.forward(&w, &seed, &batch.control)?;
                let probs = classifier.forward(&classifier_w, &x_hat)?;
                let class = classification_loss(&probs, &batch.control)?;
                let skel = skeleton_loss(&reference, &self.metric(&x_hat)?, &self.skeleton, t)?;
                let blend = blend_loss(&last_frame(&seed)?, &first_frame(&x_hat)?)?;
                let scores = critic.forward(&critic_w, &concat(&[&seed, &x_hat], 2)?, &batch.control)?;
                let (total, breakdown) = generator_loss(&scores, &skel, &blend, &class, self.options.terms)?;
                let grads = gradients(&total, w.tensors(), false)?;
                (breakdown, grads, x_hat.detach())
            };
            self.counters.generator_forward_calls += 1;
            self.finite_or_abort("generator", breakdown.total, &grads)?;
            self.generator.params.adam_step(&grads, &mut self.generator_opt)?;
            self.step += 1;
            self.counters.generator_iterations += 1;
            self.history.push(self.step, "generator", &breakdown);
            self.log(Phase::Generator { iteration });
            trace.seeds.push(seed.to_vec());
            trace.outputs.push(next.to_vec());
            seed = next;
            out.push(breakdown);
        }
        self.counters.generator_steps += 1;
        self.last_trace = Some(trace);
        Ok(out)
    }

    /// `n_critic` rounds of critic and classifier updates, then one
    /// generator step.
    pub fn outer_loop(&mut self, data: &TrainingSet) -> Result<()> {
        let m = self.config.batch_size;
        for _ in 0..self.config.n_critic {
            let batch = data.sample_batch(&mut self.rng, m);
            self.critic_update(&batch)?;
            self.classifier_update(&batch)?;
        }
        let batch = data.sample_batch(&mut self.rng, m);
        self.generator_update(&batch)?;
        self.counters.outer_loops += 1;
        Ok(())
    }

    pub fn loops_per_epoch(&self, data: &TrainingSet) -> usize {
        self.options
            .loops_per_epoch
            .unwrap_or_else(|| (data.len() / (self.config.batch_size * self.config.n_critic)).max(1))
    }

    /// Runs the epoch budget, calling `on_epoch` after every epoch (for
    /// checkpointing). Two consecutive outer loops with non-finite losses
    /// halt training.
    pub fn fit(&mut self, data: &TrainingSet, mut on_epoch: impl FnMut(&Trainer) -> Result<()>) -> Result<()> {
        let loops = self.loops_per_epoch(data);
        let mut failures = 0;
        for _ in 0..self.config.epochs {
            for _ in 0..loops {
                match self.outer_loop(data) {
                    Ok(()) => failures = 0,
                    Err(TrainError::NonFinite { phase, step }) => {
                        failures += 1;
                        log::warn!("non-finite {phase} loss at step {step}");
                        if failures >= 2 {
                            return Err(TrainError::Diverged { step });
                        }
                    }
                    Err(e) => return Err(e),
                }
            }
            self.epoch += 1;
            self.history.epoch_ends.push(self.step);
            on_epoch(self)?;
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.generator.config.clone(),
            train_config: self.config.to_text(),
            epoch: self.epoch as u64,
            skeleton: Some(self.skeleton.to_text()),
            stats: Some(self.stats.clone()),
            sets: vec![
                ("generator".into(), self.generator.params.clone()),
                ("critic".into(), self.critic.params.clone()),
                ("classifier".into(), self.classifier.params.clone()),
            ],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motiondata::{build_procedural_corpus, prepare_windows, CorpusSpec};

    fn setup(seed: u64) -> (Trainer, TrainingSet) {
        let sk = SkeletonSpec::standard();
        let clips = build_procedural_corpus(&CorpusSpec::new(1, 3).with_windows([1, 1, 1, 1]));
        let data = prepare_windows(&clips, &sk).unwrap();
        let set = TrainingSet::from_windows(&data.windows, 25, data.stats.clone(), sk.clone()).unwrap();
        let model = ModelConfig {
            encoder_channels: [4, 4, 4],
            latent: 4,
            critic_channels: [4, 4, 4, 4],
            classifier_channels: [4, 4, 4],
            ..ModelConfig::desk()
        };
        let config = TrainConfig {
            batch_size: 4,
            n_critic: 2,
            epochs: 1,
            seed,
            ..TrainConfig::default()
        };
        let options = TrainOptions {
            loops_per_epoch: Some(2),
            log_phases: true,
            ..TrainOptions::default()
        };
        (Trainer::new(model, config, options, data.stats, sk).unwrap(), set)
    }

    fn checksums(t: &Trainer) -> [u64; 3] {
        [t.generator.params.checksum(), t.critic.params.checksum(), t.classifier.params.checksum()]
    }

    fn changed(before: [u64; 3], after: [u64; 3]) -> [bool; 3] {
        [0, 1, 2].map(|i| before[i] != after[i])
    }

    #[test]
    fn each_phase_updates_one_parameter_set() {
        let (mut t, set) = setup(1);
        let batch = set.sample_batch(&mut ChaCha8Rng::seed_from_u64(2), 4);
        let c0 = checksums(&t);
        t.critic_update(&batch).unwrap();
        let c1 = checksums(&t);
        assert_eq!(changed(c0, c1), [false, true, false]);
        t.classifier_update(&batch).unwrap();
        let c2 = checksums(&t);
        assert_eq!(changed(c1, c2), [false, false, true]);
        t.generator_update(&batch).unwrap();
        assert_eq!(changed(c2, checksums(&t)), [true, false, false]);
    }

    #[test]
    fn schedule_and_classifier_purity() {
        let (mut t, set) = setup(4);
        t.outer_loop(&set).unwrap();
        let c = &t.counters;
        assert_eq!((c.outer_loops, c.critic_updates, c.classifier_updates), (1, 2, 2));
        assert_eq!((c.generator_steps, c.generator_iterations), (1, 2));
        assert_eq!((c.generator_calls_in_classifier, c.generated_samples_in_classifier), (0, 0));
        assert_eq!(
            t.phase_log,
            [
                Phase::Critic,
                Phase::Classifier,
                Phase::Critic,
                Phase::Classifier,
                Phase::Generator { iteration: 0 },
                Phase::Generator { iteration: 1 },
            ]
        );
        let trace = t.last_trace.as_ref().unwrap();
        assert_eq!(trace.seeds[1], trace.outputs[0]);
    }

    #[test]
    fn fixed_seed_reproduces_the_epoch() {
        let run = |seed| {
            let (mut t, set) = setup(seed);
            let mut epochs = Vec::new();
            t.fit(&set, |t| {
                epochs.push(t.epoch);
                Ok(())
            })
            .unwrap();
            assert_eq!(epochs, [1]);
            (checksums(&t), t.history.to_csv())
        };
        let a = run(9);
        assert_eq!(a, run(9));
        assert_ne!(a.0, run(10).0);
    }

    #[test]
    fn natural_epoch_length() {
        let (mut t, set) = setup(0);
        assert_eq!(t.loops_per_epoch(&set), 2);
        t.options.loops_per_epoch = None;
        assert_eq!(t.loops_per_epoch(&set), (set.len() / 8).max(1));
    }

    #[test]
    fn mismatched_window_is_rejected() {
        let (t, _) = setup(0);
        let config = TrainConfig {
            window_t: 20,
            ..t.config.clone()
        };
        let err = Trainer::new(t.generator.config.clone(), config, t.options.clone(), t.stats.clone(), t.skeleton.clone());
        assert!(matches!(err, Err(TrainError::Config(_))));
    }
}
