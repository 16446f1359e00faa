//! Prior/future training pairs cut from normalized windows, and
//! class-balanced batch sampling.

use rand::Rng;

use super::TrainError;
use crate::diffcore::Tensor;
use crate::model::ControlVector;
use crate::motiondata::{Action, MotionWindow, NormalizationStats, SkeletonSpec};

/// Consecutive `T`-frame prior and future, channel-major (`[3J, T]` each).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainPair {
    pub prior: Vec<f64>,
    pub future: Vec<f64>,
    pub action: Action,
    pub subject: u32,
}

#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub pairs: Vec<TrainPair>,
    by_class: [Vec<usize>; 4],
    pub channels: usize,
    pub window: usize,
    pub stats: NormalizationStats,
    pub skeleton: SkeletonSpec,
}

/// A batch as tensors `[B, 3J, T]` plus controls `[B, 4]`.
#[derive(Debug, Clone)]
pub struct Batch {
    pub prior: Tensor,
    pub future: Tensor,
    pub control: Tensor,
    pub actions: Vec<Action>,
    /// Set when the batch holds generated motion.
    pub synthetic: bool,
}

impl TrainingSet {
    /// Cuts each normalized window of length `L` into `L/T - 1` overlapping
    /// (prior, future) pairs with hop `T`.
    pub fn from_windows(
        windows: &[MotionWindow],
        window: usize,
        stats: NormalizationStats,
        skeleton: SkeletonSpec,
    ) -> Result<Self, TrainError> {
        let channels = 3 * skeleton.joint_count();
        let mut pairs = Vec::new();
        for w in windows {
            if w.joint_count() != skeleton.joint_count() {
                return Err(TrainError::Data(format!(
                    "window has {} joints, skeleton {}",
                    w.joint_count(),
                    skeleton.joint_count()
                )));
            }
            let n = w.len() / window;
            for k in 0..n.saturating_sub(1) {
                pairs.push(TrainPair {
                    prior: w.slice(k * window, (k + 1) * window).to_channels(),
                    future: w.slice((k + 1) * window, (k + 2) * window).to_channels(),
                    action: w.action,
                    subject: w.subject,
                });
            }
        }
        let mut by_class: [Vec<usize>; 4] = Default::default();
        for (i, p) in pairs.iter().enumerate() {
            by_class[p.action.index()].push(i);
        }
        if let Some(a) = Action::ALL.iter().find(|a| by_class[a.index()].is_empty()) {
            return Err(TrainError::Data(format!("no training pairs for action `{a}`")));
        }
        Ok(Self {
            pairs,
            by_class,
            channels,
            window,
            stats,
            skeleton,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Slot `i` of the batch draws uniformly from class `i mod 4`.
    pub fn sample_batch(&self, rng: &mut impl Rng, size: usize) -> Batch {
        let picks: Vec<usize> = (0..size)
            .map(|i| {
                let pool = &self.by_class[i % 4];
                pool[rng.gen_range(0..pool.len())]
            })
            .collect();
        self.batch_of(&picks)
    }

    pub fn batch_of(&self, indices: &[usize]) -> Batch {
        let (c, t) = (self.channels, self.window);
        let mut prior = Vec::with_capacity(indices.len() * c * t);
        let mut future = Vec::with_capacity(indices.len() * c * t);
        let mut actions = Vec::with_capacity(indices.len());
        for &i in indices {
            let p = &self.pairs[i];
            prior.extend_from_slice(&p.prior);
            future.extend_from_slice(&p.future);
            actions.push(p.action);
        }
        let b = indices.len();
        Batch {
            prior: Tensor::new(vec![b, c, t], prior).expect("consistent pair sizes"),
            future: Tensor::new(vec![b, c, t], future).expect("consistent pair sizes"),
            control: ControlVector::batch(&actions),
            actions,
            synthetic: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motiondata::{build_procedural_corpus, prepare_windows, CorpusSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn set() -> TrainingSet {
        let sk = SkeletonSpec::standard();
        let clips = build_procedural_corpus(&CorpusSpec::new(1, 3).with_windows([2, 2, 2, 2]));
        let data = prepare_windows(&clips, &sk).unwrap();
        TrainingSet::from_windows(&data.windows, 25, data.stats, sk).unwrap()
    }

    #[test]
    fn four_pairs_per_window() {
        let s = set();
        assert_eq!(s.len(), 8 * 4);
        let p = &s.pairs[1];
        // the second pair's prior is the first pair's future
        assert_eq!(p.prior, s.pairs[0].future);
    }

    #[test]
    fn batches_are_balanced() {
        let s = set();
        let b = s.sample_batch(&mut ChaCha8Rng::seed_from_u64(1), 8);
        assert_eq!(b.prior.shape(), &[8, 48, 25]);
        for a in Action::ALL {
            assert_eq!(b.actions.iter().filter(|&&x| x == a).count(), 2);
        }
    }
}
