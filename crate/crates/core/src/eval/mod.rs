//! Evaluation: joint-angle error curves, action classification, LOSO and
//! stratified K-fold protocols, and the fractional-data augmentation study.

mod angles;
mod classify;
mod protocol;
mod report;
mod rollouts;

use thiserror::Error;

pub use angles::{
    angle_pairs, curve_auc, mean_angle_curve, mean_angle_trajectory, to_angle_space, AnglePair, AngleSpaceMotion,
};
pub use classify::{
    f1_scores, predict_actions, train_action_classifier, ClassScores, ClassifierReport, ClassifierTrainConfig,
};
pub use protocol::{
    augmentation_experiment, evaluate_fold, loso_folds, run_folds, run_loso, run_stratified_kfold, sign_test,
    stratified_kfold, stratified_subsample, summarize_pairs, synthesize_windows, Condition, EvalDataset,
    EvalOptions, FoldReport, FoldSpec, FractionSummary, PairedFold,
};
pub use rollouts::{rollout_metrics, RolloutMetrics};
pub use report::{curves_csv, curves_svg, folds_csv, summary_json};

use crate::diffcore::TensorError;
use crate::model::ModelError;
use crate::synthesis::SynthesisError;

/// Default length of the angle-error curve.
pub const ANGLE_HORIZON: usize = 70;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{0}")]
    Input(String),
    #[error("non-finite {0}")]
    NonFinite(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
}

pub type Result<T> = std::result::Result<T, EvalError>;
