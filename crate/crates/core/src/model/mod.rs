//! Network definitions on top of `diffcore`: self-attention, the conditional
//! generator, the critic and the action classifier.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffcore::{AdamState, Tape, Tensor, TensorError};
use crate::motiondata::Action;

mod attention;
mod checkpoint;
mod networks;

pub use attention::{AttentionOutput, SelfAttention};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use networks::{Classifier, Critic, Generator};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{network}: non-finite values after layer `{layer}`")]
    NonFinite { network: &'static str, layer: String },
    #[error("{0}")]
    Shape(String),
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// One-hot action encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ControlVector {
    action: Action,
}

impl ControlVector {
    pub const DIM: usize = 4;

    pub fn new(action: Action) -> Self {
        Self { action }
    }

    pub fn action(&self) -> Action {
        self.action
    }

    pub fn one_hot(&self) -> [f64; 4] {
        let mut v = [0.0; 4];
        v[self.action.index()] = 1.0;
        v
    }

    /// Accepts only vectors with a single 1 and zeros elsewhere.
    pub fn from_slice(v: &[f64]) -> Result<Self> {
        let ones: Vec<usize> = (0..v.len()).filter(|&i| v[i] == 1.0).collect();
        let valid = v.len() == Self::DIM && ones.len() == 1 && v.iter().all(|&x| x == 0.0 || x == 1.0);
        match (valid, ones.first().and_then(|&i| Action::from_index(i))) {
            (true, Some(action)) => Ok(Self { action }),
            _ => Err(ModelError::Shape(format!("{v:?} is not a one-hot control vector"))),
        }
    }

    /// `[B, 4]` tensor of one-hot rows.
    pub fn batch(actions: &[Action]) -> Tensor {
        let data = actions.iter().flat_map(|&a| ControlVector::new(a).one_hot()).collect();
        Tensor::from_parts(vec![actions.len(), Self::DIM], Arc::new(data))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionPlacement {
    Decoder,
    Encoder,
    None,
}

/// Layer widths and structural switches for all three networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub joints: usize,
    /// Frames per generated window.
    pub window: usize,
    pub classes: usize,
    pub kernel: usize,
    pub encoder_channels: [usize; 3],
    pub latent: usize,
    pub critic_channels: [usize; 4],
    pub classifier_channels: [usize; 3],
    pub attention: AttentionPlacement,
    pub critic_attention: bool,
    /// Generator output is `output_scale * tanh(.)`.
    pub output_scale: f64,
    pub leaky_slope: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            joints: 16,
            window: 25,
            classes: 4,
            kernel: 5,
            encoder_channels: [64, 128, 256],
            latent: 256,
            critic_channels: [64, 128, 256, 256],
            classifier_channels: [32, 64, 128],
            attention: AttentionPlacement::Decoder,
            critic_attention: true,
            output_scale: 3.0,
            leaky_slope: 0.2,
        }
    }
}

impl ModelConfig {
    /// Narrow widths sized for single-core training runs.
    pub fn desk() -> Self {
        Self {
            encoder_channels: [16, 32, 32],
            latent: 32,
            critic_channels: [16, 32, 32, 32],
            classifier_channels: [16, 16, 16],
            ..Self::default()
        }
    }

    pub fn channels(&self) -> usize {
        3 * self.joints
    }

    /// Disables attention in both generator and critic.
    pub fn without_attention(mut self) -> Self {
        self.attention = AttentionPlacement::None;
        self.critic_attention = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let all = self
            .encoder_channels
            .iter()
            .chain(&self.critic_channels)
            .chain(&self.classifier_channels);
        if self.joints == 0 || self.window < 2 || self.classes != ControlVector::DIM || self.latent == 0 {
            return Err(ModelError::Shape(format!(
                "invalid model config: joints {}, window {}, classes {}, latent {}",
                self.joints, self.window, self.classes, self.latent
            )));
        }
        if self.kernel == 0 || self.kernel.is_multiple_of(2) || all.clone().any(|&c| c == 0) {
            return Err(ModelError::Shape("kernel must be odd and channel widths positive".into()));
        }
        if !(self.output_scale > 0.0) {
            return Err(ModelError::Shape("output scale must be positive".into()));
        }
        Ok(())
    }
}

/// Output length of a stride-`s` convolution with "same" padding.
pub(crate) fn strided_len(len: usize, stride: usize) -> usize {
    (len - 1) / stride + 1
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Arc<Vec<f64>>,
}

/// Named parameter tensors held outside any tape, so they can be shared
/// across threads and re-bound to a fresh tape every step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    entries: Vec<ParamEntry>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.entries.push(ParamEntry {
            name: name.into(),
            shape,
            data: Arc::new(data),
        });
    }

    /// Uniform in `±1/sqrt(fan_in)`.
    pub(crate) fn push_uniform(&mut self, name: &str, shape: Vec<usize>, fan_in: usize, rng: &mut impl Rng) {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        self.push(name, shape, data);
    }

    pub(crate) fn push_zeros(&mut self, name: &str, shape: Vec<usize>) {
        let n = shape.iter().product();
        self.push(name, shape, vec![0.0; n]);
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn set(&mut self, name: &str, data: Vec<f64>) -> Result<()> {
        let e = self
            .entries
            .iter_mut()
            .find(|e| e.name == name)
            .ok_or_else(|| ModelError::MissingParam(name.to_string()))?;
        if e.data.len() != data.len() {
            return Err(ModelError::Shape(format!(
                "parameter `{name}` has {} values, got {}",
                e.data.len(),
                data.len()
            )));
        }
        e.data = Arc::new(data);
        Ok(())
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|e| e.data.len()).sum()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.data.len()).collect()
    }

    fn tensors(&self, tape: Option<&Tape>) -> Bound<'_> {
        let tensors = self
            .entries
            .iter()
            .map(|e| {
                let t = Tensor::from_parts(e.shape.clone(), e.data.clone());
                match tape {
                    Some(tape) => tape.leaf(&t),
                    None => t,
                }
            })
            .collect();
        Bound { set: self, tensors }
    }

    /// Parameters as differentiable leaves of `tape`.
    pub fn bind(&self, tape: &Tape) -> Bound<'_> {
        self.tensors(Some(tape))
    }

    /// Parameters as constants, for inference.
    pub fn constants(&self) -> Bound<'_> {
        self.tensors(None)
    }

    /// Binds caller-supplied tensors (one per entry, same shapes) under
    /// this set's names.
    pub fn with_tensors(&self, tensors: Vec<Tensor>) -> Result<Bound<'_>> {
        if tensors.len() != self.entries.len() {
            return Err(ModelError::Shape(format!(
                "{} tensors for {} parameters",
                tensors.len(),
                self.entries.len()
            )));
        }
        for (e, t) in self.entries.iter().zip(&tensors) {
            if e.shape != t.shape() {
                return Err(ModelError::Shape(format!(
                    "parameter `{}` is {:?}, got {:?}",
                    e.name,
                    e.shape,
                    t.shape()
                )));
            }
        }
        Ok(Bound { set: self, tensors })
    }

    /// FNV-1a hash over names and value bits.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for b in bytes {
                h ^= u64::from(*b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for e in &self.entries {
            eat(e.name.as_bytes());
            for v in e.data.iter() {
                eat(&v.to_bits().to_le_bytes());
            }
        }
        h
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|e| e.data.iter().all(|v| v.is_finite()))
    }

    /// One Adam step using gradients aligned with `entries()`.
    pub fn adam_step(&mut self, grads: &[Tensor], state: &mut AdamState) -> Result<()> {
        let values: Vec<&[f64]> = self.entries.iter().map(|e| e.data.as_slice()).collect();
        let updated = state.update(&values, grads)?;
        for (e, v) in self.entries.iter_mut().zip(updated) {
            e.data = Arc::new(v);
        }
        Ok(())
    }
}

/// A [`ParamSet`] materialized as tensors, either on a tape or as constants.
pub struct Bound<'a> {
    set: &'a ParamSet,
    tensors: Vec<Tensor>,
}

impl Bound<'_> {
    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.set
            .entries
            .iter()
            .position(|e| e.name == name)
            .map(|i| &self.tensors[i])
            .ok_or_else(|| ModelError::MissingParam(name.to_string()))
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }
}

/// Layer kinds used by the networks, for structural inspection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv1d,
    LayerNorm,
    LeakyRelu,
    Dense,
    Upsample,
    SelfAttention,
    Tanh,
    GlobalMeanPool,
    Softmax,
}

/// `[B, C, L]` tensor from channel-major windows of equal size.
pub fn batch_tensor(windows: &[&[f64]], channels: usize, len: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(windows.len() * channels * len);
    for w in windows {
        if w.len() != channels * len {
            return Err(ModelError::Shape(format!(
                "window has {} values, expected {channels}x{len}",
                w.len()
            )));
        }
        data.extend_from_slice(w);
    }
    Ok(Tensor::new(vec![windows.len(), channels, len], data)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn control_vector_round_trip() {
        for a in Action::ALL {
            let c = ControlVector::new(a);
            assert_eq!(c.one_hot().iter().sum::<f64>(), 1.0);
            assert_eq!(ControlVector::from_slice(&c.one_hot()).unwrap(), c);
        }
        assert!(ControlVector::from_slice(&[1.0, 1.0, 0.0, 0.0]).is_err());
        assert!(ControlVector::from_slice(&[0.5, 0.5, 0.0, 0.0]).is_err());
        assert!(ControlVector::from_slice(&[0.0, 1.0, 0.0]).is_err());
    }

    #[test]
    fn checksum_tracks_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = ParamSet::new();
        p.push_uniform("w", vec![3, 2], 2, &mut rng);
        let c0 = p.checksum();
        assert_eq!(c0, p.clone().checksum());
        let mut v = p.get("w").unwrap().data.to_vec();
        v[0] += 1e-12;
        p.set("w", v).unwrap();
        assert_ne!(p.checksum(), c0);
    }

    #[test]
    fn bound_lookup() {
        let mut p = ParamSet::new();
        p.push_zeros("b", vec![2]);
        let tape = Tape::new();
        let b = p.bind(&tape);
        assert!(b.get("b").unwrap().is_attached());
        assert!(matches!(b.get("x"), Err(ModelError::MissingParam(_))));
        assert!(!p.constants().get("b").unwrap().is_attached());
    }

    #[test]
    fn strided_lengths() {
        assert_eq!(strided_len(25, 2), 13);
        assert_eq!(strided_len(13, 2), 7);
        assert_eq!(strided_len(7, 2), 4);
        assert_eq!(strided_len(50, 2), 25);
    }
}
