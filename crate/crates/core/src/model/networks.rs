//! Generator (convolutional encoder-decoder), critic and classifier.
//!
//! Motion batches use the layout `[B, 3J, T]`; controls are `[B, 4]` one-hot
//! rows, broadcast along time and appended as extra input channels.

use rand::Rng;

use super::{strided_len, AttentionPlacement, Bound, LayerKind, ModelConfig, ModelError, ParamSet, Result, SelfAttention};
use crate::diffcore::ops::{broadcast_to, concat, conv1d, dense, layer_norm, mean_axis, softmax, upsample_nearest};
use crate::diffcore::Tensor;

fn finite(network: &'static str, layer: &str, t: Tensor) -> Result<Tensor> {
    if t.all_finite() {
        Ok(t)
    } else {
        Err(ModelError::NonFinite {
            network,
            layer: layer.to_string(),
        })
    }
}

fn push_conv(set: &mut ParamSet, name: &str, cout: usize, cin: usize, k: usize, rng: &mut impl Rng) {
    set.push_uniform(&format!("{name}.w"), vec![cout, cin, k], cin * k, rng);
    set.push_zeros(&format!("{name}.b"), vec![cout]);
}

fn push_dense(set: &mut ParamSet, name: &str, din: usize, dout: usize, rng: &mut impl Rng) {
    set.push_uniform(&format!("{name}.w"), vec![din, dout], din, rng);
    set.push_zeros(&format!("{name}.b"), vec![dout]);
}

/// Convolution, layer normalization over `[C, L]`, leaky rectifier.
fn conv_block(w: &Bound, name: &str, x: &Tensor, stride: usize, cfg: &ModelConfig) -> Result<Tensor> {
    let y = conv1d(
        x,
        w.get(&format!("{name}.w"))?,
        Some(w.get(&format!("{name}.b"))?),
        stride,
        cfg.kernel / 2,
    )?;
    Ok(layer_norm(&y, 1)?.leaky_relu(cfg.leaky_slope)?)
}

fn dense_layer(w: &Bound, name: &str, x: &Tensor) -> Result<Tensor> {
    Ok(dense(x, w.get(&format!("{name}.w"))?, Some(w.get(&format!("{name}.b"))?))?)
}

/// Appends the control rows as constant-in-time channels.
fn with_control(x: &Tensor, control: &Tensor, network: &str) -> Result<Tensor> {
    let (b, _, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    if control.rank() != 2 || control.shape()[0] != b {
        return Err(ModelError::Shape(format!(
            "{network}: control {:?} does not match batch {:?}",
            control.shape(),
            x.shape()
        )));
    }
    let y = control.shape()[1];
    let c = broadcast_to(&control.reshape(&[b, y, 1])?, &[b, y, len])?;
    Ok(concat(&[x, &c], 1)?)
}

fn check_input(x: &Tensor, channels: usize, len: Option<usize>, network: &str) -> Result<()> {
    let ok = x.rank() == 3 && x.shape()[1] == channels && len.map_or(x.shape()[2] >= 1, |l| x.shape()[2] == l);
    if ok && x.shape()[0] > 0 {
        return Ok(());
    }
    Err(ModelError::Shape(format!(
        "{network}: expected [B, {channels}, {}], got {:?}",
        len.map_or("L".to_string(), |l| l.to_string()),
        x.shape()
    )))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub config: ModelConfig,
    pub params: ParamSet,
}

impl Generator {
    pub fn new(config: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let [c1, c2, c3] = config.encoder_channels;
        let k = config.kernel;
        let l3 = Self::lengths(&config)[3];
        let mut p = ParamSet::new();
        push_conv(&mut p, "enc0", c1, config.channels() + config.classes, k, rng);
        push_conv(&mut p, "enc1", c2, c1, k, rng);
        push_conv(&mut p, "enc2", c3, c2, k, rng);
        push_dense(&mut p, "latent", c3 * l3, config.latent, rng);
        push_dense(&mut p, "dec_in", config.latent, c3 * l3, rng);
        push_conv(&mut p, "dec0", c2, c3, k, rng);
        push_conv(&mut p, "dec1", c1, c2, k, rng);
        match config.attention {
            AttentionPlacement::Decoder => SelfAttention::new("attn", c1).init(&mut p, rng),
            AttentionPlacement::Encoder => SelfAttention::new("attn", c2).init(&mut p, rng),
            AttentionPlacement::None => {}
        }
        push_conv(&mut p, "out", config.channels(), c1, k, rng);
        Ok(Self { config, params: p })
    }

    /// Encoder time extents: `T` then after each stride-2 layer.
    fn lengths(config: &ModelConfig) -> [usize; 4] {
        let t = config.window;
        let a = strided_len(t, 2);
        let b = strided_len(a, 2);
        [t, a, b, strided_len(b, 2)]
    }

    pub fn attention_layer(&self) -> Option<SelfAttention> {
        let [c1, c2, _] = self.config.encoder_channels;
        match self.config.attention {
            AttentionPlacement::Decoder => Some(SelfAttention::new("attn", c1)),
            AttentionPlacement::Encoder => Some(SelfAttention::new("attn", c2)),
            AttentionPlacement::None => None,
        }
    }

    /// Future window `[B, 3J, T]` from a seed `[B, 3J, T]` and controls `[B, 4]`.
    pub fn forward(&self, w: &Bound, seed: &Tensor, control: &Tensor) -> Result<Tensor> {
        const NET: &str = "generator";
        let cfg = &self.config;
        check_input(seed, cfg.channels(), Some(cfg.window), NET)?;
        let b = seed.shape()[0];
        let lens = Self::lengths(cfg);
        let c3 = cfg.encoder_channels[2];
        let attention = self.attention_layer();

        let x = with_control(seed, control, NET)?;
        let x = finite(NET, "enc0", conv_block(w, "enc0", &x, 2, cfg)?)?;
        let mut x = finite(NET, "enc1", conv_block(w, "enc1", &x, 2, cfg)?)?;
        if cfg.attention == AttentionPlacement::Encoder {
            x = finite(NET, "attn", attention.as_ref().unwrap().forward(w, &x)?.y)?;
        }
        let x = finite(NET, "enc2", conv_block(w, "enc2", &x, 2, cfg)?)?;
        let flat = x.reshape(&[b, c3 * lens[3]])?;
        let z = finite(NET, "latent", dense_layer(w, "latent", &flat)?.leaky_relu(cfg.leaky_slope)?)?;

        let h = dense_layer(w, "dec_in", &z)?.leaky_relu(cfg.leaky_slope)?;
        let h = h.reshape(&[b, c3, lens[3]])?;
        let h = upsample_nearest(&h, lens[2])?;
        let h = finite(NET, "dec0", conv_block(w, "dec0", &h, 1, cfg)?)?;
        let h = upsample_nearest(&h, lens[1])?;
        let mut h = finite(NET, "dec1", conv_block(w, "dec1", &h, 1, cfg)?)?;
        if cfg.attention == AttentionPlacement::Decoder {
            h = finite(NET, "attn", attention.as_ref().unwrap().forward(w, &h)?.y)?;
        }
        let h = upsample_nearest(&h, lens[0])?;
        let y = conv1d(&h, w.get("out.w")?, Some(w.get("out.b")?), 1, cfg.kernel / 2)?;
        finite(NET, "out", y.tanh()?.scale(cfg.output_scale)?)
    }

    /// Forward pass with constant parameters.
    pub fn generate(&self, seed: &Tensor, control: &Tensor) -> Result<Tensor> {
        self.forward(&self.params.constants(), seed, control)
    }

    pub fn inventory(&self) -> Vec<LayerKind> {
        use LayerKind::*;
        let block = [Conv1d, LayerNorm, LeakyRelu];
        let mut v = Vec::new();
        v.extend(block);
        v.extend(block);
        if self.config.attention == AttentionPlacement::Encoder {
            v.push(SelfAttention);
        }
        v.extend(block);
        v.extend([Dense, LeakyRelu, Dense, LeakyRelu, Upsample]);
        v.extend(block);
        v.push(Upsample);
        v.extend(block);
        if self.config.attention == AttentionPlacement::Decoder {
            v.push(SelfAttention);
        }
        v.extend([Upsample, Conv1d, Tanh]);
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Critic {
    pub config: ModelConfig,
    pub params: ParamSet,
}

impl Critic {
    pub fn new(config: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let c = config.critic_channels;
        let k = config.kernel;
        let mut p = ParamSet::new();
        let mut cin = config.channels() + config.classes;
        for (i, &cout) in c.iter().enumerate() {
            push_conv(&mut p, &format!("conv{i}"), cout, cin, k, rng);
            if i == 2 && config.critic_attention {
                SelfAttention::new("attn", cout).init(&mut p, rng);
            }
            cin = cout;
        }
        push_dense(&mut p, "head", c[3] * Self::final_len(&config), 1, rng);
        Ok(Self { config, params: p })
    }

    fn final_len(config: &ModelConfig) -> usize {
        (0..4).fold(2 * config.window, |l, _| strided_len(l, 2))
    }

    /// One unbounded score per sample for motions `[B, 3J, 2T]`.
    pub fn forward(&self, w: &Bound, motion: &Tensor, control: &Tensor) -> Result<Tensor> {
        const NET: &str = "critic";
        let cfg = &self.config;
        check_input(motion, cfg.channels(), Some(2 * cfg.window), NET)?;
        let b = motion.shape()[0];
        let mut x = with_control(motion, control, NET)?;
        for i in 0..4 {
            let name = format!("conv{i}");
            x = finite(NET, &name, conv_block(w, &name, &x, 2, cfg)?)?;
            if i == 2 && cfg.critic_attention {
                x = finite(NET, "attn", SelfAttention::new("attn", cfg.critic_channels[2]).forward(w, &x)?.y)?;
            }
        }
        let flat = x.reshape(&[b, cfg.critic_channels[3] * Self::final_len(cfg)])?;
        Ok(dense_layer(w, "head", &flat)?.reshape(&[b])?)
    }

    pub fn score(&self, motion: &Tensor, control: &Tensor) -> Result<Tensor> {
        self.forward(&self.params.constants(), motion, control)
    }

    pub fn inventory(&self) -> Vec<LayerKind> {
        use LayerKind::*;
        let mut v = Vec::new();
        for i in 0..4 {
            v.extend([Conv1d, LayerNorm, LeakyRelu]);
            if i == 2 && self.config.critic_attention {
                v.push(SelfAttention);
            }
        }
        v.push(Dense);
        v
    }
}

/// Convolutional action classifier; pools over time, so any window length
/// works.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub config: ModelConfig,
    pub params: ParamSet,
}

impl Classifier {
    pub fn new(config: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut p = ParamSet::new();
        let mut cin = config.channels();
        for (i, &cout) in config.classifier_channels.iter().enumerate() {
            push_conv(&mut p, &format!("conv{i}"), cout, cin, config.kernel, rng);
            cin = cout;
        }
        push_dense(&mut p, "head", cin, config.classes, rng);
        Ok(Self { config, params: p })
    }

    /// Class probabilities `[B, 4]` for motions `[B, 3J, L]`.
    pub fn forward(&self, w: &Bound, motion: &Tensor) -> Result<Tensor> {
        const NET: &str = "classifier";
        let cfg = &self.config;
        check_input(motion, cfg.channels(), None, NET)?;
        let mut x = motion.clone();
        for i in 0..3 {
            let name = format!("conv{i}");
            x = finite(NET, &name, conv_block(w, &name, &x, 2, cfg)?)?;
        }
        let pooled = mean_axis(&x, 2)?;
        Ok(softmax(&dense_layer(w, "head", &pooled)?, 1)?)
    }

    pub fn predict(&self, motion: &Tensor) -> Result<Tensor> {
        self.forward(&self.params.constants(), motion)
    }

    pub fn inventory(&self) -> Vec<LayerKind> {
        use LayerKind::*;
        let mut v = Vec::new();
        for _ in 0..3 {
            v.extend([Conv1d, LayerNorm, LeakyRelu]);
        }
        v.extend([GlobalMeanPool, Dense, Softmax]);
        v
    }
}
