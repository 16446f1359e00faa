//! Self-attention over feature locations with a gated residual.

use rand::Rng;

use super::{Bound, ParamSet, Result};
use crate::diffcore::ops::{broadcast_to, conv1x1, softmax};
use crate::diffcore::Tensor;

/// Parameter layout of one attention layer under a name prefix:
/// `wf, wg, wh: [C', C]`, `wv: [C, C']`, `gamma: [1]` with `C' = max(C/8, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfAttention {
    pub prefix: String,
    pub channels: usize,
    pub reduced: usize,
}

pub struct AttentionOutput {
    /// `gamma * o + x`, shape `[B, C, N]`.
    pub y: Tensor,
    /// `[B, N, N]`; entry `(i, j)` is the weight of location `i` for output `j`.
    pub beta: Tensor,
}

impl SelfAttention {
    pub fn new(prefix: &str, channels: usize) -> Self {
        Self {
            prefix: prefix.to_string(),
            channels,
            reduced: (channels / 8).max(1),
        }
    }

    fn name(&self, p: &str) -> String {
        format!("{}.{p}", self.prefix)
    }

    /// Adds the layer's parameters; `gamma` starts at exactly 0.
    pub fn init(&self, set: &mut ParamSet, rng: &mut impl Rng) {
        let (c, r) = (self.channels, self.reduced);
        for p in ["wf", "wg", "wh"] {
            set.push_uniform(&self.name(p), vec![r, c], c, rng);
        }
        set.push_uniform(&self.name("wv"), vec![c, r], r, rng);
        set.push_zeros(&self.name("gamma"), vec![1]);
    }

    pub fn forward(&self, w: &Bound, x: &Tensor) -> Result<AttentionOutput> {
        let f = conv1x1(x, w.get(&self.name("wf"))?)?;
        let g = conv1x1(x, w.get(&self.name("wg"))?)?;
        let h = conv1x1(x, w.get(&self.name("wh"))?)?;
        // s[i, j] = f_i . g_j, normalized over i for each output location j
        let s = f.matmul_t(&g, true, false)?;
        let beta = softmax(&s, 1)?;
        let o = conv1x1(&h.matmul(&beta)?, w.get(&self.name("wv"))?)?;
        let gamma = broadcast_to(w.get(&self.name("gamma"))?, o.shape())?;
        let y = gamma.mul(&o)?.add(x)?;
        Ok(AttentionOutput { y, beta })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::ops::sum_axis;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn layer(c: usize, seed: u64) -> (SelfAttention, ParamSet) {
        let a = SelfAttention::new("attn", c);
        let mut p = ParamSet::new();
        a.init(&mut p, &mut ChaCha8Rng::seed_from_u64(seed));
        (a, p)
    }

    fn random_x(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn zero_gamma_is_identity() {
        let (a, p) = layer(16, 3);
        let x = random_x(&[2, 16, 7], 4);
        let out = a.forward(&p.constants(), &x).unwrap();
        assert_eq!(out.y.data(), x.data());
    }

    #[test]
    fn weights_are_distributions() {
        let (a, p) = layer(8, 5);
        let x = random_x(&[3, 8, 9], 6);
        let out = a.forward(&p.constants(), &x).unwrap();
        assert!(out.beta.data().iter().all(|&b| b >= 0.0));
        for s in sum_axis(&out.beta, 1).unwrap().data() {
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn reduced_width() {
        assert_eq!(SelfAttention::new("a", 64).reduced, 8);
        assert_eq!(SelfAttention::new("a", 7).reduced, 1);
    }

    #[test]
    fn single_location_hand_computed() {
        // C = 2, C' = 1, N = 1: beta = 1, o = Wv (Wh x)
        let a = SelfAttention::new("attn", 2);
        let mut p = ParamSet::new();
        p.push("attn.wf", vec![1, 2], vec![0.3, -0.7]);
        p.push("attn.wg", vec![1, 2], vec![1.1, 0.2]);
        p.push("attn.wh", vec![1, 2], vec![2.0, -1.0]);
        p.push("attn.wv", vec![2, 1], vec![0.5, -3.0]);
        p.push("attn.gamma", vec![1], vec![0.25]);
        let x = Tensor::new(vec![1, 2, 1], vec![1.5, 0.5]).unwrap();
        let out = a.forward(&p.constants(), &x).unwrap();
        assert_eq!(out.beta.data(), &[1.0]);
        let hx = 2.0 * 1.5 - 1.0 * 0.5;
        let expect = [1.5 + 0.25 * 0.5 * hx, 0.5 + 0.25 * -3.0 * hx];
        for (y, e) in out.y.data().iter().zip(expect) {
            assert!((y - e).abs() < 1e-12);
        }
    }
}
