//! Training objectives: critic loss with gradient penalty, generator loss and
//! the skeleton, blend and classification terms.

use std::sync::Arc;

use rand::Rng;

use crate::diffcore::ops::{broadcast_to, l2_norm, mean_all, slice_axis, sum_all};
use crate::diffcore::{gradients, Result, Tape, Tensor, TensorError};
use crate::motiondata::SkeletonSpec;

/// Floor applied to probabilities inside the cross-entropy logarithm.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

/// Named scalar loss components and their total.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossBreakdown {
    pub components: Vec<(&'static str, f64)>,
    pub total: f64,
}

impl LossBreakdown {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.components.iter().find(|(n, _)| *n == name).map(|(_, v)| *v)
    }
}

/// Per-sample interpolation weights `ε ~ U[0, 1]`.
pub fn sample_epsilon(rng: &mut impl Rng, batch: usize) -> Vec<f64> {
    (0..batch).map(|_| rng.gen_range(0.0..=1.0)).collect()
}

pub struct PenaltyOutput {
    /// `mean((‖∇D(m̂)‖ - 1)²)`, differentiable with respect to the critic weights.
    pub penalty: Tensor,
    /// Per-sample gradient norms.
    pub grad_norms: Vec<f64>,
}

/// Gradient penalty on interpolates `m̂ = ε·real + (1-ε)·fake` (per sample).
///
/// `score` maps a batch on `tape` to one score per sample; samples must not
/// interact inside it. Both `real` and `fake` are treated as constants.
pub fn gradient_penalty(
    tape: &Tape,
    score: impl Fn(&Tensor) -> std::result::Result<Tensor, crate::model::ModelError>,
    real: &Tensor,
    fake: &Tensor,
    eps: &[f64],
) -> std::result::Result<PenaltyOutput, crate::model::ModelError> {
    if real.shape() != fake.shape() || real.rank() == 0 || eps.len() != real.shape()[0] {
        return Err(TensorError::ShapeMismatch {
            op: "gradient_penalty",
            lhs: real.shape().to_vec(),
            rhs: fake.shape().to_vec(),
        }
        .into());
    }
    let b = eps.len();
    let per = real.len() / b;
    let data: Vec<f64> = (0..real.len())
        .map(|i| {
            let e = eps[i / per];
            e * real.data()[i] + (1.0 - e) * fake.data()[i]
        })
        .collect();
    let m_hat = tape.leaf(&Tensor::new(real.shape().to_vec(), data)?);
    let scores = score(&m_hat)?;
    let grad = gradients(&sum_all(&scores)?, std::slice::from_ref(&m_hat), true)?.remove(0);
    let norms = l2_norm(&grad.reshape(&[b, per])?, 1)?;
    let penalty = mean_all(&norms.add_scalar(-1.0)?.square()?)?;
    Ok(PenaltyOutput {
        penalty,
        grad_norms: norms.to_vec(),
    })
}

/// `mean(fake) - mean(real) + λ·gp`, minimized by the critic.
pub fn critic_loss(real_scores: &Tensor, fake_scores: &Tensor, gp: &Tensor, lambda: f64) -> Result<Tensor> {
    if real_scores.len() != fake_scores.len() {
        return Err(TensorError::ShapeMismatch {
            op: "critic_loss",
            lhs: real_scores.shape().to_vec(),
            rhs: fake_scores.shape().to_vec(),
        });
    }
    mean_all(fake_scores)?
        .sub(&mean_all(real_scores)?)?
        .add(&gp.reshape(&[])?.scale(lambda)?)
}

/// Bone-vector gather index: for each `(b, s, axis, t)` the flat position of
/// the bone's end joint (`child`) or start joint in a `[B, 3J, T]` tensor.
fn bone_index(skeleton: &SkeletonSpec, batch: usize, len: usize, child: bool) -> Vec<usize> {
    let channels = 3 * skeleton.joint_count();
    let mut index = Vec::with_capacity(batch * skeleton.bones().len() * 3 * len);
    for b in 0..batch {
        for &(i, j) in skeleton.bones() {
            let joint = if child { j } else { i };
            for axis in 0..3 {
                for t in 0..len {
                    index.push((b * channels + 3 * joint + axis) * len + t);
                }
            }
        }
    }
    index
}

/// Bone vectors `[B, S, 3, T]` of motions `[B, 3J, T]`.
pub fn bone_vectors(motion: &Tensor, skeleton: &SkeletonSpec) -> Result<Tensor> {
    let channels = 3 * skeleton.joint_count();
    if motion.rank() != 3 || motion.shape()[1] != channels {
        return Err(TensorError::invalid(
            "bone_vectors",
            format!("expected [B, {channels}, T], got {:?}", motion.shape()),
        ));
    }
    let (b, len) = (motion.shape()[0], motion.shape()[2]);
    let shape = vec![b, skeleton.bones().len(), 3, len];
    let end = motion.gather(Arc::new(bone_index(skeleton, b, len, true)), shape.clone())?;
    let start = motion.gather(Arc::new(bone_index(skeleton, b, len, false)), shape)?;
    end.sub(&start)
}

/// `(1/T) Σ_s Σ_t ‖x₀ˢ - z_tˢ‖` averaged over the batch, where `reference`
/// holds one pose per sample (`[B, 3J]`), `future` is `[B, 3J, F]` and
/// `t_norm` is the normalizer `T`. Coordinates should be metric.
pub fn skeleton_loss(reference: &Tensor, future: &Tensor, skeleton: &SkeletonSpec, t_norm: f64) -> Result<Tensor> {
    let b = future.shape().first().copied().unwrap_or(0);
    let channels = 3 * skeleton.joint_count();
    if reference.shape() != [b, channels] {
        return Err(TensorError::ShapeMismatch {
            op: "skeleton_loss",
            lhs: reference.shape().to_vec(),
            rhs: future.shape().to_vec(),
        });
    }
    let fut = bone_vectors(future, skeleton)?;
    let refb = bone_vectors(&reference.reshape(&[b, channels, 1])?, skeleton)?;
    let diff = broadcast_to(&refb, fut.shape())?.sub(&fut)?;
    let norms = l2_norm(&diff, 2)?;
    sum_all(&norms)?.scale(1.0 / (t_norm * b as f64))
}

/// Mean over all coordinates (and samples) of `(x_T - z_0)²`; both `[B, 3J]`.
pub fn blend_loss(prior_last: &Tensor, future_first: &Tensor) -> Result<Tensor> {
    mean_all(&prior_last.sub(future_first)?.square()?)
}

/// Last frame `[B, C]` of a `[B, C, T]` batch.
pub fn last_frame(x: &Tensor) -> Result<Tensor> {
    let (b, c, t) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    slice_axis(x, 2, t - 1, t)?.reshape(&[b, c])
}

/// First frame `[B, C]` of a `[B, C, T]` batch.
pub fn first_frame(x: &Tensor) -> Result<Tensor> {
    let (b, c) = (x.shape()[0], x.shape()[1]);
    slice_axis(x, 2, 0, 1)?.reshape(&[b, c])
}

/// `-(1/m) Σ_i y_i · ln(max(ŷ_i, floor))`.
pub fn classification_loss(predicted: &Tensor, target: &Tensor) -> Result<Tensor> {
    if predicted.shape() != target.shape() || predicted.rank() != 2 {
        return Err(TensorError::ShapeMismatch {
            op: "classification_loss",
            lhs: predicted.shape().to_vec(),
            rhs: target.shape().to_vec(),
        });
    }
    let m = predicted.shape()[0] as f64;
    let log_p = predicted.clamp_min(PROBABILITY_FLOOR)?.ln()?;
    sum_all(&target.mul(&log_p)?)?.scale(-1.0 / m)
}

/// Which auxiliary terms enter the generator objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GeneratorTerms {
    pub skeleton: bool,
    pub blend: bool,
    pub class: bool,
}

impl Default for GeneratorTerms {
    fn default() -> Self {
        Self {
            skeleton: true,
            blend: true,
            class: true,
        }
    }
}

/// `-mean(D(fake)) + skel + blend + class` with unit weights; disabled
/// terms are left out of both the total and the breakdown.
pub fn generator_loss(
    fake_scores: &Tensor,
    skel: &Tensor,
    blend: &Tensor,
    class: &Tensor,
    terms: GeneratorTerms,
) -> Result<(Tensor, LossBreakdown)> {
    let adv = mean_all(fake_scores)?.neg()?;
    let mut breakdown = LossBreakdown {
        components: vec![("gen_wasserstein", adv.item())],
        total: 0.0,
    };
    let mut total = adv;
    for (on, name, t) in [
        (terms.skeleton, "skel", skel),
        (terms.blend, "blend", blend),
        (terms.class, "class", class),
    ] {
        if on {
            let t = t.reshape(&[])?;
            breakdown.components.push((name, t.item()));
            total = total.add(&t)?;
        }
    }
    breakdown.total = total.item();
    Ok((total, breakdown))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::ops::dense;
    use crate::model::ModelError;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn two_bone() -> SkeletonSpec {
        SkeletonSpec::new(vec!["a".into(), "b".into(), "c".into()], vec![(0, 1), (1, 2)], vec![1.0, 1.0]).unwrap()
    }

    #[test]
    fn unit_norm_linear_critic_has_zero_penalty() {
        let tape = Tape::new();
        let mut w: Vec<f64> = (0..6).map(|i| (i as f64 - 2.5) * 0.3).collect();
        let n = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        w.iter_mut().for_each(|v| *v /= n);
        let wt = Tensor::new(vec![6, 1], w).unwrap();
        let score = |m: &Tensor| -> std::result::Result<Tensor, ModelError> {
            Ok(dense(&m.reshape(&[m.shape()[0], 6])?, &wt, None)?.reshape(&[m.shape()[0]])?)
        };
        let out = gradient_penalty(&tape, score, &random(&[4, 2, 3], 1), &random(&[4, 2, 3], 2), &[0.1, 0.5, 0.9, 0.3]).unwrap();
        assert!(out.penalty.item().abs() < 1e-20);
        assert!(out.grad_norms.iter().all(|g| (g - 1.0).abs() < 1e-12));
    }

    #[test]
    fn constant_critic_has_unit_penalty() {
        let tape = Tape::new();
        let score = |m: &Tensor| -> std::result::Result<Tensor, ModelError> {
            Ok(sum_all(&m.scale(0.0)?)?.add_scalar(2.0)?.reshape(&[1])?.add(&Tensor::zeros(&[1]))?)
        };
        let out = gradient_penalty(&tape, score, &random(&[1, 2, 2], 1), &random(&[1, 2, 2], 2), &[0.4]).unwrap();
        assert_eq!(out.penalty.item(), 1.0);
    }

    #[test]
    fn critic_loss_algebra() {
        let s = Tensor::vector(vec![0.3, -1.2, 2.0]);
        let zero = Tensor::scalar(0.0);
        assert_eq!(critic_loss(&s, &s, &zero, 10.0).unwrap().item(), 0.0);
        let up = s.add_scalar(0.7).unwrap();
        let l = critic_loss(&s, &up, &zero, 10.0).unwrap().item();
        assert!((l - 0.7).abs() < 1e-12);
        let l = critic_loss(&s, &s, &Tensor::scalar(0.5), 10.0).unwrap().item();
        assert!((l - 5.0).abs() < 1e-12);
    }

    #[test]
    fn skeleton_loss_cases() {
        let sk = two_bone();
        let pose = [0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        let reference = Tensor::new(vec![1, 9], pose.to_vec()).unwrap();
        let frames = 5;
        let mut repeat = vec![0.0; 9 * frames];
        let mut shifted = vec![0.0; 9 * frames];
        let mut offset = vec![0.0; 9 * frames];
        for c in 0..9 {
            for t in 0..frames {
                repeat[c * frames + t] = pose[c];
                shifted[c * frames + t] = pose[c] + 0.3 * t as f64 * (c % 3 + 1) as f64;
                // joint k moves by k * d along y, so each bone shifts by d
                let k = (c / 3) as f64;
                offset[c * frames + t] = pose[c] + if c % 3 == 1 { 0.2 * k } else { 0.0 };
            }
        }
        let t = |v: Vec<f64>| Tensor::new(vec![1, 9, frames], v).unwrap();
        assert_eq!(skeleton_loss(&reference, &t(repeat), &sk, 25.0).unwrap().item(), 0.0);
        assert!(skeleton_loss(&reference, &t(shifted), &sk, 25.0).unwrap().item().abs() < 1e-12);
        let l = skeleton_loss(&reference, &t(offset), &sk, 25.0).unwrap().item();
        assert!((l - 2.0 * frames as f64 * 0.2 / 25.0).abs() < 1e-12);
    }

    #[test]
    fn blend_loss_cases() {
        let a = Tensor::new(vec![1, 6], vec![0.5; 6]).unwrap();
        assert_eq!(blend_loss(&a, &a).unwrap().item(), 0.0);
        let mut v = vec![0.5; 6];
        v[2] += 1.0;
        let b = Tensor::new(vec![1, 6], v).unwrap();
        assert!((blend_loss(&a, &b).unwrap().item() - 1.0 / 6.0).abs() < 1e-15);
        let mut v = vec![0.5; 6];
        v[2] += 2.0;
        let c = Tensor::new(vec![1, 6], v).unwrap();
        assert!((blend_loss(&a, &c).unwrap().item() - 4.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_cases() {
        let y = Tensor::new(vec![2, 4], vec![1., 0., 0., 0., 0., 0., 1., 0.]).unwrap();
        assert_eq!(classification_loss(&y, &y).unwrap().item(), 0.0);
        let u = Tensor::full(&[2, 4], 0.25);
        assert!((classification_loss(&u, &y).unwrap().item() - 4f64.ln()).abs() < 1e-12);
        let p = Tensor::new(vec![2, 4], vec![0.7, 0.1, 0.1, 0.1, 0.2, 0.2, 0.5, 0.1]).unwrap();
        let expect = (-(0.7f64.ln()) - 0.5f64.ln()) / 2.0;
        assert!((classification_loss(&p, &y).unwrap().item() - expect).abs() < 1e-12);
        let zero = Tensor::new(vec![1, 4], vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        let t = Tensor::new(vec![1, 4], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(classification_loss(&zero, &t).unwrap().item().is_finite());
    }

    #[test]
    fn generator_loss_is_additive() {
        let s = Tensor::vector(vec![0.25, -1.0]);
        let (sk, bl, cl) = (Tensor::scalar(0.125), Tensor::scalar(0.5), Tensor::scalar(1.25));
        let (t, b) = generator_loss(&s, &sk, &bl, &cl, GeneratorTerms::default()).unwrap();
        let sum: f64 = b.components.iter().map(|(_, v)| v).sum();
        assert!((t.item() - sum).abs() < 1e-12);
        assert_eq!(b.total, t.item());
        let (t2, _) = generator_loss(&s.add_scalar(0.5).unwrap(), &sk, &bl, &cl, GeneratorTerms::default()).unwrap();
        assert!((t.item() - t2.item() - 0.5).abs() < 1e-12);
        let off = GeneratorTerms {
            blend: false,
            ..GeneratorTerms::default()
        };
        let (_, b) = generator_loss(&s, &sk, &bl, &cl, off).unwrap();
        assert!(b.get("blend").is_none());
    }
}
