//! Finite-difference gradient cases shared by the gradient tests and the
//! acceptance runner.

#![allow(dead_code)]

use std::sync::Arc;

use motionforge::diffcore::gradcheck::{check_coordinates, check_directions, FiniteDiff, GradCheck};
use motionforge::diffcore::ops::*;
use motionforge::diffcore::{gradients, Tensor, NO_SOURCE};
use motionforge::losses::gradient_penalty;
use motionforge::model::{
    AttentionPlacement, Classifier, Critic, Generator, ModelConfig, ModelError, ParamSet, SelfAttention,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Step `h = 1e-5`. The denominator floor makes coordinates whose true
/// gradient is zero compare on an absolute scale; stencils across a kink
/// (leaky rectifier, clamp) are redrawn or skipped.
pub const FD: FiniteDiff = FiniteDiff {
    h: 1e-5,
    floor: 1e-4,
    kink_tol: 1e-5,
};

pub type Loss = Box<dyn Fn(&[Tensor]) -> Result<Tensor, ModelError>>;
pub type Build = fn(&mut ChaCha8Rng) -> (Loss, Vec<Tensor>);

pub fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn dim(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.gen_range(lo..=hi)
}

/// Reduces `f` to a scalar with fixed random weights, so no output
/// coordinate cancels by symmetry (softmax rows sum to one, for instance).
fn weighted(
    rng: &mut ChaCha8Rng,
    inputs: Vec<Tensor>,
    f: impl Fn(&[Tensor]) -> Result<Tensor, ModelError> + 'static,
) -> (Loss, Vec<Tensor>) {
    let out = f(&inputs).expect("case evaluates");
    let w = uniform(out.shape(), rng);
    let loss: Loss = Box::new(move |x| Ok(sum_all(&f(x)?.mul(&w)?)?));
    (loss, inputs)
}

fn unary(rng: &mut ChaCha8Rng, f: fn(&Tensor) -> Result<Tensor, ModelError>) -> (Loss, Vec<Tensor>) {
    let shape = [dim(rng, 1, 3), dim(rng, 1, 4)];
    let x = uniform(&shape, rng);
    weighted(rng, vec![x], move |t| f(&t[0]))
}

fn binary(rng: &mut ChaCha8Rng, f: fn(&Tensor, &Tensor) -> Result<Tensor, ModelError>) -> (Loss, Vec<Tensor>) {
    let shape = [dim(rng, 1, 3), dim(rng, 1, 4)];
    let (a, b) = (uniform(&shape, rng), uniform(&shape, rng));
    weighted(rng, vec![a, b], move |t| f(&t[0], &t[1]))
}

fn matmul_case(rng: &mut ChaCha8Rng, ta: bool, tb: bool) -> (Loss, Vec<Tensor>) {
    let (m, k, n) = (dim(rng, 1, 4), dim(rng, 1, 4), dim(rng, 1, 20));
    let a_shape = if ta { [k, m] } else { [m, k] };
    let b_shape = if tb { [n, k] } else { [k, n] };
    let batch = dim(rng, 1, 3);
    // the left operand is batched and the right one broadcast
    let a = uniform(&[batch, a_shape[0], a_shape[1]], rng);
    let b = uniform(&b_shape, rng);
    weighted(rng, vec![a, b], move |t| Ok(t[0].matmul_t(&t[1], ta, tb)?))
}

pub fn primitive_cases() -> Vec<(&'static str, Build)> {
    vec![
        ("add", |r| binary(r, |a, b| Ok(a.add(b)?))),
        ("sub", |r| binary(r, |a, b| Ok(a.sub(b)?))),
        ("mul", |r| binary(r, |a, b| Ok(a.mul(b)?))),
        ("div", |r| binary(r, |a, b| Ok(a.div(&b.square()?.add_scalar(0.5)?)?))),
        ("scale", |r| unary(r, |x| Ok(x.scale(-1.7)?))),
        ("neg", |r| unary(r, |x| Ok(x.neg()?))),
        ("add_scalar", |r| unary(r, |x| Ok(x.add_scalar(0.3)?.square()?))),
        ("exp", |r| unary(r, |x| Ok(x.exp()?))),
        ("ln", |r| unary(r, |x| Ok(x.square()?.add_scalar(0.5)?.ln()?))),
        ("tanh", |r| unary(r, |x| Ok(x.tanh()?))),
        ("sqrt", |r| unary(r, |x| Ok(x.square()?.add_scalar(0.1)?.sqrt()?))),
        ("square", |r| unary(r, |x| Ok(x.square()?))),
        ("leaky_relu", |r| unary(r, |x| Ok(x.leaky_relu(0.2)?))),
        ("clamp_min", |r| unary(r, |x| Ok(x.clamp_min(0.1)?))),
        ("matmul", |r| matmul_case(r, false, false)),
        ("matmul_ta", |r| matmul_case(r, true, false)),
        ("matmul_tb", |r| matmul_case(r, false, true)),
        ("matmul_ta_tb", |r| matmul_case(r, true, true)),
        ("gather", |r| {
            let x = uniform(&[dim(r, 2, 6)], r);
            let n = dim(r, 1, 8);
            let idx: Vec<usize> = (0..n)
                .map(|_| if r.gen_bool(0.2) { NO_SOURCE } else { r.gen_range(0..x.len()) })
                .collect();
            let idx = Arc::new(idx);
            weighted(r, vec![x], move |t| Ok(t[0].gather(idx.clone(), vec![n])?))
        }),
        ("scatter_add", |r| {
            let x = uniform(&[dim(r, 2, 8)], r);
            let n = dim(r, 1, 5);
            let idx: Vec<usize> = (0..x.len())
                .map(|_| if r.gen_bool(0.2) { NO_SOURCE } else { r.gen_range(0..n) })
                .collect();
            let idx = Arc::new(idx);
            weighted(r, vec![x], move |t| Ok(t[0].scatter_add(idx.clone(), vec![n])?))
        }),
        ("reshape", |r| unary(r, |x| Ok(x.reshape(&[x.len()])?.square()?))),
        ("broadcast_to", |r| {
            let x = uniform(&[dim(r, 1, 3), 1], r);
            let n = dim(r, 1, 4);
            weighted(r, vec![x], move |t| Ok(broadcast_to(&t[0], &[2, t[0].shape()[0], n])?))
        }),
        ("permute", |r| {
            let x = uniform(&[dim(r, 1, 3), dim(r, 1, 3), dim(r, 1, 3)], r);
            weighted(r, vec![x], |t| Ok(permute(&t[0], &[2, 0, 1])?))
        }),
        ("transpose_last2", |r| unary(r, |x| Ok(transpose_last2(x)?))),
        ("slice_axis", |r| {
            let x = uniform(&[2, dim(r, 2, 6)], r);
            let end = dim(r, 1, x.shape()[1]);
            weighted(r, vec![x], move |t| Ok(slice_axis(&t[0], 1, end - 1, end)?))
        }),
        ("concat", |r| {
            let a = uniform(&[2, dim(r, 1, 3)], r);
            let b = uniform(&[2, dim(r, 1, 3)], r);
            weighted(r, vec![a, b], |t| Ok(concat(&[&t[0], &t[1]], 1)?))
        }),
        ("sum_axis", |r| unary(r, |x| Ok(sum_axis(x, 1)?.square()?))),
        ("sum_keep", |r| unary(r, |x| Ok(sum_keep(x, 0)?.square()?))),
        ("sum_all", |r| unary(r, |x| Ok(sum_all(x)?.square()?))),
        ("mean_axis", |r| unary(r, |x| Ok(mean_axis(x, 0)?.square()?))),
        ("mean_all", |r| unary(r, |x| Ok(mean_all(x)?.square()?))),
        ("l2_norm", |r| unary(r, |x| Ok(l2_norm(x, 1)?))),
        ("softmax", |r| unary(r, |x| Ok(softmax(x, 1)?))),
        ("layer_norm", |r| {
            let x = uniform(&[dim(r, 1, 3), dim(r, 2, 4), dim(r, 1, 3)], r);
            weighted(r, vec![x], |t| Ok(layer_norm(&t[0], 1)?))
        }),
        ("dense", |r| {
            let (b, i, o) = (dim(r, 1, 3), dim(r, 1, 4), dim(r, 1, 4));
            let v = vec![uniform(&[b, i], r), uniform(&[i, o], r), uniform(&[o], r)];
            weighted(r, v, |t| Ok(dense(&t[0], &t[1], Some(&t[2]))?))
        }),
        ("conv1d", |r| {
            let (b, ci, co, len) = (dim(r, 1, 2), dim(r, 1, 3), dim(r, 1, 3), dim(r, 3, 9));
            let k = [1, 3, 5][r.gen_range(0..3)];
            let stride = dim(r, 1, 2);
            let v = vec![uniform(&[b, ci, len], r), uniform(&[co, ci, k], r), uniform(&[co], r)];
            weighted(r, v, move |t| Ok(conv1d(&t[0], &t[1], Some(&t[2]), stride, k / 2)?))
        }),
        ("conv1x1", |r| {
            let (b, ci, co, len) = (dim(r, 1, 2), dim(r, 1, 3), dim(r, 1, 3), dim(r, 1, 6));
            let v = vec![uniform(&[b, ci, len], r), uniform(&[co, ci], r)];
            weighted(r, v, |t| Ok(conv1x1(&t[0], &t[1])?))
        }),
        ("upsample_nearest", |r| {
            let x = uniform(&[1, 2, dim(r, 1, 4)], r);
            let out = dim(r, x.shape()[2], 9);
            weighted(r, vec![x], move |t| Ok(upsample_nearest(&t[0], out)?))
        }),
        ("self_attention", |r| {
            let (c, n) = (dim(r, 2, 9), dim(r, 1, 6));
            let layer = SelfAttention::new("a", c);
            let mut set = ParamSet::new();
            let cr = layer.reduced;
            for (name, shape) in [("a.wf", [cr, c]), ("a.wg", [cr, c]), ("a.wh", [cr, c]), ("a.wv", [c, cr])] {
                set.push(name, shape.to_vec(), uniform(&shape, r).to_vec());
            }
            set.push("a.gamma", vec![1], vec![r.gen_range(-1.0..1.0)]);
            let mut v: Vec<Tensor> =
                set.entries().iter().map(|e| Tensor::new(e.shape.clone(), e.data.to_vec()).unwrap()).collect();
            v.push(uniform(&[dim(r, 1, 2), c, n], r));
            weighted(r, v, move |t| {
                let p = t.len() - 1;
                let w = set.with_tensors(t[..p].to_vec())?;
                layer.forward(&w, &t[p]).map(|o| o.y)
            })
        }),
    ]
}

/// Coordinate-wise first-order check over `trials` random instances.
pub fn first_order(build: Build, trials: usize, seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = GradCheck::default();
    for _ in 0..trials {
        let (f, x) = build(&mut rng);
        let r = check_coordinates(f, &x, &FD).expect("case evaluates");
        worst.absorb(r);
    }
    worst
}

/// Checks the derivative of `sum(v * grad f)`, which exercises every
/// backward rule as a differentiable function.
pub fn second_order(build: Build, trials: usize, seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = GradCheck::default();
    for _ in 0..trials {
        let (f, x) = build(&mut rng);
        let v: Vec<Tensor> = x.iter().map(|t| uniform(t.shape(), &mut rng)).collect();
        let hvp = move |inputs: &[Tensor]| -> Result<Tensor, ModelError> {
            let tape = inputs.iter().find_map(|t| t.tape()).unwrap_or_default();
            let leaves: Vec<Tensor> =
                inputs.iter().map(|t| if t.is_attached() { t.clone() } else { tape.leaf(t) }).collect();
            let g = gradients(&f(&leaves)?, &leaves, true)?;
            let mut total = Tensor::scalar(0.0);
            for (g, v) in g.iter().zip(&v) {
                total = total.add(&sum_all(&g.mul(v)?)?)?;
            }
            Ok(total)
        };
        let r = check_coordinates(hvp, &x, &FD).expect("case evaluates");
        worst.absorb(r);
    }
    worst
}

/// A small configuration that keeps every structural feature.
pub fn tiny_config(attention: AttentionPlacement) -> ModelConfig {
    ModelConfig {
        joints: 2,
        window: 9,
        kernel: 3,
        encoder_channels: [3, 4, 8],
        latent: 5,
        critic_channels: [3, 4, 8, 3],
        classifier_channels: [3, 4, 3],
        attention,
        critic_attention: true,
        ..ModelConfig::default()
    }
}

/// Randomizes every parameter, including the attention gate, so that all
/// weights influence the output.
fn randomized(set: &ParamSet, rng: &mut ChaCha8Rng) -> ParamSet {
    let mut out = set.clone();
    for e in set.entries() {
        let v = uniform(&e.shape, rng).to_vec();
        out.set(&e.name, v).unwrap();
    }
    out
}

fn param_tensors(set: &ParamSet) -> Vec<Tensor> {
    set.entries().iter().map(|e| Tensor::new(e.shape.clone(), e.data.to_vec()).unwrap()).collect()
}

fn controls(rng: &mut ChaCha8Rng, b: usize) -> Tensor {
    let mut d = vec![0.0; b * 4];
    for i in 0..b {
        d[i * 4 + rng.gen_range(0..4)] = 1.0;
    }
    Tensor::new(vec![b, 4], d).unwrap()
}

/// A randomized network case: the loss over parameters and input, and the
/// point to differentiate at.
pub fn network_case(kind: &str, placement: AttentionPlacement, rng: &mut ChaCha8Rng) -> (Loss, Vec<Tensor>) {
    let cfg = tiny_config(placement);
    let (b, c, t) = (2, cfg.channels(), cfg.window);
    let ctl = controls(rng, b);
    match kind {
        "generator" => {
            let mut g = Generator::new(cfg, rng).unwrap();
            g.params = randomized(&g.params, rng);
            let mut x = param_tensors(&g.params);
            x.push(uniform(&[b, c, t], rng));
            weighted(rng, x, move |v| {
                let p = v.len() - 1;
                g.forward(&g.params.with_tensors(v[..p].to_vec())?, &v[p], &ctl)
            })
        }
        "critic" => {
            let mut d = Critic::new(cfg, rng).unwrap();
            d.params = randomized(&d.params, rng);
            let mut x = param_tensors(&d.params);
            x.push(uniform(&[b, c, 2 * t], rng));
            weighted(rng, x, move |v| {
                let p = v.len() - 1;
                d.forward(&d.params.with_tensors(v[..p].to_vec())?, &v[p], &ctl)
            })
        }
        "classifier" => {
            let mut k = Classifier::new(cfg, rng).unwrap();
            k.params = randomized(&k.params, rng);
            let mut x = param_tensors(&k.params);
            x.push(uniform(&[b, c, t], rng));
            weighted(rng, x, move |v| {
                let p = v.len() - 1;
                k.forward(&k.params.with_tensors(v[..p].to_vec())?, &v[p])
            })
        }
        other => panic!("unknown network {other}"),
    }
}

/// Directional checks of the composed networks over parameters and input.
pub fn network(kind: &str, trials: usize, seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = GradCheck::default();
    for trial in 0..trials {
        let placement = [AttentionPlacement::Decoder, AttentionPlacement::Encoder][trial % 2];
        let (f, x) = network_case(kind, placement, &mut rng);
        let r = check_directions(f, &x, &FD, 4, &mut rng).expect("network evaluates");
        worst.absorb(r);
    }
    worst
}

/// Gradient of the penalty `mean((|grad_x D_w(x)| - 1)^2)` with respect to
/// the weights `w` of a two-layer critic `D(x) = v . leaky(W x + b)`, and
/// of the full critic network.
pub fn penalty(trials: usize, seed: u64, full_critic: bool) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = GradCheck::default();
    for _ in 0..trials {
        let b = 3;
        let (f, x): (Loss, Vec<Tensor>) = if full_critic {
            let cfg = tiny_config(AttentionPlacement::Decoder);
            let shape = [b, cfg.channels(), 2 * cfg.window];
            let mut d = Critic::new(cfg, &mut rng).unwrap();
            d.params = randomized(&d.params, &mut rng);
            let ctl = controls(&mut rng, b);
            let (real, fake) = (uniform(&shape, &mut rng), uniform(&shape, &mut rng));
            let eps: Vec<f64> = (0..b).map(|_| rng.gen()).collect();
            let x = param_tensors(&d.params);
            let f: Loss = Box::new(move |v| {
                let tape = v.iter().find_map(|t| t.tape()).unwrap_or_default();
                let w = d.params.with_tensors(v.to_vec())?;
                let out = gradient_penalty(&tape, |m| d.forward(&w, m, &ctl), &real, &fake, &eps)?;
                Ok(out.penalty)
            });
            (f, x)
        } else {
            let (n_in, hidden) = (rng.gen_range(2..6), rng.gen_range(2..6));
            let x = vec![
                uniform(&[n_in, hidden], &mut rng),
                uniform(&[hidden], &mut rng),
                uniform(&[hidden, 1], &mut rng),
            ];
            let (real, fake) = (uniform(&[b, n_in], &mut rng), uniform(&[b, n_in], &mut rng));
            let eps: Vec<f64> = (0..b).map(|_| rng.gen()).collect();
            let f: Loss = Box::new(move |v| {
                let tape = v.iter().find_map(|t| t.tape()).unwrap_or_default();
                let (w1, b1, w2) = (v[0].clone(), v[1].clone(), v[2].clone());
                let score = move |m: &Tensor| -> Result<Tensor, ModelError> {
                    let h = dense(m, &w1, Some(&b1))?.leaky_relu(0.2)?;
                    Ok(dense(&h, &w2, None)?.reshape(&[m.shape()[0]])?)
                };
                Ok(gradient_penalty(&tape, score, &real, &fake, &eps)?.penalty)
            });
            (f, x)
        };
        let r = if full_critic {
            check_directions(f, &x, &FD, 4, &mut rng)
        } else {
            check_coordinates(f, &x, &FD)
        }
        .expect("penalty evaluates");
        worst.absorb(r);
    }
    worst
}

