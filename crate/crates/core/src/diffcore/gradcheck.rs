//! Central finite-difference checks of reverse-mode gradients.

use rand::Rng;

use super::error::TensorError;
use super::tensor::{gradients, Tape, Tensor};

/// Step and tolerances of a finite-difference check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiniteDiff {
    pub h: f64,
    /// Lower bound of the relative-error denominator.
    pub floor: f64,
    /// A stencil whose central differences at `h` and `h/2` disagree by more
    /// than this (relative) straddles a kink and is not compared.
    pub kink_tol: f64,
}

/// Worst discrepancy found by a check.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GradCheck {
    /// `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_error: f64,
    pub comparisons: usize,
    /// Stencils skipped because `f` is not smooth across them.
    pub rejected: usize,
}

impl GradCheck {
    fn record(&mut self, rel: f64) {
        // NaN must never look like a pass
        if !(rel <= self.max_rel_error) {
            self.max_rel_error = if rel.is_nan() { f64::INFINITY } else { rel };
        }
        self.comparisons += 1;
    }

    /// Combines two reports into their worst case.
    pub fn absorb(&mut self, other: GradCheck) {
        if !(other.max_rel_error <= self.max_rel_error) {
            self.max_rel_error = if other.max_rel_error.is_nan() { f64::INFINITY } else { other.max_rel_error };
        }
        self.comparisons += other.comparisons;
        self.rejected += other.rejected;
    }
}

enum Stencil {
    Smooth(f64),
    Kinked,
}

/// Central difference along `g(s) = f(x + s v)`, or `Kinked` when the
/// estimates at `h` and `h/2` disagree.
fn central<E>(g: impl Fn(f64) -> Result<f64, E>, analytic: f64, fd: &FiniteDiff) -> Result<Stencil, E> {
    let d = |h: f64| -> Result<f64, E> { Ok((g(h)? - g(-h)?) / (2.0 * h)) };
    let full = d(fd.h)?;
    let half = d(fd.h / 2.0)?;
    let denom = analytic.abs().max(full.abs()).max(fd.floor);
    if (full - half).abs() / denom > fd.kink_tol {
        Ok(Stencil::Kinked)
    } else {
        Ok(Stencil::Smooth(full))
    }
}

fn relative(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn analytic<F, E>(f: &F, inputs: &[Tensor]) -> Result<(f64, Vec<Tensor>), E>
where
    F: Fn(&[Tensor]) -> Result<Tensor, E>,
    E: From<TensorError>,
{
    let tape = Tape::new();
    let leaves: Vec<Tensor> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let loss = f(&leaves)?;
    let grads = gradients(&loss, &leaves, false)?;
    Ok((loss.item(), grads))
}

fn shifted(inputs: &[Tensor], apply: impl Fn(usize, &mut Vec<f64>)) -> Vec<Tensor> {
    inputs
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let mut d = t.to_vec();
            apply(i, &mut d);
            Tensor::new(t.shape().to_vec(), d).expect("shape preserved")
        })
        .collect()
}

/// Compares every gradient coordinate of the scalar `f` against
/// `(f(x + h e) - f(x - h e)) / 2h`. Coordinates whose stencil crosses a
/// kink are counted in `rejected`.
pub fn check_coordinates<F, E>(f: F, inputs: &[Tensor], fd: &FiniteDiff) -> Result<GradCheck, E>
where
    F: Fn(&[Tensor]) -> Result<Tensor, E>,
    E: From<TensorError>,
{
    let (_, grads) = analytic(&f, inputs)?;
    let mut report = GradCheck::default();
    for (i, t) in inputs.iter().enumerate() {
        for e in 0..t.len() {
            let a = grads[i].data()[e];
            let g = |s: f64| -> Result<f64, E> { Ok(f(&shifted(inputs, |j, d| if j == i { d[e] += s }))?.item()) };
            match central(g, a, fd)? {
                Stencil::Smooth(n) => report.record(relative(a, n, fd.floor)),
                Stencil::Kinked => report.rejected += 1,
            }
        }
    }
    Ok(report)
}

/// Compares directional derivatives along `directions` random unit-box
/// directions, which covers every coordinate at once for large inputs. A
/// direction whose stencil crosses a kink is redrawn (up to 16 times).
pub fn check_directions<F, E>(
    f: F,
    inputs: &[Tensor],
    fd: &FiniteDiff,
    directions: usize,
    rng: &mut impl Rng,
) -> Result<GradCheck, E>
where
    F: Fn(&[Tensor]) -> Result<Tensor, E>,
    E: From<TensorError>,
{
    let (_, grads) = analytic(&f, inputs)?;
    let mut report = GradCheck::default();
    for _ in 0..directions {
        for _ in 0..16 {
            let v: Vec<Vec<f64>> = inputs
                .iter()
                .map(|t| (0..t.len()).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let along: f64 = grads
                .iter()
                .zip(&v)
                .map(|(g, v)| g.data().iter().zip(v).map(|(a, b)| a * b).sum::<f64>())
                .sum();
            let g = |s: f64| -> Result<f64, E> {
                let x = shifted(inputs, |j, d| {
                    for (x, dv) in d.iter_mut().zip(&v[j]) {
                        *x += s * dv;
                    }
                });
                Ok(f(&x)?.item())
            };
            match central(g, along, fd)? {
                Stencil::Smooth(n) => {
                    report.record(relative(along, n, fd.floor));
                    break;
                }
                Stencil::Kinked => report.rejected += 1,
            }
        }
    }
    Ok(report)
}
