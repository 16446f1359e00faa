//! Bias-corrected Adam.

use super::error::{Result, TensorError};
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.005,
            beta1: 0.0,
            beta2: 0.9,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, sizes: impl IntoIterator<Item = usize>) -> Self {
        let sizes: Vec<usize> = sizes.into_iter().collect();
        Self {
            config,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    pub fn for_tensors(config: AdamConfig, params: &[Tensor]) -> Self {
        Self::new(config, params.iter().map(Tensor::len))
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.v
    }

    fn check(&self, values: &[&[f64]], grads: &[Tensor]) -> Result<()> {
        if values.len() != grads.len() || values.len() != self.m.len() {
            return Err(TensorError::invalid(
                "adam",
                format!(
                    "{} params, {} grads, {} moment slots",
                    values.len(),
                    grads.len(),
                    self.m.len()
                ),
            ));
        }
        for (i, (p, g)) in values.iter().zip(grads).enumerate() {
            if p.len() != g.len() || p.len() != self.m[i].len() {
                return Err(TensorError::invalid(
                    "adam",
                    format!(
                        "slot {i}: param has {} values, grad {:?}, moments {}",
                        p.len(),
                        g.shape(),
                        self.m[i].len()
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Returns updated copies of `values`; increments the step counter.
    pub(crate) fn update(&mut self, values: &[&[f64]], grads: &[Tensor]) -> Result<Vec<Vec<f64>>> {
        self.check(values, grads)?;
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let mut out = Vec::with_capacity(values.len());
        for (i, (p, g)) in values.iter().zip(grads).enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let mut next = p.to_vec();
            for (j, &gj) in g.data().iter().enumerate() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                next[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            out.push(next);
        }
        Ok(out)
    }
}

/// One Adam step: replaces each parameter with its updated value.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState) -> Result<()> {
    let values: Vec<&[f64]> = params.iter().map(Tensor::data).collect();
    let updated = state.update(&values, grads)?;
    for (p, data) in params.iter_mut().zip(updated) {
        *p = Tensor::new(p.shape().to_vec(), data)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_training_schedule() {
        let c = AdamConfig::default();
        assert_eq!((c.lr, c.beta1, c.beta2, c.eps), (0.005, 0.0, 0.9, 1e-8));
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![Tensor::vector(vec![1.0, -2.0])];
        let mut s = AdamState::for_tensors(AdamConfig::default(), &p);
        adam_step(&mut p, &[Tensor::zeros(&[2])], &mut s).unwrap();
        assert_eq!(p[0].data(), &[1.0, -2.0]);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = vec![Tensor::vector(vec![0.0, 0.0])];
        let mut s = AdamState::for_tensors(AdamConfig::default(), &p);
        adam_step(&mut p, &[Tensor::vector(vec![3.0, -0.2])], &mut s).unwrap();
        assert!((p[0].data()[0] + 0.005).abs() < 1e-10);
        assert!((p[0].data()[1] - 0.005).abs() < 1e-9);
    }

    #[test]
    fn mismatched_shapes_rejected() {
        let mut p = vec![Tensor::vector(vec![0.0, 0.0])];
        let mut s = AdamState::for_tensors(AdamConfig::default(), &p);
        assert!(adam_step(&mut p, &[Tensor::vector(vec![1.0])], &mut s).is_err());
        assert_eq!(s.step_count(), 0);
    }

    #[test]
    fn step_counter_strictly_increases() {
        let mut p = vec![Tensor::scalar(1.0)];
        let mut s = AdamState::for_tensors(AdamConfig::default(), &p);
        for k in 1..=5 {
            adam_step(&mut p, &[Tensor::scalar(0.5)], &mut s).unwrap();
            assert_eq!(s.step_count(), k);
        }
    }
}
