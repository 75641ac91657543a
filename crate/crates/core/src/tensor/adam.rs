use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// Adam with bias correction, one moment pair per parameter tensor.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        Self {
            config,
            first: zeros.clone(),
            second: zeros,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients stored on `params`. Parameters
    /// with no gradient buffer are treated as having zero gradient. Gradient
    /// buffers are zeroed after use. Nothing is modified if any gradient is
    /// non-finite.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<()> {
        if params.len() != self.first.len() {
            return Err(Error::shape(
                "adam_step",
                format!("{} parameters vs {} moment slots", params.len(), self.first.len()),
            ));
        }
        for ((name, t), m) in params.iter().zip(&self.first) {
            if t.numel() != m.len() {
                return Err(Error::shape(
                    "adam_step",
                    format!("parameter `{name}` has {} values, moments {}", t.numel(), m.len()),
                ));
            }
            if let Some(g) = &t.grad {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteGradient(name.to_string()));
                }
            }
        }

        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (((_, t), m), v) in params
            .iter_mut()
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            let grad = t.grad.take();
            let data = t.data_mut();
            for i in 0..data.len() {
                let g = grad.as_ref().map_or(0.0, |g| g[i]);
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                data[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
            t.grad = grad.map(|mut g| {
                g.fill(0.0);
                g
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn single(value: f64, grad: f64) -> ParamStore {
        let mut p = ParamStore::new();
        let id = p.add("w", Tensor::vector(vec![value]));
        p.get_mut(id).accumulate_grad(&[grad]).unwrap();
        p
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = single(0.0, 1.0);
        let mut adam = AdamState::new(AdamConfig::default(), &p);
        adam.step(&mut p).unwrap();
        let w = p.by_name("w").unwrap().data()[0];
        let want = -1e-4 / (1.0 + 1e-8);
        assert!((w - want).abs() < 1e-15, "{w}");
        assert!((w + 9.99999e-5).abs() < 1e-9);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn step_zeroes_gradients() {
        let mut p = single(0.0, 1.0);
        let mut adam = AdamState::new(AdamConfig::default(), &p);
        adam.step(&mut p).unwrap();
        assert!(p.grads_all_zero());
        // A second step with no new gradient only decays the moments.
        let before = p.by_name("w").unwrap().data()[0];
        adam.step(&mut p).unwrap();
        let after = p.by_name("w").unwrap().data()[0];
        let m = 0.9 * 0.1 / (1.0 - 0.81);
        let v = 0.999 * 0.001 / (1.0 - 0.999f64.powi(2));
        assert!((after - (before - 1e-4 * m / (v.sqrt() + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = single(2.5, 0.0);
        let mut adam = AdamState::new(AdamConfig::default(), &p);
        adam.step(&mut p).unwrap();
        assert_eq!(p.by_name("w").unwrap().data()[0], 2.5);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn nan_gradient_is_rejected_by_name() {
        let mut p = single(1.0, f64::NAN);
        let mut adam = AdamState::new(AdamConfig::default(), &p);
        match adam.step(&mut p) {
            Err(Error::NonFiniteGradient(name)) => assert_eq!(name, "w"),
            other => panic!("{other:?}"),
        }
        assert_eq!(adam.step_count(), 0);
        assert_eq!(p.by_name("w").unwrap().data()[0], 1.0);
    }

    /// Independent scalar Adam used as the reference trajectory.
    fn scalar_adam(w0: f64, lr: f64, steps: usize) -> Vec<f64> {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut w, mut m, mut v) = (w0, 0.0, 0.0);
        let mut out = vec![];
        for t in 1..=steps {
            let g = 2.0 * (w - 3.0);
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t as i32));
            let vh = v / (1.0 - b2.powi(t as i32));
            w -= lr * mh / (vh.sqrt() + eps);
            out.push(w);
        }
        out
    }

    #[test]
    fn quadratic_matches_reference_and_approaches_minimum() {
        let mut p = ParamStore::new();
        let id = p.add("w", Tensor::vector(vec![0.0]));
        let mut adam = AdamState::new(AdamConfig::with_lr(0.1), &p);
        let mut traj = vec![];
        for _ in 0..100 {
            p.zero_grad();
            let w = p.get(id).data()[0];
            p.get_mut(id).accumulate_grad(&[2.0 * (w - 3.0)]).unwrap();
            adam.step(&mut p).unwrap();
            traj.push(p.get(id).data()[0]);
        }
        let reference = scalar_adam(0.0, 0.1, 100);
        for (a, b) in traj.iter().zip(&reference) {
            assert!((a - b).abs() < 1e-12);
        }
        // Adam overshoots with momentum; the distance to the optimum still
        // shrinks across the trajectory.
        let dist: Vec<f64> = traj.iter().map(|w| (w - 3.0).abs()).collect();
        assert!(dist[99] < dist[49] && dist[49] < dist[0]);
        assert!(dist[99] < 0.1, "final distance {}", dist[99]);
    }
}
