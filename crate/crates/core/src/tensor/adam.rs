use serde::{Deserialize, Serialize};

use super::{shape_err, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, shapes: &[&[usize]]) -> Self {
        Self {
            config,
            step: 0,
            m: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<(), TensorError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(shape_err("adam", "parameter count"));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(shape_err(
                    "adam",
                    format!("{:?} / {:?} / {:?}", p.shape(), g.shape(), m.shape()),
                ));
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
            for (i, &gi) in g.data().iter().enumerate() {
                md[i] = beta1 * md[i] + (1.0 - beta1) * gi;
                vd[i] = beta2 * vd[i] + (1.0 - beta2) * gi * gi;
                let mhat = md[i] / bc1;
                let vhat = vd[i] / bc2;
                pd[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = vec![Tensor::vector(vec![0.3, -1.0])];
        let mut adam = Adam::new(AdamConfig::default(), &[&[2]]);
        for _ in 0..10 {
            adam.update(&mut p, &[Tensor::zeros(&[2])]).unwrap();
        }
        assert_eq!(p[0].data(), &[0.3, -1.0]);
        assert_eq!(adam.steps(), 10);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = 1, v̂ = 1 after bias correction, so Δ = -lr / (1 + eps)
        let mut p = vec![Tensor::scalar(0.0)];
        let mut adam = Adam::new(AdamConfig::default(), &[&[]]);
        adam.update(&mut p, &[Tensor::scalar(1.0)]).unwrap();
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((p[0].item() - expected).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_moves_against_sign() {
        let mut p = vec![Tensor::vector(vec![0.0, 0.0])];
        let mut adam = Adam::new(AdamConfig::default(), &[&[2]]);
        let g = Tensor::vector(vec![2.5, -0.1]);
        let mut last = p[0].data().to_vec();
        for _ in 0..200 {
            adam.update(&mut p, std::slice::from_ref(&g)).unwrap();
            let now = p[0].data();
            assert!(now[0] < last[0] && now[1] > last[1]);
            last = now.to_vec();
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = vec![Tensor::zeros(&[2])];
        let mut adam = Adam::new(AdamConfig::default(), &[&[2]]);
        assert!(adam.update(&mut p, &[Tensor::zeros(&[3])]).is_err());
    }
}
