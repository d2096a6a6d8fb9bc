//! Adaptive moment estimation over a [`Parameters`] tree.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::math;
use crate::params::Parameters;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one flat buffer per parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl Adam {
    pub fn new<P: Parameters>(params: &P, config: AdamConfig) -> Self {
        let sizes: Vec<usize> = params.param_refs().iter().map(|p| p.values.len()).collect();
        Self {
            config,
            m: sizes.iter().map(|&n| alloc::vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| alloc::vec![0.0; n]).collect(),
            t: 0,
        }
    }

    /// One update `p -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn step<P: Parameters>(&mut self, params: &mut P, grads: &P, lr: f64) -> Result<()> {
        params.check_compatible(grads)?;
        if !(lr >= 0.0) || !lr.is_finite() {
            return Err(Error::InvalidConfig(format!("learning rate must be non-negative, got {lr}")));
        }
        let grads = grads.param_refs();
        if grads.len() != self.m.len() {
            return Err(shape_err("optimizer state", self.m.len(), grads.len()));
        }
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let t = self.t as f64;
        let c1 = 1.0 - math::powf(beta1, t);
        let c2 = 1.0 - math::powf(beta2, t);
        for (((p, g), m), v) in params.param_muts().into_iter().zip(&grads).zip(&mut self.m).zip(&mut self.v) {
            if m.len() != g.values.len() {
                return Err(shape_err("optimizer block", m.len(), g.values.len()));
            }
            for i in 0..m.len() {
                let gi = g.values[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p.values[i] -= lr * mh / (math::sqrt(vh) + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Linear;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = Linear::init(5, 3, 1.0, &mut rng);
        let g = Linear::init(5, 3, 1.0, &mut rng);
        let before = p.clone();
        let mut opt = Adam::new(&p, AdamConfig::default());
        opt.step(&mut p, &g, 0.0).unwrap();
        assert_eq!(p, before);
        assert_eq!(opt.t, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = Linear::zeros(2, 1);
        let mut g = Linear::zeros(2, 1);
        g.weight = alloc::vec![3.0, -0.5];
        let mut opt = Adam::new(&p, AdamConfig::default());
        opt.step(&mut p, &g, 0.01).unwrap();
        assert!((p.weight[0] + 0.01).abs() < 1e-9);
        assert!((p.weight[1] - 0.01).abs() < 1e-9);
        assert_eq!(p.bias[0], 0.0);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = Linear::zeros(1, 1);
        p.weight[0] = 5.0;
        let mut opt = Adam::new(&p, AdamConfig::default());
        for _ in 0..2000 {
            let mut g = p.zeros_like();
            g.weight[0] = 2.0 * (p.weight[0] - 1.0);
            opt.step(&mut p, &g, 0.05).unwrap();
        }
        assert!((p.weight[0] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn mismatched_gradient_is_rejected() {
        let mut p = Linear::zeros(2, 1);
        let g = Linear::zeros(3, 1);
        let mut opt = Adam::new(&p, AdamConfig::default());
        assert!(opt.step(&mut p, &g, 0.1).is_err());
        let same = p.clone();
        assert!(opt.step(&mut p, &same, -1.0).is_err());
    }
}
