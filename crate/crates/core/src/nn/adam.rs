use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.0005,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates for every parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Self {
        Self {
            config,
            step: 0,
            m: params.iter().map(Tensor::zeros_like).collect(),
            v: params.iter().map(Tensor::zeros_like).collect(),
        }
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) {
        assert_eq!(params.len(), grads.len(), "adam: parameter/gradient count");
        assert_eq!(params.len(), self.m.len(), "adam: state does not match parameters");
        self.step += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            assert_eq!(p.shape(), g.shape(), "adam: gradient shape");
            for (((p, &g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor {
        Tensor::new(vec![1], vec![v]).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut params = vec![Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap()];
        let before = params.clone();
        let mut s = AdamState::new(AdamConfig::default(), &params);
        s.step(&mut params, &[Tensor::zeros(&[3])]);
        assert_eq!(params, before);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_from_zero() {
        let mut params = vec![scalar(0.0)];
        let mut s = AdamState::new(AdamConfig::default(), &params);
        s.step(&mut params, &[scalar(1.0)]);
        let expected = -0.0005 * (1.0 / (1.0 + 1e-8));
        assert!((params[0].data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn two_steps_match_scalar_recurrence() {
        let cfg = AdamConfig::default();
        let g = 0.3;
        let mut params = vec![scalar(1.5)];
        let mut s = AdamState::new(cfg, &params);
        s.step(&mut params, &[scalar(g)]);
        s.step(&mut params, &[scalar(g)]);

        let (mut theta, mut m, mut v) = (1.5f64, 0.0f64, 0.0f64);
        for t in 1..=2 {
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            theta -= 0.0005 * mh / (vh.sqrt() + 1e-8);
        }
        assert!((params[0].data()[0] - theta).abs() < 1e-12);
    }
}
