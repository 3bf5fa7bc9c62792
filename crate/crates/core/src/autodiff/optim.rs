use super::{lit, Real, Tensor};

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
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moment estimates, one moment pair per
/// parameter tensor.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    config: AdamConfig,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
    steps: i32,
}

impl<T: Real> Adam<T> {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor<T>>) -> Self {
        let first: Vec<Tensor<T>> = params
            .into_iter()
            .map(|p| Tensor::zeros(p.rows(), p.cols()))
            .collect();
        Self {
            config,
            second: first.clone(),
            first,
            steps: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.config.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[Tensor<T>]) {
        assert_eq!(params.len(), self.first.len(), "parameter count changed");
        assert_eq!(grads.len(), self.first.len(), "one gradient per parameter");
        self.steps += 1;
        let b1: T = lit(self.config.beta1);
        let b2: T = lit(self.config.beta2);
        let one = T::one();
        let lr: T = lit(self.config.lr);
        let eps: T = lit(self.config.eps);
        let c1 = one - b1.powi(self.steps);
        let c2 = one - b2.powi(self.steps);
        for (i, p) in params.iter_mut().enumerate() {
            let g = grads[i].data();
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                m[j] = b1 * m[j] + (one - b1) * g[j];
                v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
