//! Adam optimizer with bias correction.

/// First/second-moment state for one parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: usize,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    /// One update step along `-grads`.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn descends_a_quadratic() {
        // f(p) = sum p_i^2, gradient 2p.
        let mut p = vec![1.0, -2.0, 0.5];
        let mut adam = Adam::new(3, 0.05, 0.9, 0.999, 1e-8);
        for _ in 0..500 {
            let g: Vec<f64> = p.iter().map(|x| 2.0 * x).collect();
            adam.update(&mut p, &g);
        }
        for x in &p {
            assert!(x.abs() < 1e-2, "did not converge: {p:?}");
        }
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = vec![0.3, -0.7];
        let before = p.clone();
        let mut adam = Adam::new(2, 0.1, 0.9, 0.999, 1e-8);
        for _ in 0..10 {
            adam.update(&mut p, &[0.0, 0.0]);
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_size_is_bounded_by_lr() {
        // With bias correction, |step 1| == lr for any nonzero gradient.
        let mut p = vec![0.0];
        let mut adam = Adam::new(1, 1e-3, 0.9, 0.999, 1e-8);
        adam.update(&mut p, &[123.4]);
        assert!((p[0].abs() - 1e-3).abs() < 1e-9, "step = {}", p[0]);
    }
}
