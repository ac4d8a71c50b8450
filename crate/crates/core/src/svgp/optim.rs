use crate::scalar::Scalar;

/// Adam with bias-corrected moments, stepping uphill.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    learning_rate: T,
    beta1: T,
    beta2: T,
    epsilon: T,
    first: Vec<T>,
    second: Vec<T>,
    steps: i32,
}

impl<T: Scalar> Adam<T> {
    /// `β1 = 0.9`, `β2 = 0.999`, `ε = 1e-8`.
    pub fn new(learning_rate: T, size: usize) -> Self {
        Self {
            learning_rate,
            beta1: T::of(0.9),
            beta2: T::of(0.999),
            epsilon: T::of(1e-8),
            first: vec![T::zero(); size],
            second: vec![T::zero(); size],
            steps: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.steps
    }

    /// One ascent step on `params` along `grad`.
    pub fn ascend(&mut self, params: &mut [T], grad: &[T]) {
        assert_eq!(params.len(), self.first.len());
        assert_eq!(grad.len(), self.first.len());
        self.steps += 1;
        let one = T::one();
        let c1 = one - self.beta1.powi(self.steps);
        let c2 = one - self.beta2.powi(self.steps);
        for k in 0..params.len() {
            let g = grad[k];
            self.first[k] = self.beta1 * self.first[k] + (one - self.beta1) * g;
            self.second[k] = self.beta2 * self.second[k] + (one - self.beta2) * g * g;
            let m_hat = self.first[k] / c1;
            let v_hat = self.second[k] / c2;
            params[k] = params[k] + self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}
