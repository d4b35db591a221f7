use super::tensor::TensorBuf;
use crate::real::Real;

/// Bias-corrected Adam over a fixed set of parameter buffers.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(lr: f64, param_sizes: &[usize]) -> Self {
        AdamState {
            lr: T::from_f64(lr),
            beta1: T::from_f64(0.9),
            beta2: T::from_f64(0.999),
            eps: T::from_f64(1e-8),
            step: 0,
            m: param_sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: param_sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    pub fn for_params(lr: f64, params: &[&TensorBuf<T>]) -> Self {
        let sizes: Vec<usize> = params.iter().map(|p| p.len()).collect();
        Self::new(lr, &sizes)
    }

    /// One update. `params` and `grads` must line up with the sizes the
    /// state was created with; a mismatch is a caller bug surfaced loudly.
    pub fn step(&mut self, params: &mut [&mut TensorBuf<T>], grads: &[&TensorBuf<T>]) {
        assert_eq!(params.len(), self.m.len(), "parameter group count changed");
        assert_eq!(grads.len(), self.m.len(), "gradient group count changed");
        self.step += 1;
        let t = self.step as i32;
        let bc1 = T::one() - self.beta1.powi(t);
        let bc2 = T::one() - self.beta2.powi(t);
        let one = T::one();
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            assert_eq!(p.len(), m.len(), "parameter shape drifted from optimizer state");
            assert_eq!(g.len(), m.len(), "gradient shape does not match optimizer state");
            for i in 0..m.len() {
                let gi = g.data[i];
                m[i] = self.beta1 * m[i] + (one - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (one - self.beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p.data[i] = p.data[i] - self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}
