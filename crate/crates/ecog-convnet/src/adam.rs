//! Adam optimizer with bias correction.

use ndarray::Array2;

use crate::layers::{ff, Float};

#[derive(Debug, Clone)]
pub struct Adam<F> {
    lr: F,
    beta1: F,
    beta2: F,
    epsilon: F,
    step: u64,
    m: Vec<Array2<F>>,
    v: Vec<Array2<F>>,
}

impl<F: Float> Adam<F> {
    pub fn new(lr: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Adam {
            lr: ff(lr),
            beta1: ff(beta1),
            beta2: ff(beta2),
            epsilon: ff(epsilon),
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Apply one update to `params` (value, gradient) pairs, then zero the
    /// gradients. Moment buffers are allocated lazily on the first call.
    pub fn step(&mut self, mut params: Vec<(&mut Array2<F>, &mut Array2<F>)>) {
        if self.m.is_empty() {
            for (value, _) in &params {
                self.m.push(Array2::zeros(value.raw_dim()));
                self.v.push(Array2::zeros(value.raw_dim()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = F::one() - self.beta1.powi(t);
        let bc2 = F::one() - self.beta2.powi(t);
        for (i, (value, grad)) in params.iter_mut().enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for ((w, g), (mi, vi)) in value
                .iter_mut()
                .zip(grad.iter())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mi = self.beta1 * *mi + (F::one() - self.beta1) * *g;
                *vi = self.beta2 * *vi + (F::one() - self.beta2) * *g * *g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w = *w - self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
            grad.fill(F::zero());
        }
    }
}
