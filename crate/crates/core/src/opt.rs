//! Adam optimizer over flat parameter lists.

use crate::tensor::RealTensor;

pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, sizes: &[usize]) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    /// One update step. `params` and `grads` must match the sizes given at
    /// construction, in the same order.
    pub fn step(&mut self, params: &mut [&mut RealTensor], grads: &[RealTensor]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let pd = p.data_mut();
            let gd = g.data();
            for i in 0..pd.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gd[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gd[i] * gd[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                pd[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}
