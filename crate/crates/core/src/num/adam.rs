use super::tensor::{Real, Tensor};
use super::{NumError, NumResult};

/// Adam optimizer state: one first/second-moment tensor per parameter,
/// shapes mirroring the parameters, plus the shared step counter.
#[derive(Debug, Clone)]
pub struct AdamState<T: Real> {
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Real> AdamState<T> {
    /// Conventional defaults; the learning rate is the caller's concern.
    pub fn new(param_shapes: &[&[usize]], lr: f64) -> Self {
        AdamState {
            m: param_shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: param_shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn moments(&self) -> (&[Tensor<T>], &[Tensor<T>]) {
        (&self.m, &self.v)
    }

    /// Restore a state captured by a checkpoint.
    pub fn restore(m: Vec<Tensor<T>>, v: Vec<Tensor<T>>, t: u64, lr: f64) -> Self {
        AdamState {
            m,
            v,
            t,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One Adam update with bias correction. Parameters are updated in
    /// index order; moments and update arithmetic run in f64.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>]) -> NumResult<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(NumError::ShapeMismatch {
                op: "adam_step",
                expected: vec![self.m.len()],
                got: vec![params.len(), grads.len()],
            });
        }
        for i in 0..params.len() {
            if params[i].shape() != self.m[i].shape() || grads[i].shape() != self.m[i].shape() {
                return Err(NumError::ShapeMismatch {
                    op: "adam_step",
                    expected: self.m[i].shape().to_vec(),
                    got: grads[i].shape().to_vec(),
                });
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i].data();
            let m = self.m[i].data_mut();
            for (mj, &gj) in m.iter_mut().zip(g) {
                *mj = T::from_f64(self.beta1 * mj.to_f64() + (1.0 - self.beta1) * gj.to_f64());
            }
            let v = self.v[i].data_mut();
            for (vj, &gj) in v.iter_mut().zip(g) {
                let gf = gj.to_f64();
                *vj = T::from_f64(self.beta2 * vj.to_f64() + (1.0 - self.beta2) * gf * gf);
            }
            let (m, v) = (self.m[i].data(), self.v[i].data());
            let p = params[i].data_mut();
            for j in 0..p.len() {
                let mh = m[j].to_f64() / bc1;
                let vh = v[j].to_f64() / bc2;
                p[j] = T::from_f64(p[j].to_f64() - self.lr * mh / (vh.sqrt() + self.eps));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_identity_on_fresh_state() {
        let mut st = AdamState::<f64>::new(&[&[2, 2]], 0.1);
        let mut params = vec![Tensor::new(vec![2, 2], vec![1.0, -2.0, 3.0, 0.5]).unwrap()];
        let before = params[0].data().to_vec();
        st.step(&mut params, &[Tensor::zeros(&[2, 2])]).unwrap();
        assert_eq!(params[0].data(), &before[..]);
    }

    #[test]
    fn step_counter_increments() {
        let mut st = AdamState::<f64>::new(&[&[1]], 0.1);
        assert_eq!(st.step_count(), 0);
        let mut params = vec![Tensor::scalar(1.0)];
        st.step(&mut params, &[Tensor::scalar(0.0)]).unwrap();
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn converges_on_scalar_quadratic() {
        // loss (w - 5)^2 from w0 = 0; after 20 steps with lr 0.5 the gap shrinks
        let mut st = AdamState::<f64>::new(&[&[1]], 0.5);
        let mut params = vec![Tensor::scalar(0.0)];
        let gap0 = (params[0].data()[0] - 5.0).abs();
        for _ in 0..20 {
            let g = 2.0 * (params[0].data()[0] - 5.0);
            st.step(&mut params, &[Tensor::scalar(g)]).unwrap();
        }
        let gap = (params[0].data()[0] - 5.0).abs();
        assert!(gap < gap0, "no progress: {gap} vs {gap0}");
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut st = AdamState::<f64>::new(&[&[2]], 0.1);
        let mut params = vec![Tensor::zeros(&[2])];
        let err = st.step(&mut params, &[Tensor::zeros(&[3])]).unwrap_err();
        assert!(matches!(err, NumError::ShapeMismatch { .. }));
    }
}
