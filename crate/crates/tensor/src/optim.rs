use crate::error::{mismatch, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    /// Fresh state for parameters of the given element counts.
    pub fn new(sizes: &[usize]) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    pub fn from_parts(step: u64, m: Vec<Vec<T>>, v: Vec<Vec<T>>) -> Result<Self, TensorError> {
        if m.len() != v.len() || m.iter().zip(&v).any(|(a, b)| a.len() != b.len()) {
            return Err(mismatch("Adam::from_parts", &[m.len()], &[v.len()]));
        }
        Ok(Adam { step, m, v, ..Adam::new(&[]) })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Vec<T>], &[Vec<T>]) {
        (&self.m, &self.v)
    }

    /// One update. Parameters whose gradient is `None` are frozen: neither
    /// they nor their moments change.
    pub fn step(
        &mut self,
        params: &mut [Tensor<T>],
        grads: &[Option<Tensor<T>>],
        lr: f64,
    ) -> Result<(), TensorError> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(mismatch("adam_step", &[params.len()], &[grads.len(), self.m.len()]));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.len() != m.len() {
                return Err(mismatch("adam_step", p.shape(), &[m.len()]));
            }
            if let Some(g) = g {
                if g.shape() != p.shape() {
                    return Err(mismatch("adam_step", p.shape(), g.shape()));
                }
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = T::of(1.0 - self.beta1.powi(t));
        let c2 = T::of(1.0 - self.beta2.powi(t));
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let (lr, eps) = (T::of(lr), T::of(self.eps));
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let Some(g) = g else { continue };
            for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                let mhat = *m / c1;
                let vhat = *v / c2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Scales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Scalar>(grads: &mut [Option<Tensor<T>>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flatten()
        .flat_map(|g| g.data().iter())
        .map(|&x| {
            let x = x.to_f64().unwrap();
            x * x
        })
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = T::of(max_norm / (norm + 1e-6));
        for g in grads.iter_mut().flatten() {
            for x in g.data_mut() {
                *x *= s;
            }
        }
    }
    norm
}
