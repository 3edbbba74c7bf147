use crate::error::{NumericsError, Result};
use crate::params::ParamStore;

/// Adam with bias correction. Moment buffers are allocated only for
/// trainable parameters.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Option<Vec<f64>>>,
    second: Vec<Option<Vec<f64>>>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let alloc = |store: &ParamStore| {
            store
                .iter()
                .map(|(_, p)| p.trainable.then(|| vec![0.0; p.tensor.len()]))
                .collect::<Vec<_>>()
        };
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: alloc(store),
            second: alloc(store),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn has_moments(&self, index: usize) -> bool {
        self.first[index].is_some()
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if store.len() != self.first.len() {
            return Err(NumericsError::Contract(format!(
                "optimizer tracks {} parameters, store has {}",
                self.first.len(),
                store.len()
            )));
        }
        for (i, p) in store.iter_mut().enumerate() {
            if p.trainable && self.first[i].is_none() {
                return Err(NumericsError::Contract(format!("{} became trainable after optimizer creation", p.name)));
            }
            if p.trainable && (p.grad.shape() != p.tensor.shape() || p.grad.data().iter().any(|g| !g.is_finite())) {
                return Err(NumericsError::Contract(format!("missing or non-finite gradient for {}", p.name)));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, p) in store.iter_mut().enumerate() {
            if let (true, Some(m), Some(v)) = (p.trainable, self.first[i].as_mut(), self.second[i].as_mut()) {
                let grad = p.grad.data();
                let w = p.tensor.data_mut();
                for j in 0..w.len() {
                    m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * grad[j];
                    v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * grad[j] * grad[j];
                    let mhat = m[j] / bc1;
                    let vhat = v[j] / bc2;
                    w[j] -= self.lr * mhat / (vhat.sqrt() + self.eps);
                }
            }
        }
        store.zero_grads();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::tensor::Tensor;

    #[test]
    fn positive_grad_decreases_parameter() {
        let mut store = ParamStore::new();
        let p = store.insert("p", Tensor::vector(vec![1.0])).unwrap();
        store.get_mut(p).grad = Tensor::vector(vec![0.5]);
        let mut opt = Adam::new(&store, 1e-3);
        opt.step(&mut store).unwrap();
        assert!(store.get(p).tensor.data()[0] < 1.0);
        assert_eq!(store.get(p).grad.data(), &[0.0]);
    }

    #[test]
    fn zero_grad_leaves_parameter_unchanged() {
        let mut store = ParamStore::new();
        let p = store.insert("p", Tensor::vector(vec![1.25, -3.0])).unwrap();
        let mut opt = Adam::new(&store, 1e-3);
        opt.step(&mut store).unwrap();
        assert_eq!(store.get(p).tensor.data(), &[1.25, -3.0]);
    }

    #[test]
    fn frozen_parameters_have_no_moments() {
        let mut store = ParamStore::new();
        store.insert("a", Tensor::vector(vec![1.0])).unwrap();
        store.insert("b", Tensor::vector(vec![1.0])).unwrap();
        store.set_trainable_prefix("b", false);
        let opt = Adam::new(&store, 1e-3);
        assert!(opt.has_moments(0));
        assert!(!opt.has_moments(1));
    }

    #[test]
    fn non_finite_grad_is_rejected() {
        let mut store = ParamStore::new();
        let p = store.insert("p", Tensor::vector(vec![1.0])).unwrap();
        store.get_mut(p).grad = Tensor::vector(vec![f64::NAN]);
        let mut opt = Adam::new(&store, 1e-3);
        assert!(opt.step(&mut store).is_err());
        assert_eq!(opt.steps(), 0);
    }

    #[test]
    fn quadratic_converges_in_100_steps() {
        // minimise (p - 3)^2 from p = 0
        let mut store = ParamStore::new();
        let p = store.insert("p", Tensor::vector(vec![0.0])).unwrap();
        let mut opt = Adam::new(&store, 0.1);
        for _ in 0..100 {
            let mut g = Graph::new();
            let x = g.param(&store, p);
            let d = g.add_scalar(x, -3.0);
            let sq = g.mul(d, d);
            let loss = g.sum(sq);
            g.backward(loss, &mut store).unwrap();
            opt.step(&mut store).unwrap();
        }
        assert!((store.get(p).tensor.data()[0] - 3.0).abs() < 0.5);
    }
}
