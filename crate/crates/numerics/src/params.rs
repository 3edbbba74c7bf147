use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{NumericsError, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
    pub grad: Tensor,
    pub trainable: bool,
}

/// Weight initialisation schemes.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform Xavier/Glorot with explicit fan-in and fan-out.
    Xavier { fan_in: usize, fan_out: usize },
    /// Square orthogonal blocks stacked along the column axis; the tensor
    /// must be `[d, k*d]`.
    Orthogonal,
    Normal { std: f64 },
}

/// Owns every parameter of a model, addressed by [`ParamId`] or by its
/// unique dotted name.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, shape: &[usize], init: Init, rng: &mut ChaCha8Rng) -> ParamId {
        let tensor = initialise(shape, init, rng);
        self.insert(name, tensor).expect("duplicate parameter name")
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(NumericsError::Contract(format!("duplicate parameter name {name}")));
        }
        let id = self.params.len();
        let grad = Tensor::zeros(tensor.shape());
        self.params.push(Parameter {
            name: name.to_string(),
            tensor,
            grad,
            trainable: true,
        });
        self.by_name.insert(name.to_string(), id);
        Ok(ParamId(id))
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    /// Sets `trainable` on every parameter whose name starts with `prefix`.
    pub fn set_trainable_prefix(&mut self, prefix: &str, trainable: bool) {
        for p in &mut self.params {
            if p.name.starts_with(prefix) {
                p.trainable = trainable;
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .flat_map(|p| p.grad.data())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= factor);
        }
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }
}

pub fn initialise(shape: &[usize], init: Init, rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = match init {
        Init::Zeros => vec![0.0; n],
        Init::Ones => vec![1.0; n],
        Init::Xavier { fan_in, fan_out } => {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..n).map(|_| rng.random_range(-limit..limit)).collect()
        }
        Init::Normal { std } => (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z * std
            })
            .collect(),
        Init::Orthogonal => {
            assert_eq!(shape.len(), 2, "orthogonal init needs a matrix");
            let (d, cols) = (shape[0], shape[1]);
            assert_eq!(cols % d, 0, "orthogonal init needs [d, k*d]");
            let mut data = vec![0.0; n];
            for block in 0..cols / d {
                let q = random_orthogonal(d, rng);
                for r in 0..d {
                    for c in 0..d {
                        data[r * cols + block * d + c] = q[r * d + c];
                    }
                }
            }
            data
        }
    };
    Tensor::new(shape.to_vec(), data).expect("initialiser produced wrong length")
}

/// Orthonormalises a Gaussian matrix with modified Gram-Schmidt.
fn random_orthogonal(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut rows: Vec<Vec<f64>> = (0..d)
        .map(|_| (0..d).map(|_| StandardNormal.sample(rng)).collect())
        .collect();
    for i in 0..d {
        for j in 0..i {
            let (done, rest) = rows.split_at_mut(i);
            let proj: f64 = rest[0].iter().zip(&done[j]).map(|(a, b)| a * b).sum();
            for (a, b) in rest[0].iter_mut().zip(&done[j]) {
                *a -= proj * b;
            }
        }
        let norm = rows[i].iter().map(|v| v * v).sum::<f64>().sqrt();
        rows[i].iter_mut().for_each(|v| *v /= norm);
    }
    rows.concat()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn orthogonal_blocks_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = initialise(&[8, 32], Init::Orthogonal, &mut rng);
        for block in 0..4 {
            for a in 0..8 {
                for b in 0..8 {
                    let dot: f64 = (0..8)
                        .map(|c| t.data()[a * 32 + block * 8 + c] * t.data()[b * 32 + block * 8 + c])
                        .sum();
                    let want = if a == b { 1.0 } else { 0.0 };
                    assert!((dot - want).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut store = ParamStore::new();
        store.insert("a.w", Tensor::zeros(&[2])).unwrap();
        assert!(store.insert("a.w", Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn same_seed_same_init() {
        let a = initialise(&[4, 4], Init::Xavier { fan_in: 4, fan_out: 4 }, &mut ChaCha8Rng::seed_from_u64(9));
        let b = initialise(&[4, 4], Init::Xavier { fan_in: 4, fan_out: 4 }, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }
}
