//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates forward values, so it stays
//! independent of every backward rule it is used to verify.

use crate::error::Result;
use crate::graph::{Graph, NodeId};
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::Rng;
use rand::Rng as _;

pub const STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
pub const ABS_FLOOR: f64 = 1e-7;

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    /// Largest relative error among coordinates whose absolute error
    /// exceeds [`ABS_FLOOR`].
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub checked: usize,
    pub worst: Option<String>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < REL_TOL
    }

    fn record(&mut self, label: impl FnOnce() -> String, analytic: f64, numeric: f64) {
        self.checked += 1;
        let abs = (analytic - numeric).abs();
        self.max_abs_err = self.max_abs_err.max(abs);
        if abs <= ABS_FLOOR {
            return;
        }
        let rel = abs / analytic.abs().max(numeric.abs());
        if rel > self.max_rel_err {
            self.max_rel_err = rel;
            self.worst = Some(format!("{} analytic={analytic:.6e} numeric={numeric:.6e}", label()));
        }
    }
}

/// Compares analytic gradients of the scalar built by `build` against
/// central differences, for every input tensor and every trainable
/// parameter of `store`. At most `probes` coordinates per tensor are
/// perturbed (chosen with `rng`); smaller tensors are checked in full.
pub fn check<F>(store: &mut ParamStore, inputs: &[Tensor], probes: usize, rng: &mut Rng, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore, &[NodeId]) -> Result<NodeId>,
{
    let eval = |store: &ParamStore, inputs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = inputs.iter().map(|t| g.input(t.clone())).collect();
        let out = build(&mut g, store, &ids)?;
        Ok(g.value(out).item())
    };

    store.zero_grads();
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = build(&mut g, store, &ids)?;
    g.backward(out, store)?;
    let input_grads: Vec<Vec<f64>> = ids
        .iter()
        .zip(inputs)
        .map(|(&id, t)| g.grad(id).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
        .collect();

    let pick = |len: usize, rng: &mut Rng| -> Vec<usize> {
        if len <= probes {
            (0..len).collect()
        } else {
            (0..probes).map(|_| rng.random_range(0..len)).collect()
        }
    };

    let mut report = GradCheckReport::default();
    let mut work = inputs.to_vec();
    for (ti, grads) in input_grads.iter().enumerate() {
        for j in pick(work[ti].len(), rng) {
            let orig = work[ti].data()[j];
            work[ti].data_mut()[j] = orig + STEP;
            let plus = eval(store, &work)?;
            work[ti].data_mut()[j] = orig - STEP;
            let minus = eval(store, &work)?;
            work[ti].data_mut()[j] = orig;
            report.record(|| format!("input {ti}[{j}]"), grads[j], (plus - minus) / (2.0 * STEP));
        }
    }

    let params: Vec<_> = store.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
    for pid in params {
        let analytic = store.get(pid).grad.clone();
        for j in pick(analytic.len(), rng) {
            let orig = store.get(pid).tensor.data()[j];
            store.get_mut(pid).tensor.data_mut()[j] = orig + STEP;
            let plus = eval(store, inputs)?;
            store.get_mut(pid).tensor.data_mut()[j] = orig - STEP;
            let minus = eval(store, inputs)?;
            store.get_mut(pid).tensor.data_mut()[j] = orig;
            let name = &store.get(pid).name;
            report.record(|| format!("{name}[{j}]"), analytic.data()[j], (plus - minus) / (2.0 * STEP));
        }
    }
    store.zero_grads();
    Ok(report)
}

/// Reduces any tensor node to a scalar through a fixed projection whose
/// weights (a low-discrepancy sequence in `[-1, 1)`) differ per coordinate.
/// Deterministic, so it can be rebuilt inside a [`check`] closure.
pub fn project(g: &mut Graph, x: NodeId) -> NodeId {
    let shape = g.value(x).shape().to_vec();
    let n = g.value(x).len();
    let weights = (0..n).map(|i| ((i as f64 + 1.0) * 0.618_033_988_749_895).fract() * 2.0 - 1.0).collect();
    let w = g.constant(Tensor::new(shape, weights).unwrap());
    let p = g.mul(x, w);
    g.sum(p)
}
