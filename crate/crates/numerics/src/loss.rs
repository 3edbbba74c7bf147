use crate::error::{NumericsError, Result};
use crate::graph::{Graph, NodeId, ZERO_NORM};
use crate::tensor::Tensor;

/// Cosine similarities of each row of `a` with `b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Cosine {
    pub values: Vec<f64>,
    /// Set when any row of `a`, or `b` itself, had zero norm; such entries are 0.
    pub degenerate: bool,
}

/// Row-wise cosine similarity of `a: [*, d]` against `b: [d]`.
pub fn cosine_similarity(a: &Tensor, b: &[f64]) -> Result<Cosine> {
    let d = b.len();
    if a.cols() != d || a.len() != a.rows() * d {
        return Err(NumericsError::Shape {
            layer: "cosine_similarity".into(),
            axis: "last",
            expected: d,
            got: a.cols(),
        });
    }
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut degenerate = nb < ZERO_NORM;
    let values = a
        .data()
        .chunks(d)
        .map(|row| {
            let na = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if na < ZERO_NORM || nb < ZERO_NORM {
                degenerate = true;
                return 0.0;
            }
            let dot: f64 = row.iter().zip(b).map(|(x, y)| x * y).sum();
            (dot / (na * nb)).clamp(-1.0, 1.0)
        })
        .collect();
    Ok(Cosine { values, degenerate })
}

/// Differentiable cosine similarity of every row of `a: [n, d]` with the
/// single row `b: [1, d]`; returns `[n]`.
pub fn cosine_rows(g: &mut Graph, a: NodeId, b: NodeId) -> NodeId {
    let n = g.value(a).rows();
    let an = g.l2_normalize_rows(a);
    let bn = g.l2_normalize_rows(b);
    let s = g.matmul_nt(an, bn);
    g.reshape(s, &[n])
}

/// Differentiable `[m, n]` cosine matrix between rows of `a: [m, d]` and `b: [n, d]`.
pub fn cosine_matrix(g: &mut Graph, a: NodeId, b: NodeId) -> NodeId {
    let an = g.l2_normalize_rows(a);
    let bn = g.l2_normalize_rows(b);
    g.matmul_nt(an, bn)
}

/// Symmetric InfoNCE between paired rows of `left` and `right`: the mean of
/// the left-to-right and right-to-left cross-entropies over the cosine
/// matrix scaled by `1 / temperature`, with row `i` the positive for row `i`.
pub fn info_nce_loss(g: &mut Graph, left: NodeId, right: NodeId, temperature: f64) -> Result<NodeId> {
    let b = g.value(left).rows();
    if b < 2 {
        return Err(NumericsError::Contract(format!("contrastive loss needs at least 2 pairs, got {b}")));
    }
    if g.value(right).rows() != b {
        return Err(NumericsError::Shape {
            layer: "info_nce_loss".into(),
            axis: "batch",
            expected: b,
            got: g.value(right).rows(),
        });
    }
    if !(temperature > 0.0) {
        return Err(NumericsError::Contract(format!("temperature must be positive, got {temperature}")));
    }
    let targets: Vec<usize> = (0..b).collect();
    let lr = cosine_matrix(g, left, right);
    let lr = g.scale(lr, 1.0 / temperature);
    let rl = cosine_matrix(g, right, left);
    let rl = g.scale(rl, 1.0 / temperature);
    let l1 = g.cross_entropy(lr, &targets);
    let l2 = g.cross_entropy(rl, &targets);
    let total = g.add(l1, l2);
    Ok(g.scale(total, 0.5 / b as f64))
}
