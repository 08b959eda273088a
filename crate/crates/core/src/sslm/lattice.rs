//! Semi-Markov dynamic programs over precomputed segment scores.

use crate::nn::graph::{log_add_exp, log_sum_exp};
use crate::nn::{Graph, Mat, NodeId};

/// Where the scores of one sequence live in the flat segment vector: for
/// every start position, the longest admissible segment and the index of
/// its length-1 segment. Segment `(k, m)` sits at `starts[k].1 + m - 1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeqLayout {
    pub starts: Vec<(usize, usize)>,
}

impl SeqLayout {
    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    pub fn index(&self, k: usize, m: usize) -> usize {
        debug_assert!(m >= 1 && m <= self.starts[k].0);
        self.starts[k].1 + m - 1
    }
}

/// Forward and backward log scores. `alpha[t]` covers `x[..t]`, `beta[t]`
/// covers `x[t..]`.
pub fn forward_backward(seg: &[f64], lay: &SeqLayout) -> (Vec<f64>, Vec<f64>) {
    let n = lay.len();
    let mut alpha = vec![f64::NEG_INFINITY; n + 1];
    alpha[0] = 0.0;
    for k in 0..n {
        let (m_max, base) = lay.starts[k];
        for m in 1..=m_max {
            alpha[k + m] = log_add_exp(alpha[k + m], alpha[k] + seg[base + m - 1]);
        }
    }
    let mut beta = vec![f64::NEG_INFINITY; n + 1];
    beta[n] = 0.0;
    let mut terms = Vec::new();
    for k in (0..n).rev() {
        let (m_max, base) = lay.starts[k];
        terms.clear();
        terms.extend((1..=m_max).map(|m| seg[base + m - 1] + beta[k + m]));
        beta[k] = log_sum_exp(&terms);
    }
    (alpha, beta)
}

/// Best path. `backptr[t]` is the start of the last segment of the best
/// path to `t`; among equal scores the longest last segment wins.
pub fn viterbi(seg: &[f64], lay: &SeqLayout) -> (Vec<f64>, Vec<usize>) {
    let n = lay.len();
    let mut best = vec![f64::NEG_INFINITY; n + 1];
    let mut back = vec![0usize; n + 1];
    best[0] = 0.0;
    for k in 0..n {
        let (m_max, base) = lay.starts[k];
        for m in 1..=m_max {
            let cand = best[k] + seg[base + m - 1];
            // Starts are visited in increasing order, so a strict comparison
            // keeps the earliest start (longest segment) on ties.
            if cand > best[k + m] {
                best[k + m] = cand;
                back[k + m] = k;
            }
        }
    }
    (best, back)
}

/// Segment start positions of the best path, in order (always begins with 0
/// for non-empty input).
pub fn backtrack(back: &[usize]) -> Vec<usize> {
    let mut starts = Vec::new();
    let mut t = back.len() - 1;
    while t > 0 {
        t = back[t];
        starts.push(t);
    }
    starts.reverse();
    starts
}

/// Differentiable `log p(x)` per sequence as a `B x 1` column. The gradient
/// with respect to each segment score is its posterior probability.
pub fn log_marginal(g: &mut Graph, seg: NodeId, layouts: &[SeqLayout]) -> NodeId {
    let values = g.value(seg).as_slice().expect("segment scores are contiguous").to_vec();
    let mut alphas = Vec::with_capacity(layouts.len());
    let mut betas = Vec::with_capacity(layouts.len());
    for lay in layouts {
        let (a, b) = forward_backward(&values, lay);
        alphas.push(a);
        betas.push(b);
    }
    let z = Mat::from_shape_fn((layouts.len(), 1), |(b, _)| alphas[b][layouts[b].len()]);
    let layouts = layouts.to_vec();
    g.custom(
        "lattice",
        vec![seg],
        z,
        Box::new(move |up, out, inputs| {
            let seg = inputs[0].as_slice().expect("segment scores are contiguous");
            let mut grad = Mat::zeros((seg.len(), 1));
            let dst = grad.as_slice_mut().unwrap();
            for (b, lay) in layouts.iter().enumerate() {
                let (alpha, beta, logz, u) = (&alphas[b], &betas[b], out[[b, 0]], up[[b, 0]]);
                if u == 0.0 {
                    continue;
                }
                for k in 0..lay.len() {
                    let (m_max, base) = lay.starts[k];
                    for m in 1..=m_max {
                        let s = seg[base + m - 1];
                        if s == f64::NEG_INFINITY {
                            continue;
                        }
                        dst[base + m - 1] += u * (alpha[k] + s + beta[k + m] - logz).exp();
                    }
                }
            }
            vec![Some(grad)]
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamSet;

    fn layout(n: usize, cap: usize) -> SeqLayout {
        let mut base = 0;
        let starts = (0..n)
            .map(|k| {
                let m = cap.min(n - k);
                let s = (m, base);
                base += m;
                s
            })
            .collect();
        SeqLayout { starts }
    }

    fn all_paths(n: usize, cap: usize) -> Vec<Vec<(usize, usize)>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for m in 1..=cap.min(n) {
            for mut p in all_paths(n - m, cap) {
                p.push((n - m, m));
                out.push(p);
            }
        }
        out
    }

    #[test]
    fn marginal_matches_enumeration() {
        let lay = layout(5, 3);
        let total = lay.starts.last().map(|&(m, b)| m + b).unwrap();
        let seg: Vec<f64> = (0..total).map(|i| -((i * 7 % 5) as f64) * 0.3 - 0.1).collect();
        let (alpha, beta) = forward_backward(&seg, &lay);
        let scores: Vec<f64> = all_paths(5, 3)
            .iter()
            .map(|p| p.iter().map(|&(k, m)| seg[lay.index(k, m)]).sum())
            .collect();
        let z = log_sum_exp(&scores);
        assert!((alpha[5] - z).abs() < 1e-12);
        assert!((beta[0] - z).abs() < 1e-12);
    }

    #[test]
    fn viterbi_prefers_longer_last_segment_on_ties() {
        let lay = layout(2, 2);
        // "a" + "b" and "ab" both score -1.
        let seg = vec![-0.5, -1.0, -0.5];
        let (best, back) = viterbi(&seg, &lay);
        assert_eq!(best[2], -1.0);
        assert_eq!(backtrack(&back), vec![0]);
    }

    #[test]
    fn gradient_is_posterior() {
        let lay = layout(3, 3);
        let seg = Mat::from_shape_vec((6, 1), vec![-0.2, -1.5, -0.7, -0.9, -0.3, -1.1]).unwrap();
        let ps = ParamSet::new();
        let mut g = Graph::new(&ps);
        let s = g.constant(seg.clone());
        let z = log_marginal(&mut g, s, std::slice::from_ref(&lay));
        let loss = g.sum(z);
        let grads = g.backward(loss).unwrap();
        let gs = grads.node(s).unwrap();
        let eps = 1e-6;
        for i in 0..6 {
            let mut hi = seg.clone();
            hi[[i, 0]] += eps;
            let mut lo = seg.clone();
            lo[[i, 0]] -= eps;
            let f = |v: &Mat| forward_backward(v.as_slice().unwrap(), &lay).0[3];
            let num = (f(&hi) - f(&lo)) / (2.0 * eps);
            assert!((num - gs[[i, 0]]).abs() < 1e-8, "{i}: {num} vs {}", gs[[i, 0]]);
        }
    }
}
