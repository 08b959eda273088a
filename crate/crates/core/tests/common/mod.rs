//! Straight-line reference implementations used as test oracles. Nothing
//! here touches the autodiff graph or the lattice code.

#![allow(dead_code)]

use sslm_core::corpus::EOS_ID;
use sslm_core::nn::{Mat, ParamSet};
use sslm_core::{CharSequence, Sslm};

pub fn param<'a>(params: &'a ParamSet, name: &str) -> &'a Mat {
    params
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, m)| m)
        .unwrap_or_else(|| panic!("no parameter {name}"))
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `x · W + b` for a row vector.
fn affine(x: &[f64], w: &Mat, b: &Mat) -> Vec<f64> {
    (0..w.ncols())
        .map(|j| b[[0, j]] + x.iter().enumerate().map(|(i, xi)| xi * w[[i, j]]).sum::<f64>())
        .collect()
}

fn log_softmax(v: &[f64]) -> Vec<f64> {
    let z = logsumexp(v);
    v.iter().map(|x| x - z).collect()
}

type State = Vec<(Vec<f64>, Vec<f64>)>;

/// The segmental model re-evaluated with plain loops over its parameters.
pub struct Reference<'a> {
    pub model: &'a Sslm,
}

impl<'a> Reference<'a> {
    pub fn new(model: &'a Sslm) -> Self {
        Reference { model }
    }

    fn p(&self, name: &str) -> &Mat {
        param(&self.model.params, name)
    }

    fn hidden(&self) -> usize {
        self.model.config.hidden_dim
    }

    fn embed(&self, id: u32) -> Vec<f64> {
        self.p("embed").row(id as usize).to_vec()
    }

    fn step(&self, prefix: &str, x: Vec<f64>, state: &mut State) -> Vec<f64> {
        let hd = self.hidden();
        let mut input = x;
        for (l, (h, c)) in state.iter_mut().enumerate() {
            let wx = self.p(&format!("{prefix}.l{l}.w_x"));
            let wh = self.p(&format!("{prefix}.l{l}.w_h"));
            let b = self.p(&format!("{prefix}.l{l}.b"));
            let mut pre = affine(&input, wx, b);
            for (j, v) in pre.iter_mut().enumerate() {
                *v += h.iter().enumerate().map(|(i, hi)| hi * wh[[i, j]]).sum::<f64>();
            }
            for u in 0..hd {
                let ig = sigmoid(pre[u]);
                let fg = sigmoid(pre[hd + u]);
                let cand = pre[2 * hd + u].tanh();
                let og = sigmoid(pre[3 * hd + u]);
                c[u] = fg * c[u] + ig * cand;
                h[u] = og * c[u].tanh();
            }
            input = h.clone();
        }
        input
    }

    fn zero_state(&self) -> State {
        vec![(vec![0.0; self.hidden()], vec![0.0; self.hidden()]); self.model.config.num_layers]
    }

    /// History vector before each position of `ids`.
    pub fn histories(&self, ids: &[u32]) -> Vec<Vec<f64>> {
        let mut state = self.zero_state();
        let mut out = vec![vec![0.0; self.hidden()]];
        for &c in ids {
            let h = self.step("encoder", self.embed(c), &mut state);
            out.push(h);
        }
        out.truncate(ids.len());
        out
    }

    /// `log p(segment | history)` under the gated mixture.
    pub fn segment_logprob(&self, history: &[f64], segment: &[u32]) -> f64 {
        let hd = self.hidden();
        let layers = self.model.config.num_layers;
        let proj = affine(history, self.p("dec_init.w"), self.p("dec_init.b"));
        let mut state: State = (0..layers)
            .map(|l| {
                (
                    proj[2 * l * hd..(2 * l + 1) * hd].to_vec(),
                    proj[(2 * l + 1) * hd..(2 * l + 2) * hd].to_vec(),
                )
            })
            .collect();
        let mut char_lp = 0.0;
        let mut prev = EOS_ID;
        for j in 0..=segment.len() {
            let top = self.step("decoder", self.embed(prev), &mut state);
            let lp = log_softmax(&affine(&top, self.p("char_out.w"), self.p("char_out.b")));
            let target = segment.get(j).copied().unwrap_or(EOS_ID);
            char_lp += lp[target as usize];
            prev = target;
        }
        let lexicon = &self.model.lexicon;
        if lexicon.is_empty() {
            return char_lp;
        }
        let gate = sigmoid(affine(history, self.p("gate.w"), self.p("gate.b"))[0]);
        let text = self.model.vocab.decode(segment);
        let lex_p = match lexicon.lookup(&text) {
            Some(id) => {
                let lp = log_softmax(&affine(history, self.p("lex_out.w"), self.p("lex_out.b")));
                lp[id as usize].exp()
            }
            None => 0.0,
        };
        (gate * char_lp.exp() + (1.0 - gate) * lex_p).ln()
    }

    /// `table[k][m - 1]` scores `ids[k..k + m]` for every segment that stays
    /// inside one span of `seq`.
    pub fn segment_table(&self, seq: &CharSequence) -> Vec<Vec<f64>> {
        let hist = self.histories(&seq.ids);
        let ends = seq.span_ends();
        (0..seq.len())
            .map(|k| {
                (k + 1..=ends[k])
                    .map(|e| self.segment_logprob(&hist[k], &seq.ids[k..e]))
                    .collect()
            })
            .collect()
    }
}

/// Every segmentation of `seq` as its list of segment starts.
pub fn all_paths(seq: &CharSequence) -> Vec<Vec<usize>> {
    let mut paths = vec![vec![]];
    for span in &seq.spans {
        let inner = span.len() - 1;
        let mut next = Vec::with_capacity(paths.len() << inner);
        for p in &paths {
            for mask in 0..1usize << inner {
                let mut q: Vec<usize> = p.clone();
                q.push(span.start);
                q.extend((0..inner).filter(|i| mask >> i & 1 == 1).map(|i| span.start + i + 1));
                next.push(q);
            }
        }
        paths = next;
    }
    paths
}

pub fn path_score(table: &[Vec<f64>], starts: &[usize], n: usize) -> f64 {
    let mut s = 0.0;
    for (i, &k) in starts.iter().enumerate() {
        let end = starts.get(i + 1).copied().unwrap_or(n);
        s += table[k][end - k - 1];
    }
    s
}

/// Is path `a` preferred to `b` on a score tie? Compare segments from the
/// end; the longer last segment wins.
pub fn prefer_on_tie(a: &[usize], b: &[usize]) -> bool {
    for (x, y) in a.iter().rev().zip(b.iter().rev()) {
        if x != y {
            return x < y;
        }
    }
    a.len() < b.len()
}

/// Exhaustive argmax with scores within `tol` treated as equal.
pub fn exhaustive_argmax(table: &[Vec<f64>], paths: &[Vec<usize>], n: usize, tol: f64) -> Vec<usize> {
    let scores: Vec<f64> = paths.iter().map(|p| path_score(table, p, n)).collect();
    let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut best: Option<&Vec<usize>> = None;
    for (p, &s) in paths.iter().zip(&scores) {
        if s >= top - tol && best.is_none_or(|b| prefer_on_tie(p, b)) {
            best = Some(p);
        }
    }
    best.unwrap().clone()
}
