//! Subword segmental language model.
//!
//! A character LSTM encodes the history `x[..k]`. Every candidate segment
//! starting at `k` is scored as a gated mixture of a character decoder
//! (segment characters then end-of-segment) and a softmax over the lexicon.
//! Segments never cross word spans. The marginal over segmentations is a
//! semi-Markov forward pass in log space.

pub mod lattice;

use std::cmp::Reverse;

use rand::Rng;

use crate::corpus::{CharSequence, CharVocab, EOS_ID};
use crate::error::{Error, Result};
use crate::lexicon::{LexIndex, Lexicon};
use crate::nn::lstm::{maybe_dropout, INIT_SCALE};
use crate::nn::{Checkpoint, Dropout, Graph, Lstm, LstmState, Mat, NodeId, ParamId, ParamSet, StateValue};
use crate::segmentation::Segmentation;

pub use lattice::SeqLayout;

pub const CHECKPOINT_KIND: &str = "sslm";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SslmConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    /// Longest segment the lattice admits; `None` allows whole words.
    pub dp_max_seg: Option<usize>,
}

impl SslmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.num_layers == 0 {
            return Err(Error::InvalidArgument(
                "embedding size, hidden size and layer count must be positive".into(),
            ));
        }
        if self.dp_max_seg == Some(0) {
            return Err(Error::InvalidArgument("dp_max_seg must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Weights {
    embed: ParamId,
    encoder: Lstm,
    decoder: Lstm,
    init_w: ParamId,
    init_b: ParamId,
    out_w: ParamId,
    out_b: ParamId,
    lex_w: ParamId,
    lex_b: ParamId,
    gate_w: ParamId,
    gate_b: ParamId,
}

#[derive(Clone, Debug)]
pub struct Sslm {
    pub vocab: CharVocab,
    pub lexicon: Lexicon,
    pub config: SslmConfig,
    pub params: ParamSet,
    lex_index: LexIndex,
    w: Weights,
}

/// Segment scores for a batch, as graph nodes plus the layout needed to run
/// the lattice over them.
pub struct Scored {
    /// `log p(segment | history)`, one row per lattice edge.
    pub seg: NodeId,
    /// `log g + log p_char(segment)`.
    pub char_branch: NodeId,
    /// `log (1 - g) + log p_lex(segment)`; absent without a lexicon.
    pub lex_branch: Option<NodeId>,
    pub layouts: Vec<SeqLayout>,
    /// Lexicon coefficient `1 - g` at every history position in the batch.
    pub lex_coef: Vec<f64>,
    /// Encoder state after each full sequence, rows in input order.
    pub final_state: Option<StateValue>,
}

/// Lattice of one sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct SegLattice {
    /// `alpha[t] = log p(x[..t])`.
    pub alpha: Vec<f64>,
    /// For each end position `t >= 1`: start of the best last segment, and
    /// whether its lexicon branch outweighs its character branch.
    pub backptr: Vec<(usize, bool)>,
    /// `seg_logp[k][m - 1] = log p(x[k..k + m] | x[..k])`.
    pub seg_logp: Vec<Vec<f64>>,
}

impl Sslm {
    pub fn new<R: Rng>(vocab: CharVocab, lexicon: Lexicon, config: SslmConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (e, h, l) = (config.embed_dim, config.hidden_dim, config.num_layers);
        let (nc, nv) = (vocab.len(), lexicon.len());
        let mut ps = ParamSet::new();
        let embed = ps.add_uniform("embed", (nc, e), INIT_SCALE, rng);
        let encoder = Lstm::new(&mut ps, "encoder", e, h, l, rng);
        let decoder = Lstm::new(&mut ps, "decoder", e, h, l, rng);
        let init_w = ps.add_uniform("dec_init.w", (h, 2 * l * h), INIT_SCALE, rng);
        let init_b = ps.add_zeros("dec_init.b", (1, 2 * l * h));
        let out_w = ps.add_uniform("char_out.w", (h, nc), INIT_SCALE, rng);
        let out_b = ps.add_zeros("char_out.b", (1, nc));
        let lex_w = ps.add_uniform("lex_out.w", (h, nv), INIT_SCALE, rng);
        let lex_b = ps.add_zeros("lex_out.b", (1, nv));
        let gate_w = ps.add_uniform("gate.w", (h, 1), INIT_SCALE, rng);
        let gate_b = ps.add_zeros("gate.b", (1, 1));
        let w = Weights {
            embed,
            encoder,
            decoder,
            init_w,
            init_b,
            out_w,
            out_b,
            lex_w,
            lex_b,
            gate_w,
            gate_b,
        };
        Ok(Self::assemble(vocab, lexicon, config, ps, w))
    }

    fn assemble(vocab: CharVocab, lexicon: Lexicon, config: SslmConfig, params: ParamSet, w: Weights) -> Self {
        let lex_index = lexicon.id_index(&vocab);
        Sslm {
            vocab,
            lexicon,
            config,
            params,
            lex_index,
            w,
        }
    }

    /// Rebinds to `params`, checking every shape.
    pub fn from_parts(vocab: CharVocab, lexicon: Lexicon, config: SslmConfig, params: ParamSet) -> Result<Self> {
        config.validate()?;
        let (e, h, l) = (config.embed_dim, config.hidden_dim, config.num_layers);
        let (nc, nv) = (vocab.len(), lexicon.len());
        let w = Weights {
            embed: params.expect("embed", (nc, e))?,
            encoder: Lstm::from_params(&params, "encoder", e, h, l)?,
            decoder: Lstm::from_params(&params, "decoder", e, h, l)?,
            init_w: params.expect("dec_init.w", (h, 2 * l * h))?,
            init_b: params.expect("dec_init.b", (1, 2 * l * h))?,
            out_w: params.expect("char_out.w", (h, nc))?,
            out_b: params.expect("char_out.b", (1, nc))?,
            lex_w: params.expect("lex_out.w", (h, nv))?,
            lex_b: params.expect("lex_out.b", (1, nv))?,
            gate_w: params.expect("gate.w", (h, 1))?,
            gate_b: params.expect("gate.b", (1, 1))?,
        };
        Ok(Self::assemble(vocab, lexicon, config, params, w))
    }

    pub fn to_checkpoint(&self, extra_meta: &[(String, String)]) -> Checkpoint {
        let mut meta = vec![
            ("embed_dim".to_string(), self.config.embed_dim.to_string()),
            ("hidden_dim".to_string(), self.config.hidden_dim.to_string()),
            ("num_layers".to_string(), self.config.num_layers.to_string()),
            (
                "dp_max_seg".to_string(),
                self.config
                    .dp_max_seg
                    .map_or_else(|| "none".to_string(), |c| c.to_string()),
            ),
            ("vocab".to_string(), self.vocab.to_file_string()),
            ("lexicon".to_string(), self.lexicon.to_tsv()),
        ];
        meta.extend(extra_meta.iter().cloned());
        Checkpoint {
            kind: CHECKPOINT_KIND.to_string(),
            meta,
            params: self.params.clone(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.kind != CHECKPOINT_KIND {
            return Err(Error::format(
                "checkpoint",
                format!("expected model kind {CHECKPOINT_KIND}, found {}", ck.kind),
            ));
        }
        let dp_max_seg = match ck.require("dp_max_seg")? {
            "none" => None,
            _ => Some(ck.require_parsed("dp_max_seg")?),
        };
        let config = SslmConfig {
            embed_dim: ck.require_parsed("embed_dim")?,
            hidden_dim: ck.require_parsed("hidden_dim")?,
            num_layers: ck.require_parsed("num_layers")?,
            dp_max_seg,
        };
        let vocab = CharVocab::from_file_string(ck.require("vocab")?)?;
        let lexicon = Lexicon::from_tsv(ck.require("lexicon")?)?;
        Self::from_parts(vocab, lexicon, config, ck.params.clone())
    }

    pub fn cap(&self) -> usize {
        self.config.dp_max_seg.unwrap_or(usize::MAX)
    }

    pub fn zero_state(&self, rows: usize) -> StateValue {
        StateValue::zeros(self.config.num_layers, rows, self.config.hidden_dim)
    }

    /// Gate parameters; exposed so callers can pin the mixture.
    pub fn gate_params(&self) -> (ParamId, ParamId) {
        (self.w.gate_w, self.w.gate_b)
    }

    pub fn lexicon_params(&self) -> (ParamId, ParamId) {
        (self.w.lex_w, self.w.lex_b)
    }

    fn check_ids(&self, ids: &[u32]) -> Result<()> {
        match ids.iter().find(|&&i| !self.vocab.contains(i)) {
            Some(bad) => Err(Error::InvalidArgument(format!(
                "character id {bad} outside a vocabulary of {}",
                self.vocab.len()
            ))),
            None => Ok(()),
        }
    }

    /// Encoder history vectors: row `k` summarises `x[..k]` (row 0 is the
    /// top layer of the initial state). Also returns the state after all of
    /// `ids`.
    pub fn encode_history(&self, ids: &[u32], init: Option<&StateValue>) -> Result<(Mat, StateValue)> {
        self.check_ids(ids)?;
        let mut g = Graph::new(&self.params);
        let mut state = match init {
            Some(s) => s.to_graph(&mut g),
            None => self.w.encoder.zero_state(&mut g, 1),
        };
        let mut rows = vec![g.value(state.top()).clone()];
        for (t, &c) in ids.iter().enumerate() {
            let emb = g.param(self.w.embed);
            let x = g.gather_rows(emb, vec![c as usize]);
            let (top, next) = self.w.encoder.step(&mut g, x, &state, None)?;
            state = next;
            if t + 1 < ids.len() {
                rows.push(g.value(top).clone());
            }
        }
        let views: Vec<_> = rows.iter().take(ids.len()).map(|r| r.view()).collect();
        let hist = if views.is_empty() {
            Mat::zeros((0, self.config.hidden_dim))
        } else {
            ndarray::concatenate(ndarray::Axis(0), &views).unwrap()
        };
        Ok((hist, state.detach(&g)))
    }

    /// `(log g + log p_char, log (1 - g) + log p_lex)` of one segment given a
    /// history vector. The lexicon branch is `-inf` for segments outside the
    /// lexicon.
    pub fn segment_branches(&self, history: &Mat, segment: &[u32]) -> Result<(f64, f64)> {
        if segment.is_empty() {
            return Err(Error::InvalidArgument("empty segment".into()));
        }
        self.check_ids(segment)?;
        if history.dim() != (1, self.config.hidden_dim) {
            return Err(Error::Shape {
                op: "segment_logprob",
                detail: format!("history {:?}, expected (1, {})", history.dim(), self.config.hidden_dim),
            });
        }
        let letters = segment.iter().filter(|&&c| self.vocab.is_letter_id(c)).count();
        if segment.len() > 1 && letters != segment.len() {
            return Err(Error::CrossesBoundary {
                start: 0,
                end: segment.len(),
            });
        }
        let mut g = Graph::new(&self.params);
        let h = g.constant(history.clone());
        let mut state = self.decoder_init(&mut g, h);
        let mut char_lp = 0.0;
        let mut prev = EOS_ID;
        for j in 0..=segment.len() {
            let emb = g.param(self.w.embed);
            let x = g.gather_rows(emb, vec![prev as usize]);
            let (top, next) = self.w.decoder.step(&mut g, x, &state, None)?;
            state = next;
            let logits = g.affine(top, self.w.out_w, self.w.out_b);
            let lp = g.log_softmax(logits);
            let target = segment.get(j).copied().unwrap_or(EOS_ID);
            char_lp += g.value(lp)[[0, target as usize]];
            prev = target;
        }
        if self.lexicon.is_empty() {
            return Ok((char_lp, f64::NEG_INFINITY));
        }
        let pre = g.affine(h, self.w.gate_w, self.w.gate_b);
        let pre = g.scalar(pre);
        let log_g = crate::nn::graph::log_sigmoid(pre);
        let log_1mg = crate::nn::graph::log_sigmoid(-pre);
        let lex_lp = match self.lex_index.get(segment) {
            Some(id) => {
                let logits = g.affine(h, self.w.lex_w, self.w.lex_b);
                let lp = g.log_softmax(logits);
                g.value(lp)[[0, id as usize]]
            }
            None => f64::NEG_INFINITY,
        };
        Ok((log_g + char_lp, log_1mg + lex_lp))
    }

    /// `log p(segment | history)` under the gated mixture.
    pub fn segment_logprob(&self, history: &Mat, segment: &[u32]) -> Result<f64> {
        let (c, l) = self.segment_branches(history, segment)?;
        Ok(crate::nn::graph::log_add_exp(c, l))
    }

    fn decoder_init(&self, g: &mut Graph, h: NodeId) -> LstmState {
        let hd = self.config.hidden_dim;
        let proj = g.affine(h, self.w.init_w, self.w.init_b);
        LstmState {
            layers: (0..self.config.num_layers)
                .map(|l| {
                    let h0 = g.slice_cols(proj, 2 * l * hd, (2 * l + 1) * hd);
                    let c0 = g.slice_cols(proj, (2 * l + 1) * hd, (2 * l + 2) * hd);
                    (h0, c0)
                })
                .collect(),
        }
    }

    /// Scores every lattice edge of every sequence in one batched pass.
    ///
    /// With `need_final`, the encoder also consumes the last character of
    /// each sequence and the resulting states are returned (for carrying
    /// history into the next window).
    pub fn score_segments(
        &self,
        g: &mut Graph,
        seqs: &[&CharSequence],
        init: Option<&StateValue>,
        need_final: bool,
        mut dropout: Option<&mut Dropout>,
    ) -> Result<Scored> {
        let n_seq = seqs.len();
        for s in seqs {
            self.check_ids(&s.ids)?;
        }
        let mut order: Vec<usize> = (0..n_seq).collect();
        order.sort_by_key(|&b| Reverse(seqs[b].len()));
        let mut rank = vec![0; n_seq];
        for (r, &b) in order.iter().enumerate() {
            rank[b] = r;
        }
        let sorted_lens: Vec<usize> = order.iter().map(|&b| seqs[b].len()).collect();
        let longer_than = |t: usize| sorted_lens.iter().take_while(|&&l| l > t).count();
        let max_len = sorted_lens.first().copied().unwrap_or(0);

        let mut state = match init {
            Some(sv) => {
                if sv.rows() != n_seq || sv.layers.len() != self.config.num_layers {
                    return Err(Error::Shape {
                        op: "score_segments",
                        detail: format!("initial state has {} rows for {n_seq} sequences", sv.rows()),
                    });
                }
                let st = sv.to_graph(g);
                LstmState {
                    layers: st
                        .layers
                        .iter()
                        .map(|&(h, c)| (g.gather_rows(h, order.clone()), g.gather_rows(c, order.clone())))
                        .collect(),
                }
            }
            None => self.w.encoder.zero_state(g, n_seq),
        };

        // Encoder. Rows stay sorted by length so the active set is a prefix.
        let mut finals: Vec<Option<Vec<(Mat, Mat)>>> = vec![None; n_seq];
        let capture = |g: &Graph, state: &LstmState, lo: usize, hi: usize, finals: &mut Vec<Option<Vec<(Mat, Mat)>>>| {
            for (r, slot) in finals.iter_mut().enumerate().take(hi).skip(lo) {
                *slot = Some(
                    state
                        .layers
                        .iter()
                        .map(|&(h, c)| {
                            let row = |n: NodeId| g.value(n).slice(ndarray::s![r..r + 1, ..]).to_owned();
                            (row(h), row(c))
                        })
                        .collect(),
                );
            }
        };
        let mut hist_parts = Vec::new();
        let mut hist_offset = Vec::with_capacity(max_len);
        let mut total_hist = 0;
        if max_len > 0 {
            let a = longer_than(0);
            hist_parts.push(g.slice_rows(state.top(), 0, a));
            hist_offset.push(0);
            total_hist = a;
        }
        let steps = if need_final { max_len } else { max_len.saturating_sub(1) };
        let mut rows = n_seq;
        for t in 0..steps {
            let rows_t = if need_final { longer_than(t) } else { longer_than(t + 1) };
            if rows_t < rows {
                if need_final {
                    capture(g, &state, rows_t, rows, &mut finals);
                }
                state = state.slice_rows(g, rows_t);
                rows = rows_t;
            }
            let ids: Vec<usize> = (0..rows).map(|r| seqs[order[r]].ids[t] as usize).collect();
            let emb = g.param(self.w.embed);
            let x = g.gather_rows(emb, ids);
            let x = maybe_dropout(g, x, &mut dropout);
            let (top, next) = self.w.encoder.step(g, x, &state, dropout.as_deref_mut())?;
            state = next;
            if t + 1 < max_len {
                let a = longer_than(t + 1);
                hist_parts.push(if a == rows { top } else { g.slice_rows(top, 0, a) });
                hist_offset.push(total_hist);
                total_hist += a;
            }
        }
        let final_state = if need_final {
            capture(g, &state, 0, rows, &mut finals);
            let mut sv = self.zero_state(n_seq);
            for b in 0..n_seq {
                let f = finals[rank[b]].as_ref().expect("final state captured for every row");
                for (l, (h, c)) in f.iter().enumerate() {
                    sv.layers[l].0.row_mut(b).assign(&h.row(0));
                    sv.layers[l].1.row_mut(b).assign(&c.row(0));
                }
            }
            Some(sv)
        } else {
            None
        };

        if total_hist == 0 {
            let empty = g.constant(Mat::zeros((0, 1)));
            return Ok(Scored {
                seg: empty,
                char_branch: empty,
                lex_branch: None,
                layouts: seqs.iter().map(|_| SeqLayout { starts: vec![] }).collect(),
                lex_coef: vec![],
                final_state,
            });
        }
        let hist = g.concat_rows(&hist_parts);
        let hist = maybe_dropout(g, hist, &mut dropout);

        // Decoder rows are (sequence, start) pairs, sorted by their longest
        // admissible segment so the rows still decoding form a prefix.
        struct Row {
            b: usize,
            k: usize,
            m_max: usize,
        }
        let cap = self.cap();
        let mut dec_rows = Vec::with_capacity(total_hist);
        for (b, s) in seqs.iter().enumerate() {
            let ends = s.span_ends();
            for (k, &end) in ends.iter().enumerate() {
                dec_rows.push(Row {
                    b,
                    k,
                    m_max: cap.min(end - k),
                });
            }
        }
        dec_rows.sort_by_key(|r| Reverse(r.m_max));
        let n_rows = dec_rows.len();
        let longest = dec_rows[0].m_max;
        let hist_rows: Vec<usize> = dec_rows.iter().map(|r| hist_offset[r.k] + rank[r.b]).collect();
        let h_rows = g.gather_rows(hist, hist_rows);
        let mut dstate = self.decoder_init(g, h_rows);

        let mut tops = Vec::with_capacity(longest + 1);
        let mut dec_offset = Vec::with_capacity(longest + 1);
        let mut total_dec = 0;
        let mut active = n_rows;
        for j in 0..=longest {
            let a = dec_rows.iter().take_while(|r| r.m_max >= j).count();
            if a < active {
                dstate = dstate.slice_rows(g, a);
                active = a;
            }
            let ids: Vec<usize> = dec_rows[..active]
                .iter()
                .map(|r| {
                    if j == 0 {
                        EOS_ID as usize
                    } else {
                        seqs[r.b].ids[r.k + j - 1] as usize
                    }
                })
                .collect();
            let emb = g.param(self.w.embed);
            let x = g.gather_rows(emb, ids);
            let x = maybe_dropout(g, x, &mut dropout);
            let (top, next) = self.w.decoder.step(g, x, &dstate, dropout.as_deref_mut())?;
            dstate = next;
            tops.push(top);
            dec_offset.push(total_dec);
            total_dec += active;
        }
        let tops = g.concat_rows(&tops);
        let tops = maybe_dropout(g, tops, &mut dropout);
        let logits = g.affine(tops, self.w.out_w, self.w.out_b);
        let char_lp = g.log_softmax(logits);

        let nc = self.vocab.len();
        let nv = self.lexicon.len();
        let mut layouts: Vec<SeqLayout> = seqs
            .iter()
            .map(|s| SeqLayout {
                starts: vec![(0, 0); s.len()],
            })
            .collect();
        let mut offsets = vec![0];
        let mut flat = Vec::new();
        let mut seg_row = Vec::new();
        let mut lex_idx = Vec::new();
        for (r, row) in dec_rows.iter().enumerate() {
            let ids = &seqs[row.b].ids;
            layouts[row.b].starts[row.k] = (row.m_max, seg_row.len());
            for m in 1..=row.m_max {
                for j in 0..m {
                    flat.push((dec_offset[j] + r) * nc + ids[row.k + j] as usize);
                }
                flat.push((dec_offset[m] + r) * nc + EOS_ID as usize);
                offsets.push(flat.len());
                seg_row.push(r);
                if nv > 0 {
                    lex_idx.push(self.lex_index.get(&ids[row.k..row.k + m]).map(|id| r * nv + id as usize));
                }
            }
        }
        let char_seg = g.gather_sum_flat(char_lp, offsets, flat);

        if nv == 0 {
            return Ok(Scored {
                seg: char_seg,
                char_branch: char_seg,
                lex_branch: None,
                layouts,
                lex_coef: vec![0.0; n_rows],
                final_state,
            });
        }
        let gate_pre = g.affine(h_rows, self.w.gate_w, self.w.gate_b);
        let log_g = g.log_sigmoid(gate_pre);
        let neg_pre = g.neg(gate_pre);
        let log_1mg = g.log_sigmoid(neg_pre);
        let lex_coef = g.value(log_1mg).iter().map(|v| v.exp()).collect();
        let lex_logits = g.affine(h_rows, self.w.lex_w, self.w.lex_b);
        let lex_lp = g.log_softmax(lex_logits);
        let lex_seg = g.gather_opt(lex_lp, lex_idx);
        let log_g_seg = g.gather_rows(log_g, seg_row.clone());
        let log_1mg_seg = g.gather_rows(log_1mg, seg_row);
        let char_branch = g.add(char_seg, log_g_seg);
        let lex_branch = g.add(lex_seg, log_1mg_seg);
        let seg = g.log_add_exp(char_branch, lex_branch);
        g.check()?;
        Ok(Scored {
            seg,
            char_branch,
            lex_branch: Some(lex_branch),
            layouts,
            lex_coef,
            final_state,
        })
    }

    /// `log p(x)` for each sequence (no dropout), plus final states when
    /// `need_final` is set.
    pub fn log_likelihoods(
        &self,
        seqs: &[&CharSequence],
        init: Option<&StateValue>,
        need_final: bool,
    ) -> Result<(Vec<f64>, Option<StateValue>)> {
        let mut g = Graph::new(&self.params);
        let scored = self.score_segments(&mut g, seqs, init, need_final, None)?;
        let z = lattice::log_marginal(&mut g, scored.seg, &scored.layouts);
        g.check()?;
        Ok((g.value(z).iter().copied().collect(), scored.final_state))
    }

    /// Log marginal likelihood of one sequence with its full lattice.
    pub fn forward_marginal(
        &self,
        seq: &CharSequence,
        init: Option<&StateValue>,
    ) -> Result<(f64, StateValue, SegLattice)> {
        let mut g = Graph::new(&self.params);
        let scored = self.score_segments(&mut g, &[seq], init, true, None)?;
        let lay = &scored.layouts[0];
        let seg: Vec<f64> = g.value(scored.seg).iter().copied().collect();
        let (alpha, _) = lattice::forward_backward(&seg, lay);
        if alpha.iter().any(|a| a.is_nan() || *a == f64::INFINITY) || alpha[seq.len()] == f64::NEG_INFINITY {
            return Err(Error::NonFinite {
                op: "forward_marginal".into(),
            });
        }
        let (_, back) = lattice::viterbi(&seg, lay);
        let char_b: Vec<f64> = g.value(scored.char_branch).iter().copied().collect();
        let lex_b: Option<Vec<f64>> = scored.lex_branch.map(|n| g.value(n).iter().copied().collect());
        let backptr = (0..=seq.len())
            .map(|t| {
                if t == 0 {
                    return (0, false);
                }
                let k = back[t];
                let i = lay.index(k, t - k);
                let lexy = lex_b.as_ref().is_some_and(|l| l[i] > char_b[i]);
                (k, lexy)
            })
            .collect();
        let seg_logp = lay
            .starts
            .iter()
            .map(|&(m, base)| seg[base..base + m].to_vec())
            .collect();
        let final_state = scored.final_state.expect("final state requested");
        Ok((
            alpha[seq.len()],
            final_state,
            SegLattice {
                alpha,
                backptr,
                seg_logp,
            },
        ))
    }

    /// Best segmentation of each sequence, as segment start positions.
    pub fn viterbi_starts(&self, seqs: &[&CharSequence], init: Option<&StateValue>) -> Result<Vec<Vec<usize>>> {
        let mut g = Graph::new(&self.params);
        let scored = self.score_segments(&mut g, seqs, init, false, None)?;
        let seg: Vec<f64> = g.value(scored.seg).iter().copied().collect();
        Ok(scored
            .layouts
            .iter()
            .map(|lay| {
                let (_, back) = lattice::viterbi(&seg, lay);
                lattice::backtrack(&back)
            })
            .collect())
    }

    /// Viterbi segmentation of the letter words of `seq`.
    pub fn viterbi_segment(&self, seq: &CharSequence, init: Option<&StateValue>) -> Result<Vec<Segmentation>> {
        let starts = self.viterbi_starts(&[seq], init)?.pop().unwrap();
        Ok(words_from_starts(seq, &self.vocab, &starts))
    }

    /// Mean per-character negative log-likelihood of a batch as a graph
    /// node, with the final encoder states when `carry` is set.
    pub fn batch_loss(
        &self,
        g: &mut Graph,
        seqs: &[&CharSequence],
        init: Option<&StateValue>,
        carry: bool,
        dropout: Option<&mut Dropout>,
    ) -> Result<(NodeId, Option<StateValue>)> {
        let chars: usize = seqs.iter().map(|s| s.len()).sum();
        if chars == 0 {
            return Err(Error::InvalidArgument("batch has no characters".into()));
        }
        let scored = self.score_segments(g, seqs, init, carry, dropout)?;
        let z = lattice::log_marginal(g, scored.seg, &scored.layouts);
        let total = g.sum(z);
        let loss = g.scale(total, -1.0 / chars as f64);
        g.check()?;
        Ok((loss, scored.final_state))
    }

    /// Loss value, parameter gradients and carried state for one batch.
    pub fn nll_loss(
        &self,
        seqs: &[&CharSequence],
        init: Option<&StateValue>,
        carry: bool,
        dropout: Option<&mut Dropout>,
    ) -> Result<(f64, Vec<Mat>, Option<StateValue>)> {
        let mut g = Graph::new(&self.params);
        let (loss, state) = self.batch_loss(&mut g, seqs, init, carry, dropout)?;
        let grads = g.backward(loss)?;
        Ok((g.scalar(loss), grads.into_params(), state))
    }

    /// Sum and count of the lexicon coefficient `1 - g` over every history
    /// position of `seqs`, each scored from `init` (or a zero state).
    pub fn lexicon_coefficients(&self, seqs: &[&CharSequence], init: Option<&StateValue>) -> Result<(f64, usize)> {
        let mut g = Graph::new(&self.params);
        let scored = self.score_segments(&mut g, seqs, init, false, None)?;
        Ok((scored.lex_coef.iter().sum(), scored.lex_coef.len()))
    }

    /// Mean lexicon coefficient over all history positions of `seqs`, each
    /// scored from an empty history in chunks of `batch` sequences.
    pub fn gate_statistics(&self, seqs: &[CharSequence], batch: usize) -> Result<f64> {
        let (mut sum, mut n) = (0.0, 0);
        for chunk in seqs.chunks(batch.max(1)) {
            let refs: Vec<&CharSequence> = chunk.iter().collect();
            let (s, c) = self.lexicon_coefficients(&refs, None)?;
            sum += s;
            n += c;
        }
        Ok(if n == 0 { 0.0 } else { sum / n as f64 })
    }
}

/// Turns a path's segment starts into per-word segmentations of the letter
/// spans of `seq`.
pub fn words_from_starts(seq: &CharSequence, vocab: &CharVocab, starts: &[usize]) -> Vec<Segmentation> {
    seq.words(vocab)
        .map(|span| {
            let word = vocab.decode(&seq.ids[span.start..span.end]);
            let cuts = starts
                .iter()
                .filter(|&&s| s > span.start && s < span.end)
                .map(|&s| s - span.start)
                .collect();
            Segmentation { word, cuts }
        })
        .collect()
}
