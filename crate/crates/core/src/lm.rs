//! Character and subword LSTM language models used as baselines and as the
//! entropy source for boundary detection.

use std::collections::HashMap;

use rand::Rng;

use crate::corpus::{escape_str, unescape, CharSequence, CharVocab, EOS_ID, UNK_ID};
use crate::error::{Error, Result};
use crate::nn::lstm::{maybe_dropout, INIT_SCALE};
use crate::nn::{Checkpoint, Dropout, Graph, Lstm, Mat, NodeId, ParamId, ParamSet, StateValue};
use crate::segmenters::entropy::EntropyProfile;
use crate::segmenters::{BpeModel, UlmModel};

pub const CHECKPOINT_KIND: &str = "baseline-lm";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TokenKind {
    Char,
    Bpe,
    Ulm,
}

impl std::str::FromStr for TokenKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "char" => Ok(TokenKind::Char),
            "bpe" => Ok(TokenKind::Bpe),
            "ulm" => Ok(TokenKind::Ulm),
            other => Err(Error::InvalidArgument(format!("unknown token kind {other:?}"))),
        }
    }
}

impl std::fmt::Display for TokenKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TokenKind::Char => "char",
            TokenKind::Bpe => "bpe",
            TokenKind::Ulm => "ulm",
        })
    }
}

/// How letter words are split into tokens.
#[derive(Clone, Debug, PartialEq)]
pub enum Tokenizer {
    Char,
    Bpe(BpeModel),
    Ulm(UlmModel),
}

impl Tokenizer {
    pub fn kind(&self) -> TokenKind {
        match self {
            Tokenizer::Char => TokenKind::Char,
            Tokenizer::Bpe(_) => TokenKind::Bpe,
            Tokenizer::Ulm(_) => TokenKind::Ulm,
        }
    }

    fn pieces(&self, word: &str) -> Vec<String> {
        match self {
            Tokenizer::Char => word.chars().map(String::from).collect(),
            Tokenizer::Bpe(m) => m.apply(word),
            Tokenizer::Ulm(m) => m.segment(word).pieces(),
        }
    }

    fn to_file_string(&self) -> String {
        match self {
            Tokenizer::Char => String::new(),
            Tokenizer::Bpe(m) => m.to_file_string(),
            Tokenizer::Ulm(m) => m.to_file_string(),
        }
    }

    fn from_file_string(kind: TokenKind, text: &str) -> Result<Self> {
        Ok(match kind {
            TokenKind::Char => Tokenizer::Char,
            TokenKind::Bpe => Tokenizer::Bpe(BpeModel::from_file_string(text)?),
            TokenKind::Ulm => Tokenizer::Ulm(UlmModel::from_file_string(text)?),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LmConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            embed_dim: 64,
            hidden_dim: 128,
            num_layers: 1,
        }
    }
}

/// Embedding, LSTM and softmax over a token vocabulary. Token ids below the
/// character vocabulary size coincide with character ids; multi-character
/// pieces follow. Id 0 doubles as the start-of-line input.
#[derive(Clone, Debug)]
pub struct LanguageModel {
    pub vocab: CharVocab,
    pub tokenizer: Tokenizer,
    pub config: LmConfig,
    pub params: ParamSet,
    pieces: Vec<String>,
    index: HashMap<String, u32>,
    embed: ParamId,
    lstm: Lstm,
    out_w: ParamId,
    out_b: ParamId,
}

/// Output of a forward pass over several token sequences.
pub struct LmRun {
    /// Log distributions, one row per predicted position.
    pub logp: NodeId,
    /// `rows[b][t]` is the row of `logp` predicting token `t` of sequence `b`.
    pub rows: Vec<Vec<usize>>,
    pub final_state: Option<StateValue>,
}

impl LanguageModel {
    /// Fresh model whose piece inventory is every multi-character token the
    /// tokenizer produces on `train`.
    pub fn new<R: Rng>(
        vocab: CharVocab,
        tokenizer: Tokenizer,
        train: &[CharSequence],
        config: LmConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let mut pieces = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for seq in train {
            for span in seq.words(&vocab) {
                let word = vocab.decode(&seq.ids[span.start..span.end]);
                for p in tokenizer.pieces(&word) {
                    if p.chars().count() > 1 && seen.insert(p.clone()) {
                        pieces.push(p);
                    }
                }
            }
        }
        let n = vocab.len() + pieces.len();
        let mut params = ParamSet::new();
        params.add_uniform("embed", (n, config.embed_dim), INIT_SCALE, rng);
        Lstm::new(&mut params, "lstm", config.embed_dim, config.hidden_dim, config.num_layers, rng);
        params.add_uniform("out.w", (config.hidden_dim, n), INIT_SCALE, rng);
        params.add_zeros("out.b", (1, n));
        Self::from_parts(vocab, tokenizer, pieces, config, params)
    }

    pub fn from_parts(
        vocab: CharVocab,
        tokenizer: Tokenizer,
        pieces: Vec<String>,
        config: LmConfig,
        params: ParamSet,
    ) -> Result<Self> {
        if config.embed_dim == 0 || config.hidden_dim == 0 || config.num_layers == 0 {
            return Err(Error::InvalidArgument(
                "embedding size, hidden size and layer count must be positive".into(),
            ));
        }
        let n = vocab.len() + pieces.len();
        let embed = params.expect("embed", (n, config.embed_dim))?;
        let lstm = Lstm::from_params(&params, "lstm", config.embed_dim, config.hidden_dim, config.num_layers)?;
        let out_w = params.expect("out.w", (config.hidden_dim, n))?;
        let out_b = params.expect("out.b", (1, n))?;
        let index = pieces
            .iter()
            .enumerate()
            .map(|(i, p)| (p.clone(), (vocab.len() + i) as u32))
            .collect();
        Ok(LanguageModel {
            vocab,
            tokenizer,
            config,
            params,
            pieces,
            index,
            embed,
            lstm,
            out_w,
            out_b,
        })
    }

    pub fn kind(&self) -> TokenKind {
        self.tokenizer.kind()
    }

    pub fn num_tokens(&self) -> usize {
        self.vocab.len() + self.pieces.len()
    }

    /// Characters covered by a token.
    pub fn token_len(&self, token: u32) -> usize {
        let t = token as usize;
        if t < self.vocab.len() {
            1
        } else {
            self.pieces[t - self.vocab.len()].chars().count()
        }
    }

    /// Output projection; exposed so callers can pin the distribution.
    pub fn output_params(&self) -> (ParamId, ParamId) {
        (self.out_w, self.out_b)
    }

    pub fn zero_state(&self, rows: usize) -> StateValue {
        StateValue::zeros(self.config.num_layers, rows, self.config.hidden_dim)
    }

    /// Token ids of a character sequence. Letter words go through the
    /// tokenizer; pieces outside the inventory fall back to characters.
    pub fn tokenize(&self, seq: &CharSequence) -> Vec<u32> {
        let mut out = Vec::with_capacity(seq.len());
        for span in &seq.spans {
            let ids = &seq.ids[span.start..span.end];
            let is_word = ids.iter().all(|&i| self.vocab.is_letter_id(i));
            if matches!(self.tokenizer, Tokenizer::Char) || !is_word || ids.len() == 1 {
                out.extend_from_slice(ids);
                continue;
            }
            for p in self.tokenizer.pieces(&self.vocab.decode(ids)) {
                match self.index.get(&p) {
                    Some(&id) => out.push(id),
                    None => out.extend(p.chars().map(|c| self.vocab.id(c))),
                }
            }
        }
        out
    }

    /// Runs the LSTM over each sequence, feeding `prev[b]` before its first
    /// token. Sequences may differ in length.
    pub fn run(
        &self,
        g: &mut Graph,
        seqs: &[&[u32]],
        prev: &[u32],
        init: Option<&StateValue>,
        need_final: bool,
        mut dropout: Option<&mut Dropout>,
    ) -> Result<LmRun> {
        let n = self.num_tokens() as u32;
        if let Some(bad) = seqs.iter().flat_map(|s| s.iter()).chain(prev).find(|&&t| t >= n) {
            return Err(Error::InvalidArgument(format!("token id {bad} outside a vocabulary of {n}")));
        }
        if prev.len() != seqs.len() {
            return Err(Error::Shape {
                op: "lm_run",
                detail: format!("{} start tokens for {} sequences", prev.len(), seqs.len()),
            });
        }
        let mut order: Vec<usize> = (0..seqs.len()).collect();
        order.sort_by_key(|&b| std::cmp::Reverse(seqs[b].len()));
        let longest = order.first().map_or(0, |&b| seqs[b].len());
        let state0 = match init {
            Some(s) => {
                if s.rows() != seqs.len() {
                    return Err(Error::Shape {
                        op: "lm_run",
                        detail: format!("initial state has {} rows for {} sequences", s.rows(), seqs.len()),
                    });
                }
                StateValue {
                    layers: s
                        .layers
                        .iter()
                        .map(|(h, c)| (h.select(ndarray::Axis(0), &order), c.select(ndarray::Axis(0), &order)))
                        .collect(),
                }
            }
            None => self.zero_state(seqs.len()),
        };
        let mut state = state0.to_graph(g);
        let table = g.param(self.embed);
        let mut finals: Vec<Option<(usize, Vec<(NodeId, NodeId)>)>> = vec![None; seqs.len()];
        let mut tops = Vec::with_capacity(longest);
        let mut rows = vec![Vec::new(); seqs.len()];
        let mut offset = 0;
        for t in 0..=longest {
            let active = order.iter().take_while(|&&b| seqs[b].len() > t).count();
            if need_final {
                for (rank, &b) in order.iter().enumerate().skip(active) {
                    if seqs[b].len() == t {
                        finals[b] = Some((rank, state.layers.clone()));
                    }
                }
            }
            if active == 0 {
                break;
            }
            if active < g.value(state.top()).nrows() {
                state = state.slice_rows(g, active);
            }
            let inputs: Vec<usize> = order[..active]
                .iter()
                .map(|&b| if t == 0 { prev[b] } else { seqs[b][t - 1] } as usize)
                .collect();
            let x = g.gather_rows(table, inputs);
            let x = maybe_dropout(g, x, &mut dropout);
            let (top, next) = self.lstm.step(g, x, &state, dropout.as_deref_mut())?;
            state = next;
            tops.push(top);
            for (rank, &b) in order[..active].iter().enumerate() {
                rows[b].push(offset + rank);
            }
            offset += active;
        }
        let logp = if tops.is_empty() {
            g.constant(Mat::zeros((0, self.num_tokens())))
        } else {
            let h = g.concat_rows(&tops);
            let h = maybe_dropout(g, h, &mut dropout);
            let logits = g.affine(h, self.out_w, self.out_b);
            g.log_softmax(logits)
        };
        let final_state = need_final.then(|| {
            let hd = self.config.hidden_dim;
            let mut out = self.zero_state(seqs.len());
            for (b, f) in finals.iter().enumerate() {
                let (rank, layers) = f.as_ref().expect("every sequence finishes");
                for (l, &(h, c)) in layers.iter().enumerate() {
                    out.layers[l].0.row_mut(b).assign(&g.value(h).row(*rank));
                    out.layers[l].1.row_mut(b).assign(&g.value(c).row(*rank));
                }
                debug_assert_eq!(out.layers[0].0.ncols(), hd);
            }
            out
        });
        Ok(LmRun {
            logp,
            rows,
            final_state,
        })
    }

    /// Summed log-probability of every token as a `1 x 1` node.
    pub fn total_logprob(&self, g: &mut Graph, run: &LmRun, seqs: &[&[u32]]) -> NodeId {
        let n = self.num_tokens();
        let flat: Vec<usize> = seqs
            .iter()
            .zip(&run.rows)
            .flat_map(|(s, r)| s.iter().zip(r).map(move |(&tok, &row)| row * n + tok as usize))
            .collect();
        g.gather_sum_flat(run.logp, vec![0, flat.len()], flat)
    }

    /// Natural-log probability of each line, each from a fresh state.
    pub fn line_logprobs(&self, lines: &[CharSequence], batch: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(lines.len());
        for chunk in lines.chunks(batch.max(1)) {
            let toks: Vec<Vec<u32>> = chunk.iter().map(|l| self.tokenize(l)).collect();
            let refs: Vec<&[u32]> = toks.iter().map(|t| t.as_slice()).collect();
            let mut g = Graph::new(&self.params);
            let run = self.run(&mut g, &refs, &vec![EOS_ID; refs.len()], None, false, None)?;
            g.check()?;
            let lp = g.value(run.logp);
            let n = self.num_tokens();
            let flat = lp.as_slice().expect("contiguous");
            for (t, r) in toks.iter().zip(&run.rows) {
                out.push(t.iter().zip(r).map(|(&tok, &row)| flat[row * n + tok as usize]).sum());
            }
        }
        Ok(out)
    }

    /// Per-character entropy of the predictive distribution, in nats.
    pub fn entropy_profile(&self, seq: &CharSequence) -> Result<EntropyProfile> {
        if self.kind() != TokenKind::Char {
            return Err(Error::InvalidArgument(
                "entropy profiles need a character-level model".into(),
            ));
        }
        let ids: Vec<u32> = seq.ids.iter().map(|&i| if self.vocab.contains(i) { i } else { UNK_ID }).collect();
        let mut g = Graph::new(&self.params);
        let run = self.run(&mut g, &[&ids], &[EOS_ID], None, false, None)?;
        g.check()?;
        let lp = g.value(run.logp);
        let entropies = run.rows[0]
            .iter()
            .map(|&r| {
                lp.row(r)
                    .iter()
                    .filter(|l| l.is_finite())
                    .map(|&l| -l.exp() * l)
                    .sum::<f64>()
                    .max(0.0)
            })
            .collect();
        Ok(EntropyProfile::new(entropies))
    }

    pub fn to_checkpoint(&self, extra_meta: &[(String, String)]) -> Checkpoint {
        let pieces: Vec<String> = self.pieces.iter().map(|p| escape_str(p)).collect();
        let mut meta = vec![
            ("token_kind".to_string(), self.kind().to_string()),
            ("embed_dim".to_string(), self.config.embed_dim.to_string()),
            ("hidden_dim".to_string(), self.config.hidden_dim.to_string()),
            ("num_layers".to_string(), self.config.num_layers.to_string()),
            ("vocab".to_string(), self.vocab.to_file_string()),
            ("pieces".to_string(), pieces.join("\n")),
            ("tokenizer".to_string(), self.tokenizer.to_file_string()),
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
        let kind: TokenKind = ck.require("token_kind")?.parse()?;
        let config = LmConfig {
            embed_dim: ck.require_parsed("embed_dim")?,
            hidden_dim: ck.require_parsed("hidden_dim")?,
            num_layers: ck.require_parsed("num_layers")?,
        };
        let vocab = CharVocab::from_file_string(ck.require("vocab")?)?;
        let pieces = ck
            .require("pieces")?
            .lines()
            .map(|l| unescape(l).map_err(|e| Error::format("checkpoint", e)))
            .collect::<Result<Vec<_>>>()?;
        let tokenizer = Tokenizer::from_file_string(kind, ck.require("tokenizer")?)?;
        Self::from_parts(vocab, tokenizer, pieces, config, ck.params.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Corpus;
    use crate::eval::bpc;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(text: &str, tokenizer: Tokenizer, seed: u64) -> (LanguageModel, Corpus) {
        let corpus = Corpus::from_text(text, None, 1);
        let cfg = LmConfig {
            embed_dim: 4,
            hidden_dim: 5,
            num_layers: 2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = LanguageModel::new(corpus.vocab.clone(), tokenizer, &corpus.lines, cfg, &mut rng).unwrap();
        (m, corpus)
    }

    fn uniform(m: &mut LanguageModel) {
        let (w, b) = m.output_params();
        m.params.get_mut(w).fill(0.0);
        m.params.get_mut(b).fill(0.0);
    }

    #[test]
    fn uniform_model_bpc_is_two_bits() {
        // "a" and "b" plus the two reserved ids.
        let corpus = Corpus::from_text("abba\nbab", Some(&CharVocab::from_chars(['a', 'b'])), 1);
        let mut m = LanguageModel::new(
            corpus.vocab.clone(),
            Tokenizer::Char,
            &corpus.lines,
            LmConfig::default(),
            &mut ChaCha8Rng::seed_from_u64(3),
        )
        .unwrap();
        assert_eq!(m.num_tokens(), 4);
        uniform(&mut m);
        let total: f64 = m.line_logprobs(&corpus.lines, 8).unwrap().iter().sum();
        assert!((bpc(total, corpus.num_chars()).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn causal_over_shared_prefix() {
        let (m, _) = model("abc cab", Tokenizer::Char, 2);
        let a = m.vocab.encode("abcab");
        let b = m.vocab.encode("abc c");
        let mut g = Graph::new(&m.params);
        let run = m.run(&mut g, &[&a, &b], &[EOS_ID, EOS_ID], None, false, None).unwrap();
        let lp = g.value(run.logp);
        for t in 0..4 {
            let (ra, rb) = (run.rows[0][t], run.rows[1][t]);
            for j in 0..m.num_tokens() {
                assert_eq!(lp[[ra, j]], lp[[rb, j]]);
            }
        }
    }

    #[test]
    fn distributions_are_normalised() {
        let (m, corpus) = model("ab cab\nbbc a", Tokenizer::Char, 4);
        let ids = &corpus.lines[0].ids;
        let mut g = Graph::new(&m.params);
        let run = m.run(&mut g, &[ids], &[EOS_ID], None, false, None).unwrap();
        for row in g.value(run.logp).rows() {
            assert!((row.iter().map(|l| l.exp()).sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn final_state_matches_longer_run() {
        let (m, _) = model("abc cab", Tokenizer::Char, 5);
        let whole = m.vocab.encode("abcab c");
        let (first, second) = whole.split_at(3);
        let mut g = Graph::new(&m.params);
        let full = m.run(&mut g, &[&whole], &[EOS_ID], None, false, None).unwrap();
        let one = m.run(&mut g, &[first, &whole[..1]], &[EOS_ID, EOS_ID], None, true, None).unwrap();
        let carried = one.final_state.unwrap();
        let carried = StateValue {
            layers: carried
                .layers
                .iter()
                .map(|(h, c)| (h.slice(ndarray::s![0..1, ..]).to_owned(), c.slice(ndarray::s![0..1, ..]).to_owned()))
                .collect(),
        };
        let two = m
            .run(&mut g, &[second], &[first[2]], Some(&carried), false, None)
            .unwrap();
        let lf = g.value(full.logp).clone();
        let l2 = g.value(two.logp).clone();
        for t in 0..second.len() {
            for j in 0..m.num_tokens() {
                let a = lf[[full.rows[0][3 + t], j]];
                let b = l2[[two.rows[0][t], j]];
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn entropy_of_uniform_model() {
        let (mut m, corpus) = model("ab ba", Tokenizer::Char, 6);
        uniform(&mut m);
        let prof = m.entropy_profile(&corpus.lines[0]).unwrap();
        let ln_v = (m.num_tokens() as f64).ln();
        for h in &prof.entropies {
            assert!((h - ln_v).abs() < 1e-12);
        }
        assert!(prof.std() < 1e-12);
    }

    #[test]
    fn entropy_of_peaked_model() {
        let (mut m, corpus) = model("ab ba", Tokenizer::Char, 7);
        let (w, b) = m.output_params();
        m.params.get_mut(w).fill(0.0);
        let bias = m.params.get_mut(b);
        bias.fill(-1e4);
        bias[[0, 2]] = 0.0;
        let prof = m.entropy_profile(&corpus.lines[0]).unwrap();
        assert!(prof.entropies.iter().all(|&h| h.abs() < 1e-9));
    }

    #[test]
    fn bpe_tokens_cover_characters() {
        let corpus = Corpus::from_text("abab abab cab", None, 1);
        let (bpe, _) = BpeModel::train(&corpus, 2).unwrap();
        let (m, corpus) = model("abab abab cab", Tokenizer::Bpe(bpe), 8);
        let toks = m.tokenize(&corpus.lines[0]);
        assert!(toks.len() < corpus.lines[0].len());
        let text: String = toks
            .iter()
            .map(|&t| {
                let t = t as usize;
                if t < m.vocab.len() {
                    m.vocab.decode(&[t as u32])
                } else {
                    m.pieces[t - m.vocab.len()].clone()
                }
            })
            .collect();
        assert_eq!(text, "abab abab cab");
        // Unseen words fall back to known pieces or characters.
        let other = CharSequence::from_text("cabab", &m.vocab);
        assert!(!m.tokenize(&other).is_empty());
    }

    #[test]
    fn checkpoint_round_trip() {
        let corpus = Corpus::from_text("abab abab cab\nbac", None, 1);
        let (bpe, _) = BpeModel::train(&corpus, 3).unwrap();
        let (m, corpus) = model("abab abab cab\nbac", Tokenizer::Bpe(bpe), 9);
        let ck = Checkpoint::from_bytes(&m.to_checkpoint(&[]).to_bytes()).unwrap();
        let back = LanguageModel::from_checkpoint(&ck).unwrap();
        assert_eq!(
            back.line_logprobs(&corpus.lines, 4).unwrap(),
            m.line_logprobs(&corpus.lines, 4).unwrap()
        );
    }
}
