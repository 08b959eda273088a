use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use crate::corpus::{escape_str, is_letter, read_utf8, unescape, Corpus};
use crate::error::{Error, Result};
use crate::lexicon::Lexicon;
use crate::nn::graph::{log_add_exp, log_sum_exp};
use crate::segmentation::Segmentation;

use super::word_counts;

#[derive(Clone, Debug, PartialEq)]
pub struct UlmConfig {
    /// Frequent substrings seeding the initial vocabulary.
    pub seed_size: usize,
    pub max_piece_len: usize,
    pub target_vocab: usize,
    pub prune_fraction: f64,
    pub em_iters: usize,
}

impl Default for UlmConfig {
    fn default() -> Self {
        UlmConfig {
            seed_size: 5000,
            max_piece_len: 8,
            target_vocab: 1000,
            prune_fraction: 0.2,
            em_iters: 2,
        }
    }
}

/// Unigram model over subword pieces.
#[derive(Clone, Debug, PartialEq)]
pub struct UlmModel {
    pieces: Vec<String>,
    logp: Vec<f64>,
    index: HashMap<String, usize>,
    max_len: usize,
}

/// Penalty for characters the model has never seen.
const UNKNOWN_LOGP: f64 = -30.0;

/// Probability restored to characters before each pruning round.
const CHAR_FLOOR: f64 = 1e-6;

/// Relative score difference below which two segmentations tie.
const SCORE_TIE: f64 = 1e-12;

impl UlmModel {
    pub fn new(entries: Vec<(String, f64)>) -> Self {
        let max_len = entries.iter().map(|(p, _)| p.chars().count()).max().unwrap_or(1);
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, (p, _))| (p.clone(), i))
            .collect();
        let (pieces, logp) = entries.into_iter().unzip();
        UlmModel {
            pieces,
            logp,
            index,
            max_len,
        }
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn pieces(&self) -> impl Iterator<Item = (&str, f64)> {
        self.pieces.iter().map(String::as_str).zip(self.logp.iter().copied())
    }

    pub fn logp(&self, piece: &str) -> Option<f64> {
        self.index.get(piece).map(|&i| self.logp[i])
    }

    /// For each start position, the pieces starting there as
    /// `(length, piece id)`. Unknown single characters get id `None`.
    fn edges(&self, chars: &[char]) -> Vec<Vec<(usize, Option<usize>)>> {
        let mut buf = String::new();
        (0..chars.len())
            .map(|i| {
                let mut out = Vec::new();
                buf.clear();
                for m in 1..=self.max_len.min(chars.len() - i) {
                    buf.push(chars[i + m - 1]);
                    match self.index.get(buf.as_str()) {
                        Some(&id) => out.push((m, Some(id))),
                        None if m == 1 => out.push((1, None)),
                        None => {}
                    }
                }
                out
            })
            .collect()
    }

    fn edge_logp(&self, id: Option<usize>) -> f64 {
        id.map_or(UNKNOWN_LOGP, |i| self.logp[i])
    }

    /// Most probable segmentation. Ties prefer fewer pieces, then a longer
    /// first piece, then a longer second piece and so on. Scores that differ
    /// only by summation rounding count as ties.
    pub fn segment_pieces(&self, word: &str) -> Vec<String> {
        let chars: Vec<char> = word.chars().collect();
        let n = chars.len();
        if n == 0 {
            return vec![];
        }
        let edges = self.edges(&chars);
        // best[i] scores the suffix starting at i: (logp, pieces, first len).
        let mut best: Vec<(f64, usize, usize)> = vec![(f64::NEG_INFINITY, 0, 0); n + 1];
        best[n] = (0.0, 0, 0);
        for i in (0..n).rev() {
            for &(m, id) in &edges[i] {
                let (rest, pieces, _) = best[i + m];
                let cand = (self.edge_logp(id) + rest, pieces + 1, m);
                let cur = best[i];
                let tol = SCORE_TIE * cur.0.abs().max(1.0);
                let better = cur.2 == 0
                    || cand.0 > cur.0 + tol
                    || (cand.0 >= cur.0 - tol && (cand.1 < cur.1 || (cand.1 == cur.1 && cand.2 > cur.2)));
                if better {
                    best[i] = cand;
                }
            }
        }
        let mut out = Vec::new();
        let mut i = 0;
        while i < n {
            let m = best[i].2;
            out.push(chars[i..i + m].iter().collect());
            i += m;
        }
        out
    }

    pub fn segment(&self, word: &str) -> Segmentation {
        Segmentation::from_pieces(&self.segment_pieces(word))
    }

    /// `log p(word)` summed over all segmentations, and expected piece
    /// counts added into `counts` (scaled by `weight`).
    fn expect(&self, word: &[char], weight: f64, counts: &mut [f64]) -> f64 {
        let n = word.len();
        let edges = self.edges(word);
        let mut alpha = vec![f64::NEG_INFINITY; n + 1];
        alpha[0] = 0.0;
        for i in 0..n {
            for &(m, id) in &edges[i] {
                alpha[i + m] = log_add_exp(alpha[i + m], alpha[i] + self.edge_logp(id));
            }
        }
        let mut beta = vec![f64::NEG_INFINITY; n + 1];
        beta[n] = 0.0;
        for i in (0..n).rev() {
            let terms: Vec<f64> = edges[i]
                .iter()
                .map(|&(m, id)| self.edge_logp(id) + beta[i + m])
                .collect();
            beta[i] = log_sum_exp(&terms);
        }
        let z = alpha[n];
        for i in 0..n {
            for &(m, id) in &edges[i] {
                if let Some(id) = id {
                    counts[id] += weight * (alpha[i] + self.logp[id] + beta[i + m] - z).exp();
                }
            }
        }
        z
    }

    fn corpus_loglik(&self, words: &[(Vec<char>, usize)]) -> f64 {
        let mut scratch = vec![0.0; self.len()];
        words
            .iter()
            .map(|(w, c)| *c as f64 * self.expect(w, 0.0, &mut scratch))
            .sum()
    }

    /// One EM step. Returns the corpus log-likelihood under the model
    /// before the update. Pieces that lose all mass are dropped unless they
    /// are single characters.
    fn em_step(&mut self, words: &[(Vec<char>, usize)]) -> f64 {
        let mut counts = vec![0.0; self.len()];
        let ll = words
            .iter()
            .map(|(w, c)| *c as f64 * self.expect(w, *c as f64, &mut counts))
            .sum();
        let total: f64 = counts.iter().sum();
        let kept: Vec<(String, f64)> = self
            .pieces
            .iter()
            .zip(&counts)
            .filter(|(p, &c)| c > 0.0 || p.chars().count() == 1)
            .map(|(p, &c)| (p.clone(), if c > 0.0 { (c / total).ln() } else { f64::NEG_INFINITY }))
            .collect();
        *self = UlmModel::new(kept);
        ll
    }

    /// Trains from frequent-substring seeds, alternating EM and pruning
    /// until at most `target_vocab` pieces remain. Single characters are
    /// never pruned. Returns the model and the per-round log-likelihood
    /// traces.
    pub fn train(corpus: &Corpus, config: &UlmConfig) -> Result<(Self, Vec<Vec<f64>>)> {
        let counts = word_counts(corpus);
        if counts.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let chars: BTreeSet<char> = corpus.vocab.chars().filter(|&c| is_letter(c)).collect();
        if config.target_vocab < chars.len() {
            return Err(Error::InvalidArgument(format!(
                "target vocabulary {} is smaller than the {} letters of the alphabet",
                config.target_vocab,
                chars.len()
            )));
        }
        if !(0.0..1.0).contains(&config.prune_fraction) || config.prune_fraction == 0.0 {
            return Err(Error::InvalidArgument("prune fraction must be in (0, 1)".into()));
        }
        let words: Vec<(Vec<char>, usize)> = counts.iter().map(|(w, c)| (w.chars().collect(), *c)).collect();

        let seed_lex = Lexicon::build(
            &corpus.lines,
            &corpus.vocab,
            config.seed_size.max(1),
            config.max_piece_len.max(1),
        )?;
        let mut seeds: Vec<String> = seed_lex
            .entries()
            .iter()
            .filter(|e| e.chars().all(is_letter))
            .cloned()
            .collect();
        for c in &chars {
            let s = c.to_string();
            if !seeds.contains(&s) {
                seeds.push(s);
            }
        }
        let uniform = -(seeds.len() as f64).ln();
        let mut model = UlmModel::new(seeds.into_iter().map(|s| (s, uniform)).collect());

        let mut traces = Vec::new();
        loop {
            let mut trace = Vec::with_capacity(config.em_iters + 1);
            for _ in 0..config.em_iters.max(1) {
                trace.push(model.em_step(&words));
            }
            trace.push(model.corpus_loglik(&words));
            for w in trace.windows(2) {
                let tol = 1e-9 * w[0].abs().max(1.0);
                if w[1] < w[0] - tol {
                    return Err(Error::LikelihoodDecreased {
                        before: w[0],
                        after: w[1],
                    });
                }
            }
            traces.push(trace);
            if model.len() <= config.target_vocab {
                break;
            }
            let before = model.len();
            model.prune(&words, config);
            if model.len() == before {
                break;
            }
            model.revive_characters();
        }
        Ok((model, traces))
    }

    /// Removes the removable pieces whose loss of corpus likelihood (when
    /// replaced by their own best segmentation) is smallest.
    fn prune(&mut self, words: &[(Vec<char>, usize)], config: &UlmConfig) {
        let mut freq = vec![0.0; self.len()];
        for (w, c) in words {
            let word: String = w.iter().collect();
            for p in self.segment_pieces(&word) {
                if let Some(&i) = self.index.get(&p) {
                    freq[i] += *c as f64;
                }
            }
        }
        let mut scored: Vec<(f64, usize)> = Vec::new();
        for i in 0..self.len() {
            if self.pieces[i].chars().count() == 1 {
                continue;
            }
            let loss = if freq[i] == 0.0 {
                0.0
            } else {
                let own = self.logp[i];
                self.logp[i] = f64::NEG_INFINITY;
                let alt: f64 = self
                    .segment_pieces(&self.pieces[i])
                    .iter()
                    .map(|q| self.logp(q).unwrap_or(UNKNOWN_LOGP))
                    .sum();
                self.logp[i] = own;
                freq[i] * (own - alt)
            };
            scored.push((loss, i));
        }
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| self.pieces[a.1].cmp(&self.pieces[b.1])));
        let by_fraction = ((scored.len() as f64) * config.prune_fraction).ceil() as usize;
        let drop = by_fraction.max(1).min(self.len() - config.target_vocab).min(scored.len());
        let dropped: BTreeSet<usize> = scored[..drop].iter().map(|&(_, i)| i).collect();
        let kept = self
            .pieces
            .iter()
            .zip(&self.logp)
            .enumerate()
            .filter(|(i, _)| !dropped.contains(i))
            .map(|(_, (p, &l))| (p.clone(), l))
            .collect();
        *self = UlmModel::new(kept);
    }

    /// Gives characters that lost all mass a small probability again, so
    /// every word stays coverable after pruning.
    fn revive_characters(&mut self) {
        let floor = CHAR_FLOOR.ln();
        let mut changed = false;
        for (p, l) in self.pieces.iter().zip(self.logp.iter_mut()) {
            if *l == f64::NEG_INFINITY && p.chars().count() == 1 {
                *l = floor;
                changed = true;
            }
        }
        if changed {
            let z = log_sum_exp(&self.logp);
            self.logp.iter_mut().for_each(|l| *l -= z);
        }
    }

    pub fn to_file_string(&self) -> String {
        let mut out = format!("#ulm v1 pieces={}\n", self.len());
        for (p, l) in self.pieces() {
            out.push_str(&format!("{}\t{l:?}\n", escape_str(p)));
        }
        out
    }

    pub fn from_file_string(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        let n: usize = header
            .strip_prefix("#ulm v1 pieces=")
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| Error::format("ULM model", format!("bad header {header:?}")))?;
        let entries = lines
            .enumerate()
            .map(|(i, l)| {
                let bad = |what: &str| Error::format("ULM model", format!("line {}: {what}", i + 2));
                let (p, lp) = l.split_once('\t').ok_or_else(|| bad("expected piece<TAB>logprob"))?;
                let p = unescape(p).map_err(|e| bad(&e))?;
                let lp: f64 = lp.parse().map_err(|_| bad("bad log probability"))?;
                Ok((p, lp))
            })
            .collect::<Result<Vec<_>>>()?;
        if entries.len() != n {
            return Err(Error::format(
                "ULM model",
                format!("header announces {n} pieces, found {}", entries.len()),
            ));
        }
        Ok(UlmModel::new(entries))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_file_string(&read_utf8(path)?)
    }
}
