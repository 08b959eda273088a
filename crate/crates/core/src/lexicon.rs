//! The subword lexicon: the `V` most frequent within-word substrings of at
//! most `L` characters, fixed before training.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::corpus::{escape_str, unescape, CharSequence, CharVocab, Span, UNK_ID};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Lexicon {
    entries: Vec<String>,
    counts: Vec<usize>,
    index: HashMap<String, u32>,
    capacity: usize,
    max_len: usize,
}

impl Lexicon {
    /// An empty lexicon. The segmental model then generates every segment
    /// character by character.
    pub fn empty(max_len: usize) -> Self {
        Lexicon {
            entries: Vec::new(),
            counts: Vec::new(),
            index: HashMap::new(),
            capacity: 0,
            max_len,
        }
    }

    /// Counts every substring of length `<= max_len` inside a letter span,
    /// plus every single non-letter character, and keeps the top `capacity`
    /// ordered by (count desc, length asc, string asc).
    pub fn build<'a>(
        corpus: impl IntoIterator<Item = &'a CharSequence>,
        vocab: &CharVocab,
        capacity: usize,
        max_len: usize,
    ) -> Result<Self> {
        if max_len == 0 {
            return Err(Error::InvalidArgument("lexicon L must be >= 1".into()));
        }
        let counts = count_substrings(corpus, max_len);
        if counts.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut ranked: Vec<(Vec<u32>, usize)> = counts.into_iter().collect();
        // vocab ids are assigned in code point order, so comparing id
        // sequences is the same as comparing the strings
        ranked.sort_by(|(a, ca), (b, cb)| {
            cb.cmp(ca).then(a.len().cmp(&b.len())).then_with(|| a.cmp(b))
        });
        ranked.truncate(capacity);
        let entries: Vec<String> = ranked.iter().map(|(ids, _)| vocab.decode(ids)).collect();
        let counts = ranked.iter().map(|(_, c)| *c).collect();
        Ok(Self::from_parts(entries, counts, capacity, max_len))
    }

    fn from_parts(entries: Vec<String>, counts: Vec<usize>, capacity: usize, max_len: usize) -> Self {
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as u32))
            .collect();
        Lexicon {
            entries,
            counts,
            index,
            capacity,
            max_len,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    pub fn count(&self, id: u32) -> usize {
        self.counts[id as usize]
    }

    pub fn lookup(&self, subword: &str) -> Option<u32> {
        self.index.get(subword).copied()
    }

    /// Re-keys the lexicon by character ids for lattice construction.
    pub fn id_index(&self, vocab: &CharVocab) -> LexIndex {
        let mut map = HashMap::with_capacity(self.entries.len());
        for (i, e) in self.entries.iter().enumerate() {
            let ids = vocab.encode(e);
            if ids.contains(&UNK_ID) {
                continue;
            }
            map.insert(ids, i as u32);
        }
        LexIndex { map }
    }

    pub fn to_tsv(&self) -> String {
        let mut out = format!("#lexicon\tV={}\tL={}\n", self.capacity, self.max_len);
        for (i, (e, c)) in self.entries.iter().zip(&self.counts).enumerate() {
            let _ = writeln!(out, "{i}\t{}\t{c}", escape_str(e));
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let bad = |d: String| Error::format("lexicon file", d);
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("missing header".into()))?;
        let mut fields = header.split('\t');
        if fields.next() != Some("#lexicon") {
            return Err(bad("header must start with #lexicon".into()));
        }
        let mut capacity = None;
        let mut max_len = None;
        for f in fields {
            match f.split_once('=') {
                Some(("V", v)) => capacity = v.parse().ok(),
                Some(("L", v)) => max_len = v.parse().ok(),
                _ => return Err(bad(format!("unexpected header field {f:?}"))),
            }
        }
        let (Some(capacity), Some(max_len)) = (capacity, max_len) else {
            return Err(bad("header must record V and L".into()));
        };
        let mut entries = Vec::new();
        let mut counts = Vec::new();
        for (n, line) in lines.enumerate() {
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 || cols[0].parse::<usize>().ok() != Some(n) {
                return Err(bad(format!("line {}: expected rank\\tsubword\\tcount", n + 2)));
            }
            entries.push(unescape(cols[1]).map_err(bad)?);
            counts.push(
                cols[2]
                    .parse()
                    .map_err(|_| bad(format!("line {}: bad count", n + 2)))?,
            );
        }
        Ok(Self::from_parts(entries, counts, capacity, max_len))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_tsv(&crate::corpus::read_utf8(path)?)
    }
}

pub(crate) fn count_substrings<'a>(
    corpus: impl IntoIterator<Item = &'a CharSequence>,
    max_len: usize,
) -> HashMap<Vec<u32>, usize> {
    let mut counts: HashMap<Vec<u32>, usize> = HashMap::new();
    for seq in corpus {
        for span in &seq.spans {
            let ids = &seq.ids[span.start..span.end];
            if span.len() == 1 && ids[0] == UNK_ID {
                continue;
            }
            for i in 0..ids.len() {
                for j in i + 1..=(i + max_len).min(ids.len()) {
                    *counts.entry(ids[i..j].to_vec()).or_default() += 1;
                }
            }
        }
    }
    counts
}

/// Lexicon keyed by character-id sequence.
#[derive(Clone, Debug, Default)]
pub struct LexIndex {
    map: HashMap<Vec<u32>, u32>,
}

impl LexIndex {
    pub fn get(&self, ids: &[u32]) -> Option<u32> {
        self.map.get(ids).copied()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Candidate segments ending at position `end` (inclusive) of `span`: one per
/// start `k` from the span start up to `end`, optionally limited to segments
/// of at most `max_seg` characters. Each carries its lexicon id if present.
pub fn enumerate_candidates(
    lex: &LexIndex,
    ids: &[u32],
    span: Span,
    end: usize,
    max_seg: Option<usize>,
) -> Vec<(usize, Option<u32>)> {
    assert!(span.contains(end), "end {end} outside span {span:?}");
    let lo = match max_seg {
        Some(cap) => span.start.max((end + 1).saturating_sub(cap)),
        None => span.start,
    };
    (lo..=end).map(|k| (k, lex.get(&ids[k..=end]))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Corpus;

    fn build(text: &str, v: usize, l: usize) -> Lexicon {
        let c = Corpus::from_text(text, None, 1);
        Lexicon::build(&c.lines, &c.vocab, v, l).unwrap()
    }

    #[test]
    fn ranked_by_count_then_length() {
        let lex = build("aa aa ab", 3, 2);
        assert_eq!(lex.entries(), &["a", " ", "aa"]);
        assert_eq!(lex.count(0), 5);
        assert_eq!(lex.count(1), 2);
        assert_eq!(lex.count(2), 2);
        assert_eq!(lex.lookup("aa"), Some(2));
        assert_eq!(lex.lookup("zz"), None);
        assert_eq!(lex.lookup(""), None);
    }

    #[test]
    fn single_char_corpus() {
        assert_eq!(build("x", 10, 5).entries(), &["x"]);
    }

    #[test]
    fn capacity_one_keeps_a_single_char() {
        let lex = build("the cat sat on the mat", 1, 4);
        assert_eq!(lex.len(), 1);
        assert_eq!(lex.entries()[0].chars().count(), 1);
    }

    #[test]
    fn no_cross_word_entries() {
        let lex = build("ab, cd", 100, 4);
        for e in lex.entries() {
            let letters = e.chars().filter(|c| c.is_alphabetic()).count();
            assert!(letters == e.chars().count() || e.chars().count() == 1, "{e:?}");
        }
        assert!(lex.lookup(",").is_some());
        assert!(lex.lookup("b,").is_none());
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let c = Corpus::from_text("", None, 1);
        assert!(matches!(
            Lexicon::build(&c.lines, &c.vocab, 3, 2),
            Err(Error::EmptyCorpus)
        ));
    }

    #[test]
    fn tsv_round_trip() {
        let lex = build("ab\tcd ab\\", 20, 3);
        let text = lex.to_tsv();
        assert!(text.starts_with("#lexicon\tV=20\tL=3\n"));
        assert_eq!(Lexicon::from_tsv(&text).unwrap(), lex);
        assert!(Lexicon::from_tsv("0\ta\t1\n").is_err());
    }

    #[test]
    fn candidates() {
        let c = Corpus::from_text("aba", None, 1);
        let lex = Lexicon::build(&c.lines, &c.vocab, 10, 3).unwrap();
        let idx = lex.id_index(&c.vocab);
        let ids = &c.lines[0].ids;
        let cands = enumerate_candidates(&idx, ids, Span::new(0, 3), 2, None);
        let ks: Vec<usize> = cands.iter().map(|c| c.0).collect();
        assert_eq!(ks, vec![0, 1, 2]);
        assert_eq!(cands[0].1, lex.lookup("aba"));
        assert_eq!(cands[1].1, lex.lookup("ba"));
        assert_eq!(cands[2].1, lex.lookup("a"));

        let c = Corpus::from_text("abcdefgh!", None, 1);
        let ids = &c.lines[0].ids;
        let idx = LexIndex::default();
        assert_eq!(enumerate_candidates(&idx, ids, Span::new(8, 9), 8, None).len(), 1);
        assert_eq!(enumerate_candidates(&idx, ids, Span::new(0, 8), 7, None).len(), 8);
        let capped = enumerate_candidates(&idx, ids, Span::new(0, 8), 7, Some(5));
        assert_eq!(capped.first().unwrap().0, 3);
        assert_eq!(capped.len(), 5);
    }
}
