use std::collections::HashMap;
use std::path::Path;

use crate::corpus::{escape_str, read_utf8, unescape, Corpus};
use crate::error::{Error, Result};
use crate::segmentation::Segmentation;

use super::word_counts;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BpeModel {
    pub merges: Vec<(String, String)>,
}

fn merge_word(symbols: &mut Vec<String>, left: &str, right: &str) {
    let mut i = 0;
    while i + 1 < symbols.len() {
        if symbols[i] == left && symbols[i + 1] == right {
            let r = symbols.remove(i + 1);
            symbols[i].push_str(&r);
        }
        i += 1;
    }
}

impl BpeModel {
    /// Greedy merge learning over word-internal symbol pairs, weighted by
    /// word frequency. Ties go to the lexicographically smallest pair.
    /// Stops early once no pair is left.
    pub fn train(corpus: &Corpus, num_merges: usize) -> Result<(Self, Vec<(Vec<String>, usize)>)> {
        let counts = word_counts(corpus);
        if counts.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut words: Vec<(Vec<String>, usize)> = counts
            .into_iter()
            .map(|(w, c)| (w.chars().map(String::from).collect(), c))
            .collect();
        let mut merges = Vec::new();
        while merges.len() < num_merges {
            let mut pairs: HashMap<(&str, &str), usize> = HashMap::new();
            for (syms, c) in &words {
                for p in syms.windows(2) {
                    *pairs.entry((&p[0], &p[1])).or_default() += c;
                }
            }
            let Some(((l, r), _)) = pairs
                .into_iter()
                .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then_with(|| pb.cmp(pa)))
            else {
                break;
            };
            let (l, r) = (l.to_string(), r.to_string());
            for (syms, _) in &mut words {
                merge_word(syms, &l, &r);
            }
            merges.push((l, r));
        }
        Ok((BpeModel { merges }, words))
    }

    pub fn apply(&self, word: &str) -> Vec<String> {
        let mut syms: Vec<String> = word.chars().map(String::from).collect();
        for (l, r) in &self.merges {
            if syms.len() < 2 {
                break;
            }
            merge_word(&mut syms, l, r);
        }
        syms
    }

    pub fn segment(&self, word: &str) -> Segmentation {
        Segmentation::from_pieces(&self.apply(word))
    }

    pub fn to_file_string(&self) -> String {
        let mut out = format!("#bpe v1 merges={}\n", self.merges.len());
        for (l, r) in &self.merges {
            out.push_str(&format!("{} {}\n", escape_str(l), escape_str(r)));
        }
        out
    }

    pub fn from_file_string(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        let n: usize = header
            .strip_prefix("#bpe v1 merges=")
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| Error::format("BPE model", format!("bad header {header:?}")))?;
        let merges = lines
            .enumerate()
            .map(|(i, l)| {
                let (a, b) = l
                    .split_once(' ')
                    .ok_or_else(|| Error::format("BPE model", format!("line {}: expected two symbols", i + 2)))?;
                let un = |s: &str| unescape(s).map_err(|e| Error::format("BPE model", e));
                Ok((un(a)?, un(b)?))
            })
            .collect::<Result<Vec<_>>>()?;
        if merges.len() != n {
            return Err(Error::format(
                "BPE model",
                format!("header announces {n} merges, found {}", merges.len()),
            ));
        }
        Ok(BpeModel { merges })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_file_string(&read_utf8(path)?)
    }
}
