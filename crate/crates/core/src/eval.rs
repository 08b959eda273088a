//! Language-modelling and segmentation metrics.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use crate::corpus::{is_letter, read_utf8};
use crate::error::{Error, Result};
use crate::segmentation::Segmentation;

/// Bits per character from a total natural-log likelihood.
pub fn bpc(total_logp: f64, num_chars: usize) -> Result<f64> {
    if num_chars == 0 {
        return Err(Error::InvalidArgument("BPC of an empty corpus".into()));
    }
    Ok(-total_logp / (num_chars as f64 * std::f64::consts::LN_2))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Averaging {
    /// Pool counts over all words.
    #[default]
    Micro,
    /// Average per-word precision, recall and F1.
    Macro,
}

impl std::str::FromStr for Averaging {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "micro" => Ok(Averaging::Micro),
            "macro" => Ok(Averaging::Macro),
            other => Err(Error::InvalidArgument(format!("unknown averaging {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct SegScores {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

impl SegScores {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        SegScores {
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1: f1(precision, recall),
        }
    }
}

impl fmt::Display for SegScores {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "P={:.4} R={:.4} F1={:.4} (tp={} fp={} fn={})",
            self.precision, self.recall, self.f1, self.tp, self.fp, self.fn_
        )
    }
}

/// Words without any letter carry no morphology and are skipped.
fn is_scored(word: &str) -> bool {
    word.chars().any(is_letter)
}

fn paired<'a>(
    pred: &'a [Segmentation],
    gold: &'a [Segmentation],
) -> Result<impl Iterator<Item = (&'a Segmentation, &'a Segmentation)>> {
    if pred.len() != gold.len() {
        return Err(Error::WordMismatch {
            index: pred.len().min(gold.len()),
            pred: pred.get(gold.len()).map_or("<end>".into(), |s| s.word.clone()),
            gold: gold.get(pred.len()).map_or("<end>".into(), |s| s.word.clone()),
        });
    }
    for (i, (p, g)) in pred.iter().zip(gold).enumerate() {
        if p.word != g.word {
            return Err(Error::WordMismatch {
                index: i,
                pred: p.word.clone(),
                gold: g.word.clone(),
            });
        }
    }
    Ok(pred.iter().zip(gold).filter(|(_, g)| is_scored(&g.word)))
}

fn aggregate(per_word: impl Iterator<Item = (usize, usize, usize)>, avg: Averaging) -> SegScores {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    let (mut sp, mut sr, mut sf, mut n) = (0.0, 0.0, 0.0, 0usize);
    for (t, p, f) in per_word {
        tp += t;
        fp += p;
        fn_ += f;
        let w = SegScores::from_counts(t, p, f);
        sp += w.precision;
        sr += w.recall;
        sf += w.f1;
        n += 1;
    }
    match avg {
        Averaging::Micro => SegScores::from_counts(tp, fp, fn_),
        Averaging::Macro => {
            let d = n.max(1) as f64;
            SegScores {
                tp,
                fp,
                fn_,
                precision: sp / d,
                recall: sr / d,
                f1: sf / d,
            }
        }
    }
}

/// Morpheme identification: multiset overlap of predicted and gold subwords.
pub fn mi_scores(pred: &[Segmentation], gold: &[Segmentation], avg: Averaging) -> Result<SegScores> {
    let words = paired(pred, gold)?.map(|(p, g)| {
        let mut bag: HashMap<String, usize> = HashMap::new();
        for m in g.pieces() {
            *bag.entry(m).or_default() += 1;
        }
        let pp = p.pieces();
        let mut tp = 0;
        for s in &pp {
            if let Some(c) = bag.get_mut(s).filter(|c| **c > 0) {
                *c -= 1;
                tp += 1;
            }
        }
        (tp, pp.len() - tp, g.num_pieces() - tp)
    });
    Ok(aggregate(words, avg))
}

/// Morpheme boundary identification over the internal gaps of each word.
pub fn mbi_scores(pred: &[Segmentation], gold: &[Segmentation], avg: Averaging) -> Result<SegScores> {
    let words = paired(pred, gold)?.map(|(p, g)| {
        let tp = p.cuts.iter().filter(|c| g.cuts.contains(c)).count();
        (tp, p.cuts.len() - tp, g.cuts.len() - tp)
    });
    Ok(aggregate(words, avg))
}

/// Mean characters per subword over words containing letters.
pub fn avg_segment_length(segs: &[Segmentation]) -> Result<f64> {
    let (mut chars, mut pieces) = (0, 0);
    for s in segs.iter().filter(|s| is_scored(&s.word)) {
        chars += s.num_chars();
        pieces += s.num_pieces();
    }
    if pieces == 0 {
        return Err(Error::InvalidArgument("no words to average over".into()));
    }
    Ok(chars as f64 / pieces as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Edit {
    Match,
    Substitute,
    /// Canonical character with no surface counterpart.
    Delete,
    /// Surface character with no canonical counterpart.
    Insert,
}

/// Minimal unit-cost edit script from `canonical` to `surface`. On equal
/// cost the traceback prefers match, then substitution, deletion,
/// insertion.
fn align(canonical: &[char], surface: &[char]) -> Vec<Edit> {
    let (n, m) = (canonical.len(), surface.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        d[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[i - 1][j - 1] + usize::from(canonical[i - 1] != surface[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 && canonical[i - 1] == surface[j - 1] && d[i][j] == d[i - 1][j - 1] {
            ops.push(Edit::Match);
            i -= 1;
            j -= 1;
        } else if i > 0 && j > 0 && d[i][j] == d[i - 1][j - 1] + 1 {
            ops.push(Edit::Substitute);
            i -= 1;
            j -= 1;
        } else if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            ops.push(Edit::Delete);
            i -= 1;
        } else {
            ops.push(Edit::Insert);
            j -= 1;
        }
    }
    ops.reverse();
    ops
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceProjection {
    pub analysis: Segmentation,
    /// Substitutions divided by surface length.
    pub substitution_rate: f64,
}

/// Projects a canonical segmentation onto the surface word through a
/// minimal edit alignment. Each canonical boundary lands where the surface
/// index stood when the alignment first consumed the canonical characters
/// before it. Empty surface segments are merged away.
pub fn canonical_to_surface<S: AsRef<str>>(word: &str, canonical: &[S]) -> SurfaceProjection {
    let surface: Vec<char> = word.chars().collect();
    let mut canon = Vec::new();
    let mut bounds = Vec::new();
    for m in canonical {
        canon.extend(m.as_ref().chars());
        bounds.push(canon.len());
    }
    bounds.pop();
    let ops = align(&canon, &surface);
    let subs = ops.iter().filter(|&&e| e == Edit::Substitute).count();
    // surface_at[i] = surface index when canonical index first reaches i.
    let mut surface_at = vec![0; canon.len() + 1];
    let (mut i, mut j) = (0, 0);
    for op in &ops {
        match op {
            Edit::Match | Edit::Substitute => {
                i += 1;
                j += 1;
                surface_at[i] = j;
            }
            Edit::Delete => {
                i += 1;
                surface_at[i] = j;
            }
            Edit::Insert => j += 1,
        }
    }
    let mut cuts: Vec<usize> = bounds
        .iter()
        .map(|&b| surface_at[b])
        .filter(|&c| c > 0 && c < surface.len())
        .collect();
    cuts.dedup();
    SurfaceProjection {
        analysis: Segmentation {
            word: word.to_string(),
            cuts,
        },
        substitution_rate: ratio(subs, surface.len()),
    }
}

/// Parses `word<TAB>m1-m2-...` lines. Blank lines are skipped. With
/// `canonical`, morphs may differ from the word and are projected onto it;
/// words whose alignment substitutes more than `max_substitution_rate` of
/// their characters are dropped.
pub fn parse_gold(text: &str, canonical: bool, max_substitution_rate: f64) -> Result<Vec<Segmentation>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let (word, analysis) = line
            .split_once('\t')
            .ok_or_else(|| Error::format("gold file", format!("line {}: expected word<TAB>analysis", n + 1)))?;
        let morphs: Vec<&str> = analysis.split('-').filter(|m| !m.is_empty()).collect();
        if morphs.is_empty() {
            return Err(Error::format("gold file", format!("line {}: empty analysis", n + 1)));
        }
        if canonical {
            let proj = canonical_to_surface(word, &morphs);
            if proj.substitution_rate <= max_substitution_rate {
                out.push(proj.analysis);
            }
        } else {
            let seg = Segmentation::from_pieces(&morphs);
            if seg.word != word {
                return Err(Error::format(
                    "gold file",
                    format!("line {}: morphs {analysis:?} do not spell {word:?}", n + 1),
                ));
            }
            out.push(seg);
        }
    }
    Ok(out)
}

pub fn load_gold(path: &Path, canonical: bool, max_substitution_rate: f64) -> Result<Vec<Segmentation>> {
    parse_gold(&read_utf8(path)?, canonical, max_substitution_rate)
}

/// Reads predicted segmentations: one hyphenated word per line, or the gold
/// format (the analysis after a tab is used).
pub fn parse_predictions(text: &str) -> Vec<Segmentation> {
    text.lines()
        .map(|l| l.trim_end_matches('\r'))
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let analysis = l.split_once('\t').map_or(l, |(_, a)| a);
            Segmentation::parse_hyphenated(analysis)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seg(s: &str) -> Segmentation {
        Segmentation::parse_hyphenated(s)
    }

    #[test]
    fn mi_fixture() {
        let s = mi_scores(&[seg("se-si-hambe")], &[seg("se-si-hamb-e")], Averaging::Micro).unwrap();
        assert_eq!((s.tp, s.fp, s.fn_), (2, 1, 2));
        assert_eq!(s.precision, 2.0 / 3.0);
        assert_eq!(s.recall, 0.5);
        assert!((s.f1 - 4.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn mbi_fixture() {
        let gold = Segmentation::new("abcdefghi", vec![2, 4, 8]).unwrap();
        let pred = Segmentation::new("abcdefghi", vec![2, 4]).unwrap();
        let s = mbi_scores(&[pred], &[gold], Averaging::Micro).unwrap();
        assert_eq!(s.precision, 1.0);
        assert_eq!(s.recall, 2.0 / 3.0);
        assert!((s.f1 - 0.8).abs() < 1e-15);
    }

    #[test]
    fn degenerate_scores() {
        let whole = mi_scores(&[seg("sesihambe")], &[seg("se-si-hamb-e")], Averaging::Micro).unwrap();
        assert_eq!((whole.precision, whole.recall, whole.f1), (0.0, 0.0, 0.0));
        let all = mbi_scores(&[seg("a-b-c")], &[seg("abc")], Averaging::Micro).unwrap();
        assert_eq!((all.precision, all.recall, all.f1), (0.0, 0.0, 0.0));
        let one = mbi_scores(&[seg("a")], &[seg("a")], Averaging::Micro).unwrap();
        assert_eq!((one.tp, one.fp, one.fn_), (0, 0, 0));
    }

    #[test]
    fn punctuation_words_are_skipped() {
        let p = [seg("ab"), seg("?")];
        let g = [seg("a-b"), seg("?")];
        let s = mi_scores(&p, &g, Averaging::Micro).unwrap();
        assert_eq!((s.tp, s.fp, s.fn_), (0, 1, 2));
        assert_eq!(avg_segment_length(&p).unwrap(), 2.0);
    }

    #[test]
    fn word_mismatch_is_reported() {
        let err = mi_scores(&[seg("ab")], &[seg("a-c")], Averaging::Micro).unwrap_err();
        assert!(matches!(err, Error::WordMismatch { index: 0, .. }));
        assert!(mi_scores(&[seg("ab")], &[], Averaging::Micro).is_err());
    }

    #[test]
    fn macro_average() {
        let p = [seg("a-b"), seg("cd")];
        let g = [seg("a-b"), seg("c-d")];
        let s = mbi_scores(&p, &g, Averaging::Macro).unwrap();
        assert_eq!(s.f1, 0.5);
        let s = mbi_scores(&p, &g, Averaging::Micro).unwrap();
        assert_eq!(s.recall, 0.5);
        assert_eq!(s.precision, 1.0);
    }

    #[test]
    fn bpc_values() {
        assert_eq!(bpc(-(8.0 * 4f64.ln()), 8).unwrap(), 2.0);
        assert!(bpc(0.0, 0).is_err());
    }

    #[test]
    fn average_lengths() {
        assert_eq!(avg_segment_length(&[seg("abcde"), seg("fghij")]).unwrap(), 5.0);
        assert_eq!(avg_segment_length(&[seg("a-b-c")]).unwrap(), 1.0);
        assert!(avg_segment_length(&[]).is_err());
    }

    #[test]
    fn surface_projection_fixtures() {
        let p = canonical_to_surface("cats", &["cat", "s"]);
        assert_eq!(p.analysis.hyphenated(), "cat-s");
        let p = canonical_to_surface("abda", &["ab", "ta"]);
        assert_eq!(p.analysis.hyphenated(), "ab-da");
        assert_eq!(p.substitution_rate, 0.25);
        // The traceback deletes canonical "a" and substitutes i→e.
        let p = canonical_to_surface("yedwa", &["ya", "i", "dwa"]);
        assert_eq!(p.analysis.hyphenated(), "y-e-dwa");
    }

    #[test]
    fn gold_parsing() {
        let g = parse_gold("sesihambe\tse-si-hamb-e\n\nab\ta-b\n", false, 0.5).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g[0].cuts, vec![2, 4, 8]);
        assert!(parse_gold("ab\ta-c\n", false, 0.5).is_err());
        assert!(parse_gold("ab\n", false, 0.5).is_err());
        let c = parse_gold("yedwa\tya-i-dwa\nxyz\tabc\n", true, 0.5).unwrap();
        assert_eq!(c.len(), 1);
        let p = parse_predictions("se-si-hambe\nab\ta-b\n");
        assert_eq!(p[1].cuts, vec![1]);
    }

    fn arb_seg() -> impl Strategy<Value = (Segmentation, Segmentation)> {
        "[a-d]{1,9}".prop_flat_map(|w| {
            let n = w.chars().count();
            let gaps = proptest::collection::btree_set(1..n.max(2), 0..n);
            (Just(w), gaps.clone(), gaps).prop_map(move |(w, a, b)| {
                let keep = |s: std::collections::BTreeSet<usize>| s.into_iter().filter(|&c| c < n).collect();
                (
                    Segmentation::new(w.clone(), keep(a)).unwrap(),
                    Segmentation::new(w, keep(b)).unwrap(),
                )
            })
        })
    }

    proptest! {
        #[test]
        fn swapping_swaps_precision_and_recall(pairs in proptest::collection::vec(arb_seg(), 1..8)) {
            let (p, g): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            for f in [mi_scores, mbi_scores] {
                let a = f(&p, &g, Averaging::Micro).unwrap();
                let b = f(&g, &p, Averaging::Micro).unwrap();
                prop_assert_eq!(a.precision, b.recall);
                prop_assert_eq!(a.recall, b.precision);
            }
        }

        #[test]
        fn perfect_f1_iff_identical(pairs in proptest::collection::vec(arb_seg(), 1..8)) {
            let (p, g): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let mbi = mbi_scores(&p, &g, Averaging::Micro).unwrap();
            let same_cuts = p.iter().zip(&g).all(|(a, b)| a.cuts == b.cuts);
            let any_cut = g.iter().any(|s| !s.cuts.is_empty()) || p.iter().any(|s| !s.cuts.is_empty());
            if any_cut {
                prop_assert_eq!(mbi.f1 == 1.0, same_cuts);
            }
            let mi = mi_scores(&p, &g, Averaging::Micro).unwrap();
            let same_bags = p.iter().zip(&g).all(|(a, b)| {
                let mut x = a.pieces();
                let mut y = b.pieces();
                x.sort();
                y.sort();
                x == y
            });
            prop_assert_eq!(mi.f1 == 1.0, same_bags);
        }

        #[test]
        fn projection_spells_the_word(word in "[a-e]{1,8}", canon in proptest::collection::vec("[a-e]{1,4}", 1..4)) {
            let p = canonical_to_surface(&word, &canon);
            prop_assert_eq!(p.analysis.pieces().concat(), word.clone());
            prop_assert!(Segmentation::new(word, p.analysis.cuts.clone()).is_ok());
        }
    }
}
