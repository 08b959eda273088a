//! Corpus ingestion: character vocabulary, word spans and training batches.
//!
//! A line of text becomes a [`CharSequence`]: dense character ids plus a
//! tiling of the line into word spans. Runs of letters form one span each;
//! every other character (space, punctuation, digits, unknown characters)
//! is a span of length one. Segments are never allowed to cross a span.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::Rng;
use regex::Regex;

use crate::error::{Error, Result};

/// End-of-segment marker. Never a corpus character.
pub const EOS_ID: u32 = 0;
/// Shared id for characters outside the vocabulary.
pub const UNK_ID: u32 = 1;
const NUM_SPECIAL: u32 = 2;

const EOS_TOKEN: &str = "<eos-seg>";
const UNK_TOKEN: &str = "<unk>";

fn letter_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\p{L}$").unwrap())
}

/// Unicode general category L*.
pub fn is_letter(c: char) -> bool {
    if c.is_ascii() {
        return c.is_ascii_alphabetic();
    }
    let mut buf = [0u8; 4];
    letter_regex().is_match(c.encode_utf8(&mut buf))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CharVocab {
    chars: Vec<char>,
    index: HashMap<char, u32>,
    letters: Vec<bool>,
}

impl CharVocab {
    pub fn from_chars(chars: impl IntoIterator<Item = char>) -> Self {
        let mut uniq: Vec<char> = chars.into_iter().collect();
        uniq.sort_unstable();
        uniq.dedup();
        let index = uniq
            .iter()
            .enumerate()
            .map(|(i, &c)| (c, i as u32 + NUM_SPECIAL))
            .collect();
        let mut letters = vec![false; NUM_SPECIAL as usize];
        letters.extend(uniq.iter().map(|&c| is_letter(c)));
        CharVocab {
            chars: uniq,
            index,
            letters,
        }
    }

    /// Builds a vocabulary from text. Characters seen fewer than `min_count`
    /// times are left out and will map to [`UNK_ID`]. The space character is
    /// always present since line breaks are normalized to it.
    pub fn build<'a>(lines: impl IntoIterator<Item = &'a str>, min_count: usize) -> Self {
        let mut counts: BTreeMap<char, usize> = BTreeMap::new();
        for line in lines {
            for c in line.chars() {
                *counts.entry(c).or_default() += 1;
            }
        }
        let kept = counts
            .into_iter()
            .filter(|&(_, n)| n >= min_count.max(1))
            .map(|(c, _)| c);
        CharVocab::from_chars(kept.chain(std::iter::once(' ')))
    }

    pub fn len(&self) -> usize {
        self.chars.len() + NUM_SPECIAL as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Corpus characters in id order, markers excluded.
    pub fn chars(&self) -> impl Iterator<Item = char> + '_ {
        self.chars.iter().copied()
    }

    pub fn id(&self, c: char) -> u32 {
        self.index.get(&c).copied().unwrap_or(UNK_ID)
    }

    pub fn char(&self, id: u32) -> Option<char> {
        id.checked_sub(NUM_SPECIAL)
            .and_then(|i| self.chars.get(i as usize).copied())
    }

    pub fn space_id(&self) -> u32 {
        self.id(' ')
    }

    /// Whether `id` belongs inside a word. Markers and unknowns do not.
    pub fn is_letter_id(&self, id: u32) -> bool {
        self.letters.get(id as usize).copied().unwrap_or(false)
    }

    pub fn contains(&self, id: u32) -> bool {
        (id as usize) < self.len()
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        text.chars()
            .map(|c| if c == '\n' { self.space_id() } else { self.id(c) })
            .collect()
    }

    /// Inverse of [`encode`](Self::encode) for in-vocabulary text. Unknown
    /// ids render as U+FFFD.
    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .map(|&id| self.char(id).unwrap_or('\u{FFFD}'))
            .collect()
    }

    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        out.push_str(EOS_TOKEN);
        out.push('\n');
        out.push_str(UNK_TOKEN);
        out.push('\n');
        for &c in &self.chars {
            out.push_str(&escape_char(c));
            out.push('\n');
        }
        out
    }

    pub fn from_file_string(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(EOS_TOKEN) || lines.next() != Some(UNK_TOKEN) {
            return Err(Error::format(
                "vocab file",
                "first two lines must be the <eos-seg> and <unk> markers",
            ));
        }
        let mut chars = Vec::new();
        for (i, line) in lines.enumerate() {
            let s = unescape(line).map_err(|e| Error::format("vocab file", e))?;
            let mut it = s.chars();
            match (it.next(), it.next()) {
                (Some(c), None) => chars.push(c),
                _ => {
                    return Err(Error::format(
                        "vocab file",
                        format!("line {} is not a single character", i + 3),
                    ))
                }
            }
        }
        let vocab = CharVocab::from_chars(chars.iter().copied());
        if vocab.chars != chars {
            return Err(Error::format(
                "vocab file",
                "characters must be unique and in code point order",
            ));
        }
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_utf8(path)?;
        Self::from_file_string(&text)
    }
}

/// Escapes characters that cannot appear verbatim in line/TSV oriented files.
pub fn escape_char(c: char) -> String {
    match c {
        ' ' => "\\s".to_string(),
        '\n' => "\\n".to_string(),
        '\t' => "\\t".to_string(),
        '\r' => "\\r".to_string(),
        '\\' => "\\\\".to_string(),
        c => c.to_string(),
    }
}

pub fn escape_str(s: &str) -> String {
    s.chars().fold(String::new(), |mut acc, c| {
        let _ = write!(acc, "{}", escape_char(c));
        acc
    })
}

pub fn unescape(s: &str) -> std::result::Result<String, String> {
    let mut out = String::with_capacity(s.len());
    let mut it = s.chars();
    while let Some(c) = it.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match it.next() {
            Some('s') => out.push(' '),
            Some('n') => out.push('\n'),
            Some('t') => out.push('\t'),
            Some('r') => out.push('\r'),
            Some('\\') => out.push('\\'),
            other => return Err(format!("bad escape sequence \\{}", other.unwrap_or(' '))),
        }
    }
    Ok(out)
}

/// Half-open `[start, end)` range of a word within a sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start < end);
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn contains(&self, pos: usize) -> bool {
        self.start <= pos && pos < self.end
    }
}

/// Tiles `ids` into word spans: maximal letter runs, and one span per
/// non-letter character.
pub fn word_spans(ids: &[u32], vocab: &CharVocab) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut i = 0;
    while i < ids.len() {
        let mut j = i + 1;
        if vocab.is_letter_id(ids[i]) {
            while j < ids.len() && vocab.is_letter_id(ids[j]) {
                j += 1;
            }
        }
        spans.push(Span::new(i, j));
        i = j;
    }
    spans
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CharSequence {
    pub ids: Vec<u32>,
    pub spans: Vec<Span>,
}

impl CharSequence {
    pub fn new(ids: Vec<u32>, vocab: &CharVocab) -> Self {
        let spans = word_spans(&ids, vocab);
        CharSequence { ids, spans }
    }

    pub fn from_text(text: &str, vocab: &CharVocab) -> Self {
        Self::new(vocab.encode(text), vocab)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// For every position, the end of the span containing it.
    pub fn span_ends(&self) -> Vec<usize> {
        let mut ends = vec![0; self.ids.len()];
        for s in &self.spans {
            ends[s.start..s.end].fill(s.end);
        }
        ends
    }

    /// For every position, the start of the span containing it.
    pub fn span_starts(&self) -> Vec<usize> {
        let mut starts = vec![0; self.ids.len()];
        for s in &self.spans {
            starts[s.start..s.end].fill(s.start);
        }
        starts
    }

    /// Spans made of letters, i.e. the words that carry morphology.
    pub fn words<'a>(&'a self, vocab: &'a CharVocab) -> impl Iterator<Item = Span> + 'a {
        self.spans
            .iter()
            .copied()
            .filter(move |s| vocab.is_letter_id(self.ids[s.start]))
    }
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub vocab: CharVocab,
    pub lines: Vec<CharSequence>,
}

impl Corpus {
    /// Builds a corpus from in-memory text. A vocabulary is derived from the
    /// text when none is given.
    pub fn from_text(text: &str, vocab: Option<&CharVocab>, min_count: usize) -> Self {
        let raw: Vec<&str> = text.lines().collect();
        let vocab = match vocab {
            Some(v) => v.clone(),
            None => CharVocab::build(raw.iter().copied(), min_count),
        };
        let lines = raw
            .iter()
            .map(|l| CharSequence::from_text(l, &vocab))
            .collect();
        Corpus { vocab, lines }
    }

    pub fn num_chars(&self) -> usize {
        self.lines.iter().map(|l| l.len()).sum()
    }

    /// All letter spans as standalone sequences.
    pub fn words(&self) -> Vec<CharSequence> {
        let mut out = Vec::new();
        for line in &self.lines {
            for w in line.words(&self.vocab) {
                out.push(CharSequence {
                    ids: line.ids[w.start..w.end].to_vec(),
                    spans: vec![Span::new(0, w.len())],
                });
            }
        }
        out
    }
}

pub(crate) fn read_utf8(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidUtf8 {
        path: path.to_path_buf(),
        offset: e.utf8_error().valid_up_to(),
    })
}

/// Reads a UTF-8 corpus file, one sequence per line.
pub fn load_corpus(path: &Path, vocab: Option<&CharVocab>, min_count: usize) -> Result<Corpus> {
    let text = read_utf8(path)?;
    Ok(Corpus::from_text(&text, vocab, min_count))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchMode {
    LongRange,
    WordLevel,
}

impl std::str::FromStr for BatchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "long-range" => Ok(BatchMode::LongRange),
            "word-level" => Ok(BatchMode::WordLevel),
            other => Err(Error::InvalidArgument(format!("unknown mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for BatchMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BatchMode::LongRange => "long-range",
            BatchMode::WordLevel => "word-level",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub sequences: Vec<CharSequence>,
    /// Encoder state from the previous batch continues into this one.
    pub carryover: bool,
}

impl Batch {
    pub fn num_chars(&self) -> usize {
        self.sequences.iter().map(|s| s.len()).sum()
    }
}

/// Joins corpus lines into one id stream, each line followed by a space.
pub fn concat_stream(lines: &[CharSequence], vocab: &CharVocab) -> Vec<u32> {
    let space = vocab.space_id();
    let mut out = Vec::with_capacity(lines.iter().map(|l| l.len() + 1).sum());
    for l in lines {
        out.extend_from_slice(&l.ids);
        out.push(space);
    }
    out
}

/// Splits `stream` into `batch_size` contiguous lanes and cuts each lane into
/// `seq_len` windows. Batch `i` holds window `i` of every lane. Characters
/// that do not fill a whole window are dropped.
pub fn long_range_batches(
    stream: &[u32],
    vocab: &CharVocab,
    batch_size: usize,
    seq_len: usize,
) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
    }
    if seq_len < 2 {
        return Err(Error::InvalidArgument("seq_len must be >= 2".into()));
    }
    let need = batch_size * seq_len;
    if stream.len() < need {
        return Err(Error::CorpusTooShort {
            have: stream.len(),
            need,
        });
    }
    let lane_len = stream.len() / batch_size;
    let windows = lane_len / seq_len;
    let batches = (0..windows)
        .map(|w| Batch {
            sequences: (0..batch_size)
                .map(|lane| {
                    let start = lane * lane_len + w * seq_len;
                    CharSequence::new(stream[start..start + seq_len].to_vec(), vocab)
                })
                .collect(),
            carryover: w > 0,
        })
        .collect();
    Ok(batches)
}

/// One word per sequence, shuffled, grouped into batches of `batch_size`
/// (the last batch may be short).
pub fn word_level_batches<R: Rng>(
    words: &[CharSequence],
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
    }
    let mut order: Vec<usize> = (0..words.len()).collect();
    order.shuffle(rng);
    Ok(order
        .chunks(batch_size)
        .map(|chunk| Batch {
            sequences: chunk.iter().map(|&i| words[i].clone()).collect(),
            carryover: false,
        })
        .collect())
}
