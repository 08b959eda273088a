use crate::error::{Error, Result};

/// A word split into subwords, stored as character offsets of the internal
/// boundaries.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Segmentation {
    pub word: String,
    pub cuts: Vec<usize>,
}

impl Segmentation {
    pub fn new(word: impl Into<String>, cuts: Vec<usize>) -> Result<Self> {
        let word = word.into();
        let n = word.chars().count();
        let mut prev = 0;
        for &c in &cuts {
            if c <= prev || c >= n {
                return Err(Error::InvalidArgument(format!(
                    "cuts {cuts:?} are not strictly increasing inside a word of {n} characters"
                )));
            }
            prev = c;
        }
        Ok(Segmentation { word, cuts })
    }

    pub fn unsegmented(word: impl Into<String>) -> Self {
        Segmentation {
            word: word.into(),
            cuts: Vec::new(),
        }
    }

    /// Builds from subwords; empty pieces are ignored.
    pub fn from_pieces<S: AsRef<str>>(pieces: &[S]) -> Self {
        let mut word = String::new();
        let mut cuts = Vec::new();
        let mut len = 0;
        for p in pieces {
            let p = p.as_ref();
            if p.is_empty() {
                continue;
            }
            if len > 0 {
                cuts.push(len);
            }
            word.push_str(p);
            len += p.chars().count();
        }
        Segmentation { word, cuts }
    }

    /// Reads `se-si-hamb-e` style text.
    pub fn parse_hyphenated(text: &str) -> Self {
        let pieces: Vec<&str> = text.split('-').collect();
        Self::from_pieces(&pieces)
    }

    pub fn num_chars(&self) -> usize {
        self.word.chars().count()
    }

    pub fn num_pieces(&self) -> usize {
        if self.word.is_empty() {
            0
        } else {
            self.cuts.len() + 1
        }
    }

    pub fn pieces(&self) -> Vec<String> {
        let chars: Vec<char> = self.word.chars().collect();
        let mut out = Vec::with_capacity(self.cuts.len() + 1);
        let mut prev = 0;
        for &c in self.cuts.iter().chain(std::iter::once(&chars.len())) {
            out.push(chars[prev..c].iter().collect());
            prev = c;
        }
        out
    }

    pub fn hyphenated(&self) -> String {
        self.pieces().join("-")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pieces_and_cuts() {
        let s = Segmentation::parse_hyphenated("se-si-hamb-e");
        assert_eq!(s.word, "sesihambe");
        assert_eq!(s.cuts, vec![2, 4, 8]);
        assert_eq!(s.hyphenated(), "se-si-hamb-e");
        assert_eq!(s.num_pieces(), 4);
    }

    #[test]
    fn validates_cuts() {
        assert!(Segmentation::new("abc", vec![0]).is_err());
        assert!(Segmentation::new("abc", vec![3]).is_err());
        assert!(Segmentation::new("abc", vec![2, 1]).is_err());
        assert!(Segmentation::new("abc", vec![1, 2]).is_ok());
    }

    #[test]
    fn multibyte_pieces() {
        let s = Segmentation::new("ŋaŋa", vec![2]).unwrap();
        assert_eq!(s.pieces(), vec!["ŋa", "ŋa"]);
    }

    proptest! {
        #[test]
        fn pieces_round_trip(pieces in proptest::collection::vec("[a-zé]{1,4}", 1..6)) {
            let s = Segmentation::from_pieces(&pieces);
            prop_assert_eq!(s.pieces(), pieces.clone());
            prop_assert_eq!(s.pieces().concat(), s.word.clone());
            prop_assert!(Segmentation::new(s.word.clone(), s.cuts.clone()).is_ok());
        }
    }
}
