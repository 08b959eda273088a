//! Synthetic languages with planted morphemes, for checking that learned
//! segmentations recover known structure.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::segmentation::Segmentation;

const CONSONANTS: &[char] = &['b', 'd', 'f', 'g', 'h', 'k', 'l', 'm', 'n', 'p', 's', 't', 'w', 'y', 'z'];
const VOWELS: &[char] = &['a', 'e', 'i', 'o', 'u'];

#[derive(Clone, Debug, PartialEq)]
pub struct PlantedConfig {
    pub num_morphemes: usize,
    pub min_morpheme_len: usize,
    pub max_morpheme_len: usize,
    pub num_words: usize,
    pub min_morphemes_per_word: usize,
    pub max_morphemes_per_word: usize,
    pub words_per_line: usize,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            num_morphemes: 20,
            min_morpheme_len: 2,
            max_morpheme_len: 4,
            num_words: 2000,
            min_morphemes_per_word: 2,
            max_morphemes_per_word: 4,
            words_per_line: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlantedLanguage {
    pub morphemes: Vec<String>,
    /// Every generated word with its planted boundaries.
    pub words: Vec<Segmentation>,
}

/// Consonant-vowel alternating strings starting with a consonant.
fn morpheme<R: Rng>(len: usize, rng: &mut R) -> String {
    (0..len)
        .map(|i| {
            let set = if i % 2 == 0 { CONSONANTS } else { VOWELS };
            *set.choose(rng).unwrap()
        })
        .collect()
}

impl PlantedLanguage {
    pub fn generate<R: Rng>(config: &PlantedConfig, rng: &mut R) -> Result<Self> {
        let c = config;
        if c.num_morphemes == 0
            || c.min_morpheme_len == 0
            || c.min_morpheme_len > c.max_morpheme_len
            || c.min_morphemes_per_word == 0
            || c.min_morphemes_per_word > c.max_morphemes_per_word
            || c.words_per_line == 0
        {
            return Err(Error::InvalidArgument("inconsistent planted-language settings".into()));
        }
        let mut seen = BTreeSet::new();
        let mut morphemes = Vec::with_capacity(c.num_morphemes);
        let mut attempts = 0;
        while morphemes.len() < c.num_morphemes {
            attempts += 1;
            if attempts > 1000 * c.num_morphemes {
                return Err(Error::InvalidArgument("cannot draw enough distinct morphemes".into()));
            }
            let m = morpheme(rng.gen_range(c.min_morpheme_len..=c.max_morpheme_len), rng);
            if seen.insert(m.clone()) {
                morphemes.push(m);
            }
        }
        let words = (0..c.num_words)
            .map(|_| {
                let n = rng.gen_range(c.min_morphemes_per_word..=c.max_morphemes_per_word);
                let parts: Vec<&String> = (0..n).map(|_| morphemes.choose(rng).unwrap()).collect();
                Segmentation::from_pieces(&parts)
            })
            .collect();
        Ok(PlantedLanguage { morphemes, words })
    }

    /// Consecutive train/valid/test slices by the given fractions.
    pub fn split(&self, train: f64, valid: f64) -> (Vec<Segmentation>, Vec<Segmentation>, Vec<Segmentation>) {
        let n = self.words.len();
        let a = ((n as f64) * train).round() as usize;
        let b = (a + ((n as f64) * valid).round() as usize).min(n);
        (self.words[..a].to_vec(), self.words[a..b].to_vec(), self.words[b..].to_vec())
    }
}

/// Words as text, `per_line` to a line.
pub fn to_text(words: &[Segmentation], per_line: usize) -> String {
    let mut s = String::new();
    for line in words.chunks(per_line.max(1)) {
        let ws: Vec<&str> = line.iter().map(|w| w.word.as_str()).collect();
        s.push_str(&ws.join(" "));
        s.push('\n');
    }
    s
}

/// Gold file text: `word<TAB>m1-m2-...` per line.
pub fn to_gold(words: &[Segmentation]) -> String {
    words.iter().map(|w| format!("{}\t{}\n", w.word, w.hyphenated())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn planted_structure() {
        let lang = PlantedLanguage::generate(&PlantedConfig::default(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(lang.morphemes.len(), 20);
        assert!(lang.morphemes.iter().all(|m| (2..=4).contains(&m.len())));
        assert_eq!(lang.words.len(), 2000);
        for w in &lang.words {
            let pieces = w.pieces();
            assert!((2..=4).contains(&pieces.len()));
            assert!(pieces.iter().all(|p| lang.morphemes.contains(p)));
        }
        let (tr, va, te) = lang.split(0.8, 0.1);
        assert_eq!((tr.len(), va.len(), te.len()), (1600, 200, 200));
    }

    #[test]
    fn seeded_generation_repeats() {
        let a = PlantedLanguage::generate(&PlantedConfig::default(), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = PlantedLanguage::generate(&PlantedConfig::default(), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn text_and_gold() {
        let words = vec![Segmentation::from_pieces(&["ba", "ki"]), Segmentation::from_pieces(&["to", "le", "mu"])];
        assert_eq!(to_text(&words, 1), "baki\ntolemu\n");
        assert_eq!(to_text(&words, 5), "baki tolemu\n");
        assert_eq!(to_gold(&words), "baki\tba-ki\ntolemu\tto-le-mu\n");
    }
}
