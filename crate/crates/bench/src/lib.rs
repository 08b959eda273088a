//! Shared fixtures for the benchmarks.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sslm_core::synthetic::{to_text, PlantedConfig, PlantedLanguage};
use sslm_core::{CharSequence, Corpus, Lexicon, Sslm, SslmConfig};

/// Planted-morpheme text of `words` words, ten to a line.
pub fn planted_corpus(words: usize, seed: u64) -> Corpus {
    let cfg = PlantedConfig {
        num_words: words,
        ..PlantedConfig::default()
    };
    let lang = PlantedLanguage::generate(&cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    Corpus::from_text(&to_text(&lang.words, 10), None, 1)
}

/// An untrained SSLM over `corpus` with a lexicon of `lexicon_size` entries.
pub fn model(corpus: &Corpus, hidden: usize, lexicon_size: usize, max_seg: usize) -> Sslm {
    let lexicon = Lexicon::build(&corpus.lines, &corpus.vocab, lexicon_size, max_seg).unwrap();
    let config = SslmConfig {
        embed_dim: hidden / 2,
        hidden_dim: hidden,
        num_layers: 1,
        dp_max_seg: Some(max_seg),
    };
    Sslm::new(corpus.vocab.clone(), lexicon, config, &mut ChaCha8Rng::seed_from_u64(1)).unwrap()
}

/// `n` letter words drawn from `corpus`, each as its own sequence.
pub fn sample_words(corpus: &Corpus, n: usize) -> Vec<CharSequence> {
    let mut words = corpus.words();
    words.shuffle(&mut ChaCha8Rng::seed_from_u64(2));
    words.truncate(n);
    words
}
