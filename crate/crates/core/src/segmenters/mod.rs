//! Baseline subword segmenters.

pub mod bpe;
pub mod entropy;
pub mod ulm;

use std::collections::BTreeMap;

use crate::corpus::Corpus;

pub use bpe::BpeModel;
pub use entropy::{entropy_boundaries, BoundaryCriterion, EntropyProfile, StddevScope};
pub use ulm::{UlmConfig, UlmModel};

/// Letter words of a corpus with their frequencies, in lexicographic order.
pub fn word_counts(corpus: &Corpus) -> Vec<(String, usize)> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for line in &corpus.lines {
        for span in line.words(&corpus.vocab) {
            *counts
                .entry(corpus.vocab.decode(&line.ids[span.start..span.end]))
                .or_default() += 1;
        }
    }
    counts.into_iter().collect()
}
