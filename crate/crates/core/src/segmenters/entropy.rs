use crate::corpus::Span;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryCriterion {
    /// Entropy rises into a position and falls after it.
    Spike,
    /// Entropy rises into a position.
    Increase,
    /// Entropy exceeds the mean by more than one standard deviation.
    Stddev,
}

impl std::str::FromStr for BoundaryCriterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spike" => Ok(BoundaryCriterion::Spike),
            "increase" => Ok(BoundaryCriterion::Increase),
            "stddev" => Ok(BoundaryCriterion::Stddev),
            other => Err(Error::InvalidArgument(format!("unknown criterion {other:?}"))),
        }
    }
}

/// Which entropies the Stddev threshold is computed over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum StddevScope {
    #[default]
    Line,
    Word,
}

impl std::str::FromStr for StddevScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "line" => Ok(StddevScope::Line),
            "word" => Ok(StddevScope::Word),
            other => Err(Error::InvalidArgument(format!("unknown stddev scope {other:?}"))),
        }
    }
}

/// Predictive entropy (nats) at every position of a line.
#[derive(Clone, Debug, PartialEq)]
pub struct EntropyProfile {
    pub entropies: Vec<f64>,
}

impl EntropyProfile {
    pub fn new(entropies: Vec<f64>) -> Self {
        EntropyProfile { entropies }
    }

    pub fn mean(&self) -> f64 {
        mean_std(&self.entropies).0
    }

    /// Population standard deviation.
    pub fn std(&self) -> f64 {
        mean_std(&self.entropies).1
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Boundaries inside `word` (offsets from its start). A boundary goes
/// before character `i` when the criterion holds at `i`. Neighbours are
/// read from the whole line, so the character after a word counts for
/// Spike; at the end of the line only the left neighbour is compared.
pub fn entropy_boundaries(
    profile: &EntropyProfile,
    word: Span,
    criterion: BoundaryCriterion,
    scope: StddevScope,
) -> Vec<usize> {
    let h = &profile.entropies;
    assert!(word.end <= h.len(), "profile does not cover the word");
    if word.len() < 2 {
        return vec![];
    }
    let threshold = match scope {
        StddevScope::Line => profile.mean() + profile.std(),
        StddevScope::Word => {
            let (m, s) = mean_std(&h[word.start..word.end]);
            m + s
        }
    };
    (word.start + 1..word.end)
        .filter(|&i| match criterion {
            BoundaryCriterion::Increase => h[i] > h[i - 1],
            BoundaryCriterion::Spike => h[i] > h[i - 1] && h.get(i + 1).is_none_or(|&next| h[i] > next),
            BoundaryCriterion::Stddev => h[i] > threshold,
        })
        .map(|i| i - word.start)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cuts(h: &[f64], c: BoundaryCriterion) -> Vec<usize> {
        entropy_boundaries(
            &EntropyProfile::new(h.to_vec()),
            Span::new(0, h.len()),
            c,
            StddevScope::Line,
        )
    }

    #[test]
    fn fixtures() {
        assert_eq!(cuts(&[1.0, 2.0, 1.5], BoundaryCriterion::Spike), vec![1]);
        assert_eq!(cuts(&[1.0, 2.0, 3.0], BoundaryCriterion::Spike), vec![2]);
        assert_eq!(cuts(&[3.0, 2.0, 1.0], BoundaryCriterion::Spike), Vec::<usize>::new());
        assert_eq!(cuts(&[1.0, 2.0, 1.5, 1.7], BoundaryCriterion::Increase), vec![1, 3]);
        assert_eq!(cuts(&[1.0; 5], BoundaryCriterion::Stddev), Vec::<usize>::new());
        assert_eq!(cuts(&[1.0, 1.0, 4.0, 1.0], BoundaryCriterion::Stddev), vec![2]);
    }

    #[test]
    fn spike_looks_past_the_word() {
        let p = EntropyProfile::new(vec![1.0, 2.0, 3.0, 0.5]);
        let b = entropy_boundaries(&p, Span::new(0, 3), BoundaryCriterion::Spike, StddevScope::Line);
        assert_eq!(b, vec![2]);
        let p = EntropyProfile::new(vec![1.0, 2.0, 3.0, 4.0]);
        let b = entropy_boundaries(&p, Span::new(0, 3), BoundaryCriterion::Spike, StddevScope::Line);
        assert!(b.is_empty());
    }

    #[test]
    fn word_scope_threshold() {
        let p = EntropyProfile::new(vec![9.0, 9.0, 1.0, 1.0, 3.0]);
        let line = entropy_boundaries(&p, Span::new(2, 5), BoundaryCriterion::Stddev, StddevScope::Line);
        let word = entropy_boundaries(&p, Span::new(2, 5), BoundaryCriterion::Stddev, StddevScope::Word);
        assert!(line.is_empty());
        assert_eq!(word, vec![2]);
    }

    #[test]
    fn short_words_have_no_boundaries() {
        for c in [BoundaryCriterion::Spike, BoundaryCriterion::Increase, BoundaryCriterion::Stddev] {
            assert!(cuts(&[0.3], c).is_empty());
        }
    }

    proptest! {
        #[test]
        fn boundaries_are_word_internal(h in proptest::collection::vec(0.0f64..3.0, 1..12), a in 0usize..12, b in 0usize..12) {
            let n = h.len();
            let (lo, hi) = (a.min(b) % n, (a.max(b) % n) + 1);
            prop_assume!(lo < hi);
            let p = EntropyProfile::new(h);
            for c in [BoundaryCriterion::Spike, BoundaryCriterion::Increase, BoundaryCriterion::Stddev] {
                let cuts = entropy_boundaries(&p, Span::new(lo, hi), c, StddevScope::Line);
                prop_assert!(cuts.iter().all(|&x| x > 0 && x < hi - lo));
                prop_assert!(cuts.windows(2).all(|w| w[0] < w[1]));
                prop_assert_eq!(cuts, entropy_boundaries(&p, Span::new(lo, hi), c, StddevScope::Line));
            }
        }
    }
}
