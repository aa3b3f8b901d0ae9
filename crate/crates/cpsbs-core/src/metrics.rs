//! Estimand and evaluation functions: sentence BLEU, negative
//! log-probability, and n-gram diversity of a sequence set.
//!
//! N-grams are computed over token ids with BOS/EOS stripped. BLEU uses
//! add-1 smoothing on orders 2-4 and none on order 1, so zero unigram overlap
//! gives a score of exactly zero; orders longer than the hypothesis are
//! skipped.

use crate::estimators::Estimand;
use crate::seq_model::{Sequence, Token, ToyModel};
use std::collections::HashMap;

/// Highest n-gram order used by BLEU and the diversity metric.
pub const MAX_NGRAM_ORDER: usize = 4;

/// N-gram counts of orders 1..4 over one or more token bodies.
#[derive(Debug, Clone, Default)]
pub struct NGramProfile {
    counts: [HashMap<Vec<Token>, usize>; MAX_NGRAM_ORDER],
    totals: [usize; MAX_NGRAM_ORDER],
}

impl NGramProfile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_body(body: &[Token]) -> Self {
        let mut profile = Self::new();
        profile.add_body(body);
        profile
    }

    /// Accumulates all n-grams of a token body.
    pub fn add_body(&mut self, body: &[Token]) {
        for n in 1..=MAX_NGRAM_ORDER {
            if body.len() < n {
                continue;
            }
            for gram in body.windows(n) {
                *self.counts[n - 1].entry(gram.to_vec()).or_default() += 1;
            }
            self.totals[n - 1] += body.len() - n + 1;
        }
    }

    /// Total number of n-grams of order `n` (with multiplicity).
    pub fn total(&self, n: usize) -> usize {
        self.totals[n - 1]
    }

    /// Number of distinct n-grams of order `n`.
    pub fn unique(&self, n: usize) -> usize {
        self.counts[n - 1].len()
    }

    /// Count of one specific n-gram.
    pub fn count(&self, gram: &[Token]) -> usize {
        self.counts[gram.len() - 1].get(gram).copied().unwrap_or(0)
    }

    /// Sum over n-grams of order `n` of `min(count here, count in other)`.
    pub fn clipped_matches(&self, other: &Self, n: usize) -> usize {
        self.counts[n - 1]
            .iter()
            .map(|(gram, &c)| c.min(other.count(gram)))
            .sum()
    }
}

/// Sentence-level BLEU of a hypothesis against a single reference.
///
/// Geometric mean of modified n-gram precisions over the orders the
/// hypothesis supports, times the brevity penalty
/// `min(1, exp(1 - |ref|/|hyp|))`. An empty hypothesis body scores zero.
pub fn sentence_bleu(hyp: &Sequence, reference: &Sequence) -> f64 {
    let hyp_body = hyp.body();
    let ref_body = reference.body();
    if hyp_body.is_empty() {
        return 0.0;
    }
    let hyp_profile = NGramProfile::from_body(&hyp_body);
    let ref_profile = NGramProfile::from_body(&ref_body);
    let mut log_sum = 0.0;
    let mut orders = 0usize;
    for n in 1..=MAX_NGRAM_ORDER {
        let total = hyp_profile.total(n);
        if total == 0 {
            continue;
        }
        let matches = hyp_profile.clipped_matches(&ref_profile, n);
        let precision = if n == 1 {
            if matches == 0 {
                return 0.0;
            }
            matches as f64 / total as f64
        } else {
            (matches + 1) as f64 / (total + 1) as f64
        };
        log_sum += precision.ln();
        orders += 1;
    }
    let brevity = if ref_body.len() <= hyp_body.len() {
        1.0
    } else {
        (1.0 - ref_body.len() as f64 / hyp_body.len() as f64).exp()
    };
    brevity * (log_sum / orders as f64).exp()
}

/// The negative log-probability estimand `y -> -log p_tau(y)`; its exact
/// expectation is the entropy of the annealed model. Recomputes the
/// probability from the model rather than trusting the cached value.
pub fn neg_logprob(model: &ToyModel, tau: f64) -> Estimand {
    let model = model.clone();
    Estimand::scalar("neglogp", move |y: &Sequence| {
        -model
            .sequence_logprob(&y.symbols, tau)
            .expect("estimand evaluated on a well-formed sequence")
    })
}

/// The BLEU-against-a-fixed-reference estimand `y -> BLEU(y, reference)`.
pub fn bleu_against(reference: Sequence) -> Estimand {
    Estimand::scalar("bleu", move |y: &Sequence| sentence_bleu(y, &reference))
}

/// N-gram diversity of a sequence set: the sum over orders 1..4 of the
/// fraction of unique among total n-grams across all bodies. Orders with no
/// n-grams contribute zero; the result lies in `[0, 4]`.
pub fn ngram_diversity(set: &[Sequence]) -> f64 {
    let mut profile = NGramProfile::new();
    for seq in set {
        profile.add_body(&seq.body());
    }
    (1..=MAX_NGRAM_ORDER)
        .map(|n| {
            let total = profile.total(n);
            if total == 0 {
                0.0
            } else {
                profile.unique(n) as f64 / total as f64
            }
        })
        .sum()
}
