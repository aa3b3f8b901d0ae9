//! Locally normalized toy sequence models.
//!
//! A [`ToyModel`] is an order-1 Markov model: the distribution over the next
//! symbol depends only on the previous token (or BOS). Every sequence starts
//! with BOS and ends with EOS, EOS is forced once the body reaches `t_max`,
//! and the BOS row assigns EOS probability zero, so the support is finite and
//! the sequence probabilities sum to one exactly. That makes exhaustive
//! enumeration and unbiasedness checks exact at desk scale.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// A vocabulary token id in `[0, |V|)`.
pub type Token = u32;

/// A generated symbol: BOS, a vocabulary token, or EOS.
///
/// The derived order (`Bos < Tok(0) < Tok(1) < .. < Eos`) is the tie-breaking
/// order used by the deterministic decoders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Symbol {
    Bos,
    Tok(Token),
    Eos,
}

impl std::fmt::Display for Symbol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Symbol::Bos => write!(f, "<bos>"),
            Symbol::Tok(t) => write!(f, "{t}"),
            Symbol::Eos => write!(f, "<eos>"),
        }
    }
}

/// Errors from model construction, loading, or misuse.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("vocabulary must contain at least one token")]
    EmptyVocab,
    #[error("maximum length must be at least 1")]
    InvalidMaxLength,
    #[error("row for state {state} has {len} entries, expected {expected}")]
    RowShape { state: String, len: usize, expected: usize },
    #[error("row for state {state} sums to {sum}, expected 1")]
    RowSum { state: String, sum: f64 },
    #[error("row for state {state} has a negative or non-finite entry")]
    RowEntry { state: String },
    #[error("BOS row must assign zero probability to EOS")]
    BosRowEndsSequence,
    #[error("missing row for state {state}")]
    MissingRow { state: String },
    #[error("unknown state key {key:?}")]
    UnknownState { key: String },
    #[error("invalid annealing temperature {0}")]
    InvalidTemperature(f64),
    #[error("operation requires an unfinished prefix")]
    FinishedPrefix,
    #[error("malformed sequence: {0}")]
    MalformedSequence(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Vocabulary description: `|V|` tokens plus the reserved BOS/EOS symbols.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Vocab {
    size: usize,
}

impl Vocab {
    pub fn new(size: usize) -> Result<Self, ModelError> {
        if size == 0 {
            return Err(ModelError::EmptyVocab);
        }
        Ok(Self { size })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Tokens followed by EOS, in the row order used by [`ToyModel`].
    pub fn extensions(&self) -> impl Iterator<Item = Symbol> + '_ {
        (0..self.size as Token).map(Symbol::Tok).chain(std::iter::once(Symbol::Eos))
    }
}

/// A token sequence with its cached log-probability.
///
/// Equality and hashing look only at the symbols; `logp` is derived state.
#[derive(Debug, Clone)]
pub struct Sequence {
    pub symbols: Vec<Symbol>,
    pub finished: bool,
    pub logp: f64,
}

impl PartialEq for Sequence {
    fn eq(&self, other: &Self) -> bool {
        self.symbols == other.symbols
    }
}

impl Eq for Sequence {}

impl std::hash::Hash for Sequence {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.symbols.hash(state);
    }
}

impl PartialOrd for Sequence {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Sequence {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.symbols.cmp(&other.symbols)
    }
}

impl Sequence {
    /// The starting prefix: just BOS, probability one.
    pub fn root() -> Self {
        Self { symbols: vec![Symbol::Bos], finished: false, logp: 0.0 }
    }

    /// A finished sequence built from body tokens, with no probability
    /// assigned (`logp = NaN`). Useful as a BLEU reference.
    pub fn from_body(body: &[Token]) -> Self {
        let mut symbols = Vec::with_capacity(body.len() + 2);
        symbols.push(Symbol::Bos);
        symbols.extend(body.iter().map(|&t| Symbol::Tok(t)));
        symbols.push(Symbol::Eos);
        Self { symbols, finished: true, logp: f64::NAN }
    }

    /// Extends an unfinished prefix by one symbol with the given conditional
    /// log-probability.
    pub fn extend(&self, symbol: Symbol, log_cond: f64) -> Self {
        debug_assert!(!self.finished);
        let mut symbols = self.symbols.clone();
        symbols.push(symbol);
        Self { symbols, finished: symbol == Symbol::Eos, logp: self.logp + log_cond }
    }

    /// Number of body tokens (BOS/EOS excluded).
    pub fn body_len(&self) -> usize {
        self.symbols.len() - 1 - usize::from(self.finished)
    }

    /// Body tokens, BOS/EOS stripped.
    pub fn body(&self) -> Vec<Token> {
        self.symbols
            .iter()
            .filter_map(|s| match s {
                Symbol::Tok(t) => Some(*t),
                _ => None,
            })
            .collect()
    }

    /// Number of generation steps taken (or needed) to produce this
    /// sequence: one per body token plus one for EOS.
    pub fn steps(&self) -> usize {
        self.symbols.len() - 1
    }

    /// The step-`t` form of this sequence inside a beam: its length-`t`
    /// prefix while unfinished, the full sequence once finished.
    pub fn prefix_at_step(&self, t: usize) -> Sequence {
        if t >= self.steps() {
            self.clone()
        } else {
            Sequence {
                symbols: self.symbols[..=t].to_vec(),
                finished: false,
                logp: f64::NAN,
            }
        }
    }

    pub fn last_symbol(&self) -> Symbol {
        *self.symbols.last().expect("sequence is never empty")
    }
}

/// An order-1 Markov model over sequences with bounded body length.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    vocab: Vocab,
    t_max: usize,
    /// Row 0 is the BOS state; row `1 + t` is the state after token `t`.
    /// Each row has `|V| + 1` entries, EOS last; the BOS row's EOS entry is 0.
    rows: Vec<Vec<f64>>,
}

/// Tolerance for row sums when validating or loading a model.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

impl ToyModel {
    pub fn new(vocab_size: usize, t_max: usize, rows: Vec<Vec<f64>>) -> Result<Self, ModelError> {
        let vocab = Vocab::new(vocab_size)?;
        if t_max == 0 {
            return Err(ModelError::InvalidMaxLength);
        }
        let expected = vocab_size + 1;
        if rows.len() != expected {
            return Err(ModelError::MissingRow {
                state: format!("{} states", expected),
            });
        }
        for (i, row) in rows.iter().enumerate() {
            let state = Self::state_name(i);
            if row.len() != expected {
                return Err(ModelError::RowShape { state, len: row.len(), expected });
            }
            if row.iter().any(|&p| !p.is_finite() || p < 0.0) {
                return Err(ModelError::RowEntry { state });
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(ModelError::RowSum { state, sum });
            }
        }
        if rows[0][vocab_size] != 0.0 {
            return Err(ModelError::BosRowEndsSequence);
        }
        Ok(Self { vocab, t_max, rows })
    }

    fn state_name(row_index: usize) -> String {
        if row_index == 0 {
            "BOS".to_string()
        } else {
            (row_index - 1).to_string()
        }
    }

    pub fn vocab(&self) -> Vocab {
        self.vocab
    }

    pub fn t_max(&self) -> usize {
        self.t_max
    }

    /// Raw conditional row for a state (BOS or a previous token).
    pub fn row(&self, state: Symbol) -> &[f64] {
        match state {
            Symbol::Bos => &self.rows[0],
            Symbol::Tok(t) => &self.rows[1 + t as usize],
            Symbol::Eos => panic!("EOS is not a conditioning state"),
        }
    }

    fn check_tau(tau: f64) -> Result<(), ModelError> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(ModelError::InvalidTemperature(tau));
        }
        Ok(())
    }

    /// Annealed log-conditionals `log p_tau(. | prefix)` over `V` then EOS.
    ///
    /// Returns the EOS-only point mass once the body reaches `t_max`. Stable
    /// for extreme temperatures: everything stays in log space.
    pub fn next_log_distribution(
        &self,
        prefix: &Sequence,
        tau: f64,
    ) -> Result<Vec<f64>, ModelError> {
        Self::check_tau(tau)?;
        if prefix.finished {
            return Err(ModelError::FinishedPrefix);
        }
        let width = self.vocab.size() + 1;
        if prefix.body_len() >= self.t_max {
            let mut out = vec![f64::NEG_INFINITY; width];
            out[width - 1] = 0.0;
            return Ok(out);
        }
        let row = self.row(prefix.last_symbol());
        let mut out: Vec<f64> = row.iter().map(|&p| p.ln() / tau).collect();
        let norm = out
            .iter()
            .copied()
            .reduce(crate::cp_design::log_add)
            .unwrap_or(f64::NEG_INFINITY);
        for v in &mut out {
            *v -= norm;
        }
        Ok(out)
    }

    /// Annealed conditional distribution `p_tau(. | prefix)`, renormalized,
    /// over `V` then EOS.
    pub fn next_distribution(&self, prefix: &Sequence, tau: f64) -> Result<Vec<f64>, ModelError> {
        Ok(self
            .next_log_distribution(prefix, tau)?
            .into_iter()
            .map(f64::exp)
            .collect())
    }

    /// Annealed log-probability of a full BOS..EOS sequence.
    pub fn sequence_logprob(&self, symbols: &[Symbol], tau: f64) -> Result<f64, ModelError> {
        Self::check_tau(tau)?;
        self.validate_symbols(symbols)?;
        let mut prefix = Sequence::root();
        let mut logp = 0.0;
        for &sym in &symbols[1..] {
            let dist = self.next_log_distribution(&prefix, tau)?;
            let idx = match sym {
                Symbol::Tok(t) => t as usize,
                Symbol::Eos => self.vocab.size(),
                Symbol::Bos => unreachable!("validated above"),
            };
            logp += dist[idx];
            prefix = prefix.extend(sym, dist[idx]);
        }
        Ok(logp)
    }

    fn validate_symbols(&self, symbols: &[Symbol]) -> Result<(), ModelError> {
        if symbols.first() != Some(&Symbol::Bos) {
            return Err(ModelError::MalformedSequence("must start with BOS".into()));
        }
        if symbols.last() != Some(&Symbol::Eos) {
            return Err(ModelError::MalformedSequence("must end with EOS".into()));
        }
        if symbols.len() < 2 {
            return Err(ModelError::MalformedSequence("too short".into()));
        }
        let body = &symbols[1..symbols.len() - 1];
        if body.len() > self.t_max {
            return Err(ModelError::MalformedSequence(format!(
                "body length {} exceeds bound {}",
                body.len(),
                self.t_max
            )));
        }
        for sym in body {
            match sym {
                Symbol::Tok(t) if (*t as usize) < self.vocab.size() => {}
                _ => {
                    return Err(ModelError::MalformedSequence(format!(
                        "interior symbol {sym} is not a vocabulary token"
                    )))
                }
            }
        }
        Ok(())
    }

    /// Draws one sequence from the annealed model by sequential sampling.
    pub fn ancestral_sample<R: Rng + ?Sized>(&self, tau: f64, rng: &mut R) -> Sequence {
        let mut seq = Sequence::root();
        while !seq.finished {
            let dist = self
                .next_log_distribution(&seq, tau)
                .expect("prefix is unfinished and within bounds");
            let probs: Vec<f64> = dist.iter().map(|&l| l.exp()).collect();
            let idx = sample_categorical(&probs, rng);
            let sym = if idx == self.vocab.size() {
                Symbol::Eos
            } else {
                Symbol::Tok(idx as Token)
            };
            seq = seq.extend(sym, dist[idx]);
        }
        seq
    }

    /// Serializes the model to its JSON file format.
    pub fn to_json(&self) -> String {
        let rows: BTreeMap<String, Vec<f64>> = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, row)| (Self::state_name(i), row.clone()))
            .collect();
        let file = ModelFile {
            vocab_size: self.vocab.size(),
            t_max: self.t_max,
            rows,
        };
        serde_json::to_string_pretty(&file).expect("model file serializes")
    }

    /// Loads a model from the JSON file format, revalidating every row.
    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let file: ModelFile = serde_json::from_str(text)?;
        let expected = file.vocab_size + 1;
        let mut rows = vec![Vec::new(); expected];
        let mut seen = vec![false; expected];
        for (key, row) in file.rows {
            let index = if key == "BOS" {
                0
            } else {
                let t: usize = key
                    .parse()
                    .map_err(|_| ModelError::UnknownState { key: key.clone() })?;
                if t >= file.vocab_size {
                    return Err(ModelError::UnknownState { key });
                }
                1 + t
            };
            rows[index] = row;
            seen[index] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(ModelError::MissingRow {
                state: Self::state_name(missing),
            });
        }
        Self::new(file.vocab_size, file.t_max, rows)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    vocab_size: usize,
    t_max: usize,
    rows: BTreeMap<String, Vec<f64>>,
}

/// Samples an index from an unnormalized nonnegative weight row using a
/// single uniform draw.
pub(crate) fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let total: f64 = probs.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
            if u < p {
                return i;
            }
            u -= p;
        }
    }
    last_positive
}

/// Generates a random model with rows drawn from a symmetric Dirichlet.
///
/// Low concentration gives peaked rows, high concentration flat ones. The
/// BOS row is a Dirichlet over tokens only (EOS entry zero). Deterministic
/// in the seed.
pub fn random_model(
    seed: u64,
    vocab_size: usize,
    t_max: usize,
    concentration: f64,
) -> Result<ToyModel, ModelError> {
    if !(concentration > 0.0) || !concentration.is_finite() {
        return Err(ModelError::InvalidTemperature(concentration));
    }
    let vocab = Vocab::new(vocab_size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gamma = Gamma::new(concentration, 1.0).expect("positive shape");
    let width = vocab.size() + 1;
    let mut rows = Vec::with_capacity(width);
    for state in 0..width {
        let entries = if state == 0 { vocab.size() } else { width };
        let row = loop {
            let mut draw: Vec<f64> = (0..entries).map(|_| gamma.sample(&mut rng)).collect();
            let sum: f64 = draw.iter().sum();
            if sum > 0.0 {
                for v in &mut draw {
                    *v /= sum;
                }
                break draw;
            }
        };
        let mut full = row;
        if state == 0 {
            full.push(0.0);
        }
        rows.push(full);
    }
    ToyModel::new(vocab_size, t_max, rows)
}

/// Keeps the smallest prefix of tokens, by descending probability, whose
/// cumulative raw mass reaches `mass`; the rest get probability zero. Kept
/// probabilities are not renormalized. Ties sort by index.
pub fn truncate_core(dist: &[f64], mass: f64) -> Vec<f64> {
    let mut out = vec![0.0; dist.len()];
    for i in core_support(dist, mass) {
        out[i] = dist[i];
    }
    out
}

/// Indices kept by core-mass truncation, in ascending index order. A mass of
/// 1 (or more) keeps the whole positive support.
pub fn core_support(dist: &[f64], mass: f64) -> Vec<usize> {
    assert!(mass > 0.0, "core mass must be positive");
    let mut order: Vec<usize> = (0..dist.len()).filter(|&i| dist[i] > 0.0).collect();
    if mass >= 1.0 {
        return order;
    }
    order.sort_by(|&a, &b| dist[b].partial_cmp(&dist[a]).unwrap().then(a.cmp(&b)));
    let mut kept = Vec::new();
    let mut cum = 0.0;
    for i in order {
        kept.push(i);
        cum += dist[i];
        if cum >= mass {
            break;
        }
    }
    kept.sort_unstable();
    kept
}
