//! Conditional Poisson sampling design over a weighted finite base set.
//!
//! A conditional Poisson (CP) design assigns a size-`K` subset `Y` of a base
//! set of `N` weighted items probability proportional to the product of the
//! member weights. The normalizing constant is the `K`-th elementary symmetric
//! polynomial of the weights, computed by a weighted Pascal-triangle dynamic
//! program in `O(NK)`; inclusion probabilities come from the reverse-sweep
//! adjoint of the same program.
//!
//! Weights derived from sequence probabilities span hundreds of orders of
//! magnitude once annealed, so all internal state is kept in log space. The
//! design itself is invariant to rescaling (the size constraint cancels any
//! common factor), and the common shift is recorded so the absolute
//! normalizing constant can still be reported.

use rand::Rng;
use thiserror::Error;

/// Errors from constructing or sampling a conditional Poisson design.
#[derive(Debug, Error, PartialEq)]
pub enum DesignError {
    /// Requested sample size exceeds the number of items.
    #[error("sample size {k} exceeds population size {n}")]
    SizeExceedsPopulation { k: usize, n: usize },
    /// Fewer strictly positive weights than the sample size; no size-`k`
    /// subset has positive mass.
    #[error("degenerate design: {positive} positive weights but sample size {k}")]
    DegenerateDesign { positive: usize, k: usize },
    /// Conditioning on membership of an item that can never be sampled.
    #[error("cannot condition on inclusion of item {index}")]
    ImpossibleConditioning { index: usize },
    /// A weight was NaN, negative, or +inf.
    #[error("invalid weight at index {index}")]
    InvalidWeight { index: usize },
    /// Annealing temperature must be a positive finite real.
    #[error("invalid annealing temperature {0}")]
    InvalidTemperature(f64),
    /// Subset index outside the base set.
    #[error("index {index} out of range for population of {n}")]
    IndexOutOfRange { index: usize, n: usize },
    /// Subset indices must be distinct.
    #[error("duplicate index {index} in subset")]
    DuplicateIndex { index: usize },
}

/// `log(exp(a) + exp(b))` without leaving log space.
pub(crate) fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Design weights `w_1..w_N`, stored as logs (`-inf` encodes a zero weight).
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    log_w: Vec<f64>,
}

impl WeightVector {
    /// Builds a weight vector from nonnegative finite weights.
    pub fn new(weights: &[f64]) -> Result<Self, DesignError> {
        for (index, &w) in weights.iter().enumerate() {
            if !w.is_finite() || w < 0.0 {
                return Err(DesignError::InvalidWeight { index });
            }
        }
        Ok(Self {
            log_w: weights.iter().map(|&w| w.ln()).collect(),
        })
    }

    /// Builds a weight vector directly from log weights (`-inf` allowed).
    pub fn from_log(log_weights: &[f64]) -> Result<Self, DesignError> {
        for (index, &lw) in log_weights.iter().enumerate() {
            if lw.is_nan() || lw == f64::INFINITY {
                return Err(DesignError::InvalidWeight { index });
            }
        }
        Ok(Self {
            log_w: log_weights.to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.log_w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_w.is_empty()
    }

    pub fn log_values(&self) -> &[f64] {
        &self.log_w
    }

    /// Linear-space view of the weights. May overflow to `inf` for extreme
    /// log weights; the design operations never take this path.
    pub fn values(&self) -> Vec<f64> {
        self.log_w.iter().map(|lw| lw.exp()).collect()
    }

    /// Number of strictly positive weights.
    pub fn positive_count(&self) -> usize {
        self.log_w
            .iter()
            .filter(|&&lw| lw > f64::NEG_INFINITY)
            .count()
    }
}

/// A sorted size-`K` subset of `{0, .., N-1}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SubsetSample {
    indices: Vec<usize>,
}

impl SubsetSample {
    /// Builds a subset from indices, sorting them; duplicates are rejected.
    pub fn new(mut indices: Vec<usize>) -> Result<Self, DesignError> {
        indices.sort_unstable();
        for pair in indices.windows(2) {
            if pair[0] == pair[1] {
                return Err(DesignError::DuplicateIndex { index: pair[0] });
            }
        }
        Ok(Self { indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.indices.binary_search(&index).is_ok()
    }
}

/// The `(N+1) x (K+1)` table `W(n, k)` of elementary symmetric polynomials of
/// the first `n` weights, with `Z = W(N, K)`.
///
/// Entries satisfy `W(n, 0) = 1`, `W(n, k) = 0` for `k > n`, and
/// `W(n, k) = W(n-1, k) + w_n * W(n-1, k-1)` otherwise. Weights are shifted by
/// their maximum log before the table is built; `scale` records the shift so
/// the absolute normalizing constant can be recovered.
#[derive(Debug, Clone)]
pub struct SymmetricPolyTable {
    /// Shifted log weights (max is 0).
    log_w: Vec<f64>,
    /// Log of the common rescaling factor applied to the weights.
    scale: f64,
    k: usize,
    /// Flattened `(n+1) x (k+1)` table of log values.
    log_table: Vec<f64>,
}

impl SymmetricPolyTable {
    pub fn population_size(&self) -> usize {
        self.log_w.len()
    }

    pub fn sample_size(&self) -> usize {
        self.k
    }

    /// Log of the common rescaling factor applied to the weights.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    fn idx(&self, n: usize, k: usize) -> usize {
        n * (self.k + 1) + k
    }

    /// `log W(n, k)` over the rescaled weights (`-inf` encodes zero).
    pub fn log_weight_sum(&self, n: usize, k: usize) -> f64 {
        self.log_table[self.idx(n, k)]
    }

    /// `W(n, k)` over the rescaled weights.
    pub fn weight_sum(&self, n: usize, k: usize) -> f64 {
        self.log_weight_sum(n, k).exp()
    }

    /// Log of the normalizing constant in the original weight scale.
    pub fn log_normalizing_constant(&self) -> f64 {
        self.log_weight_sum(self.population_size(), self.k) + self.k as f64 * self.scale
    }

    /// The normalizing constant `Z` in the original weight scale. May
    /// overflow for extreme weights; prefer [`Self::log_normalizing_constant`]
    /// when in doubt.
    pub fn normalizing_constant(&self) -> f64 {
        self.log_normalizing_constant().exp()
    }

    /// Draws a size-`K` subset with probability proportional to the product
    /// of its weights.
    ///
    /// Items are visited from index `N-1` down to `0`; item `n` joins with
    /// probability `w_n * W(n-1, k-1) / W(n, k)` where `k` counts remaining
    /// slots. One uniform is consumed per visited item, and the loop stops as
    /// soon as the subset is full, so output is a deterministic function of
    /// the seed.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SubsetSample {
        let n = self.population_size();
        let mut chosen = Vec::with_capacity(self.k);
        let mut remaining = self.k;
        for item in (1..=n).rev() {
            if remaining == 0 {
                break;
            }
            let p = if self.log_w[item - 1] == f64::NEG_INFINITY {
                0.0
            } else {
                let log_state = self.log_weight_sum(item, remaining);
                debug_assert!(log_state > f64::NEG_INFINITY, "unreachable sampler state");
                (self.log_w[item - 1] + self.log_weight_sum(item - 1, remaining - 1) - log_state)
                    .exp()
            };
            if rng.random::<f64>() < p {
                chosen.push(item - 1);
                remaining -= 1;
            }
        }
        chosen.reverse();
        debug_assert_eq!(chosen.len(), self.k);
        SubsetSample { indices: chosen }
    }

    /// Exact inclusion probabilities `pi_n = w_n/Z * dZ/dw_n`, from the
    /// reverse-sweep adjoint of the table recurrence in `O(NK)`.
    pub fn inclusion_probabilities(&self) -> Vec<f64> {
        let log_dw = self.log_adjoints();
        let log_z = self.log_weight_sum(self.population_size(), self.k);
        self.log_w
            .iter()
            .zip(&log_dw)
            .map(|(&lw, &ldw)| (lw + ldw - log_z).exp().min(1.0))
            .collect()
    }

    /// Partial derivatives `dZ/dw_n` of the normalizing constant with respect
    /// to each original-scale weight.
    pub fn normalizer_gradient(&self) -> Vec<f64> {
        let log_dw = self.log_adjoints();
        log_dw
            .iter()
            .map(|&ldw| (ldw + (self.k as f64 - 1.0) * self.scale).exp())
            .collect()
    }

    /// Log adjoints `log dZ/dw_n` over the rescaled weights.
    fn log_adjoints(&self) -> Vec<f64> {
        let n = self.population_size();
        let k = self.k;
        let mut log_d_table = vec![f64::NEG_INFINITY; (n + 1) * (k + 1)];
        let mut log_dw = vec![f64::NEG_INFINITY; n];
        log_d_table[self.idx(n, k)] = 0.0;
        for item in (1..=n).rev() {
            for slots in (1..=k).rev() {
                let out = log_d_table[self.idx(item, slots)];
                if out == f64::NEG_INFINITY {
                    continue;
                }
                log_dw[item - 1] = log_add(
                    log_dw[item - 1],
                    out + self.log_weight_sum(item - 1, slots - 1),
                );
                let below = self.idx(item - 1, slots - 1);
                log_d_table[below] = log_add(log_d_table[below], out + self.log_w[item - 1]);
                let carry = self.idx(item - 1, slots);
                log_d_table[carry] = log_add(log_d_table[carry], out);
            }
        }
        log_dw
    }

    /// Probability of a specific subset: `prod w_n / Z` for size-`K` subsets,
    /// zero otherwise.
    pub fn mass(&self, subset: &SubsetSample) -> Result<f64, DesignError> {
        let n = self.population_size();
        for &index in subset.indices() {
            if index >= n {
                return Err(DesignError::IndexOutOfRange { index, n });
            }
        }
        if subset.len() != self.k {
            return Ok(0.0);
        }
        let log_prod: f64 = subset.indices().iter().map(|&i| self.log_w[i]).sum();
        Ok((log_prod - self.log_weight_sum(n, self.k)).exp())
    }
}

/// Builds the symmetric-polynomial table for weights `w` and sample size `k`.
pub fn build_table(w: &WeightVector, k: usize) -> Result<SymmetricPolyTable, DesignError> {
    let n = w.len();
    if k > n {
        return Err(DesignError::SizeExceedsPopulation { k, n });
    }
    let positive = w.positive_count();
    if positive < k {
        return Err(DesignError::DegenerateDesign { positive, k });
    }
    let scale = w
        .log_values()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let scale = if scale == f64::NEG_INFINITY { 0.0 } else { scale };
    let log_w: Vec<f64> = w.log_values().iter().map(|&lw| lw - scale).collect();

    let mut log_table = vec![f64::NEG_INFINITY; (n + 1) * (k + 1)];
    for item in 0..=n {
        log_table[item * (k + 1)] = 0.0;
    }
    for item in 1..=n {
        for slots in 1..=k {
            let skip = log_table[(item - 1) * (k + 1) + slots];
            let take = log_w[item - 1] + log_table[(item - 1) * (k + 1) + slots - 1];
            log_table[item * (k + 1) + slots] = log_add(skip, take);
        }
    }
    Ok(SymmetricPolyTable {
        log_w,
        scale,
        k,
        log_table,
    })
}

/// Draws a size-`k` subset from the CP design over `w`.
pub fn cp_sample<R: Rng + ?Sized>(
    w: &WeightVector,
    k: usize,
    rng: &mut R,
) -> Result<SubsetSample, DesignError> {
    Ok(build_table(w, k)?.sample(rng))
}

/// Draws from the CP design conditioned on membership of `forced`.
///
/// Conditioning a CP design on one member leaves a CP design of size `k-1`
/// over the remaining items, so the forced item joins deterministically and
/// the rest are sampled from the reduced design.
pub fn cp_sample_forced<R: Rng + ?Sized>(
    w: &WeightVector,
    k: usize,
    forced: usize,
    rng: &mut R,
) -> Result<SubsetSample, DesignError> {
    let n = w.len();
    if forced >= n {
        return Err(DesignError::IndexOutOfRange { index: forced, n });
    }
    if k == 0 || w.log_values()[forced] == f64::NEG_INFINITY {
        return Err(DesignError::ImpossibleConditioning { index: forced });
    }
    if k > n {
        return Err(DesignError::SizeExceedsPopulation { k, n });
    }
    let mut reduced: Vec<f64> = Vec::with_capacity(n - 1);
    reduced.extend_from_slice(&w.log_values()[..forced]);
    reduced.extend_from_slice(&w.log_values()[forced + 1..]);
    let rest = cp_sample(&WeightVector { log_w: reduced }, k - 1, rng)?;
    let mut indices: Vec<usize> = rest
        .indices()
        .iter()
        .map(|&i| if i >= forced { i + 1 } else { i })
        .collect();
    indices.push(forced);
    indices.sort_unstable();
    Ok(SubsetSample { indices })
}

/// Exact inclusion probabilities of the CP design over `w` with size `k`.
pub fn inclusion_probabilities(w: &WeightVector, k: usize) -> Result<Vec<f64>, DesignError> {
    Ok(build_table(w, k)?.inclusion_probabilities())
}

/// Probability of subset `y` under the CP design over `w` with size `k`.
pub fn cp_mass(w: &WeightVector, k: usize, y: &SubsetSample) -> Result<f64, DesignError> {
    build_table(w, k)?.mass(y)
}

/// Raises every weight to the power `1/tau`. As `tau -> 0` with distinct
/// weights the design concentrates on the top-`k` set.
pub fn anneal_weights(w: &WeightVector, tau: f64) -> Result<WeightVector, DesignError> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(DesignError::InvalidTemperature(tau));
    }
    Ok(WeightVector {
        log_w: w.log_values().iter().map(|&lw| lw / tau).collect(),
    })
}

/// Clamp applied to probabilities before the odds transform; `w = p/(1-p)` is
/// singular at `p = 1`.
pub const ODDS_CLAMP_EPSILON: f64 = 1e-9;

/// Odds weights `w_n = p_n / (1 - p_n)` with `p` clamped to `1 - 1e-9`.
pub fn odds_weights(p: &[f64]) -> Result<WeightVector, DesignError> {
    for (index, &prob) in p.iter().enumerate() {
        if !(0.0..=1.0).contains(&prob) {
            return Err(DesignError::InvalidWeight { index });
        }
    }
    Ok(WeightVector {
        log_w: p.iter().map(|&prob| log_odds_from_log_prob(prob.ln())).collect(),
    })
}

/// Log-space odds transform: `log(p / (1-p))` from `log p`, with the same
/// clamp as [`odds_weights`]. Stable for probabilities as small as sequence
/// products get.
pub fn log_odds_from_log_prob(log_p: f64) -> f64 {
    if log_p == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let cap = (1.0 - ODDS_CLAMP_EPSILON).ln();
    let lp = log_p.min(cap);
    // log(1 - p) = log(-expm1(log p))
    lp - (-lp.exp_m1()).ln()
}
