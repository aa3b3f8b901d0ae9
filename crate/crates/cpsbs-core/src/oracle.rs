//! Exhaustive ground-truth computations on tiny instances.
//!
//! Everything here enumerates rather than samples: full sequence supports,
//! exact expectations, exact conditional Poisson subset distributions by
//! brute force (normalized by the enumerated sum, independent of the dynamic
//! program they check), and exact CPSBS beam distributions by recursing over
//! every trajectory of beams. Each operation carries a hard budget and
//! refuses instances that exceed it — a partial oracle would be worse than
//! none.

use crate::cp_design::{log_add, DesignError, SubsetSample, WeightVector};
use crate::decoders::{candidate_set, DecodeError};
use crate::estimators::Estimand;
use crate::seq_model::{ModelError, Sequence, Symbol, Token, ToyModel};
use std::collections::HashMap;
use thiserror::Error;

/// Default cap on the number of enumerated sequences.
pub const DEFAULT_SUPPORT_BUDGET: usize = 100_000;
/// Default cap on the number of enumerated subsets.
pub const DEFAULT_SUBSET_BUDGET: usize = 1_000_000;
/// Default cap on the number of enumerated beam trajectories.
pub const DEFAULT_TRAJECTORY_BUDGET: usize = 2_000_000;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("enumeration exceeds budget of {budget}; refusing")]
    BudgetExceeded { budget: usize },
    #[error("target sequence leaves the candidate sets at step {step}")]
    TargetOutsideSupport { step: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

/// The full support of a model with exact annealed probabilities.
#[derive(Debug, Clone)]
pub struct SupportTable {
    entries: Vec<(Sequence, f64)>,
    index: HashMap<Vec<Symbol>, usize>,
}

impl SupportTable {
    pub fn entries(&self) -> &[(Sequence, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn prob_of(&self, symbols: &[Symbol]) -> Option<f64> {
        self.index.get(symbols).map(|&i| self.entries[i].1)
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|(_, p)| p).sum()
    }
}

/// Enumerates every sequence of the annealed model with its exact
/// probability, using the default budget.
pub fn enumerate_support(model: &ToyModel, tau: f64) -> Result<SupportTable, OracleError> {
    enumerate_support_with_budget(model, tau, DEFAULT_SUPPORT_BUDGET)
}

/// Enumerates the support, refusing once more than `budget` sequences exist.
pub fn enumerate_support_with_budget(
    model: &ToyModel,
    tau: f64,
    budget: usize,
) -> Result<SupportTable, OracleError> {
    let mut entries: Vec<(Sequence, f64)> = Vec::new();
    let mut stack = vec![Sequence::root()];
    while let Some(prefix) = stack.pop() {
        let dist = model.next_log_distribution(&prefix, tau)?;
        for (i, &log_cond) in dist.iter().enumerate() {
            if log_cond == f64::NEG_INFINITY {
                continue;
            }
            let symbol = if i == model.vocab().size() {
                Symbol::Eos
            } else {
                Symbol::Tok(i as Token)
            };
            let child = prefix.extend(symbol, log_cond);
            if child.finished {
                if entries.len() == budget {
                    return Err(OracleError::BudgetExceeded { budget });
                }
                let p = child.logp.exp();
                entries.push((child, p));
            } else {
                stack.push(child);
            }
        }
    }
    entries.sort_by(|a, b| a.0.symbols.cmp(&b.0.symbols));
    let index = entries
        .iter()
        .enumerate()
        .map(|(i, (seq, _))| (seq.symbols.clone(), i))
        .collect();
    Ok(SupportTable { entries, index })
}

/// The exact expectation `sum p(y) f(y)` over an enumerated support.
pub fn exact_expectation(table: &SupportTable, f: &Estimand) -> Vec<f64> {
    let mut value = vec![0.0; f.dim()];
    for (seq, p) in table.entries() {
        for (acc, x) in value.iter_mut().zip(f.eval(seq)) {
            *acc += p * x;
        }
    }
    value
}

fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut result = 1usize;
    for i in 0..k {
        result = result.saturating_mul(n - i) / (i + 1);
    }
    result
}

fn k_subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        if n - start < k - cur.len() {
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Exact conditional Poisson subset distribution by brute force over all
/// `C(N, K)` subsets, normalized by the enumerated sum (no dynamic program
/// involved). Default budget.
pub fn exact_cp_distribution(
    w: &WeightVector,
    k: usize,
) -> Result<Vec<(SubsetSample, f64)>, OracleError> {
    exact_cp_distribution_with_budget(w, k, DEFAULT_SUBSET_BUDGET)
}

pub fn exact_cp_distribution_with_budget(
    w: &WeightVector,
    k: usize,
    budget: usize,
) -> Result<Vec<(SubsetSample, f64)>, OracleError> {
    let n = w.len();
    if k > n {
        return Err(DesignError::SizeExceedsPopulation { k, n }.into());
    }
    if binomial(n, k) > budget {
        return Err(OracleError::BudgetExceeded { budget });
    }
    let shift = w
        .log_values()
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    let shift = if shift == f64::NEG_INFINITY { 0.0 } else { shift };
    let mut log_masses = Vec::new();
    let mut subsets = Vec::new();
    for indices in k_subsets(n, k) {
        let log_mass: f64 = indices.iter().map(|&i| w.log_values()[i] - shift).sum();
        log_masses.push(log_mass);
        subsets.push(SubsetSample::new(indices).expect("indices are distinct"));
    }
    let log_total = log_masses
        .iter()
        .copied()
        .reduce(log_add)
        .unwrap_or(f64::NEG_INFINITY);
    Ok(subsets
        .into_iter()
        .zip(log_masses)
        .map(|(s, lm)| (s, (lm - log_total).exp()))
        .collect())
}

/// Canonical key for a final beam: its sequences' symbols, sorted.
fn beam_key(items: &[Sequence]) -> Vec<Vec<Symbol>> {
    let mut key: Vec<Vec<Symbol>> = items.iter().map(|s| s.symbols.clone()).collect();
    key.sort();
    key
}

/// The exact distribution over final CPSBS beams, as a map from canonical
/// beam to probability.
#[derive(Debug, Clone, Default)]
pub struct BeamDistribution {
    masses: HashMap<Vec<Vec<Symbol>>, f64>,
}

impl BeamDistribution {
    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.masses.values().sum()
    }

    pub fn prob_of(&self, items: &[Sequence]) -> f64 {
        self.masses.get(&beam_key(items)).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Vec<Vec<Symbol>>, f64)> {
        self.masses.iter().map(|(k, &v)| (k, v))
    }

    /// The sequence-level inclusion probability: total mass of final beams
    /// containing `y`.
    pub fn marginal_inclusion(&self, y: &Sequence) -> f64 {
        self.masses
            .iter()
            .filter(|(key, _)| key.iter().any(|s| *s == y.symbols))
            .map(|(_, &p)| p)
            .sum()
    }
}

/// Enumerates every CPSBS trajectory and accumulates the exact distribution
/// over final beams. Tiny instances only; default trajectory budget.
pub fn exact_beam_distribution(
    model: &ToyModel,
    k: usize,
    tau: f64,
    truncation_mass: f64,
) -> Result<BeamDistribution, OracleError> {
    exact_beam_distribution_with_budget(model, k, tau, truncation_mass, DEFAULT_TRAJECTORY_BUDGET)
}

pub fn exact_beam_distribution_with_budget(
    model: &ToyModel,
    k: usize,
    tau: f64,
    truncation_mass: f64,
    budget: usize,
) -> Result<BeamDistribution, OracleError> {
    let mut dist = BeamDistribution::default();
    let mut visited = 0usize;
    let root = vec![Sequence::root()];
    recurse_beams(
        model,
        k,
        tau,
        truncation_mass,
        &root,
        1.0,
        budget,
        &mut visited,
        &mut dist,
    )?;
    Ok(dist)
}

#[allow(clippy::too_many_arguments)]
fn recurse_beams(
    model: &ToyModel,
    k: usize,
    tau: f64,
    truncation_mass: f64,
    beam: &[Sequence],
    prob: f64,
    budget: usize,
    visited: &mut usize,
    dist: &mut BeamDistribution,
) -> Result<(), OracleError> {
    *visited += 1;
    if *visited > budget {
        return Err(OracleError::BudgetExceeded { budget });
    }
    if beam.iter().all(|s| s.finished) {
        *dist.masses.entry(beam_key(beam)).or_insert(0.0) += prob;
        return Ok(());
    }
    let cands = candidate_set(model, beam, tau, truncation_mass)?;
    let k_step = k.min(cands.len());
    if k_step == cands.len() {
        return recurse_beams(
            model,
            k,
            tau,
            truncation_mass,
            &cands.items,
            prob,
            budget,
            visited,
            dist,
        );
    }
    let weights = cands.weights()?;
    for (subset, mass) in exact_cp_distribution_with_budget(&weights, k_step, budget)? {
        if mass == 0.0 {
            continue;
        }
        let next: Vec<Sequence> = subset
            .indices()
            .iter()
            .map(|&i| cands.items[i].clone())
            .collect();
        recurse_beams(
            model,
            k,
            tau,
            truncation_mass,
            &next,
            prob * mass,
            budget,
            visited,
            dist,
        )?;
    }
    Ok(())
}

/// Enumerates the hindsight-forced process for a target sequence: every
/// forced trajectory's probability under the proposal together with its
/// product of per-step inclusion probabilities.
///
/// The expectation of the product over this distribution equals the
/// sequence-level inclusion probability of the target, and the maximum of
/// `product / pi` is the ratio bound of the importance sampler's variance
/// analysis. Inclusion probabilities here are brute-force marginals of the
/// enumerated subset distribution, independent of the adjoint dynamic
/// program.
pub fn exact_hindsight_products(
    model: &ToyModel,
    k: usize,
    tau: f64,
    truncation_mass: f64,
    target: &Sequence,
) -> Result<Vec<(f64, f64)>, OracleError> {
    let mut out = Vec::new();
    let mut visited = 0usize;
    let root = vec![Sequence::root()];
    recurse_hindsight(
        model,
        k,
        tau,
        truncation_mass,
        target,
        &root,
        1,
        1.0,
        1.0,
        DEFAULT_TRAJECTORY_BUDGET,
        &mut visited,
        &mut out,
    )?;
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn recurse_hindsight(
    model: &ToyModel,
    k: usize,
    tau: f64,
    truncation_mass: f64,
    target: &Sequence,
    beam: &[Sequence],
    prob: f64,
    product: f64,
    budget: usize,
    visited: &mut usize,
    out: &mut Vec<(f64, f64)>,
) -> Result<(), OracleError> {
    *visited += 1;
    if *visited > budget {
        return Err(OracleError::BudgetExceeded { budget });
    }
    if beam.iter().all(|s| s.finished) {
        out.push((product, prob));
        return Ok(());
    }
    let step = beam[0].steps().max(
        beam.iter()
            .filter(|s| !s.finished)
            .map(|s| s.steps())
            .max()
            .unwrap_or(0),
    );
    let cands = candidate_set(model, beam, tau, truncation_mass)?;
    let prefix = target.prefix_at_step(step + 1);
    let forced = cands
        .position_of(&prefix)
        .ok_or(OracleError::TargetOutsideSupport { step: step + 1 })?;
    let k_step = k.min(cands.len());
    if k_step == cands.len() {
        return recurse_hindsight(
            model,
            k,
            tau,
            truncation_mass,
            target,
            &cands.items,
            prob,
            product,
            budget,
            visited,
            out,
        );
    }
    let weights = cands.weights()?;
    let subset_dist = exact_cp_distribution_with_budget(&weights, k_step, budget)?;
    let pi_forced: f64 = subset_dist
        .iter()
        .filter(|(s, _)| s.contains(forced))
        .map(|(_, p)| p)
        .sum();
    if pi_forced == 0.0 {
        return Err(OracleError::TargetOutsideSupport { step: step + 1 });
    }
    for (subset, mass) in subset_dist {
        if mass == 0.0 || !subset.contains(forced) {
            continue;
        }
        let next: Vec<Sequence> = subset
            .indices()
            .iter()
            .map(|&i| cands.items[i].clone())
            .collect();
        recurse_hindsight(
            model,
            k,
            tau,
            truncation_mass,
            target,
            &next,
            prob * mass / pi_forced,
            product * pi_forced,
            budget,
            visited,
            out,
        )?;
    }
    Ok(())
}
