//! Beam-structured decoding strategies over a [`ToyModel`].
//!
//! All strategies share one candidate construction: the one-token extensions
//! of every unfinished beam item (restricted to the core mass kept by
//! truncation) plus every finished item carried as-is, each weighted by the
//! odds transform of its annealed prefix probability. Beam search takes the
//! argmax set; CPSBS samples the set from the conditional Poisson design over
//! the same weights, which recovers beam search as the temperature goes to
//! zero.

use crate::cp_design::{
    build_table, cp_sample_forced, log_odds_from_log_prob, DesignError, WeightVector,
};
use crate::seq_model::{core_support, ModelError, Sequence, Symbol, Token, ToyModel};
use rand::Rng;
use rand_distr::Open01;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("beam width must be at least 1")]
    InvalidBeamWidth,
    #[error("beam width {k} is not divisible by {groups} groups")]
    GroupMismatch { k: usize, groups: usize },
    #[error("target prefix has zero inclusion probability at step {step}")]
    ZeroInclusion { step: usize },
    #[error("malformed target sequence: {0}")]
    MalformedTarget(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Design(#[from] DesignError),
}

/// An ordered collection of at most `K` hypotheses after `step` iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct Beam {
    pub items: Vec<Sequence>,
    pub step: usize,
}

impl Beam {
    fn root() -> Self {
        Self { items: vec![Sequence::root()], step: 0 }
    }

    pub fn all_finished(&self) -> bool {
        self.items.iter().all(|s| s.finished)
    }

    pub fn contains(&self, y: &Sequence) -> bool {
        self.items.iter().any(|s| s == y)
    }
}

/// The base set `B_t` for one step: extensions of the previous beam plus
/// carried finished items, with aligned log odds weights.
#[derive(Debug, Clone)]
pub struct CandidateSet {
    pub items: Vec<Sequence>,
    pub log_weights: Vec<f64>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn weights(&self) -> Result<WeightVector, DesignError> {
        WeightVector::from_log(&self.log_weights)
    }

    pub fn position_of(&self, y: &Sequence) -> Option<usize> {
        self.items.iter().position(|c| c == y)
    }
}

/// One recorded step of a CPSBS run: the candidate set, its weights, and the
/// indices sampled into the beam. Enough to recompute any per-step inclusion
/// probability after the fact.
#[derive(Debug, Clone)]
pub struct TrajectoryStep {
    pub candidates: Vec<Sequence>,
    pub log_weights: Vec<f64>,
    pub selected: Vec<usize>,
}

/// The full sequence of recorded steps of a CPSBS run.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
}

/// Builds the candidate set from a beam: every kept one-token extension of
/// each unfinished item, in (beam order, token order, EOS last), plus each
/// finished item carried unchanged. Extensions dropped by core-mass
/// truncation do not appear.
pub fn candidate_set(
    model: &ToyModel,
    beam_items: &[Sequence],
    tau: f64,
    truncation_mass: f64,
) -> Result<CandidateSet, DecodeError> {
    let mut items = Vec::new();
    let mut log_weights = Vec::new();
    let eos_index = model.vocab().size();
    for item in beam_items {
        if item.finished {
            items.push(item.clone());
            log_weights.push(log_odds_from_log_prob(item.logp));
            continue;
        }
        let log_dist = model.next_log_distribution(item, tau)?;
        // Without truncation the structural support is kept even where the
        // linear view of an extremely annealed conditional underflows.
        let kept: Vec<usize> = if truncation_mass >= 1.0 {
            (0..log_dist.len())
                .filter(|&i| log_dist[i] > f64::NEG_INFINITY)
                .collect()
        } else {
            let linear: Vec<f64> = log_dist.iter().map(|&l| l.exp()).collect();
            core_support(&linear, truncation_mass)
        };
        for idx in kept {
            let symbol = if idx == eos_index {
                Symbol::Eos
            } else {
                Symbol::Tok(idx as Token)
            };
            let child = item.extend(symbol, log_dist[idx]);
            log_weights.push(log_odds_from_log_prob(child.logp));
            items.push(child);
        }
    }
    Ok(CandidateSet { items, log_weights })
}

/// Indices of the `k` best candidates by (weight descending, sequence
/// lexicographically ascending).
fn top_k_indices(cands: &CandidateSet, k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..cands.len()).collect();
    order.sort_by(|&a, &b| {
        cands.log_weights[b]
            .partial_cmp(&cands.log_weights[a])
            .unwrap()
            .then_with(|| cands.items[a].symbols.cmp(&cands.items[b].symbols))
    });
    order.truncate(k.min(cands.len()));
    order
}

/// Deterministic beam search: the iterated argmax of the candidate-set score.
pub fn beam_search(model: &ToyModel, k: usize, tau: f64) -> Result<Beam, DecodeError> {
    if k == 0 {
        return Err(DecodeError::InvalidBeamWidth);
    }
    let mut beam = Beam::root();
    while !beam.all_finished() {
        let cands = candidate_set(model, &beam.items, tau, 1.0)?;
        let chosen = top_k_indices(&cands, k);
        beam = Beam {
            items: chosen.iter().map(|&i| cands.items[i].clone()).collect(),
            step: beam.step + 1,
        };
    }
    Ok(beam)
}

/// Conditional Poisson stochastic beam search.
///
/// At each step the next beam is a conditional Poisson draw of size
/// `min(K, N)` from the candidate set; all returned sequences are distinct.
/// Returns the final beam and the full trajectory.
pub fn cpsbs<R: Rng + ?Sized>(
    model: &ToyModel,
    k: usize,
    tau: f64,
    truncation_mass: f64,
    rng: &mut R,
) -> Result<(Beam, Trajectory), DecodeError> {
    if k == 0 {
        return Err(DecodeError::InvalidBeamWidth);
    }
    let mut beam = Beam::root();
    let mut trajectory = Trajectory::default();
    while !beam.all_finished() {
        let cands = candidate_set(model, &beam.items, tau, truncation_mass)?;
        let k_step = k.min(cands.len());
        let selected: Vec<usize> = if k_step == cands.len() {
            (0..cands.len()).collect()
        } else {
            let table = build_table(&cands.weights()?, k_step)?;
            table.sample(rng).indices().to_vec()
        };
        beam = Beam {
            items: selected.iter().map(|&i| cands.items[i].clone()).collect(),
            step: beam.step + 1,
        };
        trajectory.steps.push(TrajectoryStep {
            candidates: cands.items,
            log_weights: cands.log_weights,
            selected,
        });
    }
    Ok((beam, trajectory))
}

/// Runs the CPSBS recursion with every beam conditioned to contain the
/// prefix of `target`, returning the product of per-step inclusion
/// probabilities — one importance-sampling draw of the estimator for the
/// sequence-level inclusion probability of `target`.
pub fn hindsight_cpsbs<R: Rng + ?Sized>(
    model: &ToyModel,
    k: usize,
    tau: f64,
    truncation_mass: f64,
    target: &Sequence,
    rng: &mut R,
) -> Result<f64, DecodeError> {
    if k == 0 {
        return Err(DecodeError::InvalidBeamWidth);
    }
    if !target.finished {
        return Err(DecodeError::MalformedTarget("target must be finished".into()));
    }
    model
        .sequence_logprob(&target.symbols, tau)
        .map_err(|e| DecodeError::MalformedTarget(e.to_string()))?;

    let mut beam = Beam::root();
    let mut product = 1.0;
    while !beam.all_finished() {
        let step = beam.step + 1;
        let cands = candidate_set(model, &beam.items, tau, truncation_mass)?;
        let prefix = target.prefix_at_step(step);
        let forced = cands
            .position_of(&prefix)
            .ok_or(DecodeError::ZeroInclusion { step })?;
        let k_step = k.min(cands.len());
        let selected: Vec<usize> = if k_step == cands.len() {
            (0..cands.len()).collect()
        } else {
            let weights = cands.weights()?;
            let table = build_table(&weights, k_step)?;
            product *= table.inclusion_probabilities()[forced];
            cp_sample_forced(&weights, k_step, forced, rng)?
                .indices()
                .to_vec()
        };
        beam = Beam {
            items: selected.iter().map(|&i| cands.items[i].clone()).collect(),
            step,
        };
    }
    Ok(product)
}

/// Outcome of a stochastic beam search run: the sampled beam, the Gumbel
/// perturbed log-probability of each item, and the `(K+1)`-th largest
/// perturbed value `kappa` (`-inf` when the support has at most `K`
/// sequences).
#[derive(Debug, Clone)]
pub struct SbsOutcome {
    pub beam: Beam,
    pub perturbed: Vec<f64>,
    pub kappa: f64,
}

fn standard_gumbel<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.sample(Open01);
    -(-u.ln()).ln()
}

/// `-log(exp(-parent) - exp(-sibling_max) + exp(-child))`: shifts a child's
/// Gumbel so the maximum over siblings equals the parent's value.
fn truncated_gumbel(parent: f64, sibling_max: f64, child: f64) -> f64 {
    // v = parent - child + log(1 - exp(child - sibling_max))
    let v = parent - child + (-(child - sibling_max).exp_m1()).ln();
    parent - v.max(0.0) - (-v.abs()).exp().ln_1p()
}

/// Gumbel-top-k stochastic beam search: samples `k` sequences without
/// replacement from the annealed model by top-down truncated-Gumbel
/// propagation on the prefix tree.
///
/// Internally runs with width `k + 1` so that the `(k+1)`-th largest
/// perturbed value over all completions is exact.
pub fn sbs<R: Rng + ?Sized>(
    model: &ToyModel,
    k: usize,
    tau: f64,
    rng: &mut R,
) -> Result<SbsOutcome, DecodeError> {
    if k == 0 {
        return Err(DecodeError::InvalidBeamWidth);
    }
    let width = k + 1;
    let eos_index = model.vocab().size();
    let mut nodes: Vec<(Sequence, f64)> = vec![(Sequence::root(), standard_gumbel(rng))];
    let mut step = 0;
    while nodes.iter().any(|(s, _)| !s.finished) {
        let mut pool: Vec<(Sequence, f64)> = Vec::new();
        for (seq, gumbel) in &nodes {
            if seq.finished {
                pool.push((seq.clone(), *gumbel));
                continue;
            }
            let log_dist = model.next_log_distribution(seq, tau)?;
            let mut children = Vec::new();
            let mut raw = Vec::new();
            for (idx, &log_cond) in log_dist.iter().enumerate() {
                if log_cond == f64::NEG_INFINITY {
                    continue;
                }
                let symbol = if idx == eos_index {
                    Symbol::Eos
                } else {
                    Symbol::Tok(idx as Token)
                };
                let child = seq.extend(symbol, log_cond);
                raw.push(child.logp + standard_gumbel(rng));
                children.push(child);
            }
            let sibling_max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for (child, &g) in children.into_iter().zip(&raw) {
                pool.push((child, truncated_gumbel(*gumbel, sibling_max, g)));
            }
        }
        pool.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap()
                .then_with(|| a.0.symbols.cmp(&b.0.symbols))
        });
        pool.truncate(width);
        nodes = pool;
        step += 1;
    }
    nodes.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap()
            .then_with(|| a.0.symbols.cmp(&b.0.symbols))
    });
    let kappa = if nodes.len() > k { nodes[k].1 } else { f64::NEG_INFINITY };
    nodes.truncate(k);
    let (items, perturbed): (Vec<Sequence>, Vec<f64>) = nodes.into_iter().unzip();
    Ok(SbsOutcome { beam: Beam { items, step }, perturbed, kappa })
}

/// Diverse beam search with a per-position Hamming penalty.
///
/// The `k` beam slots are split into `groups` blocks filled sequentially at
/// every step from the shared candidate pool: within a block, selection is
/// ordinary beam search over the candidates not yet taken, with each
/// candidate's score penalized by `strength` times the number of times its
/// newest token was already chosen by earlier blocks at this position. With
/// `strength = 0` the blocks tile the argmax set and the result is exactly
/// beam search.
pub fn diverse_beam_search(
    model: &ToyModel,
    k: usize,
    strength: f64,
    groups: usize,
) -> Result<Beam, DecodeError> {
    if k == 0 || groups == 0 {
        return Err(DecodeError::InvalidBeamWidth);
    }
    if k % groups != 0 {
        return Err(DecodeError::GroupMismatch { k, groups });
    }
    let quota = k / groups;
    let mut beam = Beam::root();
    while !beam.all_finished() {
        let cands = candidate_set(model, &beam.items, 1.0, 1.0)?;
        let total = k.min(cands.len());
        let mut taken = vec![false; cands.len()];
        let mut chosen: Vec<usize> = Vec::with_capacity(total);
        // Tokens selected by earlier groups at this position.
        let mut used_tokens: Vec<Symbol> = Vec::new();
        for _ in 0..groups {
            if chosen.len() == total {
                break;
            }
            let block = quota.min(total - chosen.len());
            let mut order: Vec<usize> = (0..cands.len()).filter(|&i| !taken[i]).collect();
            let score = |i: usize| {
                let penalty = match new_token(&cands.items[i], &beam.items) {
                    Some(sym) => {
                        strength * used_tokens.iter().filter(|&&u| u == sym).count() as f64
                    }
                    None => 0.0,
                };
                cands.log_weights[i] - penalty
            };
            order.sort_by(|&a, &b| {
                score(b)
                    .partial_cmp(&score(a))
                    .unwrap()
                    .then_with(|| cands.items[a].symbols.cmp(&cands.items[b].symbols))
            });
            let mut block_tokens = Vec::new();
            for &i in order.iter().take(block) {
                taken[i] = true;
                chosen.push(i);
                if let Some(sym) = new_token(&cands.items[i], &beam.items) {
                    block_tokens.push(sym);
                }
            }
            used_tokens.extend(block_tokens);
        }
        beam = Beam {
            items: chosen.iter().map(|&i| cands.items[i].clone()).collect(),
            step: beam.step + 1,
        };
    }
    Ok(beam)
}

/// The symbol a candidate appended this step, or `None` for a carried
/// finished item.
fn new_token(candidate: &Sequence, previous_items: &[Sequence]) -> Option<Symbol> {
    if previous_items.iter().any(|p| p == candidate) {
        None
    } else {
        Some(candidate.last_symbol())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seq_model::random_model;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    fn tiny(seed: u64) -> ToyModel {
        random_model(seed, 3, 3, 1.0).unwrap()
    }

    fn deterministic_model() -> ToyModel {
        ToyModel::new(
            2,
            3,
            vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
        )
        .unwrap()
    }

    /// Exhaustive support with exact annealed probabilities.
    fn enumerate(model: &ToyModel, tau: f64) -> Vec<(Sequence, f64)> {
        let mut out = Vec::new();
        let mut stack = vec![Sequence::root()];
        while let Some(prefix) = stack.pop() {
            let dist = model.next_log_distribution(&prefix, tau).unwrap();
            for (i, &lc) in dist.iter().enumerate() {
                if lc == f64::NEG_INFINITY {
                    continue;
                }
                let sym = if i == model.vocab().size() {
                    Symbol::Eos
                } else {
                    Symbol::Tok(i as u32)
                };
                let child = prefix.extend(sym, lc);
                if child.finished {
                    let p = child.logp.exp();
                    out.push((child, p));
                } else {
                    stack.push(child);
                }
            }
        }
        out
    }

    #[test]
    fn greedy_is_beam_width_one() {
        let m = tiny(3);
        let beam = beam_search(&m, 1, 1.0).unwrap();
        assert_eq!(beam.items.len(), 1);
        // Greedy: follow the argmax of each conditional.
        let mut seq = Sequence::root();
        while !seq.finished {
            let dist = m.next_log_distribution(&seq, 1.0).unwrap();
            let (idx, &lc) = dist
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap();
            let sym = if idx == m.vocab().size() { Symbol::Eos } else { Symbol::Tok(idx as u32) };
            seq = seq.extend(sym, lc);
        }
        assert_eq!(beam.items[0], seq);
    }

    #[test]
    fn deterministic_model_yields_its_support() {
        let m = deterministic_model();
        for k in [1, 2, 5] {
            let beam = beam_search(&m, k, 1.0).unwrap();
            assert_eq!(beam.items.len(), 1);
            assert_eq!(beam.items[0].body(), vec![0, 1]);
        }
    }

    #[test]
    fn beam_search_finds_top_k_on_tiny_models() {
        // On instances where greedy set pruning happens to be exact we must
        // recover the global top-K; flag disagreements by construction.
        let m = tiny(7);
        let mut support = enumerate(&m, 1.0);
        support.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        let beam = beam_search(&m, 2, 1.0).unwrap();
        let beam_probs: Vec<f64> = beam.items.iter().map(|s| s.logp.exp()).collect();
        // Beam search is greedy; verify it matched the enumerated top-2 here.
        assert!((beam_probs[0] - support[0].1).abs() < 1e-12);
        assert!((beam_probs[1] - support[1].1).abs() < 1e-12);
    }

    #[test]
    fn cpsbs_returns_distinct_sequences_and_compatible_trajectories() {
        let m = tiny(11);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let (beam, traj) = cpsbs(&m, 3, 0.7, 0.99, &mut rng).unwrap();
            assert!(beam.all_finished());
            for i in 0..beam.items.len() {
                for j in (i + 1)..beam.items.len() {
                    assert_ne!(beam.items[i], beam.items[j]);
                }
            }
            // Every selected index points into the recorded candidate set,
            // and consecutive beams chain.
            let mut prev: Vec<Sequence> = vec![Sequence::root()];
            for step in &traj.steps {
                for &i in &step.selected {
                    assert!(i < step.candidates.len());
                }
                for cand in &step.candidates {
                    let parent_len = cand.symbols.len() - 1;
                    assert!(prev.iter().any(|p| {
                        p.symbols == cand.symbols
                            || p.symbols[..] == cand.symbols[..parent_len]
                    }));
                }
                prev = step.selected.iter().map(|&i| step.candidates[i].clone()).collect();
            }
        }
    }

    #[test]
    fn cpsbs_degenerates_to_beam_search_at_low_temperature() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for seed in 0..20 {
            let m = tiny(seed);
            let reference = beam_search(&m, 2, 1e-4).unwrap();
            let (beam, _) = cpsbs(&m, 2, 1e-4, 1.0, &mut rng).unwrap();
            let mut got: Vec<_> = beam.items.clone();
            let mut want: Vec<_> = reference.items.clone();
            got.sort();
            want.sort();
            assert_eq!(got, want, "seed {seed}");
        }
    }

    #[test]
    fn cpsbs_with_large_k_returns_full_support() {
        let m = random_model(5, 2, 2, 1.0).unwrap();
        let support = enumerate(&m, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (beam, _) = cpsbs(&m, 64, 1.0, 1.0, &mut rng).unwrap();
        assert_eq!(beam.items.len(), support.len());
    }

    #[test]
    fn finished_hypotheses_are_stable_across_steps() {
        let m = tiny(13);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (_, traj) = cpsbs(&m, 3, 1.0, 1.0, &mut rng).unwrap();
        let mut finished: HashMap<Vec<Symbol>, f64> = HashMap::new();
        for step in &traj.steps {
            for &i in &step.selected {
                let item = &step.candidates[i];
                if item.finished {
                    let prev = finished.insert(item.symbols.clone(), item.logp);
                    if let Some(lp) = prev {
                        assert_eq!(lp, item.logp);
                    }
                }
            }
        }
    }

    #[test]
    fn hindsight_single_step_model_has_zero_variance() {
        // t_max = 1: step 1 picks the token, step 2 is forced EOS for all.
        let m = random_model(17, 3, 1, 1.0).unwrap();
        let target = {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            m.ancestral_sample(1.0, &mut rng)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let first = hindsight_cpsbs(&m, 2, 1.0, 1.0, &target, &mut rng).unwrap();
        for _ in 0..20 {
            let next = hindsight_cpsbs(&m, 2, 1.0, 1.0, &target, &mut rng).unwrap();
            assert_eq!(first, next);
        }
        // And it equals the step-1 inclusion probability.
        let cands = candidate_set(&m, &[Sequence::root()], 1.0, 1.0).unwrap();
        let pi = build_table(&cands.weights().unwrap(), 2)
            .unwrap()
            .inclusion_probabilities();
        let idx = cands.position_of(&target.prefix_at_step(1)).unwrap();
        assert!((first - pi[idx]).abs() < 1e-12);
    }

    #[test]
    fn hindsight_with_huge_k_returns_one() {
        let m = random_model(19, 2, 2, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let target = m.ancestral_sample(1.0, &mut rng);
        let p = hindsight_cpsbs(&m, 64, 1.0, 1.0, &target, &mut rng).unwrap();
        assert_eq!(p, 1.0);
    }

    #[test]
    fn hindsight_rejects_truncated_away_targets() {
        // A model whose tail token survives only without truncation.
        let m = ToyModel::new(
            2,
            1,
            vec![vec![0.995, 0.005, 0.0], vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 1.0]],
        )
        .unwrap();
        let target = Sequence::from_body(&[1]);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let err = hindsight_cpsbs(&m, 1, 1.0, 0.9, &target, &mut rng).unwrap_err();
        assert!(matches!(err, DecodeError::ZeroInclusion { step: 1 }));
        assert!(hindsight_cpsbs(&m, 1, 1.0, 1.0, &target, &mut rng).is_ok());
    }

    #[test]
    fn sbs_on_deterministic_model_is_deterministic() {
        let m = deterministic_model();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let out = sbs(&m, 1, 1.0, &mut rng).unwrap();
        assert_eq!(out.beam.items.len(), 1);
        assert_eq!(out.beam.items[0].body(), vec![0, 1]);
        assert_eq!(out.kappa, f64::NEG_INFINITY);
    }

    #[test]
    fn sbs_with_large_k_returns_full_support_without_duplicates() {
        let m = random_model(21, 2, 2, 1.0).unwrap();
        let support = enumerate(&m, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..20 {
            let out = sbs(&m, support.len(), 1.0, &mut rng).unwrap();
            assert_eq!(out.beam.items.len(), support.len());
            let mut seen = std::collections::HashSet::new();
            for item in &out.beam.items {
                assert!(seen.insert(item.symbols.clone()));
            }
            assert_eq!(out.kappa, f64::NEG_INFINITY);
        }
    }

    #[test]
    fn sbs_top_one_matches_model_marginals() {
        let m = random_model(23, 3, 2, 1.0).unwrap();
        let support = enumerate(&m, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 30_000;
        let mut counts: HashMap<Vec<Symbol>, usize> = HashMap::new();
        for _ in 0..draws {
            let out = sbs(&m, 1, 1.0, &mut rng).unwrap();
            *counts.entry(out.beam.items[0].symbols.clone()).or_default() += 1;
        }
        let mut tv = 0.0;
        for (seq, p) in &support {
            let freq = counts.get(&seq.symbols).copied().unwrap_or(0) as f64 / draws as f64;
            tv += (p - freq).abs();
        }
        assert!(tv / 2.0 < 0.02, "tv {}", tv / 2.0);
    }

    #[test]
    fn diverse_beam_search_equals_beam_search_without_penalty() {
        for seed in [1u64, 4, 9] {
            let m = tiny(seed);
            let plain = beam_search(&m, 4, 1.0).unwrap();
            let diverse = diverse_beam_search(&m, 4, 0.0, 2).unwrap();
            assert_eq!(plain.items, diverse.items, "seed {seed}");
            let single_group = diverse_beam_search(&m, 4, 3.5, 1).unwrap();
            assert_eq!(plain.items, single_group.items);
        }
    }

    #[test]
    fn diverse_beam_search_penalty_forces_distinct_first_tokens() {
        let m = random_model(31, 3, 2, 1.0).unwrap();
        let beam = diverse_beam_search(&m, 2, 50.0, 2).unwrap();
        let first: Vec<Symbol> = beam.items.iter().map(|s| s.symbols[1]).collect();
        assert_ne!(first[0], first[1]);
    }

    #[test]
    fn diverse_beam_search_validates_group_divisibility() {
        let m = tiny(1);
        assert!(matches!(
            diverse_beam_search(&m, 5, 1.0, 2),
            Err(DecodeError::GroupMismatch { k: 5, groups: 2 })
        ));
    }
}
