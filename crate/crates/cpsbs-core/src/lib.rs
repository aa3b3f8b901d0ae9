//! Conditional Poisson stochastic beam search (CPSBS) over toy sequence models.
//!
//! The crate is organized around the sampling design and the estimators built
//! on top of it:
//!
//! - [`cp_design`]: the conditional Poisson design over a weighted base set —
//!   normalizing constant, exact inclusion probabilities, set sampling (free
//!   and prefix-forced), subset mass, annealing, and odds weights.
//! - [`seq_model`]: locally normalized Markov toy models with bounded length,
//!   annealing, core-mass truncation, ancestral sampling, and a JSON file
//!   format.
//! - [`decoders`]: beam search, CPSBS, hindsight-conditioned CPSBS, Gumbel
//!   top-k stochastic beam search, and diverse beam search.
//! - [`estimators`]: Monte Carlo, sum-and-sample, and Horvitz–Thompson
//!   estimators with inclusion probabilities from naive MC or hindsight
//!   importance sampling.
//! - [`oracle`]: exhaustive ground-truth computations on tiny instances.
//! - [`metrics`]: sentence BLEU, negative log-probability, n-gram diversity.
//! - [`verify`]: the runnable verification suite backing `cpsbs verify`.

pub mod cp_design;
pub mod decoders;
pub mod estimators;
pub mod metrics;
pub mod oracle;
pub mod seq_model;
pub mod verify;

pub use cp_design::{
    anneal_weights, build_table, cp_mass, cp_sample, cp_sample_forced, inclusion_probabilities,
    odds_weights, DesignError, SubsetSample, SymmetricPolyTable, WeightVector,
};
pub use decoders::{
    beam_search, candidate_set, cpsbs, diverse_beam_search, hindsight_cpsbs, sbs, Beam,
    CandidateSet, DecodeError, SbsOutcome, Trajectory, TrajectoryStep,
};
pub use estimators::{
    cpsbs_ht_pipeline, ht_estimate, incl_is, incl_mc, mc_estimate, sas_estimate,
    sbs_ht_pipeline, sbs_importance_weight, Estimand, EstimateReport, EstimatorError, ReportItem,
    ZeroInclusionPolicy,
};
pub use metrics::{bleu_against, neg_logprob, ngram_diversity, sentence_bleu, NGramProfile};
pub use oracle::{
    enumerate_support, exact_beam_distribution, exact_cp_distribution, exact_expectation,
    BeamDistribution, OracleError, SupportTable,
};
pub use seq_model::{truncate_core, ModelError, Sequence, Symbol, Token, ToyModel, Vocab};
