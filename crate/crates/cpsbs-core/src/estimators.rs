//! Expectation estimators over sequence models.
//!
//! The centerpiece is the Horvitz–Thompson estimator over a sampled-without-
//! replacement set, `sum p(y)/pi(y) f(y)`, which is unbiased when the
//! inclusion probabilities `pi` are exact. Sequence-level inclusion
//! probabilities under CPSBS are intractable, so they are estimated either by
//! naive Monte Carlo over independent runs or by importance sampling over
//! hindsight-conditioned runs; Monte Carlo and sum-and-sample estimators
//! serve as baselines.

use crate::decoders::{beam_search, cpsbs, hindsight_cpsbs, sbs, DecodeError};
use crate::seq_model::{Sequence, Symbol, ToyModel};
use rand::Rng;
use std::collections::HashSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("estimator requires a non-empty sample")]
    EmptySample,
    #[error("sum-and-sample requires a set size of at least 2")]
    SetSizeTooSmall,
    #[error("per-item inputs have mismatched lengths")]
    LengthMismatch,
    #[error("inclusion probability is zero for item {index}")]
    ZeroInclusion { index: usize },
    #[error("all items were dropped; nothing to normalize")]
    NothingRetained,
    #[error("residual sampling failed to leave the deterministic set")]
    ResidualSamplingFailed,
    #[error("inclusion estimation requires at least one sample")]
    NoInclusionSamples,
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

/// A total function from sequences to a real vector, the quantity whose
/// expectation under the model is being estimated.
pub struct Estimand {
    name: String,
    dim: usize,
    f: Box<dyn Fn(&Sequence) -> Vec<f64> + Send + Sync>,
}

impl Estimand {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        f: impl Fn(&Sequence) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        Self { name: name.into(), dim, f }
    }

    /// A one-dimensional estimand.
    pub fn scalar(
        name: impl Into<String>,
        f: impl Fn(&Sequence) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self::new(name, 1, move |y| vec![f(y)])
    }

    pub fn eval(&self, y: &Sequence) -> Vec<f64> {
        let out = (self.f)(y);
        debug_assert_eq!(out.len(), self.dim);
        out
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

impl std::fmt::Debug for Estimand {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Estimand")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .finish()
    }
}

/// Per-item record backing an estimate: sequence probability, estimated
/// inclusion probability, and estimand value.
#[derive(Debug, Clone)]
pub struct ReportItem {
    pub p: f64,
    pub pi_hat: f64,
    pub f: Vec<f64>,
    pub dropped: bool,
}

/// Output of an estimator together with everything needed to recompute it.
#[derive(Debug, Clone)]
pub struct EstimateReport {
    pub value: Vec<f64>,
    pub items: Vec<ReportItem>,
    pub estimator: String,
    pub sample_size: usize,
    pub normalized: bool,
    pub seed: Option<u64>,
}

/// Policy for beam items whose estimated inclusion probability is zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZeroInclusionPolicy {
    /// Fail loudly (the default; smoothing the estimate would bias it
    /// silently).
    Fail,
    /// Drop the item and record the induced bias in the report.
    Drop,
}

fn vec_add(acc: &mut [f64], v: &[f64], scale: f64) {
    for (a, x) in acc.iter_mut().zip(v) {
        *a += scale * x;
    }
}

/// Plain Monte Carlo: the mean of `f` over i.i.d. model samples.
pub fn mc_estimate(samples: &[Sequence], f: &Estimand) -> Result<EstimateReport, EstimatorError> {
    if samples.is_empty() {
        return Err(EstimatorError::EmptySample);
    }
    let mut value = vec![0.0; f.dim()];
    let mut items = Vec::with_capacity(samples.len());
    for y in samples {
        let fy = f.eval(y);
        vec_add(&mut value, &fy, 1.0);
        items.push(ReportItem { p: y.logp.exp(), pi_hat: 1.0, f: fy, dropped: false });
    }
    for v in &mut value {
        *v /= samples.len() as f64;
    }
    Ok(EstimateReport {
        value,
        items,
        estimator: "mc".into(),
        sample_size: samples.len(),
        normalized: false,
        seed: None,
    })
}

/// Largest residual mass treated as exactly exhausted by the deterministic
/// set.
pub const SAS_RESIDUAL_FLOOR: f64 = 1e-12;

const SAS_MAX_REJECTIONS: usize = 1_000_000;

/// Sum-and-sample: an exact sum of `p(y) f(y)` over the `K-1` beam-search
/// sequences plus one residual-weighted sample from the rest of the support.
pub fn sas_estimate<R: Rng + ?Sized>(
    model: &ToyModel,
    k: usize,
    tau: f64,
    f: &Estimand,
    rng: &mut R,
) -> Result<EstimateReport, EstimatorError> {
    if k < 2 {
        return Err(EstimatorError::SetSizeTooSmall);
    }
    let beam = beam_search(model, k - 1, tau)?;
    let mut value = vec![0.0; f.dim()];
    let mut items = Vec::new();
    let mut covered = 0.0;
    let mut seen: HashSet<Vec<Symbol>> = HashSet::new();
    for y in &beam.items {
        let p = y.logp.exp();
        let fy = f.eval(y);
        vec_add(&mut value, &fy, p);
        covered += p;
        seen.insert(y.symbols.clone());
        items.push(ReportItem { p, pi_hat: 1.0, f: fy, dropped: false });
    }
    let residual = 1.0 - covered;
    if residual > SAS_RESIDUAL_FLOOR {
        let mut extra = None;
        for _ in 0..SAS_MAX_REJECTIONS {
            let y = model.ancestral_sample(tau, rng);
            if !seen.contains(&y.symbols) {
                extra = Some(y);
                break;
            }
        }
        let y = extra.ok_or(EstimatorError::ResidualSamplingFailed)?;
        let fy = f.eval(&y);
        vec_add(&mut value, &fy, residual);
        items.push(ReportItem { p: y.logp.exp(), pi_hat: 1.0, f: fy, dropped: false });
    }
    Ok(EstimateReport {
        value,
        items,
        estimator: "sas".into(),
        sample_size: items.len(),
        normalized: false,
        seed: None,
    })
}

/// Horvitz–Thompson estimator over a sampled set.
///
/// Raw: `sum p(y)/pi(y) f(y)`. Normalized: the same divided by the sum of
/// importance weights `sum p(y)/pi(y)`.
pub fn ht_estimate(
    items: &[Sequence],
    pvals: &[f64],
    pihat: &[f64],
    f: &Estimand,
    normalized: bool,
    policy: ZeroInclusionPolicy,
) -> Result<EstimateReport, EstimatorError> {
    if items.len() != pvals.len() || items.len() != pihat.len() {
        return Err(EstimatorError::LengthMismatch);
    }
    if items.is_empty() {
        return Err(EstimatorError::EmptySample);
    }
    let mut value = vec![0.0; f.dim()];
    let mut weight_sum = 0.0;
    let mut report_items = Vec::with_capacity(items.len());
    let mut retained = 0usize;
    for (index, y) in items.iter().enumerate() {
        let fy = f.eval(y);
        if pihat[index] <= 0.0 {
            match policy {
                ZeroInclusionPolicy::Fail => {
                    return Err(EstimatorError::ZeroInclusion { index });
                }
                ZeroInclusionPolicy::Drop => {
                    report_items.push(ReportItem {
                        p: pvals[index],
                        pi_hat: pihat[index],
                        f: fy,
                        dropped: true,
                    });
                    continue;
                }
            }
        }
        let w = pvals[index] / pihat[index];
        vec_add(&mut value, &fy, w);
        weight_sum += w;
        retained += 1;
        report_items.push(ReportItem {
            p: pvals[index],
            pi_hat: pihat[index],
            f: fy,
            dropped: false,
        });
    }
    if retained == 0 {
        return Err(EstimatorError::NothingRetained);
    }
    if normalized {
        for v in &mut value {
            *v /= weight_sum;
        }
    }
    Ok(EstimateReport {
        value,
        items: report_items,
        estimator: if normalized { "ht-normalized".into() } else { "ht".into() },
        sample_size: items.len(),
        normalized,
        seed: None,
    })
}

/// Naive Monte Carlo estimate of the sequence-level inclusion probability:
/// the fraction of `m` independent CPSBS runs whose final beam contains `y`.
pub fn incl_mc<R: Rng + ?Sized>(
    y: &Sequence,
    model: &ToyModel,
    k: usize,
    tau: f64,
    truncation_mass: f64,
    m: usize,
    rng: &mut R,
) -> Result<f64, EstimatorError> {
    if m == 0 {
        return Err(EstimatorError::NoInclusionSamples);
    }
    let mut hits = 0usize;
    for _ in 0..m {
        let (beam, _) = cpsbs(model, k, tau, truncation_mass, rng)?;
        if beam.contains(y) {
            hits += 1;
        }
    }
    Ok(hits as f64 / m as f64)
}

/// Importance-sampled estimate of the sequence-level inclusion probability:
/// the mean over `m` hindsight runs of the per-step inclusion product.
/// Strictly positive whenever no per-step zero occurs.
pub fn incl_is<R: Rng + ?Sized>(
    y: &Sequence,
    model: &ToyModel,
    k: usize,
    tau: f64,
    truncation_mass: f64,
    m: usize,
    rng: &mut R,
) -> Result<f64, EstimatorError> {
    if m == 0 {
        return Err(EstimatorError::NoInclusionSamples);
    }
    let mut total = 0.0;
    for _ in 0..m {
        total += hindsight_cpsbs(model, k, tau, truncation_mass, y, rng)?;
    }
    Ok(total / m as f64)
}

/// Probability that the Gumbel-perturbed value of a sequence with
/// log-probability `logp` exceeds the threshold `kappa`:
/// `1 - exp(-exp(logp - kappa))`. Used as the inclusion weight for stochastic
/// beam search estimates.
pub fn sbs_importance_weight(logp: f64, kappa: f64) -> f64 {
    -(-(logp - kappa).exp()).exp_m1()
}

/// One CPSBS run turned into a Horvitz–Thompson estimate, with per-item
/// inclusion probabilities estimated by `m_incl` hindsight runs each.
#[allow(clippy::too_many_arguments)]
pub fn cpsbs_ht_pipeline<R: Rng + ?Sized>(
    model: &ToyModel,
    k: usize,
    tau: f64,
    truncation_mass: f64,
    f: &Estimand,
    m_incl: usize,
    normalized: bool,
    policy: ZeroInclusionPolicy,
    rng: &mut R,
) -> Result<EstimateReport, EstimatorError> {
    let (beam, _) = cpsbs(model, k, tau, truncation_mass, rng)?;
    let pvals: Vec<f64> = beam.items.iter().map(|y| y.logp.exp()).collect();
    let mut pihat = Vec::with_capacity(beam.items.len());
    for y in &beam.items {
        pihat.push(incl_is(y, model, k, tau, truncation_mass, m_incl, rng)?);
    }
    let mut report = ht_estimate(&beam.items, &pvals, &pihat, f, normalized, policy)?;
    report.estimator = if normalized { "cpsbs-ht-normalized".into() } else { "cpsbs-ht".into() };
    Ok(report)
}

/// One SBS run turned into a Horvitz–Thompson estimate with truncated-Gumbel
/// inclusion weights.
pub fn sbs_ht_pipeline<R: Rng + ?Sized>(
    model: &ToyModel,
    k: usize,
    tau: f64,
    f: &Estimand,
    normalized: bool,
    rng: &mut R,
) -> Result<EstimateReport, EstimatorError> {
    let out = sbs(model, k, tau, rng)?;
    let pvals: Vec<f64> = out.beam.items.iter().map(|y| y.logp.exp()).collect();
    let pihat: Vec<f64> = out
        .beam
        .items
        .iter()
        .map(|y| sbs_importance_weight(y.logp, out.kappa))
        .collect();
    let mut report = ht_estimate(
        &out.beam.items,
        &pvals,
        &pihat,
        f,
        normalized,
        ZeroInclusionPolicy::Fail,
    )?;
    report.estimator = if normalized { "sbs-ht-normalized".into() } else { "sbs-ht".into() };
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seq_model::random_model;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn constant_estimand(c: f64) -> Estimand {
        Estimand::scalar("const", move |_| c)
    }

    fn length_estimand() -> Estimand {
        Estimand::scalar("length", |y| y.body_len() as f64)
    }

    #[test]
    fn mc_estimate_of_constant_is_exact() {
        let m = random_model(1, 2, 2, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let samples: Vec<Sequence> = (0..50).map(|_| m.ancestral_sample(1.0, &mut rng)).collect();
        let report = mc_estimate(&samples, &constant_estimand(1.0)).unwrap();
        assert_eq!(report.value, vec![1.0]);
        assert!(mc_estimate(&[], &constant_estimand(1.0)).is_err());
    }

    #[test]
    fn mc_estimate_of_identical_samples_is_f() {
        let m = random_model(2, 2, 2, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y = m.ancestral_sample(1.0, &mut rng);
        let samples = vec![y.clone(); 9];
        let report = mc_estimate(&samples, &length_estimand()).unwrap();
        assert_eq!(report.value, vec![y.body_len() as f64]);
    }

    #[test]
    fn ht_weights_cancel_for_exact_design() {
        // Single item with pi = p and f = 1: the raw estimate is exactly 1.
        let m = random_model(3, 2, 2, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y = m.ancestral_sample(1.0, &mut rng);
        let p = y.logp.exp();
        let report = ht_estimate(
            &[y],
            &[p],
            &[p],
            &constant_estimand(1.0),
            false,
            ZeroInclusionPolicy::Fail,
        )
        .unwrap();
        assert!((report.value[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalized_ht_of_constant_is_constant() {
        let m = random_model(4, 2, 2, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let items: Vec<Sequence> = (0..4).map(|_| m.ancestral_sample(1.0, &mut rng)).collect();
        let pvals: Vec<f64> = items.iter().map(|y| y.logp.exp()).collect();
        let pihat = vec![0.3, 0.9, 0.04, 0.77];
        let report = ht_estimate(
            &items,
            &pvals,
            &pihat,
            &constant_estimand(2.5),
            true,
            ZeroInclusionPolicy::Fail,
        )
        .unwrap();
        assert!((report.value[0] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn ht_zero_inclusion_policies() {
        let m = random_model(5, 2, 2, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let items: Vec<Sequence> = (0..2).map(|_| m.ancestral_sample(1.0, &mut rng)).collect();
        let pvals: Vec<f64> = items.iter().map(|y| y.logp.exp()).collect();
        let pihat = vec![0.0, 0.5];
        let err = ht_estimate(
            &items,
            &pvals,
            &pihat,
            &length_estimand(),
            false,
            ZeroInclusionPolicy::Fail,
        )
        .unwrap_err();
        assert!(matches!(err, EstimatorError::ZeroInclusion { index: 0 }));
        let report = ht_estimate(
            &items,
            &pvals,
            &pihat,
            &length_estimand(),
            false,
            ZeroInclusionPolicy::Drop,
        )
        .unwrap();
        assert!(report.items[0].dropped);
        assert!(!report.items[1].dropped);
    }

    #[test]
    fn sas_estimate_of_constant_is_exact() {
        let m = random_model(6, 3, 2, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let report = sas_estimate(&m, 3, 1.0, &constant_estimand(4.0), &mut rng).unwrap();
        assert!((report.value[0] - 4.0).abs() < 1e-12);
        assert!(matches!(
            sas_estimate(&m, 1, 1.0, &constant_estimand(1.0), &mut rng),
            Err(EstimatorError::SetSizeTooSmall)
        ));
    }

    #[test]
    fn sas_is_exact_when_beam_exhausts_support_minus_one() {
        // V = 1, t_max = 2: support is {<0 eos>, <0 0 eos>}. Beam of size 1
        // covers one, the residual sample always finds the other.
        let m = crate::seq_model::ToyModel::new(
            1,
            2,
            vec![vec![1.0, 0.0], vec![0.4, 0.6]],
        )
        .unwrap();
        let f = length_estimand();
        let exact = 0.6 + 0.4 * 2.0;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let report = sas_estimate(&m, 2, 1.0, &f, &mut rng).unwrap();
            assert!((report.value[0] - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn sbs_importance_weight_examples() {
        assert!((sbs_importance_weight(0.0, 0.0) - (1.0 - (-1.0f64).exp())).abs() < 1e-12);
        let w = sbs_importance_weight(-2.0, 0.0);
        assert!((w - 0.12658).abs() < 1e-4, "{w}");
        assert_eq!(sbs_importance_weight(0.0, f64::NEG_INFINITY), 1.0);
        assert!(sbs_importance_weight(-700.0, 0.0) > 0.0);
    }

    #[test]
    fn pipeline_is_exact_when_beam_covers_support() {
        let m = random_model(8, 2, 2, 1.0).unwrap();
        let f = length_estimand();
        // Exact expectation by enumeration.
        let mut exact = 0.0;
        let mut stack = vec![Sequence::root()];
        while let Some(prefix) = stack.pop() {
            let dist = m.next_log_distribution(&prefix, 1.0).unwrap();
            for (i, &lc) in dist.iter().enumerate() {
                if lc == f64::NEG_INFINITY {
                    continue;
                }
                if i == m.vocab().size() {
                    let y = prefix.extend(Symbol::Eos, lc);
                    exact += y.logp.exp() * y.body_len() as f64;
                } else {
                    stack.push(prefix.extend(Symbol::Tok(i as u32), lc));
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..5 {
            let report = cpsbs_ht_pipeline(
                &m,
                64,
                1.0,
                1.0,
                &f,
                1,
                false,
                ZeroInclusionPolicy::Fail,
                &mut rng,
            )
            .unwrap();
            assert!((report.value[0] - exact).abs() < 1e-9, "{} vs {exact}", report.value[0]);
        }
    }

    #[test]
    fn incl_estimators_trivial_cases() {
        let m = random_model(9, 2, 2, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let y = m.ancestral_sample(1.0, &mut rng);
        // K at least the support size: always included.
        assert_eq!(incl_mc(&y, &m, 64, 1.0, 1.0, 10, &mut rng).unwrap(), 1.0);
        assert_eq!(incl_is(&y, &m, 64, 1.0, 1.0, 10, &mut rng).unwrap(), 1.0);
        // A sequence outside the support is never seen.
        let outside = Sequence::from_body(&[0, 0, 0, 0, 0]);
        assert_eq!(incl_mc(&outside, &m, 2, 1.0, 1.0, 50, &mut rng).unwrap(), 0.0);
    }

    #[test]
    fn sbs_pipeline_normalized_constant_is_exact() {
        let m = random_model(10, 3, 2, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let report = sbs_ht_pipeline(&m, 3, 1.0, &constant_estimand(7.0), true, &mut rng).unwrap();
        assert!((report.value[0] - 7.0).abs() < 1e-12);
    }
}
