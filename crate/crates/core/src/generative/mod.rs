//! Generative models for design inputs and synthetic trials.
//!
//! Two model families are supported: a gamma-frailty / Gumbel-Hougaard
//! semi-competing risks model ([`composite`]) and a proportional-odds
//! ordinal model with normal cluster intercepts ([`ordinal`]).
//!
//! Random streams: every randomized routine takes a master seed and derives
//! independent `ChaCha8Rng` streams with [`stream`]: the generator is seeded
//! from the master seed and `set_stream(purpose << 48 | index)` selects the
//! stream for chunk `index` of task `purpose`. Work is chunked independently
//! of the thread count and reduced in chunk order, so results are
//! bit-identical across thread counts.

pub mod composite;
pub mod ordinal;
pub mod quadrature;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Arm, TrialDataset};
use crate::design::{CompositeProbs, DesignInputs, Estimand, Sided, TestKind};
use crate::error::{Error, Result};

pub use composite::{hospitalization_tier_prob, mortality_tier_prob, CompositeGenSpec, SubjectRates};
pub use ordinal::{calibrate_cutpoints, OrdinalGenSpec};

pub(crate) const PURPOSE_TRIAL: u64 = 1;
pub(crate) const PURPOSE_PAIRS: u64 = 2;
pub(crate) const PURPOSE_POOL: u64 = 3;
pub(crate) const PURPOSE_ICC: u64 = 4;

/// Deterministic sub-stream of a master seed.
pub fn stream(seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((purpose << 48) | (index & ((1 << 48) - 1)));
    rng
}

/// Between-subject Kendall tau induced by a Gamma(nu, nu) shared frailty.
pub fn tau_from_frailty(nu: f64) -> Result<f64> {
    if !(nu > 0.0) {
        return Err(Error::param("nu", format!("must be positive, got {nu}")));
    }
    Ok(1.0 / (2.0 * nu + 1.0))
}

pub fn frailty_from_tau(tau: f64) -> Result<f64> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::param("tau", format!("frailty tau must lie in (0,1), got {tau}")));
    }
    Ok((1.0 / tau - 1.0) / 2.0)
}

/// Within-subject Kendall tau of the Gumbel-Hougaard copula.
pub fn tau_from_copula(phi: f64) -> Result<f64> {
    if !(phi >= 1.0) || !phi.is_finite() {
        return Err(Error::param("phi", format!("must be >= 1, got {phi}")));
    }
    Ok(1.0 - 1.0 / phi)
}

pub fn copula_from_tau(tau: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&tau) {
        return Err(Error::param("tau", format!("copula tau must lie in [0,1), got {tau}")));
    }
    Ok(1.0 / (1.0 - tau))
}

/// Distribution of cluster sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClusterSize {
    Fixed { size: u32 },
    /// Discrete uniform on `min..=max`.
    Uniform { min: u32, max: u32 },
    /// Discrete uniform centred at `round(mean)` whose half-width best
    /// matches the coefficient of variation `cv`.
    Matched { mean: f64, cv: f64 },
}

impl ClusterSize {
    /// Inclusive support.
    pub fn support(&self) -> Result<(u32, u32)> {
        let (lo, hi) = match *self {
            ClusterSize::Fixed { size } => (size, size),
            ClusterSize::Uniform { min, max } => (min, max),
            ClusterSize::Matched { mean, cv } => {
                if !(mean >= 1.0 && cv >= 0.0) {
                    return Err(Error::param("cluster_size", format!("needs mean >= 1 and cv >= 0, got ({mean}, {cv})")));
                }
                let center = mean.round();
                let var = (cv * mean).powi(2);
                let h = (((12.0 * var + 1.0).sqrt() - 1.0) / 2.0).round();
                if center - h < 1.0 {
                    return Err(Error::param(
                        "cluster_size",
                        format!("cv = {cv} too large for mean {mean}: support would include sizes below 1"),
                    ));
                }
                ((center - h) as u32, (center + h) as u32)
            }
        };
        if lo < 1 || hi < lo {
            return Err(Error::param("cluster_size", format!("invalid support {lo}..={hi}")));
        }
        Ok((lo, hi))
    }

    pub fn mean(&self) -> Result<f64> {
        let (lo, hi) = self.support()?;
        Ok((lo as f64 + hi as f64) / 2.0)
    }

    /// Coefficient of variation of the resolved distribution.
    pub fn cv(&self) -> Result<f64> {
        let (lo, hi) = self.support()?;
        let w = (hi - lo + 1) as f64;
        Ok(((w * w - 1.0) / 12.0).sqrt() / self.mean()?)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<u32> {
        let (lo, hi) = self.support()?;
        Ok(rng.random_range(lo..=hi))
    }
}

/// Complete randomization: `round(q M)` treated clusters (at least one per
/// arm), placed uniformly at random.
pub fn randomize_clusters<R: Rng + ?Sized>(rng: &mut R, m: usize, q: f64) -> Vec<Arm> {
    let m1 = ((q * m as f64).round() as usize).clamp(1, m - 1);
    let mut arms: Vec<Arm> = (0..m).map(|i| if i < m1 { Arm::Treated } else { Arm::Control }).collect();
    arms.shuffle(rng);
    arms
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum GenerativeSpec {
    Composite(CompositeGenSpec),
    Ordinal(OrdinalGenSpec),
}

impl GenerativeSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            GenerativeSpec::Composite(s) => s.validate(),
            GenerativeSpec::Ordinal(s) => s.validate().map(|_| ()),
        }
    }

    pub fn q(&self) -> f64 {
        match self {
            GenerativeSpec::Composite(s) => s.q,
            GenerativeSpec::Ordinal(s) => s.q,
        }
    }

    pub fn cluster_size(&self) -> &ClusterSize {
        match self {
            GenerativeSpec::Composite(s) => &s.cluster_size,
            GenerativeSpec::Ordinal(s) => &s.cluster_size,
        }
    }

    pub fn with_cluster_size(&self, cs: ClusterSize) -> Self {
        let mut out = self.clone();
        match &mut out {
            GenerativeSpec::Composite(s) => s.cluster_size = cs,
            GenerativeSpec::Ordinal(s) => s.cluster_size = cs,
        }
        out
    }

    pub fn model_name(&self) -> &'static str {
        match self {
            GenerativeSpec::Composite(_) => "composite",
            GenerativeSpec::Ordinal(_) => "ordinal",
        }
    }
}

/// Simulate one trial with `m` clusters.
pub fn sample_trial(spec: &GenerativeSpec, m: usize, seed: u64) -> Result<TrialDataset> {
    let mut rng = stream(seed, PURPOSE_TRIAL, 0);
    sample_trial_with(spec, m, &mut rng)
}

pub fn sample_trial_with<R: Rng + ?Sized>(spec: &GenerativeSpec, m: usize, rng: &mut R) -> Result<TrialDataset> {
    if m < 2 {
        return Err(Error::param("m", format!("must be >= 2, got {m}")));
    }
    match spec {
        GenerativeSpec::Composite(s) => s.sample_trial(m, rng),
        GenerativeSpec::Ordinal(s) => s.sample_trial(m, rng),
    }
}

/// Monte Carlo controls for [`estimate_design_inputs`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimationOptions {
    /// Frailty (or intercept) pair draws B for the cross-arm probabilities.
    pub pair_draws: usize,
    /// Independent subjects in the pooled sample used for the triplet
    /// probabilities and as opponents for the score functions.
    pub pool_size: usize,
    pub icc_clusters: usize,
    pub icc_cluster_size: usize,
    /// Batches for batch-means standard errors.
    pub batches: usize,
    pub quad_tol: f64,
    pub seed: u64,
}

impl Default for EstimationOptions {
    fn default() -> Self {
        EstimationOptions {
            pair_draws: 100_000,
            pool_size: 10_000,
            icc_clusters: 2_000,
            icc_cluster_size: 50,
            batches: 10,
            quad_tol: 1e-7,
            seed: 1,
        }
    }
}

impl EstimationOptions {
    /// The large-sample preset.
    pub fn high_precision(seed: u64) -> Self {
        EstimationOptions {
            pair_draws: 1_000_000,
            pool_size: 40_000,
            icc_clusters: 10_000,
            icc_cluster_size: 50,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.pair_draws < 1_000 {
            return Err(Error::param("pair_draws", format!("must be >= 1000, got {}", self.pair_draws)));
        }
        if self.batches < 2 {
            return Err(Error::param("batches", "must be >= 2"));
        }
        if self.pool_size < 3 * self.batches {
            return Err(Error::param("pool_size", format!("must be >= {}", 3 * self.batches)));
        }
        if self.icc_clusters < 2 * self.batches || self.icc_cluster_size < 2 {
            return Err(Error::param("icc_clusters", "need >= 2 clusters per batch and >= 2 members per cluster"));
        }
        if !(self.quad_tol > 0.0) {
            return Err(Error::param("quad_tol", "must be positive"));
        }
        Ok(())
    }
}

/// Estimate with Monte Carlo standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub value: f64,
    pub se: f64,
}

impl Stat {
    pub fn exact(value: f64) -> Self {
        Stat { value, se: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignInputEstimate {
    pub model: String,
    pub seed: u64,
    pub pair_draws: usize,
    pub pool_size: usize,
    /// Cross-arm probabilities that a treated subject wins / loses.
    pub p_win: Stat,
    pub p_loss: Stat,
    pub pi_tie: Stat,
    pub delta_wd: Stat,
    pub delta_logwr: Stat,
    pub delta_logwo: Stat,
    pub rho_star: Stat,
    pub p_w: Stat,
    pub p_t: Stat,
    pub p_ww: Stat,
    pub p_wt: Stat,
    pub p_tt: Stat,
    pub q: f64,
    pub nbar: f64,
    pub cv: f64,
    #[serde(default)]
    pub warnings: Vec<String>,
    /// Ready-to-use calculator document (log win ratio, z test, 80% power).
    pub design_inputs: DesignInputs,
}

impl DesignInputEstimate {
    pub fn delta(&self, e: Estimand) -> Stat {
        match e {
            Estimand::WD => self.delta_wd,
            Estimand::LogWR => self.delta_logwr,
            Estimand::LogWO => self.delta_logwo,
        }
    }

    pub fn composite_probs(&self) -> CompositeProbs {
        CompositeProbs {
            p_w: self.p_w.value,
            p_t: self.p_t.value,
            p_ww: self.p_ww.value,
            p_wt: self.p_wt.value,
            p_tt: self.p_tt.value,
        }
    }

    /// Calculator inputs for one estimand; cluster-size moments come from the
    /// spec unless overridden.
    pub fn to_design_inputs(&self, estimand: Estimand, nbar: f64, cv: f64) -> DesignInputs {
        DesignInputs {
            estimand,
            delta: self.delta(estimand).value,
            pi_tie: self.pi_tie.value,
            q: self.q,
            nbar,
            cv,
            icc: self.rho_star.value.clamp(0.0, 1.0),
            composite_probs: Some(self.composite_probs()),
            alpha: 0.05,
            target_power: 0.8,
            test: TestKind::Z,
            sided: Sided::Two,
            contiguous: false,
            m: None,
        }
    }
}

/// Cross-arm pair summaries from per-draw win/loss probabilities.
pub(crate) struct PairSummary {
    pub p_win: Stat,
    pub p_loss: Stat,
    pub pi_tie: Stat,
    pub wd: Stat,
    pub logwr: Stat,
    pub logwo: Stat,
}

/// Delta-method summaries from per-draw `(win, loss)` probabilities.
pub(crate) fn summarize_pairs(draws: &[(f64, f64)]) -> PairSummary {
    let b = draws.len() as f64;
    let w: Vec<f64> = draws.iter().map(|d| d.0).collect();
    let l: Vec<f64> = draws.iter().map(|d| d.1).collect();
    let mw = crate::numeric::mean(&w);
    let ml = crate::numeric::mean(&l);
    let (vw, vl) = if draws.len() > 1 {
        (crate::numeric::sample_variance(&w), crate::numeric::sample_variance(&l))
    } else {
        (0.0, 0.0)
    };
    let cov = if draws.len() > 1 {
        crate::numeric::sum(w.iter().zip(&l).map(|(x, y)| (x - mw) * (y - ml))) / (b - 1.0)
    } else {
        0.0
    };
    let var_d = ((vw + vl - 2.0 * cov) / b).max(0.0);
    let var_t = ((vw + vl + 2.0 * cov) / b).max(0.0);
    let d = mw - ml;
    let var_lwr = (vw / (mw * mw) + vl / (ml * ml) - 2.0 * cov / (mw * ml)) / b;
    PairSummary {
        p_win: Stat { value: mw, se: (vw / b).sqrt() },
        p_loss: Stat { value: ml, se: (vl / b).sqrt() },
        pi_tie: Stat { value: 1.0 - mw - ml, se: var_t.sqrt() },
        wd: Stat { value: d, se: var_d.sqrt() },
        logwr: Stat { value: (mw / ml).ln(), se: var_lwr.max(0.0).sqrt() },
        logwo: Stat { value: 2.0 * d.atanh(), se: 2.0 / (1.0 - d * d) * var_d.sqrt() },
    }
}

/// Derive calculator inputs from a generative model.
pub fn estimate_design_inputs(spec: &GenerativeSpec, opts: &EstimationOptions) -> Result<DesignInputEstimate> {
    spec.validate()?;
    opts.validate()?;
    match spec {
        GenerativeSpec::Composite(s) => composite::estimate_design_inputs(s, opts),
        GenerativeSpec::Ordinal(s) => ordinal::estimate_design_inputs(s, opts),
    }
}

pub(crate) fn finish_estimate(
    spec: &GenerativeSpec,
    opts: &EstimationOptions,
    pairs: PairSummary,
    rho: Stat,
    probs: [Stat; 5],
    mut warnings: Vec<String>,
) -> Result<DesignInputEstimate> {
    let cs = spec.cluster_size();
    let (nbar, cv) = (cs.mean()?, cs.cv()?);
    if rho.value < 0.0 {
        warnings.push(format!("estimated rho* = {:.4} is negative; clamped to 0 in design_inputs", rho.value));
    }
    let rel = pairs.logwr.se / pairs.logwr.value.abs().max(1e-300);
    if pairs.logwr.value != 0.0 && rel > 0.05 {
        warnings.push(format!(
            "Monte Carlo SE of log win ratio is {:.1}% of the estimate; increase pair_draws",
            100.0 * rel
        ));
    }
    let [p_w, p_t, p_ww, p_wt, p_tt] = probs;
    let mut est = DesignInputEstimate {
        model: spec.model_name().to_string(),
        seed: opts.seed,
        pair_draws: opts.pair_draws,
        pool_size: opts.pool_size,
        p_win: pairs.p_win,
        p_loss: pairs.p_loss,
        pi_tie: pairs.pi_tie,
        delta_wd: pairs.wd,
        delta_logwr: pairs.logwr,
        delta_logwo: pairs.logwo,
        rho_star: rho,
        p_w,
        p_t,
        p_ww,
        p_wt,
        p_tt,
        q: spec.q(),
        nbar,
        cv,
        warnings,
        design_inputs: DesignInputs::single(Estimand::LogWR, 0.0, 0.0, 0.0, 1.0, 0.0),
    };
    est.design_inputs = est.to_design_inputs(Estimand::LogWR, nbar, cv);
    Ok(est)
}

/// Batch-means standard error of a statistic computed per batch.
pub(crate) fn batch_se(values: &[f64]) -> f64 {
    let g = values.len() as f64;
    (crate::numeric::sample_variance(values) / g).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kendall_maps() {
        assert_eq!(tau_from_frailty(7.5).unwrap(), 0.0625);
        assert_eq!(tau_from_copula(1.0).unwrap(), 0.0);
        assert!((tau_from_copula(3.0).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((frailty_from_tau(0.0625).unwrap() - 7.5).abs() < 1e-12);
        assert!((copula_from_tau(2.0 / 3.0).unwrap() - 3.0).abs() < 1e-12);
        assert!(copula_from_tau(1.0).is_err());
        assert!(frailty_from_tau(0.0).is_err());
        assert!(tau_from_copula(0.5).is_err());
    }

    #[test]
    fn matched_cluster_sizes() {
        let a = ClusterSize::Matched { mean: 30.0, cv: 0.394 };
        assert_eq!(a.support().unwrap(), (10, 50));
        assert!((a.cv().unwrap() - 0.394).abs() < 1e-3);
        let b = ClusterSize::Matched { mean: 50.0, cv: 0.468 };
        assert_eq!(b.support().unwrap(), (10, 90));
        assert_eq!(ClusterSize::Matched { mean: 20.0, cv: 0.0 }.support().unwrap(), (20, 20));
        assert!(ClusterSize::Matched { mean: 5.0, cv: 2.0 }.support().is_err());
    }

    #[test]
    fn complete_randomization_balances() {
        let mut rng = stream(3, PURPOSE_TRIAL, 0);
        let arms = randomize_clusters(&mut rng, 31, 0.5);
        let m1 = arms.iter().filter(|a| a.is_treated()).count();
        assert_eq!(m1, 16);
        let arms = randomize_clusters(&mut rng, 2, 0.01);
        assert_eq!(arms.iter().filter(|a| a.is_treated()).count(), 1);
    }

    #[test]
    fn streams_are_distinct_and_reproducible() {
        let a: u64 = stream(5, 1, 0).random();
        let b: u64 = stream(5, 1, 1).random();
        let c: u64 = stream(5, 1, 0).random();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }
}
