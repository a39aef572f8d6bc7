//! Gamma-frailty semi-competing risks model with a Gumbel-Hougaard copula
//! between hospitalization and death.
//!
//! Conditional on arm `A` and cluster frailty `g`, hazards are
//! `g * lambda0_h * exp(-eta_h A)` and `g * lambda0_d * exp(-eta_d A)`;
//! censoring is exponential with rate `lambda0_c * exp(-eta_c A)`.
//! Outcomes are emitted as tier 2 (death, event if death precedes
//! censoring) and tier 1 (hospitalization, observed up to the earlier of
//! death and censoring).

use std::cell::RefCell;

use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::quadrature::{integrate, integrate_half_line};
use super::{
    batch_se, finish_estimate, randomize_clusters, stream, summarize_pairs, ClusterSize, DesignInputEstimate,
    EstimationOptions, GenerativeSpec, Stat, PURPOSE_ICC, PURPOSE_PAIRS, PURPOSE_POOL,
};
use crate::compare::{sign_fixed, Kernel};
use crate::data::{Arm, Component, SubjectRecord, TrialDataset};
use crate::error::{Error, Result};
use crate::estimate::cluster_icc;
use crate::tally::{pairwise_counts, pooled_from_counts};

const MAX_INTERVALS: usize = 200;
const PAIR_CHUNK: usize = 1_000;

fn default_phi() -> f64 {
    1.0
}

fn default_q() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompositeGenSpec {
    #[serde(rename = "lambda0_H")]
    pub lambda0_h: f64,
    #[serde(rename = "lambda0_D")]
    pub lambda0_d: f64,
    #[serde(rename = "lambda0_C")]
    pub lambda0_c: f64,
    #[serde(rename = "eta_H", default)]
    pub eta_h: f64,
    #[serde(rename = "eta_D", default)]
    pub eta_d: f64,
    #[serde(rename = "eta_C", default)]
    pub eta_c: f64,
    /// Gamma shape = rate; `None` means no frailty.
    #[serde(default)]
    pub nu_frailty: Option<f64>,
    #[serde(default = "default_phi")]
    pub phi_copula: f64,
    #[serde(default = "default_q")]
    pub q: f64,
    pub cluster_size: ClusterSize,
}

/// Conditional hazards of one subject.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SubjectRates {
    pub hosp: f64,
    pub death: f64,
    pub cens: f64,
}

impl CompositeGenSpec {
    pub fn validate(&self) -> Result<()> {
        for (f, v) in [("lambda0_H", self.lambda0_h), ("lambda0_D", self.lambda0_d), ("lambda0_C", self.lambda0_c)] {
            if !(v > 0.0) || v.is_nan() {
                return Err(Error::param(f, format!("must be positive, got {v}")));
            }
        }
        for (f, v) in [("eta_H", self.eta_h), ("eta_D", self.eta_d), ("eta_C", self.eta_c)] {
            if !v.is_finite() {
                return Err(Error::param(f, "must be finite"));
            }
        }
        if let Some(nu) = self.nu_frailty {
            if !(nu > 0.0 && nu.is_finite()) {
                return Err(Error::param("nu_frailty", format!("must be positive, got {nu}")));
            }
        }
        if !(self.phi_copula >= 1.0 && self.phi_copula.is_finite()) {
            return Err(Error::param("phi_copula", format!("must be >= 1, got {}", self.phi_copula)));
        }
        if !(self.q > 0.0 && self.q < 1.0) {
            return Err(Error::param("q", format!("must lie in (0,1), got {}", self.q)));
        }
        self.cluster_size.support()?;
        Ok(())
    }

    pub fn rates(&self, arm: Arm, frailty: f64) -> SubjectRates {
        let a = if arm.is_treated() { 1.0 } else { 0.0 };
        SubjectRates {
            hosp: frailty * self.lambda0_h * (-self.eta_h * a).exp(),
            death: frailty * self.lambda0_d * (-self.eta_d * a).exp(),
            cens: self.lambda0_c * (-self.eta_c * a).exp(),
        }
    }

    pub fn sample_frailty<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.nu_frailty {
            Some(nu) => Gamma::new(nu, 1.0 / nu).expect("validated").sample(rng),
            None => 1.0,
        }
    }

    /// Latent `(T_H, T_D, T_C)`.
    pub fn sample_times<R: Rng + ?Sized>(&self, rng: &mut R, r: &SubjectRates) -> (f64, f64, f64) {
        let (h, d) = sample_gumbel_pair(rng, r.hosp, r.death, self.phi_copula);
        let e: f64 = Exp1.sample(rng);
        (h, d, e / r.cens)
    }

    fn sample_outcome<R: Rng + ?Sized>(&self, rng: &mut R, r: &SubjectRates) -> [(f64, bool); 2] {
        let (h, d, c) = self.sample_times(rng, r);
        let horizon = d.min(c);
        [(horizon, d <= c), (h.min(horizon), h < horizon)]
    }

    pub(crate) fn sample_trial<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Result<TrialDataset> {
        self.validate()?;
        let arms = randomize_clusters(rng, m, self.q);
        let mut subjects = Vec::new();
        for (ci, &arm) in arms.iter().enumerate() {
            let size = self.cluster_size.sample(rng)?;
            let g = self.sample_frailty(rng);
            let r = self.rates(arm, g);
            for j in 0..size {
                let [(dv, de), (hv, he)] = self.sample_outcome(rng, &r);
                let mk = |tier, v, ev| if ev { Component::event(tier, v) } else { Component::censored(tier, v) };
                subjects.push(SubjectRecord {
                    subject_id: format!("{ci}-{j}"),
                    cluster_id: format!("c{ci}"),
                    arm,
                    components: vec![mk(2, dv, de), mk(1, hv, he)],
                });
            }
        }
        TrialDataset::new(subjects)
    }
}

/// Positive stable variate with Laplace transform `exp(-s^alpha)`,
/// `0 < alpha <= 1` (Kanter's representation).
pub fn positive_stable<R: Rng + ?Sized>(rng: &mut R, alpha: f64) -> f64 {
    if alpha >= 1.0 {
        return 1.0;
    }
    let u: f64 = rng.random::<f64>() * std::f64::consts::PI;
    let e: f64 = Exp1.sample(rng);
    let a = (alpha * u).sin() / u.sin().powf(1.0 / alpha);
    let b = ((1.0 - alpha) * u).sin() / e;
    a * b.powf((1.0 - alpha) / alpha)
}

/// `(T1, T2)` with joint survivor `exp(-[(a t1)^phi + (b t2)^phi]^(1/phi))`.
pub fn sample_gumbel_pair<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64, phi: f64) -> (f64, f64) {
    let e1: f64 = Exp1.sample(rng);
    let e2: f64 = Exp1.sample(rng);
    if phi == 1.0 {
        return (e1 / a, e2 / b);
    }
    let v = positive_stable(rng, 1.0 / phi);
    let p = 1.0 / phi;
    ((e1 / v).powf(p) / a, (e2 / v).powf(p) / b)
}

/// Probability that subject `i` beats `k` on death: `k` dies before either
/// subject is censored and before `i` dies.
pub fn mortality_tier_prob(i: &SubjectRates, k: &SubjectRates) -> Result<f64> {
    let rates = [i.death, k.death, i.cens, k.cens];
    if rates.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
        return Err(Error::param("rates", "death and censoring rates must be finite and non-negative"));
    }
    let total: f64 = rates.iter().sum();
    if total <= 0.0 {
        return Err(Error::param("rates", "death and censoring rates sum to zero"));
    }
    Ok(k.death / total)
}

/// Probability that subject `i` beats `k` on hospitalization: neither dies
/// before the first censoring time `c`, and `k` is hospitalized at some
/// `t1 < c` while `i` is still free of hospitalization.
///
/// Computed as an outer integral over the first censoring time of an inner
/// integral over `t1`, each by adaptive Gauss-Kronrod quadrature; `tol` is
/// the target absolute error.
pub fn hospitalization_tier_prob(i: &SubjectRates, k: &SubjectRates, phi: f64, tol: f64) -> Result<f64> {
    for r in [i, k] {
        if [r.hosp, r.death, r.cens].iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
            return Err(Error::param("rates", "hazards must be finite and non-negative"));
        }
    }
    if !(phi >= 1.0) {
        return Err(Error::param("phi", format!("must be >= 1, got {phi}")));
    }
    let lc = i.cens + k.cens;
    if k.hosp == 0.0 || lc == 0.0 {
        return Ok(0.0);
    }
    let big_a = i.hosp + k.hosp;
    let big_b = i.death + k.death;
    if phi == 1.0 {
        return Ok(lc * k.hosp / ((lc + big_b) * (lc + big_a + big_b)));
    }
    hospitalization_quadrature(i, k, phi, tol)
}

/// Two-level quadrature for the hospitalization tier, valid for any `phi >= 1`.
pub(crate) fn hospitalization_quadrature(i: &SubjectRates, k: &SubjectRates, phi: f64, tol: f64) -> Result<f64> {
    let lc = i.cens + k.cens;
    let big_b = i.death + k.death;
    let joint = |a: f64, b: f64, t1: f64, c: f64| ((a * t1).powf(phi) + (b * c).powf(phi)).powf(1.0 / phi);
    let failure: RefCell<Option<Error>> = RefCell::new(None);
    let inner_tol = tol / 10.0;
    let outer = |c: f64| -> f64 {
        if c <= 0.0 {
            return 0.0;
        }
        let bc_k = (k.death * c).powf(phi);
        let g = |t1: f64| -> f64 {
            let x = (k.hosp * t1).powf(phi);
            let s = x + bc_k;
            if s <= 0.0 {
                return 0.0;
            }
            let hz = k.hosp * (k.hosp * t1).powf(phi - 1.0) * s.powf(1.0 / phi - 1.0);
            let v = hz * (-(s.powf(1.0 / phi)) - joint(i.hosp, i.death, t1, c)).exp();
            if v.is_finite() { v } else { 0.0 }
        };
        match integrate(g, 0.0, c, inner_tol, MAX_INTERVALS) {
            Ok(r) => lc * (-lc * c).exp() * r.value,
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                0.0
            }
        }
    };
    let res = integrate_half_line(outer, 1.0 / (lc + big_b), tol / 2.0, MAX_INTERVALS)?;
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    Ok(res.value)
}

/// Probability that `i` beats `k` overall.
pub fn pair_win_prob(i: &SubjectRates, k: &SubjectRates, phi: f64, tol: f64) -> Result<f64> {
    Ok(mortality_tier_prob(i, k)? + hospitalization_tier_prob(i, k, phi, tol)?)
}

fn outcome_rows(spec: &CompositeGenSpec, rng: &mut impl Rng, r: &SubjectRates, values: &mut Vec<f64>, events: &mut Vec<bool>) {
    for (v, e) in spec.sample_outcome(rng, r) {
        values.push(v);
        events.push(e);
    }
}

pub(crate) fn estimate_design_inputs(spec: &CompositeGenSpec, opts: &EstimationOptions) -> Result<DesignInputEstimate> {
    let mut warnings = Vec::new();

    // Cross-arm pair probabilities, averaged over independent frailties.
    let chunks = opts.pair_draws.div_ceil(PAIR_CHUNK);
    let per_chunk: Vec<Result<Vec<(f64, f64)>>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream(opts.seed, PURPOSE_PAIRS, c as u64);
            let len = PAIR_CHUNK.min(opts.pair_draws - c * PAIR_CHUNK);
            (0..len)
                .map(|_| {
                    let ri = spec.rates(Arm::Treated, spec.sample_frailty(&mut rng));
                    let rk = spec.rates(Arm::Control, spec.sample_frailty(&mut rng));
                    Ok((
                        pair_win_prob(&ri, &rk, spec.phi_copula, opts.quad_tol)?,
                        pair_win_prob(&rk, &ri, spec.phi_copula, opts.quad_tol)?,
                    ))
                })
                .collect()
        })
        .collect();
    let mut draws = Vec::with_capacity(opts.pair_draws);
    for c in per_chunk {
        draws.extend(c?);
    }
    let pairs = summarize_pairs(&draws);

    // Pooled sample of independent subjects.
    let n = opts.pool_size;
    let mut rng = stream(opts.seed, PURPOSE_POOL, 0);
    let (mut values, mut events) = (Vec::with_capacity(2 * n), Vec::with_capacity(2 * n));
    for _ in 0..n {
        let arm = if rng.random::<f64>() < spec.q { Arm::Treated } else { Arm::Control };
        let r = spec.rates(arm, spec.sample_frailty(&mut rng));
        outcome_rows(spec, &mut rng, &r, &mut values, &mut events);
    }
    let pool = Kernel::from_raw(2, values.clone(), events.clone());
    let no_arms = vec![false; n];
    let (_, _, _, sw, st) = pairwise_counts(&pool, &no_arms);
    let full = pooled_from_counts(&sw, &st)?;
    let g = opts.batches;
    let bsize = n / g;
    let batch: Vec<[f64; 5]> = (0..g)
        .map(|b| {
            let lo = b * bsize;
            let k = Kernel::from_raw(2, values[2 * lo..2 * (lo + bsize)].to_vec(), events[2 * lo..2 * (lo + bsize)].to_vec());
            let (_, _, _, w, t) = pairwise_counts(&k, &vec![false; bsize]);
            let p = pooled_from_counts(&w, &t)?;
            Ok([p.p_w, p.p_t, p.p_ww, p.p_wt, p.p_tt])
        })
        .collect::<Result<_>>()?;
    let col = |j: usize| batch_se(&batch.iter().map(|r| r[j]).collect::<Vec<_>>());
    let probs = [
        Stat { value: full.p_w, se: col(0) },
        Stat { value: full.p_t, se: col(1) },
        Stat { value: full.p_ww, se: col(2) },
        Stat { value: full.p_wt, se: col(3) },
        Stat { value: full.p_tt, se: col(4) },
    ];

    let rho = icc_vs_pool(spec, opts, &pool)?;
    if opts.pair_draws < 10_000 {
        warnings.push(format!("pair_draws = {} is small; Monte Carlo SEs reported", opts.pair_draws));
    }
    finish_estimate(&GenerativeSpec::Composite(spec.clone()), opts, pairs, rho, probs, warnings)
}

/// Arm-inclusive within-cluster correlation of `f(Y) = (wins - losses) / n`
/// computed against the pooled sample.
fn icc_vs_pool(spec: &CompositeGenSpec, opts: &EstimationOptions, pool: &Kernel) -> Result<Stat> {
    let (gc, size) = (opts.icc_clusters, opts.icc_cluster_size);
    let arms = randomize_clusters(&mut stream(opts.seed, PURPOSE_ICC, 0), gc, spec.q);
    let np = pool.len();
    let (pv, pe) = pool.fixed_rows::<2>();
    let scores: Vec<Vec<f64>> = arms
        .par_iter()
        .enumerate()
        .map(|(c, &arm)| {
            let mut rng = stream(opts.seed, PURPOSE_ICC, c as u64 + 1);
            let r = spec.rates(arm, spec.sample_frailty(&mut rng));
            (0..size)
                .map(|_| {
                    let o = spec.sample_outcome(&mut rng, &r);
                    let v = [o[0].0, o[1].0];
                    let e = [o[0].1, o[1].1];
                    let net: i64 = (0..np).map(|j| sign_fixed(&v, &e, &pv[j], &pe[j]) as i64).sum();
                    net as f64 / np as f64
                })
                .collect()
        })
        .collect();
    let icc_of = |range: std::ops::Range<usize>| -> Result<f64> {
        let x: Vec<f64> = scores[range.clone()].iter().flatten().copied().collect();
        let cluster_of: Vec<usize> = (0..range.len()).flat_map(|c| std::iter::repeat_n(c, size)).collect();
        cluster_icc(&x, &cluster_of, &vec![size; range.len()])
    };
    let value = icc_of(0..gc)?;
    let per = gc / opts.batches;
    let batches: Vec<f64> = (0..opts.batches).map(|b| icc_of(b * per..(b + 1) * per)).collect::<Result<_>>()?;
    Ok(Stat { value, se: batch_se(&batches) })
}
