//! Proportional-odds ordinal outcome with normal cluster intercepts:
//! `P(Y <= k | A, b) = logistic(theta_k - beta A - b)`, `b ~ N(0, sigma_b2)`.
//! Categories are coded `1..=K`; larger is better.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::quadrature::GaussHermite;
use super::{
    finish_estimate, randomize_clusters, ClusterSize, DesignInputEstimate, EstimationOptions, GenerativeSpec,
    PairSummary, Stat,
};
use crate::data::{SubjectRecord, TrialDataset};
use crate::error::{Error, Result};
use crate::numeric::find_root;

fn default_q() -> f64 {
    0.5
}

fn default_nodes() -> usize {
    40
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrdinalGenSpec {
    /// Control-arm marginal category probabilities. Vectors summing to
    /// within 0.01 of one are renormalized.
    pub control_probs: Vec<f64>,
    pub beta_effect: f64,
    pub sigma_b2: f64,
    #[serde(default = "default_q")]
    pub q: f64,
    pub cluster_size: ClusterSize,
    #[serde(default = "default_nodes")]
    pub gh_nodes: usize,
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Latent-scale ICC `sigma_b2 / (sigma_b2 + pi^2 / 3)`.
pub fn latent_icc(sigma_b2: f64) -> f64 {
    sigma_b2 / (sigma_b2 + std::f64::consts::PI.powi(2) / 3.0)
}

fn normalized(probs: &[f64]) -> Result<Vec<f64>> {
    if probs.len() < 2 {
        return Err(Error::param("control_probs", "need at least two categories"));
    }
    if probs.iter().any(|p| !(*p > 0.0) || !p.is_finite()) {
        return Err(Error::param("control_probs", "entries must be positive"));
    }
    let s: f64 = probs.iter().sum();
    if (s - 1.0).abs() > 0.01 {
        return Err(Error::param("control_probs", format!("must sum to 1, got {s}")));
    }
    Ok(probs.iter().map(|p| p / s).collect())
}

/// Cutpoints `theta_1 < ... < theta_{K-1}` whose intercept-averaged
/// cumulative probabilities reproduce `control_probs`.
pub fn calibrate_cutpoints(control_probs: &[f64], sigma_b2: f64, r: usize) -> Result<Vec<f64>> {
    let probs = normalized(control_probs)?;
    if !(sigma_b2 >= 0.0) || !sigma_b2.is_finite() {
        return Err(Error::param("sigma_b2", format!("must be non-negative, got {sigma_b2}")));
    }
    if r < 20 {
        return Err(Error::param("gh_nodes", format!("need >= 20 nodes, got {r}")));
    }
    let gh = GaussHermite::new(r);
    let mut cum = 0.0;
    let mut theta = Vec::with_capacity(probs.len() - 1);
    for p in &probs[..probs.len() - 1] {
        cum += p;
        let target = cum.min(1.0 - 1e-15);
        let start = logit(target);
        if sigma_b2 == 0.0 {
            theta.push(start);
            continue;
        }
        let width = 10.0 * sigma_b2.sqrt() + 10.0;
        let f = |t: f64| gh.normal_expectation(sigma_b2, |b| logistic(t - b)) - target;
        let t = find_root(f, start - width, start + width, 1e-13).map_err(|e| {
            Error::Numerical(format!("cutpoint bracketing failed at cumulative probability {target}: {e}"))
        })?;
        theta.push(t);
    }
    if theta.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Numerical("calibrated cutpoints are not strictly increasing".into()));
    }
    Ok(theta)
}

/// Category probabilities given the linear shift `beta A + b`.
pub fn conditional_probs(theta: &[f64], shift: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(theta.len() + 1);
    let mut prev = 0.0;
    for &t in theta {
        let c = logistic(t - shift);
        out.push(c - prev);
        prev = c;
    }
    out.push(1.0 - prev);
    out
}

/// Intercept-averaged category probabilities for fixed effect `shift`.
pub fn marginal_probs(theta: &[f64], shift: f64, sigma_b2: f64, gh: &GaussHermite) -> Vec<f64> {
    let k = theta.len() + 1;
    (0..k)
        .map(|j| gh.normal_expectation(sigma_b2, |b| conditional_probs(theta, shift + b)[j]))
        .collect()
}

impl OrdinalGenSpec {
    pub fn validate(&self) -> Result<Vec<f64>> {
        if !self.beta_effect.is_finite() {
            return Err(Error::param("beta_effect", "must be finite"));
        }
        if !(self.sigma_b2 > 0.0) || !self.sigma_b2.is_finite() {
            return Err(Error::param("sigma_b2", format!("must be positive, got {}", self.sigma_b2)));
        }
        if !(self.q > 0.0 && self.q < 1.0) {
            return Err(Error::param("q", format!("must lie in (0,1), got {}", self.q)));
        }
        self.cluster_size.support()?;
        calibrate_cutpoints(&self.control_probs, self.sigma_b2, self.gh_nodes)
    }

    pub fn k(&self) -> usize {
        self.control_probs.len()
    }

    pub(crate) fn sample_trial<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Result<TrialDataset> {
        let theta = self.validate()?;
        let normal = Normal::new(0.0, self.sigma_b2.sqrt()).expect("validated");
        let arms = randomize_clusters(rng, m, self.q);
        let mut subjects = Vec::new();
        for (ci, &arm) in arms.iter().enumerate() {
            let size = self.cluster_size.sample(rng)?;
            let b: f64 = normal.sample(rng);
            let shift = if arm.is_treated() { self.beta_effect } else { 0.0 } + b;
            let cum: Vec<f64> = theta.iter().map(|t| logistic(t - shift)).collect();
            for j in 0..size {
                let u: f64 = rng.random();
                let cat = cum.iter().position(|&c| u <= c).unwrap_or(theta.len()) + 1;
                subjects.push(SubjectRecord::scalar(format!("{ci}-{j}"), format!("c{ci}"), arm, cat as f64));
            }
        }
        TrialDataset::new(subjects)
    }
}

fn below(p: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    p.iter()
        .map(|x| {
            let b = acc;
            acc += x;
            b
        })
        .collect()
}

/// Exact design inputs by category algebra; standard errors are zero.
pub(crate) fn estimate_design_inputs(spec: &OrdinalGenSpec, opts: &EstimationOptions) -> Result<DesignInputEstimate> {
    let theta = spec.validate()?;
    let gh = GaussHermite::new(spec.gh_nodes);
    let s2 = spec.sigma_b2;
    let p1 = marginal_probs(&theta, spec.beta_effect, s2, &gh);
    let p0 = marginal_probs(&theta, 0.0, s2, &gh);
    let q = spec.q;
    let pi: Vec<f64> = p1.iter().zip(&p0).map(|(a, b)| q * a + (1.0 - q) * b).collect();
    let fm = below(&pi);
    let fstar: Vec<f64> = fm.iter().zip(&pi).map(|(f, p)| f + p / 2.0).collect();

    let dot = |f: &dyn Fn(usize) -> f64| (0..pi.len()).map(f).sum::<f64>();
    let p_w = dot(&|k| pi[k] * fm[k]);
    let p_t = dot(&|k| pi[k] * pi[k]);
    let p_ww = dot(&|k| pi[k] * fm[k] * fm[k]);
    let p_wt = dot(&|k| pi[k] * pi[k] * fm[k]);
    let p_tt = dot(&|k| pi[k].powi(3));

    let f0m = below(&p0);
    let win = dot(&|k| p1[k] * f0m[k]);
    let tie = dot(&|k| p1[k] * p0[k]);
    let loss = 1.0 - win - tie;

    let var_f = dot(&|k| pi[k] * fstar[k] * fstar[k]) - 0.25;
    let cond_sq = |shift: f64| {
        gh.normal_expectation(s2, |b| {
            let c = conditional_probs(&theta, shift + b);
            let m: f64 = c.iter().zip(&fstar).map(|(p, f)| p * f).sum();
            m * m
        })
    };
    let between = q * cond_sq(spec.beta_effect) + (1.0 - q) * cond_sq(0.0) - 0.25;
    let rho = between / var_f;

    let d = win - loss;
    let pairs = PairSummary {
        p_win: Stat::exact(win),
        p_loss: Stat::exact(loss),
        pi_tie: Stat::exact(tie),
        wd: Stat::exact(d),
        logwr: Stat::exact((win / loss).ln()),
        logwo: Stat::exact(2.0 * d.atanh()),
    };
    let probs = [p_w, p_t, p_ww, p_wt, p_tt].map(Stat::exact);
    let mut est = finish_estimate(&GenerativeSpec::Ordinal(spec.clone()), opts, pairs, Stat::exact(rho), probs, Vec::new())?;
    est.pair_draws = 0;
    est.pool_size = 0;
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generative::{estimate_design_inputs as estimate, sample_trial};
    use crate::tally::tally;

    const PI0: [f64; 6] = [0.217, 0.093, 0.173, 0.241, 0.036, 0.241];

    fn spec(beta: f64, s2: f64) -> OrdinalGenSpec {
        OrdinalGenSpec {
            control_probs: PI0.to_vec(),
            beta_effect: beta,
            sigma_b2: s2,
            q: 0.5,
            cluster_size: ClusterSize::Fixed { size: 20 },
            gh_nodes: 40,
        }
    }

    #[test]
    fn no_random_effect_gives_logits() {
        let th = calibrate_cutpoints(&[0.2, 0.3, 0.5], 0.0, 40).unwrap();
        assert!((th[0] - logit(0.2)).abs() < 1e-15);
        assert!((th[1] - logit(0.5)).abs() < 1e-15);
    }

    #[test]
    fn symmetric_two_categories() {
        for s2 in [0.1, 0.416, 2.0] {
            let th = calibrate_cutpoints(&[0.5, 0.5], s2, 40).unwrap();
            assert!(th[0].abs() < 1e-10);
        }
    }

    #[test]
    fn calibration_reproduces_marginals() {
        let norm: Vec<f64> = PI0.iter().map(|p| p / PI0.iter().sum::<f64>()).collect();
        for s2 in [0.173, 0.416, 0.605] {
            let th = calibrate_cutpoints(&PI0, s2, 40).unwrap();
            let gh = GaussHermite::new(40);
            let back = marginal_probs(&th, 0.0, s2, &gh);
            for (a, b) in back.iter().zip(&norm) {
                assert!((a - b).abs() < 1e-6);
            }
            // Residual on the cumulative scale.
            let mut cum = 0.0;
            for (k, t) in th.iter().enumerate() {
                cum += norm[k];
                let r = gh.normal_expectation(s2, |b| logistic(t - b)) - cum;
                assert!(r.abs() < 1e-8);
            }
            // Intercept variance spreads the cutpoints.
            let plain = calibrate_cutpoints(&PI0, 0.0, 40).unwrap();
            assert!(th[0] < plain[0] && th[4] > plain[4]);
        }
    }

    #[test]
    fn rejects_bad_probabilities() {
        assert!(calibrate_cutpoints(&[1.0], 0.1, 40).is_err());
        assert!(calibrate_cutpoints(&[0.5, 0.0, 0.5], 0.1, 40).is_err());
        assert!(calibrate_cutpoints(&[0.5, 0.6], 0.1, 40).is_err());
        assert!(calibrate_cutpoints(&[0.5, 0.5], 0.1, 10).is_err());
    }

    #[test]
    fn latent_icc_values() {
        assert!((latent_icc(0.416f64.powi(2)) - 0.05).abs() < 1e-3);
        assert!((latent_icc(0.605f64.powi(2)) - 0.10).abs() < 1e-3);
    }

    #[test]
    fn exact_inputs_are_consistent() {
        let opts = EstimationOptions::default();
        let e = estimate(&GenerativeSpec::Ordinal(spec(0.405, 0.173)), &opts).unwrap();
        assert!((e.p_win.value + e.p_loss.value + e.pi_tie.value - 1.0).abs() < 1e-12);
        assert!(e.delta_logwr.value > 0.0 && e.delta_wd.value > 0.0);
        e.composite_probs().validate().unwrap();
        assert!(e.rho_star.value > 0.0 && e.rho_star.value < 0.1, "{:?}", e.rho_star);
        // Pooled win and loss probabilities coincide; ties are the sum of squares.
        let null = estimate(&GenerativeSpec::Ordinal(spec(0.0, 0.173)), &opts).unwrap();
        assert!(null.delta_wd.value.abs() < 1e-12 && null.delta_logwr.value.abs() < 1e-10);
        assert!((2.0 * null.p_w.value + null.p_t.value - 1.0).abs() < 1e-12);
        assert!((null.pi_tie.value - null.p_t.value).abs() < 1e-12);
    }

    #[test]
    fn simulated_trials_match_exact_inputs() {
        let s = spec(0.693, 0.366);
        let gen = GenerativeSpec::Ordinal(s);
        let e = estimate(&gen, &EstimationOptions::default()).unwrap();
        let (mut wd, mut tie) = (0.0, 0.0);
        let reps = 40;
        for r in 0..reps {
            let t = tally(&sample_trial(&gen, 60, r).unwrap());
            wd += t.wd();
            tie += t.pi_tie();
        }
        assert!((wd / reps as f64 - e.delta_wd.value).abs() < 0.02);
        assert!((tie / reps as f64 - e.pi_tie.value).abs() < 0.01);
    }

    #[test]
    fn exact_rho_matches_simulated_score_icc() {
        let s = OrdinalGenSpec { cluster_size: ClusterSize::Fixed { size: 30 }, ..spec(0.693, 0.366) };
        let gen = GenerativeSpec::Ordinal(s.clone());
        let e = estimate(&gen, &EstimationOptions::default()).unwrap();
        let theta = s.validate().unwrap();
        let gh = GaussHermite::new(40);
        let p1 = marginal_probs(&theta, s.beta_effect, s.sigma_b2, &gh);
        let p0 = marginal_probs(&theta, 0.0, s.sigma_b2, &gh);
        let pi: Vec<f64> = p1.iter().zip(&p0).map(|(a, b)| 0.5 * (a + b)).collect();
        let fm = below(&pi);
        let data = sample_trial(&gen, 3000, 17).unwrap();
        let f: Vec<f64> = data
            .subjects()
            .iter()
            .map(|r| {
                let k = r.component(1).unwrap().value as usize - 1;
                fm[k] + pi[k] / 2.0
            })
            .collect();
        let icc = crate::estimate::cluster_icc(&f, data.cluster_of(), data.cluster_sizes()).unwrap();
        assert!((icc - e.rho_star.value).abs() < 0.01, "{icc} vs {:?}", e.rho_star);
    }
}
