//! Point estimates, cluster-score variance estimation and Wald tests.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::TrialDataset;
use crate::design::{Estimand, TestKind};
use crate::dist;
use crate::error::{Error, Result};
use crate::numeric::{mean, sample_variance, sum};
use crate::tally::{tally, ComparisonTally};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Alternative {
    #[default]
    #[serde(rename = "two.sided")]
    TwoSided,
    #[serde(rename = "less")]
    Less,
    #[serde(rename = "greater")]
    Greater,
}

impl FromStr for Alternative {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "two.sided" | "two-sided" | "two" => Ok(Alternative::TwoSided),
            "less" => Ok(Alternative::Less),
            "greater" => Ok(Alternative::Greater),
            _ => Err(format!("unknown alternative `{s}` (two.sided, less, greater)")),
        }
    }
}

impl fmt::Display for Alternative {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Alternative::TwoSided => "two.sided",
            Alternative::Less => "less",
            Alternative::Greater => "greater",
        })
    }
}

/// One Wald test. Open CI ends are `None`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaldTest {
    pub statistic: f64,
    pub p_value: f64,
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
    /// Degrees of freedom for the t variant.
    pub df: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimandResult {
    pub estimand: Estimand,
    pub estimate: Option<f64>,
    pub se: Option<f64>,
    pub z: Option<WaldTest>,
    /// Present when M >= 3.
    pub t: Option<WaldTest>,
    /// Diagnostic when the estimand is not defined for these data.
    pub undefined: Option<String>,
}

impl EstimandResult {
    pub fn test(&self, kind: TestKind) -> Option<&WaldTest> {
        match kind {
            TestKind::Z => self.z.as_ref(),
            TestKind::T => self.t.as_ref(),
        }
    }

    pub fn is_defined(&self) -> bool {
        self.estimate.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WinEstimates {
    pub alpha: f64,
    pub alternative: Alternative,
    pub m: usize,
    pub m1: usize,
    pub m0: usize,
    pub n: usize,
    pub n1: usize,
    pub n0: usize,
    pub wins: u64,
    pub losses: u64,
    pub ties: u64,
    pub wd_hat: f64,
    pub log_wr_hat: Option<f64>,
    pub log_wo_hat: Option<f64>,
    pub pi_tie_hat: f64,
    pub rank_icc_hat: Option<f64>,
    /// Arm means of the cluster scores.
    pub sbar1: f64,
    pub sbar0: f64,
    /// Arm sample variances of the cluster scores.
    pub sigma1_hat: f64,
    pub sigma0_hat: f64,
    pub se_d: f64,
    pub se_r: Option<f64>,
    pub se_o: Option<f64>,
    pub net_benefit: EstimandResult,
    pub log_win_ratio: EstimandResult,
    pub log_win_odds: EstimandResult,
}

impl WinEstimates {
    pub fn get(&self, e: Estimand) -> &EstimandResult {
        match e {
            Estimand::WD => &self.net_benefit,
            Estimand::LogWR => &self.log_win_ratio,
            Estimand::LogWO => &self.log_win_odds,
        }
    }
}

pub fn estimate(data: &TrialDataset, alpha: f64, alternative: Alternative) -> Result<WinEstimates> {
    let t = tally(data);
    let icc = rank_icc_from_tally(&t).ok();
    estimate_from_tally(&t, alpha, alternative, icc)
}

/// Estimation from a precomputed tally; `rank_icc_hat` is passed through.
pub fn estimate_from_tally(
    t: &ComparisonTally,
    alpha: f64,
    alternative: Alternative,
    rank_icc_hat: Option<f64>,
) -> Result<WinEstimates> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::param("alpha", format!("must lie in (0,1), got {alpha}")));
    }
    let scores = |treated: bool| -> Vec<f64> {
        t.cluster_scores
            .iter()
            .zip(&t.cluster_arms)
            .filter(|(_, a)| a.is_treated() == treated)
            .map(|(&s, _)| s as f64)
            .collect()
    };
    let s1 = scores(true);
    let s0 = scores(false);
    let (m1, m0) = (s1.len(), s0.len());
    if m1 < 2 || m0 < 2 {
        return Err(Error::Data(format!(
            "variance estimation needs at least 2 clusters per arm (treated {m1}, control {m0})"
        )));
    }
    let m = m1 + m0;
    let pairs = t.pairs() as f64;
    let sigma1 = sample_variance(&s1);
    let sigma0 = sample_variance(&s0);
    let scale = (m1 as f64 * m0 as f64) / (m as f64 * pairs);
    let var_d = scale * scale * (sigma1 / m1 as f64 + sigma0 / m0 as f64);
    let se_d = var_d.sqrt();

    let wd = t.wd();
    let pi = t.pi_tie();

    let mut ratio_problem = None;
    if t.losses == 0 {
        ratio_problem = Some("no cross-arm losses (L = 0)".to_string());
    } else if t.wins == 0 {
        ratio_problem = Some("no cross-arm wins (W = 0)".to_string());
    } else if pi >= 1.0 {
        ratio_problem = Some("all cross-arm pairs tied".to_string());
    }

    let df = if m >= 3 { Some((m - 2) as f64) } else { None };
    let summarize = |estimand, est: f64, se: f64| EstimandResult {
        estimand,
        estimate: Some(est),
        se: Some(se),
        z: Some(wald(est, se, alpha, alternative, None)),
        t: df.map(|d| wald(est, se, alpha, alternative, Some(d))),
        undefined: None,
    };
    let undefined = |estimand, why: &str| EstimandResult {
        estimand,
        estimate: None,
        se: None,
        z: None,
        t: None,
        undefined: Some(why.to_string()),
    };

    let net_benefit = summarize(Estimand::WD, wd, se_d);
    let (log_win_ratio, log_win_odds, se_r, se_o, lwr, lwo) = match &ratio_problem {
        Some(why) => (
            undefined(Estimand::LogWR, why),
            undefined(Estimand::LogWO, why),
            None,
            None,
            None,
            None,
        ),
        None => {
            let r = wd / (1.0 - pi);
            let lwr = 2.0 * r.atanh();
            let lwo = 2.0 * wd.atanh();
            let se_r = 2.0 / (1.0 - pi) / (1.0 - r * r) * se_d;
            let se_o = 2.0 / (1.0 - wd * wd) * se_d;
            (
                summarize(Estimand::LogWR, lwr, se_r),
                summarize(Estimand::LogWO, lwo, se_o),
                Some(se_r),
                Some(se_o),
                Some(lwr),
                Some(lwo),
            )
        }
    };

    Ok(WinEstimates {
        alpha,
        alternative,
        m,
        m1,
        m0,
        n: t.n(),
        n1: t.n1,
        n0: t.n0,
        wins: t.wins,
        losses: t.losses,
        ties: t.ties,
        wd_hat: wd,
        log_wr_hat: lwr,
        log_wo_hat: lwo,
        pi_tie_hat: pi,
        rank_icc_hat,
        sbar1: mean(&s1),
        sbar0: mean(&s0),
        sigma1_hat: sigma1,
        sigma0_hat: sigma0,
        se_d,
        se_r,
        se_o,
        net_benefit,
        log_win_ratio,
        log_win_odds,
    })
}

/// Wald test of `H0: estimand = 0`. `df = None` is the normal reference.
pub fn wald(est: f64, se: f64, alpha: f64, alternative: Alternative, df: Option<f64>) -> WaldTest {
    let stat = if se > 0.0 {
        est / se
    } else if est == 0.0 {
        0.0
    } else {
        est.signum() * f64::INFINITY
    };
    let cdf = |x: f64| match df {
        Some(d) => dist::t_cdf(x, d),
        None => dist::normal_cdf(x),
    };
    let sf = |x: f64| match df {
        Some(d) => dist::t_sf(x, d),
        None => dist::normal_sf(x),
    };
    let quant = |p: f64| match df {
        Some(d) => dist::t_quantile(p, d),
        None => dist::normal_quantile(p),
    };
    let (p, lo, hi) = match alternative {
        Alternative::TwoSided => {
            let c = quant(1.0 - alpha / 2.0);
            ((2.0 * sf(stat.abs())).min(1.0), Some(est - c * se), Some(est + c * se))
        }
        Alternative::Less => (cdf(stat), None, Some(est + quant(1.0 - alpha) * se)),
        Alternative::Greater => (sf(stat), Some(est - quant(1.0 - alpha) * se), None),
    };
    WaldTest { statistic: stat, p_value: p, ci_lower: lo, ci_upper: hi, df }
}

/// Rank ICC from generalized mid-ranks.
///
/// With `u = R/n` centred at its mean, the numerator averages, over clusters
/// with at least two members, the mean cross-product of distinct member
/// pairs; the denominator is the overall mean square. Result clamped to
/// `[-1, 1]`.
pub fn rank_icc(data: &TrialDataset) -> Result<f64> {
    rank_icc_from_tally(&tally(data))
}

pub fn rank_icc_from_tally(t: &ComparisonTally) -> Result<f64> {
    let n = t.n() as f64;
    let u: Vec<f64> = t.mid_ranks().into_iter().map(|r| r / n).collect();
    cluster_icc(&u, &t.cluster_of, &t.cluster_sizes)
        .map_err(|e| match e {
            Error::Undefined(r) if r.contains("constant") => Error::Undefined("rank ICC undefined: all outcomes tied".into()),
            other => other,
        })
}

/// Pairwise-product intracluster correlation of `x`, clamped to `[-1, 1]`.
pub fn cluster_icc(x: &[f64], cluster_of: &[usize], sizes: &[usize]) -> Result<f64> {
    let n = x.len() as f64;
    let xbar = mean(x);
    let mut lin = vec![0.0; sizes.len()];
    let mut sq = vec![0.0; sizes.len()];
    for (i, &c) in cluster_of.iter().enumerate() {
        let d = x[i] - xbar;
        lin[c] += d;
        sq[c] += d * d;
    }
    let terms: Vec<f64> = (0..sizes.len())
        .filter(|&c| sizes[c] >= 2)
        .map(|c| {
            let k = sizes[c] as f64;
            (lin[c] * lin[c] - sq[c]) / (k * (k - 1.0))
        })
        .collect();
    if terms.is_empty() {
        return Err(Error::Undefined("ICC needs a cluster with at least two members".into()));
    }
    let denom = sum(sq.iter().copied()) / n;
    if denom <= 0.0 {
        return Err(Error::Undefined("ICC undefined: values are constant".into()));
    }
    Ok((mean(&terms) / denom).clamp(-1.0, 1.0))
}

/// Null permutation variance of the net benefit estimator:
/// `q(1-q) M/(M-1) sum S_i^2 / (n1 n0)^2`.
pub fn permutation_variance(t: &ComparisonTally, q: f64) -> f64 {
    let m = t.m() as f64;
    let ss = sum(t.cluster_scores.iter().map(|&s| (s as f64).powi(2)));
    let pairs = t.pairs() as f64;
    q * (1.0 - q) * m / (m - 1.0) * ss / (pairs * pairs)
}

/// Cluster-score plug-in variance of the net benefit with a single pooled
/// within-arm variance (denominator `M - 2`) in place of the two arm
/// variances.
pub fn pooled_null_variance(t: &ComparisonTally) -> f64 {
    let m = t.m() as f64;
    let m1 = t.m1() as f64;
    let m0 = m - m1;
    let arm = |treated: bool| -> Vec<f64> {
        t.cluster_scores
            .iter()
            .zip(&t.cluster_arms)
            .filter(|(_, a)| a.is_treated() == treated)
            .map(|(&s, _)| s as f64)
            .collect()
    };
    let (s1, s0) = (arm(true), arm(false));
    let (b1, b0) = (mean(&s1), mean(&s0));
    let ss = sum(s1.iter().map(|s| (s - b1).powi(2))) + sum(s0.iter().map(|s| (s - b0).powi(2)));
    let pooled = ss / (m - 2.0);
    let scale = m1 * m0 / (m * t.pairs() as f64);
    scale * scale * (pooled / m1 + pooled / m0)
}
