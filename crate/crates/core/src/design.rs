//! Closed-form asymptotic variances, power and required cluster counts.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist;
use crate::error::{Error, Result};

/// Largest M considered by the ascending search.
pub const M_CAP: u64 = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Estimand {
    #[serde(rename = "wd")]
    WD,
    #[serde(rename = "logwr")]
    LogWR,
    #[serde(rename = "logwo")]
    LogWO,
}

impl Estimand {
    pub const ALL: [Estimand; 3] = [Estimand::WD, Estimand::LogWR, Estimand::LogWO];

    pub fn label(self) -> &'static str {
        match self {
            Estimand::WD => "Net benefit (WD)",
            Estimand::LogWR => "log(Win ratio)",
            Estimand::LogWO => "log(Win odds)",
        }
    }
}

impl FromStr for Estimand {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "wd" | "nb" => Ok(Estimand::WD),
            "logwr" | "wr" => Ok(Estimand::LogWR),
            "logwo" | "wo" => Ok(Estimand::LogWO),
            _ => Err(format!("unknown estimand `{s}` (wd, logwr, logwo)")),
        }
    }
}

impl fmt::Display for Estimand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimand::WD => "wd",
            Estimand::LogWR => "logwr",
            Estimand::LogWO => "logwo",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestKind {
    #[default]
    Z,
    T,
}

impl FromStr for TestKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "z" => Ok(TestKind::Z),
            "t" => Ok(TestKind::T),
            _ => Err(format!("unknown test `{s}` (z, t)")),
        }
    }
}

impl fmt::Display for TestKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TestKind::Z => "z",
            TestKind::T => "t",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sided {
    One,
    #[default]
    Two,
}

/// Pooled pair and triplet probabilities for a composite endpoint.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompositeProbs {
    pub p_w: f64,
    pub p_t: f64,
    pub p_ww: f64,
    pub p_wt: f64,
    pub p_tt: f64,
}

impl CompositeProbs {
    pub fn p_term(&self) -> f64 {
        3.0 * self.p_w + 1.25 * self.p_t
    }

    pub fn q_term(&self) -> f64 {
        self.p_ww + self.p_wt + 0.25 * self.p_tt
    }

    /// Mean squared generalized rank among `n` subjects.
    pub fn second_rank_moment(&self, n: f64) -> f64 {
        1.0 + (n - 1.0) * self.p_term() + (n - 1.0) * (n - 2.0) * self.q_term()
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("composite_probs.p_w", self.p_w),
            ("composite_probs.p_t", self.p_t),
            ("composite_probs.p_ww", self.p_ww),
            ("composite_probs.p_wt", self.p_wt),
            ("composite_probs.p_tt", self.p_tt),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::param(name, format!("must lie in [0,1], got {v}")));
            }
        }
        if self.p_w + self.p_t > 1.0 + 1e-12 {
            return Err(Error::param(
                "composite_probs",
                format!("p_w + p_t = {} exceeds 1", self.p_w + self.p_t),
            ));
        }
        let bound = (self.p_w + 0.5 * self.p_t).powi(2);
        if self.q_term() < bound - 1e-9 {
            return Err(Error::param(
                "composite_probs",
                format!(
                    "inconsistent triplet probabilities: Q = {} below the lower bound {}",
                    self.q_term(),
                    bound
                ),
            ));
        }
        Ok(())
    }

    /// Exact probabilities for `n = sum(blocks)` subjects split into
    /// mutually tied groups, ordered from least to most favorable.
    pub fn from_tie_blocks(blocks: &[u64]) -> Self {
        let n: u64 = blocks.iter().sum();
        let (nf, mut below) = (n as f64, 0u64);
        let d2 = nf * (nf - 1.0);
        let d3 = d2 * (nf - 2.0);
        let (mut w, mut t, mut ww, mut wt, mut tt) = (0u128, 0u128, 0u128, 0u128, 0u128);
        for &b in blocks {
            let (bb, l) = (b as u128, below as u128);
            w += bb * l;
            t += bb * bb.saturating_sub(1);
            ww += bb * l * l.saturating_sub(1);
            wt += bb * l * bb.saturating_sub(1);
            tt += bb * bb.saturating_sub(1) * bb.saturating_sub(2);
            below += b;
        }
        CompositeProbs {
            p_w: w as f64 / d2,
            p_t: t as f64 / d2,
            p_ww: ww as f64 / d3,
            p_wt: wt as f64 / d3,
            p_tt: tt as f64 / d3,
        }
    }
}

fn default_q() -> f64 {
    0.5
}
fn default_alpha() -> f64 {
    0.05
}
fn default_power() -> f64 {
    0.8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignInputs {
    pub estimand: Estimand,
    /// Effect size on the estimand's own scale.
    pub delta: f64,
    #[serde(default)]
    pub pi_tie: f64,
    #[serde(default = "default_q")]
    pub q: f64,
    pub nbar: f64,
    #[serde(default)]
    pub cv: f64,
    /// Rank ICC, or the generalized rank ICC when `composite_probs` is set.
    #[serde(default)]
    pub icc: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub composite_probs: Option<CompositeProbs>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_power")]
    pub target_power: f64,
    #[serde(default)]
    pub test: TestKind,
    #[serde(default)]
    pub sided: Sided,
    /// Drop the finite-effect `W_D^2 / M` correction.
    #[serde(default)]
    pub contiguous: bool,
    /// Cluster count at which to evaluate power, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<u64>,
}

impl DesignInputs {
    pub fn single(estimand: Estimand, delta: f64, pi_tie: f64, icc: f64, nbar: f64, cv: f64) -> Self {
        DesignInputs {
            estimand,
            delta,
            pi_tie,
            q: 0.5,
            nbar,
            cv,
            icc,
            composite_probs: None,
            alpha: 0.05,
            target_power: 0.8,
            test: TestKind::Z,
            sided: Sided::Two,
            contiguous: false,
            m: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, field: &'static str, msg: String| if ok { Ok(()) } else { Err(Error::param(field, msg)) };
        check(self.delta.is_finite(), "delta", format!("must be finite, got {}", self.delta))?;
        check((0.0..1.0).contains(&self.pi_tie), "pi_tie", format!("must lie in [0,1), got {}", self.pi_tie))?;
        check(self.q > 0.0 && self.q < 1.0, "q", format!("must lie in (0,1), got {}", self.q))?;
        check(self.nbar >= 1.0 && self.nbar.is_finite(), "nbar", format!("must be >= 1, got {}", self.nbar))?;
        check(self.cv >= 0.0 && self.cv.is_finite(), "cv", format!("must be >= 0, got {}", self.cv))?;
        check((0.0..=1.0).contains(&self.icc), "icc", format!("must lie in [0,1], got {}", self.icc))?;
        check(self.alpha > 0.0 && self.alpha < 1.0, "alpha", format!("must lie in (0,1), got {}", self.alpha))?;
        check(
            self.target_power > 0.0 && self.target_power < 1.0,
            "target_power",
            format!("must lie in (0,1), got {}", self.target_power),
        )?;
        if self.estimand == Estimand::WD {
            check(
                self.delta.abs() < 1.0 - self.pi_tie,
                "delta",
                format!("|delta| must be below 1 - pi_tie = {}", 1.0 - self.pi_tie),
            )?;
        }
        if let Some(p) = &self.composite_probs {
            p.validate()?;
        }
        if let Some(m) = self.m {
            check(m >= 2, "m", format!("must be >= 2, got {m}"))?;
        }
        Ok(())
    }

    /// Net benefit implied by `delta`.
    pub fn wd(&self) -> f64 {
        wd_from_delta(self.estimand, self.delta, self.pi_tie)
    }

    /// Smallest admissible M: both arms nonempty.
    pub fn min_m(&self) -> u64 {
        let a = (1.0 / self.q).ceil() as u64;
        let b = (1.0 / (1.0 - self.q)).ceil() as u64;
        let base = a.max(b).max(2);
        match self.test {
            TestKind::Z => base,
            TestKind::T => base.max(3),
        }
    }
}

pub fn vif(icc: f64, nbar: f64, cv: f64) -> f64 {
    1.0 + icc * ((1.0 + cv * cv) * nbar - 1.0)
}

pub fn wd_from_delta(estimand: Estimand, delta: f64, pi_tie: f64) -> f64 {
    match estimand {
        Estimand::WD => delta,
        Estimand::LogWR => (1.0 - pi_tie) * (delta / 2.0).tanh(),
        Estimand::LogWO => (delta / 2.0).tanh(),
    }
}

pub fn delta_from_wd(estimand: Estimand, wd: f64, pi_tie: f64) -> f64 {
    match estimand {
        Estimand::WD => wd,
        Estimand::LogWR => 2.0 * (wd / (1.0 - pi_tie)).atanh(),
        Estimand::LogWO => 2.0 * wd.atanh(),
    }
}

/// Delta-method factor taking a net-benefit variance to the estimand scale.
pub fn multiplier(estimand: Estimand, wd: f64, pi_tie: f64) -> f64 {
    match estimand {
        Estimand::WD => 1.0,
        Estimand::LogWR => {
            let r = wd / (1.0 - pi_tie);
            (2.0 / (1.0 - pi_tie) / (1.0 - r * r)).powi(2)
        }
        Estimand::LogWO => (2.0 / (1.0 - wd * wd)).powi(2),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceBreakdown {
    pub wd: f64,
    pub vif: f64,
    /// Positive leading term of the net-benefit variance.
    pub leading: f64,
    /// Finite-effect term subtracted from `leading` (0 in contiguous mode).
    pub subtraction: f64,
    pub multiplier: f64,
    /// Variance on the estimand's scale.
    pub variance: f64,
    pub p: Option<f64>,
    pub q: Option<f64>,
    pub v_of_m: Option<f64>,
}

pub fn variance_breakdown(inputs: &DesignInputs, m: u64) -> Result<VarianceBreakdown> {
    if m < 2 {
        return Err(Error::param("m", format!("must be >= 2, got {m}")));
    }
    let mf = m as f64;
    let wd = inputs.wd();
    let alloc = 1.0 / inputs.q + 1.0 / (1.0 - inputs.q);
    let v = vif(inputs.icc, inputs.nbar, inputs.cv);
    let (leading, p, q, vm) = match &inputs.composite_probs {
        None => {
            let lead = (1.0 - inputs.pi_tie.powi(2)) / (3.0 * mf * inputs.nbar) * alloc * v;
            (lead, None, None, None)
        }
        Some(cp) => {
            let n = mf * inputs.nbar;
            let vm = 4.0 * cp.second_rank_moment(n) - (n + 1.0).powi(2);
            let lead = alloc * v * vm / (mf.powi(3) * inputs.nbar.powi(3));
            (lead, Some(cp.p_term()), Some(cp.q_term()), Some(vm))
        }
    };
    let subtraction = if inputs.contiguous { 0.0 } else { wd * wd / mf };
    let var_d = leading - subtraction;
    if !(var_d > 0.0) || !var_d.is_finite() {
        return Err(Error::Infeasible {
            reason: format!(
                "non-positive variance at M = {m} (leading {leading:.6e}, subtraction {subtraction:.6e}); \
                 the effect is too large for the asymptotic approximation"
            ),
            trajectory: vec![(m, var_d)],
        });
    }
    let mult = multiplier(inputs.estimand, wd, inputs.pi_tie);
    Ok(VarianceBreakdown {
        wd,
        vif: v,
        leading,
        subtraction,
        multiplier: mult,
        variance: mult * var_d,
        p,
        q,
        v_of_m: vm,
    })
}

/// Single-endpoint variance on the estimand's scale.
pub fn variance_single(inputs: &DesignInputs, m: u64) -> Result<f64> {
    if inputs.composite_probs.is_some() {
        return Err(Error::param("composite_probs", "must be absent for the single-endpoint variance"));
    }
    Ok(variance_breakdown(inputs, m)?.variance)
}

/// Composite-endpoint variance on the estimand's scale.
pub fn variance_composite(inputs: &DesignInputs, m: u64) -> Result<f64> {
    let cp = inputs
        .composite_probs
        .as_ref()
        .ok_or_else(|| Error::param("composite_probs", "required for the composite variance"))?;
    cp.validate()?;
    Ok(variance_breakdown(inputs, m)?.variance)
}

fn upper_quantile(p: f64, test: TestKind, m: u64) -> f64 {
    match test {
        TestKind::Z => dist::normal_quantile(p),
        TestKind::T => dist::t_quantile(p, m as f64 - 2.0),
    }
}

/// Critical value of the Wald test at `m` clusters.
pub fn critical_value(alpha: f64, sided: Sided, test: TestKind, m: u64) -> f64 {
    let p = match sided {
        Sided::Two => 1.0 - alpha / 2.0,
        Sided::One => 1.0 - alpha,
    };
    upper_quantile(p, test, m)
}

/// Power from a standard deviation on the estimand's scale.
pub fn power_from_sd(delta: f64, sd: f64, alpha: f64, sided: Sided, test: TestKind, m: u64) -> f64 {
    let x = delta.abs() / sd - critical_value(alpha, sided, test, m);
    match test {
        TestKind::Z => dist::normal_cdf(x),
        TestKind::T => dist::t_cdf(x, m as f64 - 2.0),
    }
}

pub fn power(inputs: &DesignInputs, m: u64) -> Result<f64> {
    inputs.validate()?;
    check_t(inputs, m)?;
    let v = variance_breakdown(inputs, m)?.variance;
    Ok(power_from_sd(inputs.delta, v.sqrt(), inputs.alpha, inputs.sided, inputs.test, m))
}

fn check_t(inputs: &DesignInputs, m: u64) -> Result<()> {
    if inputs.test == TestKind::T && m < 3 {
        return Err(Error::param("m", "the t test needs M >= 3"));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignResult {
    pub estimand: Estimand,
    pub test: TestKind,
    pub sided: Sided,
    pub alpha: f64,
    pub target_power: f64,
    /// Cluster count the remaining quantities refer to.
    pub m: u64,
    pub required_m: Option<u64>,
    pub variance: f64,
    pub se: f64,
    pub power: f64,
    pub wd: f64,
    pub vif: f64,
    pub vif_star: Option<f64>,
    #[serde(rename = "P")]
    pub p: Option<f64>,
    #[serde(rename = "Q")]
    pub q: Option<f64>,
    pub v_of_m: Option<f64>,
    pub leading_term: f64,
    pub subtraction_term: f64,
    /// `subtraction_term / leading_term`.
    pub subtraction_ratio: f64,
}

/// Variance and power at a given M.
pub fn evaluate(inputs: &DesignInputs, m: u64) -> Result<DesignResult> {
    inputs.validate()?;
    check_t(inputs, m)?;
    let b = variance_breakdown(inputs, m)?;
    let pw = power_from_sd(inputs.delta, b.variance.sqrt(), inputs.alpha, inputs.sided, inputs.test, m);
    Ok(DesignResult {
        estimand: inputs.estimand,
        test: inputs.test,
        sided: inputs.sided,
        alpha: inputs.alpha,
        target_power: inputs.target_power,
        m,
        required_m: None,
        variance: b.variance,
        se: b.variance.sqrt(),
        power: pw,
        wd: b.wd,
        vif: b.vif,
        vif_star: inputs.composite_probs.map(|_| b.vif),
        p: b.p,
        q: b.q,
        v_of_m: b.v_of_m,
        leading_term: b.leading,
        subtraction_term: b.subtraction,
        subtraction_ratio: b.subtraction / b.leading,
    })
}

fn passes(inputs: &DesignInputs, m: u64) -> bool {
    match variance_breakdown(inputs, m) {
        Ok(b) => {
            power_from_sd(inputs.delta, b.variance.sqrt(), inputs.alpha, inputs.sided, inputs.test, m)
                >= inputs.target_power
        }
        Err(_) => false,
    }
}

/// Smallest M reaching `target_power`.
///
/// The single-endpoint z test starts from the closed-form solution and
/// verifies its neighbours; every other case scans M upwards, because the
/// composite criterion need not be monotone in M.
pub fn required_clusters(inputs: &DesignInputs) -> Result<DesignResult> {
    inputs.validate()?;
    if inputs.delta == 0.0 {
        return Err(Error::param("delta", "must be nonzero to solve for M"));
    }
    let m = solve_m(inputs)?;
    let mut r = evaluate(inputs, m)?;
    r.required_m = Some(m);
    Ok(r)
}

fn solve_m(inputs: &DesignInputs) -> Result<u64> {
    let floor = inputs.min_m();
    match (inputs.test, inputs.composite_probs.is_some()) {
        (TestKind::Z, false) => closed_form_m(inputs, floor),
        (TestKind::Z, true) => scan_m(inputs, floor),
        (TestKind::T, _) => {
            // any M passing the t criterion passes the z criterion when
            // target_power >= 1/2, so the z solution is a valid lower bound
            let start = if inputs.target_power >= 0.5 {
                let z = DesignInputs { test: TestKind::Z, ..inputs.clone() };
                solve_m(&z)?.max(floor)
            } else {
                floor
            };
            scan_m(inputs, start)
        }
    }
}

fn closed_form_m(inputs: &DesignInputs, floor: u64) -> Result<u64> {
    let b = variance_breakdown(inputs, 1_000_000_000).map_err(|_| {
        Error::infeasible("variance non-positive for every M: effect too large for the asymptotic regime")
    })?;
    // variance(M) = per_cluster / M for single endpoints
    let per_cluster = b.variance * 1e9;
    let za = critical_value(inputs.alpha, inputs.sided, TestKind::Z, 0);
    let zb = dist::normal_quantile(inputs.target_power);
    let raw = (za + zb).powi(2) * per_cluster / (inputs.delta * inputs.delta);
    if !raw.is_finite() || raw > M_CAP as f64 {
        return Err(Error::Infeasible {
            reason: format!("required M ({raw:.3e}) exceeds the cap {M_CAP}"),
            trajectory: vec![(M_CAP, per_cluster / M_CAP as f64)],
        });
    }
    let mut m = (raw.ceil() as u64).max(floor);
    while !passes(inputs, m) {
        m += 1;
        if m > M_CAP {
            return Err(Error::infeasible(format!("required M exceeds the cap {M_CAP}")));
        }
    }
    while m > floor && passes(inputs, m - 1) {
        m -= 1;
    }
    Ok(m)
}

fn scan_m(inputs: &DesignInputs, start: u64) -> Result<u64> {
    let mut trajectory = Vec::new();
    let mut next_log = start;
    for m in start..=M_CAP {
        if passes(inputs, m) {
            return Ok(m);
        }
        if m == next_log || m == M_CAP {
            let v = variance_breakdown(inputs, m).map(|b| b.variance).unwrap_or_else(|e| match e {
                Error::Infeasible { trajectory, .. } => trajectory.first().map(|t| t.1).unwrap_or(f64::NAN),
                _ => f64::NAN,
            });
            trajectory.push((m, v));
            next_log = next_log.saturating_mul(2);
        }
    }
    Err(Error::Infeasible {
        reason: format!("target power not reached for any M up to {M_CAP}"),
        trajectory,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContourRequest {
    pub inputs: DesignInputs,
    pub nbar_grid: Vec<f64>,
    pub cv_grid: Vec<f64>,
}

pub const MAX_AXIS_POINTS: usize = 200;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContourResult {
    pub nbar_grid: Vec<f64>,
    pub cv_grid: Vec<f64>,
    /// `required_m[i][j]` for `cv_grid[i]`, `nbar_grid[j]`; `None` marks an
    /// infeasible cell.
    pub required_m: Vec<Vec<Option<u64>>>,
    pub infeasible_cells: usize,
}

fn check_axis(name: &'static str, grid: &[f64], min: f64) -> Result<()> {
    if grid.is_empty() || grid.len() > MAX_AXIS_POINTS {
        return Err(Error::param(name, format!("needs 1..={MAX_AXIS_POINTS} points, got {}", grid.len())));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::param(name, "must be strictly increasing"));
    }
    if grid.iter().any(|v| !v.is_finite() || *v < min) {
        return Err(Error::param(name, format!("values must be finite and >= {min}")));
    }
    Ok(())
}

pub fn contour(req: &ContourRequest) -> Result<ContourResult> {
    check_axis("nbar_grid", &req.nbar_grid, 1.0)?;
    check_axis("cv_grid", &req.cv_grid, 0.0)?;
    req.inputs.validate()?;
    if req.inputs.delta == 0.0 {
        return Err(Error::param("inputs.delta", "must be nonzero to solve for M"));
    }
    let rows: Vec<Vec<Option<u64>>> = req
        .cv_grid
        .par_iter()
        .map(|&cv| {
            req.nbar_grid
                .iter()
                .map(|&nbar| {
                    let x = DesignInputs { nbar, cv, ..req.inputs.clone() };
                    solve_m(&x).ok()
                })
                .collect()
        })
        .collect();
    let infeasible_cells = rows.iter().flatten().filter(|c| c.is_none()).count();
    Ok(ContourResult {
        nbar_grid: req.nbar_grid.clone(),
        cv_grid: req.cv_grid.clone(),
        required_m: rows,
        infeasible_cells,
    })
}
