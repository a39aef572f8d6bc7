//! Simulation harness: empirical operating characteristics of the cluster
//! win tests against closed-form predictions.
//!
//! Replicate `r` of cell `c` draws its trial from
//! `generative::stream(seed, 5, c << 32 | r)`, so results do not depend on
//! the number of worker threads.

use std::collections::HashMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::TrialDataset;
use crate::design::{self, DesignInputs, Estimand, Sided, TestKind};
use crate::error::{Error, Result};
use crate::estimate::{estimate, Alternative};
use crate::generative::{
    estimate_design_inputs, sample_trial_with, stream, ClusterSize, DesignInputEstimate, EstimationOptions,
    GenerativeSpec,
};

const PURPOSE_SIM: u64 = 5;

/// How the number of clusters of a cell is chosen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterCount {
    Fixed(u64),
    /// Smallest M reaching `target_power` for the log win ratio z-test,
    /// using the design inputs of `reference` (the cell's own model when
    /// absent).
    Calibrated {
        target_power: f64,
        #[serde(default)]
        reference: Option<GenerativeSpec>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioCell {
    pub label: String,
    pub spec: GenerativeSpec,
    pub clusters: ClusterCount,
}

fn default_estimands() -> Vec<Estimand> {
    Estimand::ALL.to_vec()
}

fn default_tests() -> Vec<TestKind> {
    vec![TestKind::Z, TestKind::T]
}

fn default_alpha() -> f64 {
    0.05
}

fn default_replicates() -> usize {
    2_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioGrid {
    pub cells: Vec<ScenarioCell>,
    #[serde(default = "default_estimands")]
    pub estimands: Vec<Estimand>,
    #[serde(default = "default_tests")]
    pub tests: Vec<TestKind>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub estimation: EstimationOptions,
}

impl ScenarioGrid {
    pub fn validate(&self) -> Result<()> {
        if self.cells.is_empty() {
            return Err(Error::param("cells", "grid has no cells"));
        }
        if self.replicates < 100 {
            return Err(Error::param("replicates", format!("must be >= 100, got {}", self.replicates)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::param("alpha", "must lie in (0,1)"));
        }
        if self.estimands.is_empty() || self.tests.is_empty() {
            return Err(Error::param("estimands", "need at least one estimand and one test"));
        }
        if self.cells.len() >= 1 << 16 {
            return Err(Error::param("cells", "too many cells"));
        }
        for c in &self.cells {
            c.spec.validate()?;
            if let ClusterCount::Fixed(m) = c.clusters {
                if m < 4 {
                    return Err(Error::param("clusters", format!("cell {}: need M >= 4", c.label)));
                }
            }
        }
        self.estimation.validate()
    }

    /// Cells for every combination of model and cluster-size setting.
    pub fn cross(models: &[(String, GenerativeSpec)], sizes: &[ClusterSize], clusters: &ClusterCount) -> Vec<ScenarioCell> {
        let mut cells = Vec::new();
        for (name, spec) in models {
            for cs in sizes {
                let (nbar, cv) = (cs.mean().unwrap_or(f64::NAN), cs.cv().unwrap_or(f64::NAN));
                cells.push(ScenarioCell {
                    label: format!("{name} Nbar={nbar:.0} CV={cv:.3}"),
                    spec: spec.with_cluster_size(cs.clone()),
                    clusters: clusters.clone(),
                });
            }
        }
        cells
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub estimand: Estimand,
    pub test: TestKind,
    pub replicates: usize,
    pub rejections: usize,
    /// Replicates where the estimate or test was unavailable; counted as
    /// non-rejections.
    pub failures: usize,
    pub empirical: f64,
    pub mc_se: f64,
    pub predicted: Option<f64>,
    pub true_delta: f64,
    pub mean_estimate: Option<f64>,
    pub mean_se: Option<f64>,
    pub mcsd: Option<f64>,
    pub coverage: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub label: String,
    pub m: u64,
    pub nbar: f64,
    pub cv: f64,
    pub inputs: DesignInputEstimate,
    pub metrics: Vec<MetricSummary>,
    /// Replicates whose dataset could not be generated or analysed.
    pub failed_replicates: usize,
}

impl ScenarioResult {
    pub fn metric(&self, e: Estimand, t: TestKind) -> Option<&MetricSummary> {
        self.metrics.iter().find(|m| m.estimand == e && m.test == t)
    }
}

/// Per replicate, per (estimand, test): `(estimate, se, reject, covers)`.
type ReplicateOutcome = Option<Vec<Option<(f64, f64, bool, bool)>>>;

fn analyse(data: &TrialDataset, pairs: &[(Estimand, TestKind)], truth: &[f64], alpha: f64) -> ReplicateOutcome {
    let est = estimate(data, alpha, Alternative::TwoSided).ok()?;
    Some(
        pairs
            .iter()
            .zip(truth)
            .map(|(&(e, t), &d)| {
                let r = est.get(e);
                let (x, se, w) = (r.estimate?, r.se?, r.test(t)?);
                let covers = matches!((w.ci_lower, w.ci_upper), (Some(lo), Some(hi)) if lo <= d && d <= hi);
                Some((x, se, w.p_value < alpha, covers))
            })
            .collect(),
    )
}

fn summarize(pairs: &[(Estimand, TestKind)], truth: &[f64], outcomes: &[ReplicateOutcome]) -> Vec<MetricSummary> {
    let b = outcomes.len();
    pairs
        .iter()
        .enumerate()
        .map(|(j, &(e, t))| {
            let ok: Vec<(f64, f64, bool, bool)> =
                outcomes.iter().filter_map(|o| o.as_ref().and_then(|v| v[j])).collect();
            let rejections = ok.iter().filter(|o| o.2).count();
            let r = rejections as f64 / b as f64;
            let (mean_estimate, mean_se, mcsd, coverage) = if ok.is_empty() {
                (None, None, None, None)
            } else {
                let xs: Vec<f64> = ok.iter().map(|o| o.0).collect();
                let ses: Vec<f64> = ok.iter().map(|o| o.1).collect();
                let sd = if xs.len() > 1 { Some(crate::numeric::sample_variance(&xs).sqrt()) } else { None };
                (
                    Some(crate::numeric::mean(&xs)),
                    Some(crate::numeric::mean(&ses)),
                    sd,
                    Some(ok.iter().filter(|o| o.3).count() as f64 / ok.len() as f64),
                )
            };
            MetricSummary {
                estimand: e,
                test: t,
                replicates: b,
                rejections,
                failures: b - ok.len(),
                empirical: r,
                mc_se: (r * (1.0 - r) / b as f64).sqrt(),
                predicted: None,
                true_delta: truth[j],
                mean_estimate,
                mean_se,
                mcsd,
                coverage,
            }
        })
        .collect()
}

/// Operating characteristics over a fixed list of datasets.
pub fn evaluate_datasets(
    datasets: &[TrialDataset],
    estimands: &[Estimand],
    tests: &[TestKind],
    truth: &[f64],
    alpha: f64,
) -> Vec<MetricSummary> {
    let pairs = metric_pairs(estimands, tests);
    let tr = pair_truth(&pairs, estimands, truth);
    let outcomes: Vec<ReplicateOutcome> = datasets.iter().map(|d| analyse(d, &pairs, &tr, alpha)).collect();
    summarize(&pairs, &tr, &outcomes)
}

fn metric_pairs(estimands: &[Estimand], tests: &[TestKind]) -> Vec<(Estimand, TestKind)> {
    estimands.iter().flat_map(|&e| tests.iter().map(move |&t| (e, t))).collect()
}

fn pair_truth(pairs: &[(Estimand, TestKind)], estimands: &[Estimand], truth: &[f64]) -> Vec<f64> {
    pairs
        .iter()
        .map(|(e, _)| estimands.iter().position(|x| x == e).map(|i| truth[i]).unwrap_or(0.0))
        .collect()
}

/// Design inputs keyed by model, ignoring cluster sizes (the estimators of
/// the inputs do not use them).
pub struct InputCache {
    opts: EstimationOptions,
    cache: HashMap<String, DesignInputEstimate>,
}

impl InputCache {
    pub fn new(opts: EstimationOptions) -> Self {
        InputCache { opts, cache: HashMap::new() }
    }

    pub fn get(&mut self, spec: &GenerativeSpec) -> Result<DesignInputEstimate> {
        let key = serde_json::to_string(&spec.with_cluster_size(ClusterSize::Fixed { size: 1 }))?;
        if let Some(e) = self.cache.get(&key) {
            return Ok(e.clone());
        }
        let e = estimate_design_inputs(spec, &self.opts)?;
        self.cache.insert(key, e.clone());
        Ok(e)
    }
}

fn inputs_for(est: &DesignInputEstimate, spec: &GenerativeSpec, e: Estimand, t: TestKind, alpha: f64) -> Result<DesignInputs> {
    let cs = spec.cluster_size();
    let mut d = est.to_design_inputs(e, cs.mean()?, cs.cv()?);
    d.test = t;
    d.alpha = alpha;
    d.sided = Sided::Two;
    Ok(d)
}

/// Required clusters for the log win ratio z-test at `target_power`.
pub fn calibrate_m(est: &DesignInputEstimate, spec: &GenerativeSpec, target_power: f64, alpha: f64) -> Result<u64> {
    let mut d = inputs_for(est, spec, Estimand::LogWR, TestKind::Z, alpha)?;
    d.target_power = target_power;
    let r = design::required_clusters(&d)?;
    r.required_m.ok_or_else(|| Error::infeasible("no M reaches the target power"))
}

pub fn run_grid(grid: &ScenarioGrid) -> Result<Vec<ScenarioResult>> {
    let mut cache = InputCache::new(grid.estimation.clone());
    run_grid_with_cache(grid, &mut cache)
}

pub fn run_grid_with_cache(grid: &ScenarioGrid, cache: &mut InputCache) -> Result<Vec<ScenarioResult>> {
    grid.validate()?;
    let pairs = metric_pairs(&grid.estimands, &grid.tests);
    let mut results = Vec::with_capacity(grid.cells.len());
    for (ci, cell) in grid.cells.iter().enumerate() {
        let inputs = cache.get(&cell.spec)?;
        let m = match &cell.clusters {
            ClusterCount::Fixed(m) => *m,
            ClusterCount::Calibrated { target_power, reference } => {
                let r = reference.as_ref().unwrap_or(&cell.spec).with_cluster_size(cell.spec.cluster_size().clone());
                let ref_inputs = cache.get(&r)?;
                calibrate_m(&ref_inputs, &r, *target_power, grid.alpha)?
            }
        };
        let truth: Vec<f64> = grid.estimands.iter().map(|&e| inputs.delta(e).value).collect();
        let tr = pair_truth(&pairs, &grid.estimands, &truth);
        let outcomes: Vec<ReplicateOutcome> = (0..grid.replicates)
            .into_par_iter()
            .map(|r| {
                let mut rng = stream(grid.seed, PURPOSE_SIM, ((ci as u64) << 32) | r as u64);
                let data = sample_trial_with(&cell.spec, m as usize, &mut rng).ok()?;
                analyse(&data, &pairs, &tr, grid.alpha)
            })
            .collect();
        let mut metrics = summarize(&pairs, &tr, &outcomes);
        for mt in &mut metrics {
            mt.predicted = inputs_for(&inputs, &cell.spec, mt.estimand, mt.test, grid.alpha)
                .and_then(|d| design::power(&d, m))
                .ok();
        }
        let cs = cell.spec.cluster_size();
        results.push(ScenarioResult {
            label: cell.label.clone(),
            m,
            nbar: cs.mean()?,
            cv: cs.cv()?,
            inputs,
            metrics,
            failed_replicates: outcomes.iter().filter(|o| o.is_none()).count(),
        });
    }
    Ok(results)
}

/// Comma-separated summary, one row per cell, estimand and test.
pub fn summary_table(results: &[ScenarioResult]) -> String {
    let mut out = String::from("Scenario,M,Estimand,Test,Empirical,Predicted,MCSD,MeanSE,MCSE,Coverage,Failures\n");
    let f = |x: Option<f64>| x.map(|v| format!("{v:.4}")).unwrap_or_else(|| "NA".into());
    for r in results {
        for m in &r.metrics {
            let _ = writeln!(
                out,
                "\"{}\",{},{},{},{:.4},{},{},{},{:.4},{},{}",
                r.label.replace('"', "'"),
                r.m,
                m.estimand,
                m.test,
                m.empirical,
                f(m.predicted),
                f(m.mcsd),
                f(m.mean_se),
                m.mc_se,
                f(m.coverage),
                m.failures
            );
        }
    }
    out
}
