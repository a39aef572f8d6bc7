//! Clustered subject-level records.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Randomization arm; serialized as `0` (control) / `1` (treated).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Arm {
    Control,
    Treated,
}

impl Arm {
    pub fn is_treated(self) -> bool {
        matches!(self, Arm::Treated)
    }

    pub fn code(self) -> u8 {
        match self {
            Arm::Control => 0,
            Arm::Treated => 1,
        }
    }
}

impl From<Arm> for u8 {
    fn from(a: Arm) -> u8 {
        a.code()
    }
}

impl TryFrom<u8> for Arm {
    type Error = String;
    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(Arm::Control),
            1 => Ok(Arm::Treated),
            other => Err(format!("arm must be 0 or 1, got {other}")),
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

/// One prioritized outcome component. Larger `tier` = higher priority.
///
/// `censored = true` means the recorded value is a lower bound (for a
/// larger-is-better tier): the event had not occurred by `value`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub tier: u32,
    pub value: f64,
    #[serde(default)]
    pub censored: bool,
}

impl Component {
    pub fn event(tier: u32, value: f64) -> Self {
        Component { tier, value, censored: false }
    }

    pub fn censored(tier: u32, value: f64) -> Self {
        Component { tier, value, censored: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub cluster_id: String,
    pub arm: Arm,
    pub components: Vec<Component>,
}

impl SubjectRecord {
    pub fn new(
        subject_id: impl Into<String>,
        cluster_id: impl Into<String>,
        arm: Arm,
        components: Vec<Component>,
    ) -> Self {
        SubjectRecord {
            subject_id: subject_id.into(),
            cluster_id: cluster_id.into(),
            arm,
            components,
        }
    }

    /// A subject with a single uncensored scalar outcome on tier 1.
    pub fn scalar(
        subject_id: impl Into<String>,
        cluster_id: impl Into<String>,
        arm: Arm,
        value: f64,
    ) -> Self {
        Self::new(subject_id, cluster_id, arm, vec![Component::event(1, value)])
    }

    pub fn component(&self, tier: u32) -> Option<&Component> {
        self.components.iter().find(|c| c.tier == tier)
    }

    /// Tiers sorted by decreasing priority.
    pub fn tiers_desc(&self) -> Vec<u32> {
        let mut t: Vec<u32> = self.components.iter().map(|c| c.tier).collect();
        t.sort_unstable_by(|a, b| b.cmp(a));
        t
    }

    fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::Data(format!(
                "subject `{}` has no outcome components",
                self.subject_id
            )));
        }
        let mut seen = BTreeSet::new();
        for c in &self.components {
            if c.tier == 0 {
                return Err(Error::Data(format!(
                    "subject `{}`: tier 0 is reserved for censoring rows",
                    self.subject_id
                )));
            }
            if !seen.insert(c.tier) {
                return Err(Error::Data(format!(
                    "subject `{}` has tier {} more than once",
                    self.subject_id, c.tier
                )));
            }
            if !c.value.is_finite() {
                return Err(Error::Data(format!(
                    "subject `{}` tier {}: non-finite value",
                    self.subject_id, c.tier
                )));
            }
        }
        Ok(())
    }
}

/// A validated cluster-randomized dataset.
///
/// Clusters are indexed in order of first appearance.
#[derive(Clone, Debug)]
pub struct TrialDataset {
    subjects: Vec<SubjectRecord>,
    tiers: Vec<u32>,
    cluster_ids: Vec<String>,
    cluster_arms: Vec<Arm>,
    cluster_of: Vec<usize>,
    cluster_sizes: Vec<usize>,
}

impl TrialDataset {
    pub fn new(subjects: Vec<SubjectRecord>) -> Result<Self> {
        let first = subjects
            .first()
            .ok_or_else(|| Error::Data("dataset has no subjects".into()))?;
        first.validate()?;
        let tiers = first.tiers_desc();

        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut cluster_ids = Vec::new();
        let mut cluster_arms = Vec::new();
        let mut cluster_sizes = Vec::new();
        let mut cluster_of = Vec::with_capacity(subjects.len());

        for s in &subjects {
            s.validate()?;
            if s.tiers_desc() != tiers {
                return Err(Error::TierMismatch {
                    a: first.subject_id.clone(),
                    b: s.subject_id.clone(),
                });
            }
            let c = match index.get(s.cluster_id.as_str()) {
                Some(&c) => {
                    if cluster_arms[c] != s.arm {
                        return Err(Error::Data(format!(
                            "cluster `{}` contains subjects in both arms (subject `{}`)",
                            s.cluster_id, s.subject_id
                        )));
                    }
                    c
                }
                None => {
                    let c = cluster_ids.len();
                    index.insert(s.cluster_id.as_str(), c);
                    cluster_ids.push(s.cluster_id.clone());
                    cluster_arms.push(s.arm);
                    cluster_sizes.push(0);
                    c
                }
            };
            cluster_sizes[c] += 1;
            cluster_of.push(c);
        }

        if cluster_ids.len() < 2 {
            return Err(Error::Data(format!(
                "need at least 2 clusters, found {}",
                cluster_ids.len()
            )));
        }
        let m1 = cluster_arms.iter().filter(|a| a.is_treated()).count();
        if m1 == 0 || m1 == cluster_ids.len() {
            return Err(Error::Data(
                "both arms must contain at least one cluster".into(),
            ));
        }
        drop(index);

        Ok(TrialDataset {
            subjects,
            tiers,
            cluster_ids,
            cluster_arms,
            cluster_of,
            cluster_sizes,
        })
    }

    pub fn subjects(&self) -> &[SubjectRecord] {
        &self.subjects
    }

    pub fn into_subjects(self) -> Vec<SubjectRecord> {
        self.subjects
    }

    /// Tier vocabulary, highest priority first.
    pub fn tiers(&self) -> &[u32] {
        &self.tiers
    }

    /// Number of clusters M.
    pub fn m(&self) -> usize {
        self.cluster_ids.len()
    }

    /// Treated cluster count.
    pub fn m1(&self) -> usize {
        self.cluster_arms.iter().filter(|a| a.is_treated()).count()
    }

    pub fn m0(&self) -> usize {
        self.m() - self.m1()
    }

    pub fn n(&self) -> usize {
        self.subjects.len()
    }

    pub fn n1(&self) -> usize {
        self.subjects.iter().filter(|s| s.arm.is_treated()).count()
    }

    pub fn n0(&self) -> usize {
        self.n() - self.n1()
    }

    /// Proportion of treated clusters.
    pub fn q_hat(&self) -> f64 {
        self.m1() as f64 / self.m() as f64
    }

    pub fn cluster_ids(&self) -> &[String] {
        &self.cluster_ids
    }

    pub fn cluster_arms(&self) -> &[Arm] {
        &self.cluster_arms
    }

    pub fn cluster_sizes(&self) -> &[usize] {
        &self.cluster_sizes
    }

    /// Cluster index of each subject, aligned with [`Self::subjects`].
    pub fn cluster_of(&self) -> &[usize] {
        &self.cluster_of
    }

    pub fn mean_cluster_size(&self) -> f64 {
        self.n() as f64 / self.m() as f64
    }

    /// Coefficient of variation of cluster sizes (population form).
    pub fn cluster_size_cv(&self) -> f64 {
        let mean = self.mean_cluster_size();
        let var = self
            .cluster_sizes
            .iter()
            .map(|&s| (s as f64 - mean).powi(2))
            .sum::<f64>()
            / self.m() as f64;
        var.sqrt() / mean
    }
}
