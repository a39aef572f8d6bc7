//! The hierarchical pairwise win rule.
//!
//! Tiers are visited from highest to lowest priority. Within one tier, with
//! `a` the subject whose perspective is taken and values oriented so that
//! larger is better:
//!
//! - `a` wins if `b` has an event at `e_b` and either `a` has an event later
//!   than `e_b`, or `a` is censored at a time `>= e_b` (a censoring time equal
//!   to an event time is treated as occurring after the event).
//! - symmetrically for a loss;
//! - anything else (both censored, equal event times, or the earlier time is
//!   a censoring time) is inconclusive and the next tier decides.
//!
//! For an uncensored scalar outcome this reduces to plain comparison of
//! values, with equal values falling through.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{Component, SubjectRecord};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Win,
    Loss,
    Tie,
}

impl Outcome {
    pub fn flip(self) -> Self {
        match self {
            Outcome::Win => Outcome::Loss,
            Outcome::Loss => Outcome::Win,
            Outcome::Tie => Outcome::Tie,
        }
    }

    pub fn sign(self) -> i8 {
        match self {
            Outcome::Win => 1,
            Outcome::Loss => -1,
            Outcome::Tie => 0,
        }
    }

    fn from_sign(s: i8) -> Self {
        match s.signum() {
            1 => Outcome::Win,
            -1 => Outcome::Loss,
            _ => Outcome::Tie,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TierDirection {
    #[default]
    LargerIsBetter,
    /// Values are negated before comparison; a censored value then means
    /// the true value is at most the recorded one.
    SmallerIsBetter,
}

impl TierDirection {
    fn orient(self, v: f64) -> f64 {
        match self {
            TierDirection::LargerIsBetter => v,
            TierDirection::SmallerIsBetter => -v,
        }
    }
}

/// Per-tier comparison directions. Tiers not listed use larger-is-better.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRule {
    #[serde(default)]
    directions: BTreeMap<u32, TierDirection>,
}

impl ComparisonRule {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_direction(mut self, tier: u32, dir: TierDirection) -> Self {
        self.directions.insert(tier, dir);
        self
    }

    pub fn direction(&self, tier: u32) -> TierDirection {
        self.directions.get(&tier).copied().unwrap_or_default()
    }

    /// Outcome of `a` versus `b`, from `a`'s perspective.
    pub fn classify(&self, a: &SubjectRecord, b: &SubjectRecord) -> Result<Outcome> {
        let ta = a.tiers_desc();
        if ta != b.tiers_desc() || ta.is_empty() {
            return Err(Error::TierMismatch {
                a: a.subject_id.clone(),
                b: b.subject_id.clone(),
            });
        }
        for tier in ta {
            let dir = self.direction(tier);
            let ca = a.component(tier).expect("tier present");
            let cb = b.component(tier).expect("tier present");
            let s = tier_sign(
                dir.orient(ca.value),
                !ca.censored,
                dir.orient(cb.value),
                !cb.censored,
            );
            if s != 0 {
                return Ok(Outcome::from_sign(s));
            }
        }
        Ok(Outcome::Tie)
    }
}

/// Classify with the default rule (every tier larger-is-better).
pub fn classify_pair(a: &SubjectRecord, b: &SubjectRecord) -> Result<Outcome> {
    ComparisonRule::default().classify(a, b)
}

/// Single-tier sign: +1 if `a` wins, -1 if `b` wins, 0 if inconclusive.
#[inline(always)]
pub(crate) fn tier_sign(a: f64, a_event: bool, b: f64, b_event: bool) -> i8 {
    if b_event && (a > b || (a == b && !a_event)) {
        1
    } else if a_event && (b > a || (a == b && !b_event)) {
        -1
    } else {
        0
    }
}

/// Dense, oriented tier matrix for fast pairwise evaluation.
#[derive(Clone, Debug)]
pub(crate) struct Kernel {
    k: usize,
    values: Vec<f64>,
    events: Vec<bool>,
}

impl Kernel {
    /// `components` per subject must already be validated to share `tiers`.
    pub(crate) fn build<'a, I>(tiers: &[u32], rule: &ComparisonRule, subjects: I) -> Self
    where
        I: IntoIterator<Item = &'a [Component]>,
    {
        let k = tiers.len();
        let mut values = Vec::new();
        let mut events = Vec::new();
        for comps in subjects {
            for &t in tiers {
                let c = comps.iter().find(|c| c.tier == t).expect("validated tiers");
                values.push(rule.direction(t).orient(c.value));
                events.push(!c.censored);
            }
        }
        Kernel { k, values, events }
    }

    /// Row-major oriented values and event flags, `k` per subject.
    pub(crate) fn from_raw(k: usize, values: Vec<f64>, events: Vec<bool>) -> Self {
        debug_assert_eq!(values.len(), events.len());
        Kernel { k, values, events }
    }

    pub(crate) fn len(&self) -> usize {
        self.values.len() / self.k.max(1)
    }

    pub(crate) fn tiers(&self) -> usize {
        self.k
    }

    pub(crate) fn all_events(&self) -> bool {
        self.events.iter().all(|&e| e)
    }

    pub(crate) fn value(&self, i: usize, t: usize) -> f64 {
        self.values[i * self.k + t]
    }

    /// Rows as fixed-size arrays; `K` must equal the tier count.
    pub(crate) fn fixed_rows<const K: usize>(&self) -> (Vec<[f64; K]>, Vec<[bool; K]>) {
        assert_eq!(K, self.k);
        let vals = self.values.chunks_exact(K).map(|c| c.try_into().expect("chunk")).collect();
        let evs = self.events.chunks_exact(K).map(|c| c.try_into().expect("chunk")).collect();
        (vals, evs)
    }

    #[inline]
    pub(crate) fn sign(&self, i: usize, j: usize) -> i8 {
        let k = self.k;
        let (vi, ei) = (&self.values[i * k..i * k + k], &self.events[i * k..i * k + k]);
        let (vj, ej) = (&self.values[j * k..j * k + k], &self.events[j * k..j * k + k]);
        for t in 0..k {
            let s = tier_sign(vi[t], ei[t], vj[t], ej[t]);
            if s != 0 {
                return s;
            }
        }
        0
    }
}

/// Branch-free comparison of two rows with `K` tiers.
#[inline]
pub(crate) fn sign_fixed<const K: usize>(a: &[f64; K], ae: &[bool; K], b: &[f64; K], be: &[bool; K]) -> i8 {
    let mut out = 0i8;
    for t in 0..K {
        let eq = a[t] == b[t];
        let win = be[t] & ((a[t] > b[t]) | (eq & !ae[t]));
        let loss = ae[t] & ((b[t] > a[t]) | (eq & !be[t]));
        out += ((out == 0) as i8) * (win as i8 - loss as i8);
    }
    out
}
