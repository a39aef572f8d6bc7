//! Pairwise win/loss/tie counts, individual net scores and cluster scores.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compare::{sign_fixed, ComparisonRule, Kernel};
use crate::data::{Arm, TrialDataset};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTally {
    /// Cross-arm pairs won by the treated subject.
    pub wins: u64,
    pub losses: u64,
    pub ties: u64,
    pub n1: usize,
    pub n0: usize,
    /// Per subject: others beaten / tied, over all other subjects.
    pub subject_wins: Vec<u32>,
    pub subject_ties: Vec<u32>,
    /// Per subject net score `wins - losses` over all other subjects.
    pub phi: Vec<i64>,
    /// Per cluster `S_i`, the sum of member net scores.
    pub cluster_scores: Vec<i64>,
    pub cluster_arms: Vec<Arm>,
    pub cluster_sizes: Vec<usize>,
    pub cluster_of: Vec<usize>,
}

/// Arm-agnostic pair and triplet probabilities computed from all subjects.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PooledProbabilities {
    pub p_w: f64,
    pub p_l: f64,
    pub p_t: f64,
    pub p_ww: f64,
    pub p_wt: f64,
    pub p_tt: f64,
}

impl ComparisonTally {
    pub fn n(&self) -> usize {
        self.phi.len()
    }

    pub fn m(&self) -> usize {
        self.cluster_scores.len()
    }

    pub fn m1(&self) -> usize {
        self.cluster_arms.iter().filter(|a| a.is_treated()).count()
    }

    pub fn pairs(&self) -> u64 {
        self.n1 as u64 * self.n0 as u64
    }

    pub fn wd(&self) -> f64 {
        (self.wins as f64 - self.losses as f64) / self.pairs() as f64
    }

    pub fn pi_tie(&self) -> f64 {
        self.ties as f64 / self.pairs() as f64
    }

    /// Generalized mid-ranks `(phi + n + 1) / 2`.
    pub fn mid_ranks(&self) -> Vec<f64> {
        let n1 = self.n() as f64 + 1.0;
        self.phi.iter().map(|&p| (p as f64 + n1) / 2.0).collect()
    }

    pub fn pooled_probabilities(&self) -> Result<PooledProbabilities> {
        pooled_from_counts(&self.subject_wins, &self.subject_ties)
    }
}

/// U-statistic pair and triplet probabilities from per-subject counts of
/// others beaten and tied.
pub(crate) fn pooled_from_counts(subject_wins: &[u32], subject_ties: &[u32]) -> Result<PooledProbabilities> {
    let n = subject_wins.len() as u128;
    if n < 3 {
        return Err(Error::Data("pooled triplet probabilities need n >= 3".into()));
    }
    let (mut sw, mut st, mut sww, mut swt, mut stt) = (0u128, 0u128, 0u128, 0u128, 0u128);
    for (&w, &t) in subject_wins.iter().zip(subject_ties) {
        let (w, t) = (w as u128, t as u128);
        sw += w;
        st += t;
        sww += w * w.saturating_sub(1);
        swt += w * t;
        stt += t * t.saturating_sub(1);
    }
    let d2 = (n * (n - 1)) as f64;
    let d3 = d2 * (n - 2) as f64;
    let p_w = sw as f64 / d2;
    let p_t = st as f64 / d2;
    Ok(PooledProbabilities {
        p_w,
        p_l: p_w,
        p_t,
        p_ww: sww as f64 / d3,
        p_wt: swt as f64 / d3,
        p_tt: stt as f64 / d3,
    })
}

pub fn tally(data: &TrialDataset) -> ComparisonTally {
    tally_with_rule(data, &ComparisonRule::default())
}

pub fn tally_with_rule(data: &TrialDataset, rule: &ComparisonRule) -> ComparisonTally {
    let kernel = Kernel::build(
        data.tiers(),
        rule,
        data.subjects().iter().map(|s| s.components.as_slice()),
    );
    let treated: Vec<bool> = data.subjects().iter().map(|s| s.arm.is_treated()).collect();
    let (wins, losses, ties, subject_wins, subject_ties) =
        if kernel.tiers() == 1 && kernel.all_events() {
            scalar_counts(&kernel, &treated)
        } else {
            pairwise_counts(&kernel, &treated)
        };

    let n = treated.len();
    let nm1 = n as i64 - 1;
    let phi: Vec<i64> = subject_wins
        .iter()
        .zip(&subject_ties)
        .map(|(&w, &t)| 2 * w as i64 + t as i64 - nm1)
        .collect();
    let mut cluster_scores = vec![0i64; data.m()];
    for (&c, &p) in data.cluster_of().iter().zip(&phi) {
        cluster_scores[c] += p;
    }
    let n1 = treated.iter().filter(|&&t| t).count();
    ComparisonTally {
        wins,
        losses,
        ties,
        n1,
        n0: n - n1,
        subject_wins,
        subject_ties,
        phi,
        cluster_scores,
        cluster_arms: data.cluster_arms().to_vec(),
        cluster_sizes: data.cluster_sizes().to_vec(),
        cluster_of: data.cluster_of().to_vec(),
    }
}

pub(crate) type Counts = (u64, u64, u64, Vec<u32>, Vec<u32>);

/// O(n log n) path for one uncensored scalar tier.
pub(crate) fn scalar_counts(kernel: &Kernel, treated: &[bool]) -> Counts {
    let n = treated.len();
    let vals: Vec<f64> = (0..n).map(|i| kernel.value(i, 0)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));

    let mut subject_wins = vec![0u32; n];
    let mut subject_ties = vec![0u32; n];
    let mut below = 0usize;
    let mut g = 0;
    while g < n {
        let mut h = g;
        while h < n && vals[order[h]] == vals[order[g]] {
            h += 1;
        }
        for &i in &order[g..h] {
            subject_wins[i] = below as u32;
            subject_ties[i] = (h - g - 1) as u32;
        }
        below += h - g;
        g = h;
    }

    let mut control: Vec<f64> = (0..n).filter(|&i| !treated[i]).map(|i| vals[i]).collect();
    control.sort_by(f64::total_cmp);
    let (mut w, mut t) = (0u64, 0u64);
    for i in (0..n).filter(|&i| treated[i]) {
        let lo = control.partition_point(|&c| c < vals[i]);
        let hi = control.partition_point(|&c| c <= vals[i]);
        w += lo as u64;
        t += (hi - lo) as u64;
    }
    let n1 = treated.iter().filter(|&&x| x).count() as u64;
    let l = n1 * control.len() as u64 - w - t;
    (w, l, t, subject_wins, subject_ties)
}

struct Acc {
    w: u64,
    l: u64,
    t: u64,
    wins: Vec<u32>,
    ties: Vec<u32>,
}

impl Acc {
    fn new(n: usize) -> Self {
        Acc { w: 0, l: 0, t: 0, wins: vec![0; n], ties: vec![0; n] }
    }

    fn merge(mut self, o: Acc) -> Acc {
        self.w += o.w;
        self.l += o.l;
        self.t += o.t;
        for (a, b) in self.wins.iter_mut().zip(o.wins) {
            *a += b;
        }
        for (a, b) in self.ties.iter_mut().zip(o.ties) {
            *a += b;
        }
        self
    }
}

/// All unordered pairs; rows are distributed over the rayon pool and the
/// integer counters are reduced exactly, so results do not depend on the
/// thread count.
pub(crate) fn pairwise_counts(kernel: &Kernel, treated: &[bool]) -> Counts {
    match kernel.tiers() {
        1 => pairwise_fixed::<1>(kernel, treated),
        2 => pairwise_fixed::<2>(kernel, treated),
        3 => pairwise_fixed::<3>(kernel, treated),
        4 => pairwise_fixed::<4>(kernel, treated),
        _ => pairwise_with(treated, |i, j| kernel.sign(i, j)),
    }
}

fn pairwise_fixed<const K: usize>(kernel: &Kernel, treated: &[bool]) -> Counts {
    let (vals, evs) = kernel.fixed_rows::<K>();
    pairwise_with(treated, |i, j| sign_fixed(&vals[i], &evs[i], &vals[j], &evs[j]))
}

fn pairwise_with<F: Fn(usize, usize) -> i8 + Sync>(treated: &[bool], sign: F) -> Counts {
    let n = treated.len();
    let acc = (0..n)
        .into_par_iter()
        .with_min_len(16)
        .fold(
            || Acc::new(n),
            |mut acc, i| {
                let ti = treated[i];
                let (mut wi, mut tie_i) = (0u32, 0u32);
                for j in i + 1..n {
                    let s = sign(i, j);
                    let (pos, neg, zero) = ((s == 1) as u32, (s == -1) as u32, (s == 0) as u32);
                    wi += pos;
                    tie_i += zero;
                    acc.wins[j] += neg;
                    acc.ties[j] += zero;
                    // orient cross-arm pairs from the treated subject
                    let cross = (ti != treated[j]) as u64;
                    let (tw, tl) = if ti { (pos, neg) } else { (neg, pos) };
                    acc.w += cross * tw as u64;
                    acc.l += cross * tl as u64;
                    acc.t += cross * zero as u64;
                }
                acc.wins[i] += wi;
                acc.ties[i] += tie_i;
                acc
            },
        )
        .reduce(|| Acc::new(n), Acc::merge);
    (acc.w, acc.l, acc.t, acc.wins, acc.ties)
}
