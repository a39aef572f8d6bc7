use proptest::prelude::*;

use wincrt_core::compare::Outcome;
use wincrt_core::design::{self, CompositeProbs};
use wincrt_core::io::{parse_long_format, serialize_long_format, LongFormatOptions};
use wincrt_core::{
    classify_pair, estimate, tally, Alternative, Arm, Component, DesignInputs, Estimand, SubjectRecord, TrialDataset,
};

/// Clusters with per-subject integer scores. The first four clusters
/// alternate arms so each arm has at least two.
fn scalar_trial() -> impl Strategy<Value = TrialDataset> {
    prop::collection::vec((any::<bool>(), prop::collection::vec(0i32..6, 1..6)), 4..9).prop_map(|clusters| {
        let mut subjects = Vec::new();
        for (c, (treated, ys)) in clusters.iter().enumerate() {
            let arm = match c {
                0 | 2 => Arm::Treated,
                1 | 3 => Arm::Control,
                _ if *treated => Arm::Treated,
                _ => Arm::Control,
            };
            for (j, y) in ys.iter().enumerate() {
                subjects.push(SubjectRecord::scalar(format!("s{c}_{j}"), format!("c{c}"), arm, *y as f64));
            }
        }
        TrialDataset::new(subjects).unwrap()
    })
}

fn two_tier_subject() -> impl Strategy<Value = (f64, bool, f64, bool)> {
    (0u8..5, any::<bool>(), 0u8..5, any::<bool>()).prop_map(|(a, ac, b, bc)| (a as f64, ac, b as f64, bc))
}

fn composite(id: &str, arm: Arm, s: (f64, bool, f64, bool)) -> SubjectRecord {
    let c = |tier, v, cens| if cens { Component::censored(tier, v) } else { Component::event(tier, v) };
    SubjectRecord::new(id, id, arm, vec![c(2, s.0, s.1), c(1, s.2, s.3)])
}

fn mid_ranks(values: &[f64]) -> Vec<f64> {
    values
        .iter()
        .map(|v| {
            let below = values.iter().filter(|u| *u < v).count() as f64;
            let equal = values.iter().filter(|u| *u == v).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

proptest! {
    #[test]
    fn pair_counts_partition_cross_arm_pairs(data in scalar_trial()) {
        let t = tally(&data);
        prop_assert_eq!(t.wins + t.losses + t.ties, (data.n1() * data.n0()) as u64);
    }

    #[test]
    fn cluster_scores_sum_to_zero(data in scalar_trial()) {
        let t = tally(&data);
        prop_assert_eq!(t.cluster_scores.iter().sum::<i64>(), 0);
        prop_assert_eq!(t.phi.iter().sum::<i64>(), 0);
    }

    #[test]
    fn net_scores_are_centred_mid_ranks(data in scalar_trial()) {
        let t = tally(&data);
        let ys: Vec<f64> = data.subjects().iter().map(|s| s.component(1).unwrap().value).collect();
        let n = ys.len() as f64;
        for (phi, r) in t.phi.iter().zip(mid_ranks(&ys)) {
            prop_assert_eq!(*phi as f64, 2.0 * r - (n + 1.0));
        }
    }

    #[test]
    fn classification_is_antisymmetric(a in two_tier_subject(), b in two_tier_subject()) {
        let x = composite("a", Arm::Treated, a);
        let y = composite("b", Arm::Control, b);
        let ab = classify_pair(&x, &y).unwrap();
        let ba = classify_pair(&y, &x).unwrap();
        prop_assert_eq!(ab, ba.flip());
        prop_assert_eq!(classify_pair(&x, &x).unwrap(), Outcome::Tie);
    }

    #[test]
    fn binary_outcomes_give_risk_difference_and_odds_ratio(data in scalar_trial()) {
        let subjects: Vec<SubjectRecord> = data
            .subjects()
            .iter()
            .map(|s| {
                let y = (s.component(1).unwrap().value >= 3.0) as u8 as f64;
                SubjectRecord::scalar(s.subject_id.clone(), s.cluster_id.clone(), s.arm, y)
            })
            .collect();
        let data = TrialDataset::new(subjects).unwrap();
        let rate = |arm: Arm| {
            let ys: Vec<f64> = data.subjects().iter().filter(|s| s.arm == arm).map(|s| s.component(1).unwrap().value).collect();
            ys.iter().sum::<f64>() / ys.len() as f64
        };
        let (p1, p0) = (rate(Arm::Treated), rate(Arm::Control));
        let t = tally(&data);
        prop_assert!((t.wd() - (p1 - p0)).abs() < 1e-12);
        if t.losses > 0 && t.wins > 0 {
            let or = p1 * (1.0 - p0) / (p0 * (1.0 - p1));
            let wr = t.wins as f64 / t.losses as f64;
            prop_assert!((wr - or).abs() < 1e-12 * or.max(1.0));
        }
    }

    #[test]
    fn tie_block_rank_moment_identity(blocks in prop::collection::vec(1u64..5, 1..6)) {
        let n: u64 = blocks.iter().sum();
        prop_assume!(n >= 3);
        let nf = n as f64;
        let p = CompositeProbs::from_tie_blocks(&blocks);
        let ties: f64 = blocks.iter().map(|&t| (t * (t * t - 1)) as f64).sum();
        let rhs = (nf + 1.0) * (2.0 * nf + 1.0) / 6.0 - ties / (12.0 * nf);
        let lhs = p.second_rank_moment(nf);
        prop_assert!((lhs - rhs).abs() < 1e-12 * rhs);
    }

    #[test]
    fn effect_scale_maps_invert(wd in -0.6f64..0.6, tie in 0.0f64..0.35) {
        for e in Estimand::ALL {
            let d = design::delta_from_wd(e, wd, tie);
            prop_assert!((design::wd_from_delta(e, d, tie) - wd).abs() < 1e-12);
        }
    }

    #[test]
    fn vif_grows_with_icc_and_cv(icc in 0.0f64..0.5, nbar in 1.0f64..200.0, cv in 0.0f64..1.5, d in 0.0f64..0.3) {
        let v = design::vif(icc, nbar, cv);
        prop_assert!(v >= 1.0);
        prop_assert!(design::vif(icc + d, nbar, cv) >= v);
        prop_assert!(design::vif(icc, nbar, cv + d) >= v);
    }

    #[test]
    fn required_clusters_is_minimal(
        delta in 0.1f64..0.6,
        tie in 0.0f64..0.5,
        icc in 0.0f64..0.1,
        nbar in 5.0f64..60.0,
        cv in 0.0f64..0.8,
        t_test in any::<bool>(),
    ) {
        let mut x = DesignInputs::single(Estimand::LogWR, delta, tie, icc, nbar, cv);
        if t_test {
            x.test = wincrt_core::TestKind::T;
        }
        let r = design::required_clusters(&x);
        prop_assume!(!matches!(r, Err(wincrt_core::Error::Infeasible { .. })));
        let m = r.unwrap().required_m.unwrap();
        prop_assert!(design::power(&x, m).unwrap() >= 0.8);
        if m > x.min_m() {
            let below = design::power(&x, m - 1).map(|p| p < 0.8).unwrap_or(true);
            prop_assert!(below);
        }
    }

    #[test]
    fn long_format_round_trip(data in scalar_trial()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trial.csv");
        let opts = LongFormatOptions::default();
        serialize_long_format(&data, std::fs::File::create(&path).unwrap(), &opts).unwrap();
        let back = parse_long_format(&path, &opts).unwrap();
        let a = estimate(&data, 0.05, Alternative::TwoSided).unwrap();
        let b = estimate(&back, 0.05, Alternative::TwoSided).unwrap();
        prop_assert_eq!((a.wins, a.losses, a.ties), (b.wins, b.losses, b.ties));
        prop_assert_eq!(a.se_d, b.se_d);
    }
}
