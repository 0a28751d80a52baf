use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use clp_core::conformal::bh_procedure;
use clp_core::estimator::{dissim_pair, dissim_triplet, predict_group, KernelSpec};
use clp_core::evalue::{derandomise, ebh_procedure, ClpParams};
use clp_core::harness::{score, summarize, MetricRow};
use clp_core::mask::test_coordinates;
use clp_core::network::{MissingMask, Topology, WeightedNetwork};
use clp_core::split::{
    allocate_calibration, fully_observed_rows, omega_candidates, omega_triplet, plan_test_blocks, split_row, RowSplit,
};
use clp_core::thresholds::{Hypothesis, HypothesisThresholds};
use clp_core::topology::extend_symmetric;

fn network(n: usize) -> impl Strategy<Value = WeightedNetwork> {
    prop::collection::vec(-3.0f64..3.0, n * n).prop_map(move |w| WeightedNetwork::from_vec(n, n, w, false).unwrap())
}

fn mask(n: usize, p: f64) -> impl Strategy<Value = MissingMask> {
    prop::collection::vec(prop::bool::weighted(p), n * n)
        .prop_map(move |m| MissingMask::from_fn(n, n, false, |i, j| m[i * n + j]))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn bh_lowering_a_pvalue_never_shrinks_rejections(
        p in prop::collection::vec(0.0f64..=1.0, 1..40),
        k in any::<prop::sample::Index>(),
        factor in 0.0f64..1.0,
        alpha in 0.01f64..0.5,
    ) {
        let before: BTreeSet<_> = bh_procedure(&p, alpha).rejected.into_iter().collect();
        let mut q = p.clone();
        let idx = k.index(q.len());
        q[idx] *= factor;
        let after: BTreeSet<_> = bh_procedure(&q, alpha).rejected.into_iter().collect();
        prop_assert!(before.is_subset(&after));
    }

    #[test]
    fn ebh_rejects_exactly_the_threshold_set(
        e in prop::collection::vec(0.0f64..200.0, 1..40),
        extra in 0usize..20,
        alpha in 0.01f64..0.5,
        k in any::<prop::sample::Index>(),
        boost in 1.0f64..10.0,
    ) {
        let n_total = e.len() + extra;
        let coords: Vec<_> = e.iter().enumerate().map(|(j, &v)| ((0, j), v)).collect();
        let out = ebh_procedure(&coords, alpha, n_total).unwrap();
        let expected: Vec<_> = coords.iter().filter(|c| c.1 >= out.threshold).map(|c| c.0).collect();
        prop_assert_eq!(&out.rejected, &expected);
        prop_assert_eq!(out.rejected.len(), out.k_hat);

        let mut raised = coords.clone();
        let idx = k.index(raised.len());
        raised[idx].1 *= boost;
        let more = ebh_procedure(&raised, alpha, n_total).unwrap();
        let before: BTreeSet<_> = out.rejected.into_iter().collect();
        prop_assert!(before.is_subset(&more.rejected.into_iter().collect()));
    }

    #[test]
    fn derandomise_ignores_run_order(runs in prop::collection::vec(prop::collection::vec(0.0f64..50.0, 4), 1..8)) {
        let mut rev = runs.clone();
        rev.reverse();
        let a = derandomise(&runs).unwrap();
        let b = derandomise(&rev).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn blocks_partition_the_test_set(calib in 1usize..120, test in 0usize..60, r0 in 1usize..40, seed in any::<u64>()) {
        prop_assume!(r0 <= calib);
        let split = RowSplit { row: 0, train: vec![], calib: (200..200 + calib).collect(), test: (1..=test).collect() };
        let plan = plan_test_blocks(&split, r0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let mut seen = BTreeSet::new();
        for b in &plan.blocks {
            prop_assert!(b.len() <= plan.r1);
            for &j in b {
                prop_assert!(seen.insert(j));
            }
            let alloc = allocate_calibration(&split, b, r0, &mut ChaCha8Rng::seed_from_u64(seed ^ 1)).unwrap();
            let mut used = BTreeSet::new();
            for s in &alloc.subsets {
                prop_assert!(s.len() >= r0);
                for &c in s {
                    prop_assert!(used.insert(c));
                    prop_assert!(split.calib.contains(&c));
                }
            }
        }
        prop_assert_eq!(seen, (1..=test).collect::<BTreeSet<_>>());
    }

    #[test]
    fn split_covers_observed_columns(m in mask(12, 0.3), row in 0usize..12, seed in any::<u64>()) {
        if let Ok(s) = split_row(row, &m, 0.4, &mut ChaCha8Rng::seed_from_u64(seed)) {
            let train: BTreeSet<_> = s.train.iter().copied().collect();
            let calib: BTreeSet<_> = s.calib.iter().copied().collect();
            prop_assert!(train.is_disjoint(&calib));
            let observed: BTreeSet<_> = (0..12).filter(|&j| m.is_observed(row, j)).collect();
            prop_assert_eq!(train.union(&calib).copied().collect::<BTreeSet<_>>(), observed);
            prop_assert!(!train.contains(&row) && !calib.contains(&row));
            prop_assert!(s.test.iter().all(|&j| m.is_missing(row, j)));
        }
    }

    #[test]
    fn omega_sets_shrink_as_entries_go_missing(
        m in mask(20, 0.15),
        extra in prop::collection::vec((0usize..20, 0usize..20), 1..10),
        cols in prop::collection::btree_set(0usize..20, 1..5),
        j2 in 0usize..20,
        j in 0usize..20,
    ) {
        let candidates: Vec<usize> = (0..20).collect();
        let cols: Vec<usize> = cols.into_iter().collect();
        let mut more = m.clone();
        for (i, k) in extra {
            more.set_missing(i, k, true);
        }
        let a: BTreeSet<_> = fully_observed_rows(&m, &candidates, &cols).into_iter().collect();
        let b: BTreeSet<_> = fully_observed_rows(&more, &candidates, &cols).into_iter().collect();
        prop_assert!(b.is_subset(&a));
        let omega: Vec<usize> = a.iter().copied().collect();
        let ta: BTreeSet<_> = omega_triplet(&m, &omega, j2, j).into_iter().collect();
        let tb: BTreeSet<_> = omega_triplet(&more, &omega, j2, j).into_iter().collect();
        prop_assert!(tb.is_subset(&ta));
    }

    #[test]
    fn omega_triplet_matches_definition(m in mask(20, 0.2), j2 in 0usize..20, j in 0usize..20) {
        let omega: Vec<usize> = (0..20).filter(|i| i % 3 != 0).collect();
        let brute: Vec<usize> = omega
            .iter()
            .copied()
            .filter(|&i| !m.is_missing(i, j2) && !m.is_missing(i, j) && i != j2 && i != j)
            .collect();
        prop_assert_eq!(omega_triplet(&m, &omega, j2, j), brute);
    }

    #[test]
    fn dissim_pair_matches_double_loop(a in network(15), m in mask(15, 0.1)) {
        let train: Vec<usize> = (5..15).collect();
        let omega_j0: Vec<usize> = (5..15).collect();
        for j1 in 0..3 {
            for &j2 in &train {
                let mut terms = Vec::new();
                for &j in train.iter().filter(|&&j| j != j2) {
                    let rows: Vec<usize> = omega_j0
                        .iter()
                        .copied()
                        .filter(|&i| m.is_observed(i, j2) && m.is_observed(i, j))
                        .collect();
                    if rows.is_empty() {
                        continue;
                    }
                    let mut dot = 0.0;
                    for &i in &rows {
                        dot += (a.get(i, j1) - a.get(i, j2)) * a.get(i, j);
                    }
                    terms.push(dot.abs() / rows.len() as f64);
                }
                let expected = (!terms.is_empty()).then(|| terms.iter().sum::<f64>() / terms.len() as f64);
                let got = dissim_pair(&a, &m, &train, &omega_j0, j1, j2);
                match (got, expected) {
                    (Some(g), Some(e)) => prop_assert!((g - e).abs() <= 1e-12 * e.abs().max(1.0)),
                    (g, e) => prop_assert_eq!(g, e),
                }
            }
        }
    }

    #[test]
    fn predictions_are_convex_combinations(a in network(14), m in mask(14, 0.05), bw in 0.05f64..5.0) {
        let train: Vec<usize> = (1..7).collect();
        let group = vec![7, 8, 9, 10];
        let preds = predict_group(&a, &m, 0, &train, &train, &group, &KernelSpec::gaussian(bw));
        let vals: Vec<f64> = train.iter().map(|&j| a.get(0, j)).collect();
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for p in preds.predictions {
            prop_assert!(p >= lo - 1e-9 && p <= hi + 1e-9);
        }
    }

    #[test]
    fn scaling_identities(a in network(12), s in 0.1f64..4.0, bw in 0.1f64..3.0) {
        let scaled = a.scaled(s).unwrap();
        let omega: Vec<usize> = (4..12).collect();
        let d = dissim_triplet(&a, &omega, 0, 1, 2).unwrap();
        let ds = dissim_triplet(&scaled, &omega, 0, 1, 2).unwrap();
        prop_assert!((ds - s * s * d).abs() <= 1e-9 * ds.abs().max(1.0));

        let m = MissingMask::new(12, 12, false);
        let train: Vec<usize> = (4..12).collect();
        let group = vec![1, 2, 3];
        let p = predict_group(&a, &m, 0, &train, &train, &group, &KernelSpec::gaussian(bw));
        let ps = predict_group(&scaled, &m, 0, &train, &train, &group, &KernelSpec::gaussian(bw * s * s));
        for (x, y) in p.predictions.iter().zip(&ps.predictions) {
            prop_assert!((y - s * x).abs() <= 1e-8 * y.abs().max(1.0));
        }
    }

    #[test]
    fn extension_is_symmetric(a in network(9), m in mask(9, 0.3)) {
        let (full, fm) = extend_symmetric(&a, &m).unwrap();
        prop_assert!(full.is_symmetric());
        prop_assert!(fm.is_symmetric());
        let upper_missing = (0..9).flat_map(|i| (i + 1..9).map(move |j| (i, j))).filter(|&(i, j)| m.is_missing(i, j)).count();
        prop_assert_eq!(test_coordinates(&fm, Topology::Undirected).len(), upper_missing);
    }

    #[test]
    fn bipartite_omega_contains_directed_omega(m in mask(16, 0.1), seed in any::<u64>()) {
        if let Ok(split) = split_row(0, &m, 0.4, &mut ChaCha8Rng::seed_from_u64(seed)) {
            let cols: Vec<usize> = split.calib.iter().take(3).copied().collect();
            let directed: BTreeSet<_> = fully_observed_rows(&m, &omega_candidates(Topology::Directed, &split, 16), &cols)
                .into_iter()
                .collect();
            let bipartite: BTreeSet<_> = fully_observed_rows(&m, &omega_candidates(Topology::Bipartite, &split, 16), &cols)
                .into_iter()
                .collect();
            prop_assert!(directed.is_subset(&bipartite));
        }
    }

    #[test]
    fn fdp_matches_recount(labels in prop::collection::vec(any::<bool>(), 1..40), pick in prop::collection::vec(any::<bool>(), 40)) {
        let h = HypothesisThresholds::from_hypotheses(
            labels.iter().enumerate().map(|(k, &a)| Hypothesis { row: 0, col: k + 1, threshold: 0.0, alternative: Some(a) }).collect(),
        ).unwrap();
        let rejected: Vec<_> = (0..labels.len()).filter(|&k| pick[k]).map(|k| (0, k + 1)).collect();
        let s = score(&rejected, &h).unwrap();
        let false_rej = (0..labels.len()).filter(|&k| pick[k] && !labels[k]).count();
        let true_rej = rejected.len() - false_rej;
        let alts = labels.iter().filter(|&&a| a).count();
        prop_assert_eq!(s.fdp, false_rej as f64 / rejected.len().max(1) as f64);
        prop_assert_eq!(s.power, true_rej as f64 / alts.max(1) as f64);
    }

    #[test]
    fn summary_means_equal_row_means(fdp in prop::collection::vec(0.0f64..1.0, 1..20)) {
        let rows: Vec<MetricRow> = fdp
            .iter()
            .enumerate()
            .map(|(k, &f)| MetricRow {
                replication: k,
                alpha_ebh: 0.2,
                fdp: f,
                power: 1.0 - f,
                n_rejected: 0,
                n_tests: 0,
                n_alternatives: 0,
                runtime_ms: 0.0,
                simulate_ms: 0.0,
                pipeline_ms: 0.0,
                score_ms: 0.0,
                baseline_fdp: None,
                baseline_power: None,
                error: None,
            })
            .collect();
        let s = summarize(&rows);
        let mean = fdp.iter().sum::<f64>() / fdp.len() as f64;
        prop_assert!((s.mean_fdr - mean).abs() <= 1e-12);
    }
}

#[test]
fn default_params_are_valid() {
    assert!(ClpParams::default().validate().is_ok());
}
