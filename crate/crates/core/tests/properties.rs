//! Property tests for the numerical invariants: metric axioms, ladder
//! nesting, confidence monotonicity, normalization invariances and the
//! bookkeeping identities.

use proptest::prelude::*;

use gradecast_core::domain::{
    overall_score, residual, AssessmentDesc, AssessmentKind, AssessmentSchedule, CohortDataset,
    FeatureVector, StudentRecord, BOOKKEEPING_TOL,
};
use gradecast_core::neighborhoods::{
    binary_confidence_with_distance, confidence, distance, radius_ladder, select_best,
    Neighborhood, NeighborhoodLadder,
};
use gradecast_core::preprocess::{classify_score, normalize_year, ClassBands};

fn schedule_from_weights(raw: &[f64]) -> AssessmentSchedule {
    let total: f64 = raw.iter().sum();
    AssessmentSchedule::new(
        raw.iter()
            .enumerate()
            .map(|(i, w)| AssessmentDesc {
                id: format!("a{i}"),
                kind: if i % 2 == 0 {
                    AssessmentKind::TakeHome
                } else {
                    AssessmentKind::InClass
                },
                topic: format!("t{i}"),
                weight: w / total,
            })
            .collect(),
    )
    .expect("positive weights normalized to 1")
}

fn record(id: &str, year: u32, scores: Vec<f64>) -> StudentRecord {
    StudentRecord {
        student_id: id.to_string(),
        year,
        scores: scores.clone(),
        raw_scores: scores,
        letter_grade: None,
    }
}

prop_compose! {
    fn arb_weights(max_k: usize)(k in 2..=max_k)(
        raw in proptest::collection::vec(0.05f64..1.0, k)
    ) -> Vec<f64> {
        raw
    }
}

proptest! {
    #[test]
    fn distance_metric_axioms(
        weights in arb_weights(6),
        points in proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, 6), 3)
    ) {
        let schedule = schedule_from_weights(&weights);
        let k = weights.len();
        let x = FeatureVector::new(&points[0][..k]);
        let y = FeatureVector::new(&points[1][..k]);
        let z = FeatureVector::new(&points[2][..k]);
        let dxy = distance(x, y, &schedule).unwrap();
        let dyx = distance(y, x, &schedule).unwrap();
        let dxz = distance(x, z, &schedule).unwrap();
        let dzy = distance(z, y, &schedule).unwrap();
        // Symmetry, non-negativity, identity of indiscernibles.
        prop_assert!((dxy - dyx).abs() < 1e-12);
        prop_assert!(dxy >= 0.0);
        prop_assert_eq!(distance(x, x, &schedule).unwrap(), 0.0);
        // Triangle inequality.
        prop_assert!(dxy <= dxz + dzy + 1e-12);
    }

    #[test]
    fn ladder_counts_strictly_increase_and_nest(
        weights in arb_weights(4),
        pool_scores in proptest::collection::vec(
            proptest::collection::vec(-2.0f64..2.0, 4), 3..20
        ),
        center in proptest::collection::vec(-2.0f64..2.0, 4),
    ) {
        let schedule = schedule_from_weights(&weights);
        let k = weights.len();
        let records: Vec<StudentRecord> = pool_scores
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let mut scores = s[..k].to_vec();
                scores.resize(k, 0.0);
                record(&format!("p{i}"), 1, scores)
            })
            .collect();
        let ds = CohortDataset::new(schedule.clone(), records, vec![]).unwrap();
        let kb = ds.knowledge_base(2, None);
        let pool = kb.pool_at(k);
        let ladder = radius_ladder(FeatureVector::new(&center[..k]), pool, &schedule, None).unwrap();
        let counts = ladder.member_counts();
        prop_assert!(counts[0] >= 3);
        prop_assert!(counts.windows(2).all(|w| w[0] < w[1]));
        prop_assert_eq!(*counts.last().unwrap(), pool.len());
        // Nesting: every rung's members contain the previous rung's.
        for pair in ladder.rungs().windows(2) {
            let small: std::collections::BTreeSet<_> = pair[0].member_indices.iter().collect();
            let large: std::collections::BTreeSet<_> = pair[1].member_indices.iter().collect();
            prop_assert!(small.is_subset(&large));
        }
        // Radius bound: every member is within its rung's radius.
        for rung in ladder.rungs() {
            for &i in &rung.member_indices {
                let d = distance(FeatureVector::new(&center[..k]), pool[i].features, &schedule).unwrap();
                prop_assert!(d <= rung.radius + 1e-12);
            }
        }
    }

    #[test]
    fn confidence_is_anti_monotone_in_variance(
        v1 in 0.0f64..2.0,
        v2 in 0.0f64..2.0,
        eps in 0.05f64..2.0,
    ) {
        prop_assume!(v1 < v2);
        prop_assert!(confidence(v1, eps) > confidence(v2, eps));
    }

    #[test]
    fn binary_confidence_dominates(
        variance in 0.0f64..2.0,
        eps in 0.05f64..2.0,
        d in 0.0f64..5.0,
    ) {
        let q = confidence(variance, eps);
        let q_bin = binary_confidence_with_distance(variance, eps, d);
        prop_assert!(q_bin >= q - 1e-15);
    }

    #[test]
    fn select_best_is_scale_invariant(
        variances in proptest::collection::vec(0.0f64..4.0, 1..10),
        scale in 0.001f64..1000.0,
    ) {
        let build = |vs: &[f64]| {
            let rungs = vs
                .iter()
                .enumerate()
                .map(|(i, &variance)| Neighborhood {
                    radius: 0.1 * (i as f64 + 1.0),
                    member_indices: vec![0, 1, 2],
                    mean: 0.0,
                    variance,
                })
                .collect::<Vec<_>>();
            NeighborhoodLadder::from_rungs(rungs)
        };
        let base = build(&variances);
        let scaled_vs: Vec<f64> = variances.iter().map(|v| v * scale).collect();
        let scaled = build(&scaled_vs);
        prop_assert_eq!(select_best(&base).0, select_best(&scaled).0);
    }

    #[test]
    fn normalization_is_affine_invariant(
        raw in proptest::collection::vec(proptest::collection::vec(10.0f64..90.0, 3), 4..12),
        scale in 0.2f64..5.0,
        shift in -40.0f64..40.0,
    ) {
        let schedule = schedule_from_weights(&[0.25, 0.35, 0.4]);
        let records: Vec<StudentRecord> = raw
            .iter()
            .enumerate()
            .map(|(i, s)| record(&format!("s{i}"), 1, s.clone()))
            .collect();
        let Ok((base, _)) = normalize_year(&records, &schedule) else {
            // Degenerate spread is excluded from the property.
            return Ok(());
        };
        let transformed: Vec<StudentRecord> = raw
            .iter()
            .enumerate()
            .map(|(i, s)| {
                record(
                    &format!("s{i}"),
                    1,
                    s.iter().map(|v| v * scale + shift).collect(),
                )
            })
            .collect();
        let (rescaled, _) = normalize_year(&transformed, &schedule).unwrap();
        for (a, b) in base.iter().zip(&rescaled) {
            for (x, y) in a.scores.iter().zip(&b.scores) {
                prop_assert!((x - y).abs() < 1e-9, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn classify_is_monotone(
        mut thresholds in proptest::collection::vec(-2.0f64..2.0, 1..5),
        z1 in -3.0f64..3.0,
        z2 in -3.0f64..3.0,
    ) {
        thresholds.sort_by(f64::total_cmp);
        thresholds.dedup();
        let labels: Vec<String> = (0..=thresholds.len()).map(|i| format!("c{i}")).collect();
        let bands = ClassBands::new(thresholds, labels).unwrap();
        let (lo, hi) = if z1 <= z2 { (z1, z2) } else { (z2, z1) };
        prop_assert!(classify_score(lo, &bands) >= classify_score(hi, &bands));
    }

    #[test]
    fn reconstruction_and_telescoping(
        weights in arb_weights(6),
        scores in proptest::collection::vec(-3.0f64..3.0, 6),
    ) {
        let schedule = schedule_from_weights(&weights);
        let k = weights.len();
        let r = record("s", 1, scores[..k].to_vec());
        let z = overall_score(&r, &schedule).unwrap();
        for j in 1..=k {
            let c = residual(&r, j, &schedule).unwrap();
            let prefix = schedule.prefix_score(&r.scores, j);
            prop_assert!((z - (c + prefix)).abs() < BOOKKEEPING_TOL);
        }
        for j in 1..k {
            let step = residual(&r, j, &schedule).unwrap() - residual(&r, j + 1, &schedule).unwrap();
            prop_assert!((step - schedule.weight(j + 1) * r.scores[j]).abs() < BOOKKEEPING_TOL);
        }
    }
}
