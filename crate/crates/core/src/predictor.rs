//! The per-student confidence-gated stopping rule.
//!
//! After each graded assessment `k` the predictor builds the radius ladder
//! around the student's score prefix, picks the rung with the smallest sample
//! variance (highest unmodified confidence), and estimates the overall score
//! as `prefix weighted sum + rung mean`. It stops the first time the gate
//! confidence reaches `q_th`; in the regression setting the gate is the
//! unmodified confidence, in the classification setting it is the modified
//! confidence that also rewards distance from the class threshold. At `k = K`
//! the overall score is known exactly and the prediction is forced.
//!
//! Per-assessment evaluations see only the score prefix through `k`, so a
//! student who stops at `k` never had later scores read. Gate sequences do not
//! depend on `q_th`, which lets one pass over a cohort serve every candidate
//! threshold (used heavily by calibration and frontier sweeps).

use crate::domain::{
    AssessmentSchedule, FeatureVector, KnowledgeBase, StudentRecord,
};
use crate::neighborhoods::{
    binary_confidence_with_distance, confidence, radius_ladder, select_best, ConfidenceParams,
    MIN_NEIGHBORS,
};
use crate::preprocess::{classify_score, ClassBands};

/// What kind of prediction to issue, and for classification, the score bands.
/// Bands are in normalized overall-score units.
#[derive(Debug, Clone, PartialEq)]
pub enum PredictionMode {
    Regression,
    Classification(ClassBands),
}

impl PredictionMode {
    fn classify(&self, z_hat: f64) -> Option<usize> {
        match self {
            PredictionMode::Regression => None,
            PredictionMode::Classification(bands) => Some(classify_score(z_hat, bands)),
        }
    }
}

/// Provenance of the neighborhood backing a prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborhoodInfo {
    pub radius: f64,
    pub member_count: usize,
    pub variance: f64,
}

/// Outcome of one per-assessment evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KDecision {
    pub k: usize,
    /// Estimated overall score at this point.
    pub z_hat: f64,
    /// Unmodified confidence of the selected rung (used for selection).
    pub q: f64,
    /// Gate confidence compared against `q_th` (equals `q` in regression).
    pub gate: f64,
    pub neighborhood: NeighborhoodInfo,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepState {
    /// Too few knowledge-base members at this `k`; the decision is deferred.
    InsufficientPool { pool_size: usize },
    Evaluated(KDecision),
}

/// Per-assessment decision record for one student.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionStep {
    pub k: usize,
    pub state: StepState,
}

/// The full threshold-independent decision stream of one student: one step per
/// assessment `1..K`, plus the exact forced-final values at `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionProfile {
    pub student_id: String,
    pub steps: Vec<DecisionStep>,
    /// Exact overall score available at `k = K`.
    pub exact_final: f64,
    pub final_class: Option<usize>,
}

/// Final prediction for one student.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionOutcome {
    pub student_id: String,
    /// Assessment index at which the prediction was issued, `1..=K`.
    pub stop_k: usize,
    pub z_hat: f64,
    pub class_hat: Option<usize>,
    pub confidence_at_stop: f64,
    /// Present for gate-issued predictions, absent for forced finals.
    pub neighborhood: Option<NeighborhoodInfo>,
    /// True when the prediction is the exact end-of-course score.
    pub forced_final: bool,
}

/// Evaluate one checkpoint from the score prefix alone: build the ladder over
/// the pool at the same `k`, select the best rung by unmodified confidence and
/// form the overall-score estimate. Returns `None` when the pool is too small.
pub fn evaluate_checkpoint(
    prefix: FeatureVector<'_>,
    prefix_score: f64,
    kb: &KnowledgeBase<'_>,
    schedule: &AssessmentSchedule,
    epsilon: f64,
    mode: &PredictionMode,
    m_max: Option<usize>,
) -> Option<KDecision> {
    let k = prefix.k();
    let pool = kb.pool_at(k);
    if pool.len() < MIN_NEIGHBORS {
        return None;
    }
    let ladder = radius_ladder(prefix, pool, schedule, m_max)
        .expect("pool size checked above");
    let (_, best) = select_best(&ladder);
    let z_hat = best.mean + prefix_score;
    let q = confidence(best.variance, epsilon);
    let gate = match mode {
        PredictionMode::Regression => q,
        PredictionMode::Classification(bands) => binary_confidence_with_distance(
            best.variance,
            epsilon,
            bands.nearest_threshold_distance(z_hat),
        ),
    };
    Some(KDecision {
        k,
        z_hat,
        q,
        gate,
        neighborhood: NeighborhoodInfo {
            radius: best.radius,
            member_count: best.member_count(),
            variance: best.variance,
        },
    })
}

/// Build the decision stream of one student. The record must be complete
/// (retrospective evaluation); causality is preserved by evaluating each
/// checkpoint on the length-`k` prefix only.
pub fn decision_profile(
    record: &StudentRecord,
    kb: &KnowledgeBase<'_>,
    schedule: &AssessmentSchedule,
    epsilon: f64,
    mode: &PredictionMode,
    m_max: Option<usize>,
) -> DecisionProfile {
    let kk = schedule.len();
    debug_assert_eq!(record.scores.len(), kk);
    let mut steps = Vec::with_capacity(kk.saturating_sub(1));
    for k in 1..kk {
        let prefix = FeatureVector::new(&record.scores[..k]);
        let prefix_score = schedule.prefix_score(&record.scores, k);
        let state = match evaluate_checkpoint(
            prefix,
            prefix_score,
            kb,
            schedule,
            epsilon,
            mode,
            m_max,
        ) {
            Some(decision) => StepState::Evaluated(decision),
            None => StepState::InsufficientPool {
                pool_size: kb.pool_at(k).len(),
            },
        };
        steps.push(DecisionStep { k, state });
    }
    let exact_final = schedule.prefix_score(&record.scores, kk);
    DecisionProfile {
        student_id: record.student_id.clone(),
        steps,
        exact_final,
        final_class: mode.classify(exact_final),
    }
}

/// Resolve a decision stream against a threshold: the outcome is issued at the
/// first checkpoint whose gate reaches `q_th`, else forced at `K` with the
/// exact score and confidence 1.
pub fn outcome_for_threshold(
    profile: &DecisionProfile,
    q_th: f64,
    mode: &PredictionMode,
) -> PredictionOutcome {
    for step in &profile.steps {
        if let StepState::Evaluated(decision) = &step.state {
            if decision.gate >= q_th {
                return PredictionOutcome {
                    student_id: profile.student_id.clone(),
                    stop_k: decision.k,
                    z_hat: decision.z_hat,
                    class_hat: mode.classify(decision.z_hat),
                    confidence_at_stop: decision.gate,
                    neighborhood: Some(decision.neighborhood),
                    forced_final: false,
                };
            }
        }
    }
    PredictionOutcome {
        student_id: profile.student_id.clone(),
        stop_k: profile.steps.len() + 1,
        z_hat: profile.exact_final,
        class_hat: profile.final_class,
        confidence_at_stop: 1.0,
        neighborhood: None,
        forced_final: true,
    }
}

/// Full per-student run: the decision stream plus its resolved outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentPrediction {
    pub profile: DecisionProfile,
    pub outcome: PredictionOutcome,
}

/// Predict a single student with the stopping rule.
pub fn predict_student(
    record: &StudentRecord,
    kb: &KnowledgeBase<'_>,
    schedule: &AssessmentSchedule,
    params: ConfidenceParams,
    mode: &PredictionMode,
    m_max: Option<usize>,
) -> StudentPrediction {
    let profile = decision_profile(record, kb, schedule, params.epsilon, mode, m_max);
    let outcome = outcome_for_threshold(&profile, params.q_th, mode);
    StudentPrediction { profile, outcome }
}

/// Predict every student of a cohort independently against a shared
/// knowledge base. Exactly one outcome per student, in input order.
pub fn predict_cohort(
    records: &[StudentRecord],
    kb: &KnowledgeBase<'_>,
    schedule: &AssessmentSchedule,
    params: ConfidenceParams,
    mode: &PredictionMode,
    m_max: Option<usize>,
) -> Vec<PredictionOutcome> {
    records
        .iter()
        .map(|r| predict_student(r, kb, schedule, params, mode, m_max).outcome)
        .collect()
}

/// Decision profiles for a whole cohort, for threshold sweeps.
pub fn cohort_profiles(
    records: &[StudentRecord],
    kb: &KnowledgeBase<'_>,
    schedule: &AssessmentSchedule,
    epsilon: f64,
    mode: &PredictionMode,
    m_max: Option<usize>,
) -> Vec<DecisionProfile> {
    records
        .iter()
        .map(|r| decision_profile(r, kb, schedule, epsilon, mode, m_max))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{AssessmentDesc, AssessmentKind, CohortDataset};

    fn schedule(weights: &[f64]) -> AssessmentSchedule {
        AssessmentSchedule::new(
            weights
                .iter()
                .enumerate()
                .map(|(i, &w)| AssessmentDesc {
                    id: format!("a{i}"),
                    kind: AssessmentKind::TakeHome,
                    topic: format!("t{i}"),
                    weight: w,
                })
                .collect(),
        )
        .unwrap()
    }

    fn record(id: &str, year: u32, scores: &[f64]) -> StudentRecord {
        StudentRecord {
            student_id: id.to_string(),
            year,
            scores: scores.to_vec(),
            raw_scores: scores.to_vec(),
            letter_grade: None,
        }
    }

    /// Three past students whose residual after k=1 is identical (0.3):
    /// with weights (0.4, 0.6), score 0.5 at the final slot gives c_1 = 0.3.
    fn shared_residual_dataset() -> (AssessmentSchedule, CohortDataset) {
        let s = schedule(&[0.4, 0.6]);
        let records = vec![
            record("p1", 1, &[0.1, 0.5]),
            record("p2", 1, &[0.2, 0.5]),
            record("p3", 1, &[0.9, 0.5]),
        ];
        let ds = CohortDataset::new(s.clone(), records, vec![]).unwrap();
        (s, ds)
    }

    #[test]
    fn zero_variance_neighborhood_stops_immediately() {
        let (s, ds) = shared_residual_dataset();
        let kb = ds.knowledge_base(2, None);
        let current = record("c", 2, &[0.25, 0.9]);
        let params = ConfidenceParams::new(0.5, 0.9).unwrap();
        let got = predict_student(&current, &kb, &s, params, &PredictionMode::Regression, None);
        assert_eq!(got.outcome.stop_k, 1);
        assert!(!got.outcome.forced_final);
        assert_eq!(got.outcome.confidence_at_stop, 1.0);
        // z_hat = shared residual + w_1 a_1 = 0.3 + 0.4 * 0.25.
        assert!((got.outcome.z_hat - (0.3 + 0.4 * 0.25)).abs() < 1e-12);
        let info = got.outcome.neighborhood.unwrap();
        assert_eq!(info.member_count, 3);
        assert_eq!(info.variance, 0.0);
    }

    #[test]
    fn forced_final_is_exact() {
        let s = schedule(&[0.4, 0.6]);
        let ds = CohortDataset::new(s.clone(), vec![], vec![]).unwrap();
        let kb = ds.knowledge_base(2, None);
        let current = record("c", 2, &[0.25, 0.9]);
        let params = ConfidenceParams::new(0.5, 0.5).unwrap();
        let got = predict_student(&current, &kb, &s, params, &PredictionMode::Regression, None);
        assert!(got.outcome.forced_final);
        assert_eq!(got.outcome.stop_k, 2);
        assert_eq!(got.outcome.confidence_at_stop, 1.0);
        let exact = s.prefix_score(&current.scores, 2);
        assert_eq!(got.outcome.z_hat, exact);
        assert!(got
            .profile
            .steps
            .iter()
            .all(|st| matches!(st.state, StepState::InsufficientPool { .. })));
    }

    #[test]
    fn raising_threshold_never_stops_earlier() {
        let s = schedule(&[0.2, 0.3, 0.5]);
        let mut past = Vec::new();
        for i in 0..12 {
            let a = -0.6 + 0.1 * i as f64;
            let b = 0.4 - 0.05 * i as f64;
            let c = 0.1 * ((i % 5) as f64) - 0.2;
            past.push(record(&format!("p{i}"), 1, &[a, b, c]));
        }
        let ds = CohortDataset::new(s.clone(), past, vec![]).unwrap();
        let kb = ds.knowledge_base(2, None);
        let current = vec![
            record("c0", 2, &[0.0, 0.1, -0.3]),
            record("c1", 2, &[-0.4, 0.3, 0.2]),
            record("c2", 2, &[0.5, -0.2, 0.0]),
        ];
        let lo = ConfidenceParams::new(0.5, 0.5).unwrap();
        let hi = ConfidenceParams::new(0.5, 0.95).unwrap();
        let out_lo = predict_cohort(&current, &kb, &s, lo, &PredictionMode::Regression, None);
        let out_hi = predict_cohort(&current, &kb, &s, hi, &PredictionMode::Regression, None);
        for (a, b) in out_lo.iter().zip(&out_hi) {
            assert!(b.stop_k >= a.stop_k);
        }
    }

    #[test]
    fn classification_gate_differs_but_estimate_matches() {
        let (s, ds) = shared_residual_dataset();
        let kb = ds.knowledge_base(2, None);
        let current = record("c", 2, &[0.25, 0.9]);
        let bands = ClassBands::binary(0.0, "well", "poorly");
        let params = ConfidenceParams::new(0.5, 0.9).unwrap();
        let reg = predict_student(&current, &kb, &s, params, &PredictionMode::Regression, None);
        let cls = predict_student(
            &current,
            &kb,
            &s,
            params,
            &PredictionMode::Classification(bands.clone()),
            None,
        );
        // Same stop point here; identical estimate and a class on top of it.
        assert_eq!(cls.outcome.stop_k, reg.outcome.stop_k);
        assert_eq!(cls.outcome.z_hat, reg.outcome.z_hat);
        assert_eq!(
            cls.outcome.class_hat,
            Some(classify_score(reg.outcome.z_hat, &bands))
        );
        assert_eq!(reg.outcome.class_hat, None);
    }

    #[test]
    fn gate_dominates_unmodified_confidence_in_classification() {
        let s = schedule(&[0.2, 0.3, 0.5]);
        let mut past = Vec::new();
        for i in 0..10 {
            let a = -0.5 + 0.11 * i as f64;
            past.push(record(
                &format!("p{i}"),
                1,
                &[a, -a * 0.5, 0.2 * ((i % 3) as f64) - 0.2],
            ));
        }
        let ds = CohortDataset::new(s.clone(), past, vec![]).unwrap();
        let kb = ds.knowledge_base(2, None);
        let current = record("c", 2, &[0.1, -0.2, 0.3]);
        let bands = ClassBands::binary(0.0, "well", "poorly");
        let mode = PredictionMode::Classification(bands);
        let profile = decision_profile(&current, &kb, &s, 0.5, &mode, None);
        for step in &profile.steps {
            if let StepState::Evaluated(d) = &step.state {
                assert!(d.gate >= d.q);
            }
        }
    }

    #[test]
    fn empty_cohort_and_singleton() {
        let (s, ds) = shared_residual_dataset();
        let kb = ds.knowledge_base(2, None);
        let params = ConfidenceParams::new(0.5, 0.9).unwrap();
        let none = predict_cohort(&[], &kb, &s, params, &PredictionMode::Regression, None);
        assert!(none.is_empty());
        let one = vec![record("c", 2, &[0.25, 0.9])];
        let got = predict_cohort(&one, &kb, &s, params, &PredictionMode::Regression, None);
        let direct = predict_student(&one[0], &kb, &s, params, &PredictionMode::Regression, None);
        assert_eq!(got, vec![direct.outcome]);
    }

    #[test]
    fn determinism_byte_identical_outcomes() {
        let s = schedule(&[0.2, 0.3, 0.5]);
        let mut past = Vec::new();
        for i in 0..9 {
            past.push(record(
                &format!("p{i}"),
                1,
                &[0.1 * i as f64 - 0.4, 0.05 * i as f64, -0.1 * i as f64 + 0.3],
            ));
        }
        let ds = CohortDataset::new(s.clone(), past, vec![]).unwrap();
        let kb = ds.knowledge_base(2, None);
        let current = vec![record("c0", 2, &[0.0, 0.1, -0.3])];
        let params = ConfidenceParams::new(0.5, 0.8).unwrap();
        let a = predict_cohort(&current, &kb, &s, params, &PredictionMode::Regression, None);
        let b = predict_cohort(&current, &kb, &s, params, &PredictionMode::Regression, None);
        assert_eq!(a, b);
    }
}
