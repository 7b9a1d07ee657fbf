//! Core data model: assessment schedules, student records, residual/overall-score
//! bookkeeping and the cross-year knowledge base.
//!
//! All scores handled here are *normalized* (see [`crate::preprocess`]) unless a
//! field is explicitly named `raw_*`. Assessment indices `k` are 1-based and run
//! in chronological grading order, `k = 1..=K`; a prefix of length `k` is the
//! set of scores available once assessment `k` has been graded.

use std::collections::BTreeMap;

use thiserror::Error;

/// Absolute tolerance for bookkeeping identities (weight sums, score reconstruction).
pub const BOOKKEEPING_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum DomainError {
    #[error("assessment weights sum to {sum}, expected 1 within {tol}")]
    WeightSum { sum: f64, tol: f64 },
    #[error("assessment weight must be strictly positive, got {weight} at index {index}")]
    NonPositiveWeight { index: usize, weight: f64 },
    #[error("duplicate assessment id `{id}`")]
    DuplicateAssessmentId { id: String },
    #[error("schedule must contain at least one assessment")]
    EmptySchedule,
    #[error("record for student `{student_id}` is missing scores at assessments {missing:?}")]
    MissingScores {
        student_id: String,
        missing: Vec<usize>,
    },
    #[error("assessment index {k} out of range 1..={max}")]
    IndexOutOfRange { k: usize, max: usize },
    #[error("duplicate student id `{student_id}` in year {year}")]
    DuplicateStudent { student_id: String, year: u32 },
}

/// Kind of a performance assessment. In-class work (exams, quizzes) and
/// take-home work (homework, projects) are never aligned against each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AssessmentKind {
    InClass,
    TakeHome,
}

impl AssessmentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            AssessmentKind::InClass => "in_class",
            AssessmentKind::TakeHome => "take_home",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "in_class" => Some(AssessmentKind::InClass),
            "take_home" => Some(AssessmentKind::TakeHome),
            _ => None,
        }
    }
}

/// One graded course component: id, kind, topic tag and grade weight.
#[derive(Debug, Clone, PartialEq)]
pub struct AssessmentDesc {
    pub id: String,
    pub kind: AssessmentKind,
    pub topic: String,
    pub weight: f64,
}

/// Ordered list of assessment descriptors; the course skeleton.
///
/// Invariants enforced at construction: weights strictly positive and summing
/// to 1 within [`BOOKKEEPING_TOL`], ids unique, at least one assessment.
#[derive(Debug, Clone, PartialEq)]
pub struct AssessmentSchedule {
    assessments: Vec<AssessmentDesc>,
}

impl AssessmentSchedule {
    pub fn new(assessments: Vec<AssessmentDesc>) -> Result<Self, DomainError> {
        if assessments.is_empty() {
            return Err(DomainError::EmptySchedule);
        }
        for (i, a) in assessments.iter().enumerate() {
            if a.weight <= 0.0 {
                return Err(DomainError::NonPositiveWeight {
                    index: i + 1,
                    weight: a.weight,
                });
            }
        }
        let sum: f64 = assessments.iter().map(|a| a.weight).sum();
        if (sum - 1.0).abs() > BOOKKEEPING_TOL {
            return Err(DomainError::WeightSum {
                sum,
                tol: BOOKKEEPING_TOL,
            });
        }
        let mut seen = std::collections::BTreeSet::new();
        for a in &assessments {
            if !seen.insert(a.id.as_str()) {
                return Err(DomainError::DuplicateAssessmentId { id: a.id.clone() });
            }
        }
        Ok(Self { assessments })
    }

    /// Same validation but with a looser weight-sum tolerance, for file input.
    pub fn new_with_tolerance(
        assessments: Vec<AssessmentDesc>,
        tol: f64,
    ) -> Result<Self, DomainError> {
        if assessments.is_empty() {
            return Err(DomainError::EmptySchedule);
        }
        let sum: f64 = assessments.iter().map(|a| a.weight).sum();
        if (sum - 1.0).abs() > tol {
            return Err(DomainError::WeightSum { sum, tol });
        }
        // Renormalize so downstream identities hold at the strict tolerance.
        let assessments = assessments
            .into_iter()
            .map(|mut a| {
                a.weight /= sum;
                a
            })
            .collect();
        Self::new(assessments)
    }

    /// Number of assessments `K`.
    pub fn len(&self) -> usize {
        self.assessments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assessments.is_empty()
    }

    pub fn assessments(&self) -> &[AssessmentDesc] {
        &self.assessments
    }

    /// Weight of assessment `k` (1-based).
    pub fn weight(&self, k: usize) -> f64 {
        self.assessments[k - 1].weight
    }

    /// Sum of the first `k` weights.
    pub fn prefix_weight(&self, k: usize) -> f64 {
        self.assessments[..k].iter().map(|a| a.weight).sum()
    }

    /// Weighted sum of the first `k` entries of `scores`.
    pub fn prefix_score(&self, scores: &[f64], k: usize) -> f64 {
        self.assessments[..k]
            .iter()
            .zip(scores)
            .map(|(a, s)| a.weight * s)
            .sum()
    }
}

/// One student's scores for a single course year. `scores` are normalized,
/// `raw_scores` are in the original grading units; both have length exactly `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentRecord {
    pub student_id: String,
    pub year: u32,
    pub scores: Vec<f64>,
    pub raw_scores: Vec<f64>,
    pub letter_grade: Option<String>,
}

/// Length-`k` prefix of a student's normalized scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector<'a> {
    entries: &'a [f64],
}

impl<'a> FeatureVector<'a> {
    pub fn new(entries: &'a [f64]) -> Self {
        Self { entries }
    }

    /// Assessment index `k` = prefix length.
    pub fn k(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &'a [f64] {
        self.entries
    }
}

/// Overall score `z`: the weighted sum of all `K` normalized assessment scores.
pub fn overall_score(
    record: &StudentRecord,
    schedule: &AssessmentSchedule,
) -> Result<f64, DomainError> {
    require_complete(record, schedule)?;
    Ok(schedule.prefix_score(&record.scores, schedule.len()))
}

/// Same weighted sum over the raw (original-unit) scores.
pub fn raw_overall_score(
    record: &StudentRecord,
    schedule: &AssessmentSchedule,
) -> Result<f64, DomainError> {
    if record.raw_scores.len() != schedule.len() {
        return Err(missing_after(record, record.raw_scores.len(), schedule.len()));
    }
    Ok(schedule.prefix_score(&record.raw_scores, schedule.len()))
}

/// Residual overall score after assessment `k`: the weighted contribution of
/// assessments `k+1..=K`, and exactly 0 at `k = K`.
pub fn residual(
    record: &StudentRecord,
    k: usize,
    schedule: &AssessmentSchedule,
) -> Result<f64, DomainError> {
    let cap = schedule.len();
    if k == 0 || k > cap {
        return Err(DomainError::IndexOutOfRange { k, max: cap });
    }
    require_complete(record, schedule)?;
    if k == cap {
        return Ok(0.0);
    }
    Ok(schedule.assessments()[k..]
        .iter()
        .zip(&record.scores[k..])
        .map(|(a, s)| a.weight * s)
        .sum())
}

/// First `k` normalized scores of a record, in grading order.
pub fn feature_prefix<'a>(
    record: &'a StudentRecord,
    k: usize,
) -> Result<FeatureVector<'a>, DomainError> {
    if k == 0 || k > record.scores.len() {
        return Err(missing_after(record, record.scores.len().min(k), k));
    }
    Ok(FeatureVector::new(&record.scores[..k]))
}

fn require_complete(record: &StudentRecord, schedule: &AssessmentSchedule) -> Result<(), DomainError> {
    if record.scores.len() != schedule.len() {
        return Err(missing_after(record, record.scores.len(), schedule.len()));
    }
    Ok(())
}

fn missing_after(record: &StudentRecord, have: usize, want: usize) -> DomainError {
    DomainError::MissingScores {
        student_id: record.student_id.clone(),
        missing: (have + 1..=want).collect(),
    }
}

/// Per-year normalization statistics produced by [`crate::preprocess::normalize_year`].
#[derive(Debug, Clone, PartialEq)]
pub struct YearNormalization {
    pub year: u32,
    /// Per-assessment sample means of the raw scores.
    pub assessment_means: Vec<f64>,
    /// Sample standard deviation of the raw overall scores.
    pub overall_std: f64,
    pub students: usize,
}

/// Multi-year collection of complete student records over one schedule.
///
/// Records within a year keep their insertion order; years are kept sorted.
#[derive(Debug, Clone)]
pub struct CohortDataset {
    schedule: AssessmentSchedule,
    years: BTreeMap<u32, Vec<StudentRecord>>,
    normalization: BTreeMap<u32, YearNormalization>,
}

impl CohortDataset {
    /// Assemble a dataset from already-normalized records, validating lengths
    /// and per-year student-id uniqueness.
    pub fn new(
        schedule: AssessmentSchedule,
        records: Vec<StudentRecord>,
        normalization: Vec<YearNormalization>,
    ) -> Result<Self, DomainError> {
        let mut years: BTreeMap<u32, Vec<StudentRecord>> = BTreeMap::new();
        for record in records {
            if record.scores.len() != schedule.len() || record.raw_scores.len() != schedule.len() {
                return Err(missing_after(
                    &record,
                    record.scores.len().min(record.raw_scores.len()),
                    schedule.len(),
                ));
            }
            years.entry(record.year).or_default().push(record);
        }
        for (year, list) in &years {
            let mut seen = std::collections::BTreeSet::new();
            for r in list {
                if !seen.insert(r.student_id.as_str()) {
                    return Err(DomainError::DuplicateStudent {
                        student_id: r.student_id.clone(),
                        year: *year,
                    });
                }
            }
        }
        let normalization = normalization.into_iter().map(|n| (n.year, n)).collect();
        Ok(Self {
            schedule,
            years,
            normalization,
        })
    }

    pub fn schedule(&self) -> &AssessmentSchedule {
        &self.schedule
    }

    pub fn years(&self) -> impl Iterator<Item = (u32, &[StudentRecord])> {
        self.years.iter().map(|(y, v)| (*y, v.as_slice()))
    }

    pub fn year_records(&self, year: u32) -> Option<&[StudentRecord]> {
        self.years.get(&year).map(|v| v.as_slice())
    }

    pub fn normalization(&self, year: u32) -> Option<&YearNormalization> {
        self.normalization.get(&year)
    }

    pub fn max_year(&self) -> Option<u32> {
        self.years.keys().next_back().copied()
    }

    pub fn student_count(&self) -> usize {
        self.years.values().map(Vec::len).sum()
    }

    /// View of the per-`k` (feature-prefix, residual) pairs available when
    /// predicting `current_year`: years `max(1, y - window)..y`, never the
    /// current year itself.
    pub fn knowledge_base(&self, current_year: u32, window: Option<u32>) -> KnowledgeBase<'_> {
        let lowest = match window {
            Some(w) => current_year.saturating_sub(w),
            None => 0,
        };
        let records: Vec<&StudentRecord> = self
            .years
            .range(lowest..current_year)
            .flat_map(|(_, v)| v.iter())
            .collect();
        KnowledgeBase::build(&self.schedule, records)
    }
}

/// One knowledge-base member at a fixed `k`: the past student's score prefix,
/// their residual overall score after `k`, and their known overall score.
#[derive(Debug, Clone, Copy)]
pub struct PoolEntry<'a> {
    pub features: FeatureVector<'a>,
    pub residual: f64,
    pub overall: f64,
    pub student_id: &'a str,
    pub year: u32,
    pub letter_grade: Option<&'a str>,
}

/// All (feature-prefix, residual) pairs from completed past years, organized
/// per assessment index. Immutable during a prediction pass.
#[derive(Debug, Clone)]
pub struct KnowledgeBase<'a> {
    pools: Vec<Vec<PoolEntry<'a>>>,
    students: usize,
}

impl<'a> KnowledgeBase<'a> {
    fn build(schedule: &AssessmentSchedule, records: Vec<&'a StudentRecord>) -> Self {
        let capacity = records.len();
        let weights: Vec<f64> = schedule.assessments().iter().map(|a| a.weight).collect();
        let mut pools: Vec<Vec<PoolEntry<'a>>> = (0..schedule.len())
            .map(|_| Vec::with_capacity(capacity))
            .collect();
        for record in &records {
            // Suffix-sum the residual once per record: c_K = 0, c_{k-1} = c_k + w_k a_k.
            let mut c = 0.0;
            let mut residuals = vec![0.0; schedule.len()];
            for k in (1..schedule.len()).rev() {
                c += weights[k] * record.scores[k];
                residuals[k - 1] = c;
            }
            let overall = schedule.prefix_score(&record.scores, schedule.len());
            for k in 1..=schedule.len() {
                pools[k - 1].push(PoolEntry {
                    features: FeatureVector::new(&record.scores[..k]),
                    residual: residuals[k - 1],
                    overall,
                    student_id: &record.student_id,
                    year: record.year,
                    letter_grade: record.letter_grade.as_deref(),
                });
            }
        }
        Self {
            pools,
            students: capacity,
        }
    }

    /// Pool of pairs saved after assessment `k` (1-based).
    pub fn pool_at(&self, k: usize) -> &[PoolEntry<'a>] {
        &self.pools[k - 1]
    }

    /// Number of contributing past students.
    pub fn students(&self) -> usize {
        self.students
    }

    pub fn is_empty(&self) -> bool {
        self.students == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn schedule(weights: &[f64]) -> AssessmentSchedule {
        let assessments = weights
            .iter()
            .enumerate()
            .map(|(i, &w)| AssessmentDesc {
                id: format!("a{}", i + 1),
                kind: AssessmentKind::TakeHome,
                topic: format!("t{}", i + 1),
                weight: w,
            })
            .collect();
        AssessmentSchedule::new(assessments).unwrap()
    }

    pub(crate) fn record(id: &str, year: u32, scores: &[f64]) -> StudentRecord {
        StudentRecord {
            student_id: id.to_string(),
            year,
            scores: scores.to_vec(),
            raw_scores: scores.to_vec(),
            letter_grade: None,
        }
    }

    #[test]
    fn overall_score_weighted_sum() {
        let s = schedule(&[0.2, 0.8]);
        let r = record("s1", 1, &[0.5, 1.0]);
        assert!((overall_score(&r, &s).unwrap() - 0.9).abs() < 1e-12);

        let ones = record("s2", 1, &[1.0, 1.0]);
        assert!((overall_score(&ones, &s).unwrap() - 1.0).abs() < 1e-12);
        let zeros = record("s3", 1, &[0.0, 0.0]);
        assert_eq!(overall_score(&zeros, &s).unwrap(), 0.0);
    }

    #[test]
    fn overall_score_incomplete_names_missing() {
        let s = schedule(&[0.2, 0.3, 0.5]);
        let r = record("s1", 1, &[0.5]);
        match overall_score(&r, &s) {
            Err(DomainError::MissingScores { missing, .. }) => assert_eq!(missing, vec![2, 3]),
            other => panic!("expected MissingScores, got {other:?}"),
        }
    }

    #[test]
    fn residual_matches_hand_value() {
        let s = schedule(&[0.2, 0.3, 0.5]);
        let r = record("s1", 1, &[0.9, 0.4, 0.8]);
        assert!((residual(&r, 1, &s).unwrap() - 0.52).abs() < 1e-12);
        assert_eq!(residual(&r, 3, &s).unwrap(), 0.0);
        assert!(matches!(
            residual(&r, 4, &s),
            Err(DomainError::IndexOutOfRange { .. })
        ));
        assert!(matches!(
            residual(&r, 0, &s),
            Err(DomainError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn residual_reconstruction_identity() {
        let s = schedule(&[0.1, 0.2, 0.3, 0.4]);
        let r = record("s1", 1, &[0.3, -0.7, 1.2, 0.05]);
        let z = overall_score(&r, &s).unwrap();
        for k in 1..=4 {
            let c = residual(&r, k, &s).unwrap();
            let prefix = s.prefix_score(&r.scores, k);
            assert!((z - (c + prefix)).abs() < BOOKKEEPING_TOL);
        }
        // Telescoping: c_k - c_{k+1} = w_{k+1} a_{k+1}.
        for k in 1..4 {
            let d = residual(&r, k, &s).unwrap() - residual(&r, k + 1, &s).unwrap();
            assert!((d - s.weight(k + 1) * r.scores[k]).abs() < BOOKKEEPING_TOL);
        }
    }

    #[test]
    fn feature_prefix_bounds() {
        let r = record("s1", 1, &[0.1, 0.2, 0.3]);
        assert_eq!(feature_prefix(&r, 1).unwrap().entries(), &[0.1]);
        assert_eq!(feature_prefix(&r, 2).unwrap().entries(), &[0.1, 0.2]);
        assert_eq!(feature_prefix(&r, 3).unwrap().k(), 3);
        assert!(matches!(
            feature_prefix(&r, 4),
            Err(DomainError::MissingScores { .. })
        ));
    }

    #[test]
    fn knowledge_base_excludes_current_and_respects_window() {
        let s = schedule(&[0.5, 0.5]);
        let mut records = Vec::new();
        for year in 1..=7u32 {
            for i in 0..3 {
                records.push(record(&format!("y{year}s{i}"), year, &[0.1 * i as f64, 0.2]));
            }
        }
        let ds = CohortDataset::new(s, records, vec![]).unwrap();

        let kb = ds.knowledge_base(1, None);
        assert!(kb.is_empty());
        assert!(kb.pool_at(1).is_empty());

        let kb = ds.knowledge_base(7, Some(1));
        assert_eq!(kb.students(), 3);
        assert!(kb.pool_at(1).iter().all(|e| e.year == 6));

        let kb = ds.knowledge_base(3, None);
        for k in 1..=2 {
            assert_eq!(kb.pool_at(k).len(), 6);
            assert!(kb.pool_at(k).iter().all(|e| e.year < 3));
            assert!(kb.pool_at(k).iter().all(|e| e.features.k() == k));
        }
    }

    #[test]
    fn pool_residuals_match_direct_computation() {
        let s = schedule(&[0.2, 0.3, 0.5]);
        let r1 = record("a", 1, &[0.9, 0.4, 0.8]);
        let ds = CohortDataset::new(s.clone(), vec![r1.clone()], vec![]).unwrap();
        let kb = ds.knowledge_base(2, None);
        for k in 1..=3 {
            let want = residual(&r1, k, &s).unwrap();
            let got = kb.pool_at(k)[0].residual;
            assert!((got - want).abs() < 1e-15);
        }
        assert_eq!(kb.pool_at(3)[0].residual, 0.0);
    }

    #[test]
    fn schedule_rejects_bad_weights() {
        let mk = |w: &[f64]| {
            AssessmentSchedule::new(
                w.iter()
                    .enumerate()
                    .map(|(i, &weight)| AssessmentDesc {
                        id: format!("a{i}"),
                        kind: AssessmentKind::InClass,
                        topic: "t".into(),
                        weight,
                    })
                    .collect(),
            )
        };
        assert!(matches!(mk(&[0.5, 0.4]), Err(DomainError::WeightSum { .. })));
        assert!(matches!(
            mk(&[1.2, -0.2]),
            Err(DomainError::NonPositiveWeight { .. })
        ));
        assert!(mk(&[0.5, 0.5]).is_ok());
    }

    #[test]
    fn duplicate_students_rejected() {
        let s = schedule(&[1.0]);
        let recs = vec![record("dup", 1, &[0.5]), record("dup", 1, &[0.6])];
        assert!(matches!(
            CohortDataset::new(s, recs, vec![]),
            Err(DomainError::DuplicateStudent { .. })
        ));
    }
}
