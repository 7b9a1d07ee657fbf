//! Score normalization, cross-year schedule alignment and class-threshold
//! derivation.
//!
//! Normalization follows the per-year rule
//! `a = (a* - mean_of_assessment_column) / std_of_overall_scores`, so a year's
//! normalized overall scores have sample mean 0 and sample standard deviation 1.
//! Normalized scores are *not* confined to `[0, 1]` and downstream code accepts
//! unbounded values.

use thiserror::Error;

use crate::domain::{
    AssessmentKind, AssessmentSchedule, DomainError, StudentRecord, YearNormalization,
};

#[derive(Debug, Error, PartialEq)]
pub enum PreprocessError {
    #[error("year {year} has {students} students; need at least 2 to normalize")]
    TooFewStudents { year: u32, students: usize },
    #[error("year {year} overall scores are all identical; standard deviation is zero")]
    DegenerateCohort { year: u32 },
    #[error("cannot align schedules: no past assessment matches current topics {topics:?}")]
    Alignment { topics: Vec<String> },
    #[error("no past student holds boundary grade `{grade}`")]
    InsufficientHistory { grade: String },
    #[error("class thresholds must be strictly ascending")]
    UnorderedThresholds,
    #[error("need {expected} class labels for {thresholds} thresholds, got {got}")]
    LabelCount {
        expected: usize,
        thresholds: usize,
        got: usize,
    },
    #[error("boundary grades `{upper}` and `{lower}` are not adjacent in the grade order")]
    NonAdjacentBoundary { upper: String, lower: String },
    #[error("letter grade `{grade}` is not in the grade order")]
    UnknownGrade { grade: String },
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// Normalize one year of raw records: subtract the per-assessment sample mean,
/// divide by the sample standard deviation of the year's raw overall scores.
///
/// Requires at least two students and a non-degenerate spread of overall scores.
pub fn normalize_year(
    raw_records: &[StudentRecord],
    schedule: &AssessmentSchedule,
) -> Result<(Vec<StudentRecord>, YearNormalization), PreprocessError> {
    let year = raw_records.first().map(|r| r.year).unwrap_or(0);
    let n = raw_records.len();
    if n < 2 {
        return Err(PreprocessError::TooFewStudents { year, students: n });
    }
    let kk = schedule.len();
    for r in raw_records {
        if r.raw_scores.len() != kk {
            return Err(DomainError::MissingScores {
                student_id: r.student_id.clone(),
                missing: (r.raw_scores.len() + 1..=kk).collect(),
            }
            .into());
        }
    }

    let mut means = vec![0.0; kk];
    for r in raw_records {
        for (m, s) in means.iter_mut().zip(&r.raw_scores) {
            *m += s;
        }
    }
    for m in &mut means {
        *m /= n as f64;
    }

    let overalls: Vec<f64> = raw_records
        .iter()
        .map(|r| schedule.prefix_score(&r.raw_scores, kk))
        .collect();
    let overall_mean = overalls.iter().sum::<f64>() / n as f64;
    let ss: f64 = overalls.iter().map(|z| (z - overall_mean).powi(2)).sum();
    let std = (ss / (n as f64 - 1.0)).sqrt();
    if std == 0.0 {
        return Err(PreprocessError::DegenerateCohort { year });
    }

    let normalized = raw_records
        .iter()
        .map(|r| {
            let scores = r
                .raw_scores
                .iter()
                .zip(&means)
                .map(|(s, m)| (s - m) / std)
                .collect();
            StudentRecord {
                student_id: r.student_id.clone(),
                year: r.year,
                scores,
                raw_scores: r.raw_scores.clone(),
                letter_grade: r.letter_grade.clone(),
            }
        })
        .collect();

    Ok((
        normalized,
        YearNormalization {
            year,
            assessment_means: means,
            overall_std: std,
            students: n,
        },
    ))
}

/// Where a current-year slot takes its value from in a past-year record.
#[derive(Debug, Clone, PartialEq)]
pub enum SlotSource {
    /// Copy of a single past assessment (also used for duplication: several
    /// slots may share one source).
    Single(usize),
    /// Weight-weighted mean of several past assessments on the same topic,
    /// combined with the *past* weights.
    Merged(Vec<usize>),
}

/// Mapping from a past-year schedule onto the current-year slot sequence.
///
/// Derived purely from (topic, kind) tags: merges only ever combine
/// assessments sharing a topic, and in-class work is never aligned against
/// take-home work. Past assessments whose topic is absent from the current
/// year are dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentPlan {
    slots: Vec<SlotSource>,
    dropped: Vec<usize>,
}

impl AlignmentPlan {
    pub fn derive(
        past: &AssessmentSchedule,
        current: &AssessmentSchedule,
    ) -> Result<Self, PreprocessError> {
        type Key<'a> = (&'a str, AssessmentKind);
        let mut past_groups: std::collections::BTreeMap<Key, Vec<usize>> = Default::default();
        for (i, a) in past.assessments().iter().enumerate() {
            past_groups.entry((a.topic.as_str(), a.kind)).or_default().push(i);
        }
        let mut current_groups: std::collections::BTreeMap<Key, Vec<usize>> = Default::default();
        for (i, a) in current.assessments().iter().enumerate() {
            current_groups
                .entry((a.topic.as_str(), a.kind))
                .or_default()
                .push(i);
        }

        let unmatched: Vec<String> = current_groups
            .keys()
            .filter(|key| !past_groups.contains_key(*key))
            .map(|(topic, _)| topic.to_string())
            .collect();
        if !unmatched.is_empty() {
            return Err(PreprocessError::Alignment { topics: unmatched });
        }

        let mut slots = vec![None; current.len()];
        let mut used = vec![false; past.len()];
        for (key, cur_idxs) in &current_groups {
            let past_idxs = &past_groups[key];
            if past_idxs.len() == cur_idxs.len() {
                for (&p, &c) in past_idxs.iter().zip(cur_idxs) {
                    slots[c] = Some(SlotSource::Single(p));
                }
            } else {
                // Count mismatch: combine all past assessments on the topic,
                // then fill (duplicate into) every current slot.
                let source = if past_idxs.len() == 1 {
                    SlotSource::Single(past_idxs[0])
                } else {
                    SlotSource::Merged(past_idxs.clone())
                };
                for &c in cur_idxs {
                    slots[c] = Some(source.clone());
                }
            }
            for &p in past_idxs {
                used[p] = true;
            }
        }

        let dropped = used
            .iter()
            .enumerate()
            .filter(|(_, u)| !**u)
            .map(|(i, _)| i)
            .collect();
        Ok(Self {
            slots: slots.into_iter().map(Option::unwrap).collect(),
            dropped,
        })
    }

    /// Past-year assessment indices with no current-year counterpart.
    pub fn dropped(&self) -> &[usize] {
        &self.dropped
    }

    pub fn slots(&self) -> &[SlotSource] {
        &self.slots
    }

    /// Transform one past-year score sequence into the current-year slot order.
    pub fn apply(&self, scores: &[f64], past: &AssessmentSchedule) -> Vec<f64> {
        self.slots
            .iter()
            .map(|slot| match slot {
                SlotSource::Single(i) => scores[*i],
                SlotSource::Merged(idxs) => {
                    let num: f64 = idxs.iter().map(|&i| past.weight(i + 1) * scores[i]).sum();
                    let den: f64 = idxs.iter().map(|&i| past.weight(i + 1)).sum();
                    num / den
                }
            })
            .collect()
    }
}

/// Align a past year's records onto the current schedule shape. Both the
/// normalized and raw score sequences are transformed with the same plan;
/// current-year weights apply downstream, never past weights.
pub fn align_schedule(
    past: &AssessmentSchedule,
    past_records: &[StudentRecord],
    current: &AssessmentSchedule,
) -> Result<Vec<StudentRecord>, PreprocessError> {
    let plan = AlignmentPlan::derive(past, current)?;
    Ok(past_records
        .iter()
        .map(|r| StudentRecord {
            student_id: r.student_id.clone(),
            year: r.year,
            scores: plan.apply(&r.scores, past),
            raw_scores: plan.apply(&r.raw_scores, past),
            letter_grade: r.letter_grade.clone(),
        })
        .collect())
}

/// Score bands for an `L`-class split: `L-1` strictly ascending thresholds and
/// `L` labels ordered best-first, so class index 0 is the top band and larger
/// indices are worse bands.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassBands {
    thresholds: Vec<f64>,
    labels: Vec<String>,
}

impl ClassBands {
    pub fn new(thresholds: Vec<f64>, labels: Vec<String>) -> Result<Self, PreprocessError> {
        if thresholds.is_empty() || thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(PreprocessError::UnorderedThresholds);
        }
        if labels.len() != thresholds.len() + 1 {
            return Err(PreprocessError::LabelCount {
                expected: thresholds.len() + 1,
                thresholds: thresholds.len(),
                got: labels.len(),
            });
        }
        Ok(Self { thresholds, labels })
    }

    /// Binary bands from a single threshold: class 0 = at/above, class 1 = below.
    pub fn binary(z_th: f64, well: &str, poorly: &str) -> Self {
        Self {
            thresholds: vec![z_th],
            labels: vec![well.to_string(), poorly.to_string()],
        }
    }

    pub fn class_count(&self) -> usize {
        self.labels.len()
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, class: usize) -> &str {
        &self.labels[class]
    }

    /// Rank of a label in best-first order, if present.
    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Distance from a score to the nearest band threshold.
    pub fn nearest_threshold_distance(&self, z: f64) -> f64 {
        self.thresholds
            .iter()
            .map(|t| (z - t).abs())
            .fold(f64::INFINITY, f64::min)
    }
}

/// Binary class threshold from history: the midpoint of the mean normalized
/// overall scores of past students holding exactly the two boundary grades.
pub fn derive_binary_threshold(
    past_records: &[&StudentRecord],
    schedule: &AssessmentSchedule,
    upper_grade: &str,
    lower_grade: &str,
) -> Result<f64, PreprocessError> {
    let mean_for = |grade: &str| -> Result<f64, PreprocessError> {
        let mut sum = 0.0;
        let mut count = 0usize;
        for r in past_records {
            if r.letter_grade.as_deref() == Some(grade) {
                sum += crate::domain::overall_score(r, schedule)?;
                count += 1;
            }
        }
        if count == 0 {
            return Err(PreprocessError::InsufficientHistory {
                grade: grade.to_string(),
            });
        }
        Ok(sum / count as f64)
    };
    let upper = mean_for(upper_grade)?;
    let lower = mean_for(lower_grade)?;
    Ok((upper + lower) / 2.0)
}

/// Class index of a score: the number of thresholds strictly above it, so a
/// score exactly at a threshold resolves to the better (lower-index) class.
pub fn classify_score(z_hat: f64, bands: &ClassBands) -> usize {
    bands.thresholds.iter().filter(|t| z_hat < **t).count()
}

/// A binary do-well / do-poorly split of a letter-grade scale: grades ranked
/// best-first, with `upper` the worst grade still counted as doing well and
/// `lower` the best grade counted as doing poorly (they must be adjacent).
#[derive(Debug, Clone, PartialEq)]
pub struct GradeBoundary {
    order: Vec<String>,
    upper_rank: usize,
}

impl GradeBoundary {
    pub fn new(order: Vec<String>, upper: &str, lower: &str) -> Result<Self, PreprocessError> {
        let upper_rank = order
            .iter()
            .position(|g| g == upper)
            .ok_or_else(|| PreprocessError::InsufficientHistory {
                grade: upper.to_string(),
            })?;
        let lower_rank = order
            .iter()
            .position(|g| g == lower)
            .ok_or_else(|| PreprocessError::InsufficientHistory {
                grade: lower.to_string(),
            })?;
        if lower_rank != upper_rank + 1 {
            return Err(PreprocessError::NonAdjacentBoundary {
                upper: upper.to_string(),
                lower: lower.to_string(),
            });
        }
        Ok(Self { order, upper_rank })
    }

    pub fn upper(&self) -> &str {
        &self.order[self.upper_rank]
    }

    pub fn lower(&self) -> &str {
        &self.order[self.upper_rank + 1]
    }

    /// 0 = does well (at or above `upper`), 1 = does poorly.
    pub fn classify_grade(&self, grade: &str) -> Result<usize, PreprocessError> {
        let rank = self.order.iter().position(|g| g == grade).ok_or_else(|| {
            PreprocessError::UnknownGrade {
                grade: grade.to_string(),
            }
        })?;
        Ok(usize::from(rank > self.upper_rank))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{AssessmentDesc, BOOKKEEPING_TOL};

    fn schedule(desc: &[(&str, AssessmentKind, &str, f64)]) -> AssessmentSchedule {
        AssessmentSchedule::new(
            desc.iter()
                .map(|(id, kind, topic, weight)| AssessmentDesc {
                    id: id.to_string(),
                    kind: *kind,
                    topic: topic.to_string(),
                    weight: *weight,
                })
                .collect(),
        )
        .unwrap()
    }

    fn raw_record(id: &str, year: u32, raw: &[f64], grade: Option<&str>) -> StudentRecord {
        StudentRecord {
            student_id: id.to_string(),
            year,
            scores: vec![],
            raw_scores: raw.to_vec(),
            letter_grade: grade.map(str::to_string),
        }
    }

    #[test]
    fn normalize_single_assessment_column() {
        // One assessment with weight 1: overall std is the column std (10).
        let s = schedule(&[("a1", AssessmentKind::InClass, "t", 1.0)]);
        let recs = vec![
            raw_record("s1", 1, &[80.0], None),
            raw_record("s2", 1, &[90.0], None),
            raw_record("s3", 1, &[100.0], None),
        ];
        let (norm, stats) = normalize_year(&recs, &s).unwrap();
        let got: Vec<f64> = norm.iter().map(|r| r.scores[0]).collect();
        for (g, want) in got.iter().zip([-1.0, 0.0, 1.0]) {
            assert!((g - want).abs() < 1e-12);
        }
        assert!((stats.overall_std - 10.0).abs() < 1e-12);
        assert!((stats.assessment_means[0] - 90.0).abs() < 1e-12);
    }

    #[test]
    fn normalized_overalls_have_mean_zero_std_one() {
        let s = schedule(&[
            ("h1", AssessmentKind::TakeHome, "t1", 0.3),
            ("m", AssessmentKind::InClass, "t2", 0.7),
        ]);
        let recs = vec![
            raw_record("s1", 3, &[55.0, 71.0], None),
            raw_record("s2", 3, &[88.0, 64.0], None),
            raw_record("s3", 3, &[73.0, 90.0], None),
            raw_record("s4", 3, &[92.0, 85.0], None),
        ];
        let (norm, _) = normalize_year(&recs, &s).unwrap();
        let overalls: Vec<f64> = norm
            .iter()
            .map(|r| s.prefix_score(&r.scores, 2))
            .collect();
        let mean = overalls.iter().sum::<f64>() / overalls.len() as f64;
        let var = overalls.iter().map(|z| (z - mean).powi(2)).sum::<f64>()
            / (overalls.len() as f64 - 1.0);
        assert!(mean.abs() < 1e-9);
        assert!((var.sqrt() - 1.0).abs() < 1e-9);
        // Column means are zero too.
        for k in 0..2 {
            let col: f64 = norm.iter().map(|r| r.scores[k]).sum();
            assert!(col.abs() / norm.len() as f64 <= BOOKKEEPING_TOL);
        }
    }

    #[test]
    fn normalize_rejects_degenerate_years() {
        let s = schedule(&[("a1", AssessmentKind::InClass, "t", 1.0)]);
        let one = vec![raw_record("s1", 1, &[50.0], None)];
        assert!(matches!(
            normalize_year(&one, &s),
            Err(PreprocessError::TooFewStudents { .. })
        ));
        let flat = vec![
            raw_record("s1", 1, &[50.0], None),
            raw_record("s2", 1, &[50.0], None),
        ];
        assert!(matches!(
            normalize_year(&flat, &s),
            Err(PreprocessError::DegenerateCohort { .. })
        ));
    }

    #[test]
    fn alignment_identity_on_identical_schedules() {
        let s = schedule(&[
            ("h1", AssessmentKind::TakeHome, "fft", 0.5),
            ("m", AssessmentKind::InClass, "filters", 0.5),
        ]);
        let plan = AlignmentPlan::derive(&s, &s).unwrap();
        assert_eq!(plan.apply(&[0.3, 0.9], &s), vec![0.3, 0.9]);
        assert!(plan.dropped().is_empty());
    }

    #[test]
    fn alignment_merges_with_past_weights() {
        // Past year tested "fft" with two homeworks; current year with one.
        let past = schedule(&[
            ("h1", AssessmentKind::TakeHome, "fft", 0.1),
            ("h2", AssessmentKind::TakeHome, "fft", 0.1),
            ("f", AssessmentKind::InClass, "final", 0.8),
        ]);
        let current = schedule(&[
            ("h1", AssessmentKind::TakeHome, "fft", 0.2),
            ("f", AssessmentKind::InClass, "final", 0.8),
        ]);
        let plan = AlignmentPlan::derive(&past, &current).unwrap();
        let out = plan.apply(&[0.8, 0.6, 1.0], &past);
        assert!((out[0] - 0.7).abs() < 1e-12);
        assert_eq!(out[1], 1.0);
    }

    #[test]
    fn alignment_duplicates_scores() {
        let past = schedule(&[
            ("h1", AssessmentKind::TakeHome, "fft", 0.2),
            ("f", AssessmentKind::InClass, "final", 0.8),
        ]);
        let current = schedule(&[
            ("h1", AssessmentKind::TakeHome, "fft", 0.1),
            ("h2", AssessmentKind::TakeHome, "fft", 0.1),
            ("f", AssessmentKind::InClass, "final", 0.8),
        ]);
        let plan = AlignmentPlan::derive(&past, &current).unwrap();
        let out = plan.apply(&[0.4, 1.0], &past);
        assert_eq!(out, vec![0.4, 0.4, 1.0]);
    }

    #[test]
    fn alignment_never_crosses_kinds_and_reports_topics() {
        let past = schedule(&[
            ("q", AssessmentKind::TakeHome, "fft", 0.5),
            ("f", AssessmentKind::InClass, "final", 0.5),
        ]);
        let current = schedule(&[
            ("q", AssessmentKind::InClass, "fft", 0.5),
            ("f", AssessmentKind::InClass, "final", 0.5),
        ]);
        match AlignmentPlan::derive(&past, &current) {
            Err(PreprocessError::Alignment { topics }) => assert_eq!(topics, vec!["fft"]),
            other => panic!("expected alignment error, got {other:?}"),
        }
    }

    #[test]
    fn alignment_drops_unmatched_past_topics() {
        let past = schedule(&[
            ("h1", AssessmentKind::TakeHome, "laplace", 0.5),
            ("f", AssessmentKind::InClass, "final", 0.5),
        ]);
        let current = schedule(&[("f", AssessmentKind::InClass, "final", 1.0)]);
        let plan = AlignmentPlan::derive(&past, &current).unwrap();
        assert_eq!(plan.dropped(), &[0]);
        assert_eq!(plan.apply(&[0.2, 0.9], &past), vec![0.9]);
    }

    #[test]
    fn binary_threshold_is_boundary_midpoint() {
        let s = schedule(&[("a1", AssessmentKind::InClass, "t", 1.0)]);
        let mk = |id: &str, score: f64, grade: &str| StudentRecord {
            student_id: id.into(),
            year: 1,
            scores: vec![score],
            raw_scores: vec![score],
            letter_grade: Some(grade.into()),
        };
        let records = [
            mk("b1", 0.7, "B"),
            mk("b2", 0.5, "B"),
            mk("c1", 0.6, "C"),
            mk("c2", 0.4, "C"),
            mk("a1", 1.9, "A"),
        ];
        let refs: Vec<&StudentRecord> = records.iter().collect();
        let z_th = derive_binary_threshold(&refs, &s, "B", "C").unwrap();
        assert!((z_th - 0.55).abs() < 1e-12);

        assert!(matches!(
            derive_binary_threshold(&refs, &s, "B", "D"),
            Err(PreprocessError::InsufficientHistory { .. })
        ));
    }

    #[test]
    fn classify_score_bands() {
        let bands = ClassBands::new(
            vec![0.3, 0.6],
            vec!["top".into(), "mid".into(), "low".into()],
        )
        .unwrap();
        assert_eq!(classify_score(0.9, &bands), 0);
        assert_eq!(classify_score(0.45, &bands), 1);
        assert_eq!(classify_score(0.1, &bands), 2);
        // Tie at a threshold resolves to the better class.
        assert_eq!(classify_score(0.6, &bands), 0);
        assert_eq!(classify_score(0.3, &bands), 1);

        let binary = ClassBands::binary(0.55, "well", "poorly");
        assert_eq!(classify_score(0.55, &binary), 0);
        assert_eq!(classify_score(0.549, &binary), 1);
    }

    #[test]
    fn bands_validation() {
        assert!(ClassBands::new(vec![0.5, 0.5], vec!["a".into(), "b".into(), "c".into()]).is_err());
        assert!(ClassBands::new(vec![0.5], vec!["a".into()]).is_err());
        let b = ClassBands::new(vec![-1.0, 1.0], vec!["a".into(), "b".into(), "c".into()]).unwrap();
        assert!((b.nearest_threshold_distance(0.25) - 0.75).abs() < 1e-12);
    }
}
