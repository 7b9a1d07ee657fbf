//! Synthetic cohort generation for desk-scale experiments.
//!
//! Each student gets a latent ability drawn from a zero-mean normal; raw
//! scores are the ability around a fixed base level plus per-assessment noise,
//! clamped to the grading range. In-class assessments carry less noise than
//! take-home ones, which makes them more informative about the overall score.
//! A configurable share of students are "trend" students whose ability drifts
//! linearly over the course, the pattern that defeats prefix-averaging
//! baselines. Letter grades come from banding the raw overall score.
//!
//! Generation is deterministic: the master seed drives per-year cohort sizes,
//! and every student draws from an independent substream keyed by
//! (year, index), so the same seed reproduces the dataset byte for byte.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::domain::{
    AssessmentDesc, AssessmentKind, AssessmentSchedule, CohortDataset, DomainError, StudentRecord,
};
use crate::preprocess::{classify_score, normalize_year, ClassBands, PreprocessError};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("need at least one year, got {years}")]
    NoYears { years: u32 },
    #[error("students per year must be at least 2, got {n}")]
    TooFewStudents { n: usize },
    #[error("student range {lo}..={hi} is empty or below 2")]
    BadRange { lo: usize, hi: usize },
    #[error("noise standard deviations must be non-negative")]
    NegativeNoise,
    #[error("trend fraction must lie in [0, 1], got {fraction}")]
    BadTrendFraction { fraction: f64 },
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// Cohort size per year: fixed, or drawn uniformly from an inclusive range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StudentsPerYear {
    Fixed(usize),
    Range(usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub years: u32,
    pub students_per_year: StudentsPerYear,
    pub schedule: AssessmentSchedule,
    /// Spread of latent ability, in raw grading points.
    pub ability_std: f64,
    pub noise_take_home: f64,
    pub noise_in_class: f64,
    /// Share of students whose ability drifts linearly over the course.
    pub trend_fraction: f64,
    /// Bands on the raw overall score used to assign letter grades.
    pub grade_bands: ClassBands,
}

/// Raw-score base level around which abilities spread.
pub const BASE_LEVEL: f64 = 75.0;
/// Grading range for raw scores.
pub const RAW_MIN: f64 = 0.0;
pub const RAW_MAX: f64 = 100.0;
/// Trend students drift by this multiple of `ability_std` end to end.
pub const TREND_AMPLITUDE_FACTOR: f64 = 3.0;

impl SynthConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            years: 4,
            students_per_year: StudentsPerYear::Fixed(50),
            schedule: default_schedule(),
            ability_std: 10.0,
            noise_take_home: 8.0,
            noise_in_class: 3.0,
            trend_fraction: 0.2,
            grade_bands: default_grade_bands(),
        }
    }

    fn validate(&self) -> Result<(), SynthError> {
        if self.years == 0 {
            return Err(SynthError::NoYears { years: 0 });
        }
        match self.students_per_year {
            StudentsPerYear::Fixed(n) if n < 2 => return Err(SynthError::TooFewStudents { n }),
            StudentsPerYear::Range(lo, hi) if lo < 2 || hi < lo => {
                return Err(SynthError::BadRange { lo, hi })
            }
            _ => {}
        }
        if self.noise_take_home < 0.0 || self.noise_in_class < 0.0 || self.ability_std < 0.0 {
            return Err(SynthError::NegativeNoise);
        }
        if !(0.0..=1.0).contains(&self.trend_fraction) {
            return Err(SynthError::BadTrendFraction {
                fraction: self.trend_fraction,
            });
        }
        Ok(())
    }
}

/// A ten-slot course: three homeworks, a midterm, four more homeworks, a
/// project, and a final. Homework splits 20% evenly; midterm 25%, project
/// 15%, final 40%.
pub fn default_schedule() -> AssessmentSchedule {
    let hw = 0.2 / 7.0;
    let mut assessments = Vec::new();
    let mut hw_index = 0;
    let mut push_hw = |list: &mut Vec<AssessmentDesc>| {
        hw_index += 1;
        list.push(AssessmentDesc {
            id: format!("hw{hw_index}"),
            kind: AssessmentKind::TakeHome,
            topic: format!("unit{hw_index}"),
            weight: hw,
        });
    };
    for _ in 0..3 {
        push_hw(&mut assessments);
    }
    assessments.push(AssessmentDesc {
        id: "midterm".into(),
        kind: AssessmentKind::InClass,
        topic: "midterm".into(),
        weight: 0.25,
    });
    for _ in 0..4 {
        push_hw(&mut assessments);
    }
    assessments.push(AssessmentDesc {
        id: "project".into(),
        kind: AssessmentKind::TakeHome,
        topic: "project".into(),
        weight: 0.15,
    });
    assessments.push(AssessmentDesc {
        id: "final".into(),
        kind: AssessmentKind::InClass,
        topic: "final".into(),
        weight: 0.4,
    });
    AssessmentSchedule::new(assessments).expect("weights sum to 1")
}

/// Letter bands on the raw percent scale: A >= 90, then 10-point steps.
pub fn default_grade_bands() -> ClassBands {
    ClassBands::new(
        vec![60.0, 70.0, 80.0, 90.0],
        vec!["A".into(), "B".into(), "C".into(), "D".into(), "F".into()],
    )
    .expect("static bands are valid")
}

fn student_rng(seed: u64, year: u32, index: usize) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(((year as u64) << 32) | (index as u64 + 1));
    rng
}

/// Generate one raw-score record. Draw order is fixed: ability, trend
/// membership, trend direction, then one noise draw per assessment.
fn generate_student(
    config: &SynthConfig,
    year: u32,
    index: usize,
) -> Result<StudentRecord, SynthError> {
    let mut rng = student_rng(config.seed, year, index);
    let ability = Normal::new(0.0, config.ability_std)
        .map(|d| d.sample(&mut rng))
        .unwrap_or(0.0);
    let trended = rng.random::<f64>() < config.trend_fraction;
    let direction = if rng.random::<f64>() < 0.5 { -1.0 } else { 1.0 };
    let amplitude = TREND_AMPLITUDE_FACTOR * config.ability_std;
    let kk = config.schedule.len();
    let mut raw_scores = Vec::with_capacity(kk);
    for (l, desc) in config.schedule.assessments().iter().enumerate() {
        let progress = if kk > 1 {
            l as f64 / (kk as f64 - 1.0) - 0.5
        } else {
            0.0
        };
        let theta = ability
            + if trended {
                direction * amplitude * progress
            } else {
                0.0
            };
        let noise_std = match desc.kind {
            AssessmentKind::InClass => config.noise_in_class,
            AssessmentKind::TakeHome => config.noise_take_home,
        };
        let noise = if noise_std > 0.0 {
            Normal::new(0.0, noise_std)
                .map(|d| d.sample(&mut rng))
                .unwrap_or(0.0)
        } else {
            0.0
        };
        raw_scores.push((BASE_LEVEL + theta + noise).clamp(RAW_MIN, RAW_MAX));
    }
    let raw_overall = config.schedule.prefix_score(&raw_scores, kk);
    let grade = config
        .grade_bands
        .label(classify_score(raw_overall, &config.grade_bands))
        .to_string();
    Ok(StudentRecord {
        student_id: format!("y{year}s{index:03}"),
        year,
        scores: vec![],
        raw_scores,
        letter_grade: Some(grade),
    })
}

/// Generate a full multi-year dataset (raw scores, letter grades) and
/// normalize it per year.
pub fn generate(config: &SynthConfig) -> Result<CohortDataset, SynthError> {
    config.validate()?;
    let mut master = ChaCha12Rng::seed_from_u64(config.seed);
    let mut records = Vec::new();
    let mut stats = Vec::new();
    for year in 1..=config.years {
        let count = match config.students_per_year {
            StudentsPerYear::Fixed(n) => n,
            StudentsPerYear::Range(lo, hi) => master.random_range(lo..=hi),
        };
        let raw: Vec<StudentRecord> = (0..count)
            .map(|i| generate_student(config, year, i))
            .collect::<Result<_, _>>()?;
        let (normalized, year_stats) = normalize_year(&raw, &config.schedule)?;
        records.extend(normalized);
        stats.push(year_stats);
    }
    Ok(CohortDataset::new(config.schedule.clone(), records, stats)?)
}

/// Per-assessment sample Pearson correlations with the overall score and with
/// the last (final) assessment, pooled over all years of normalized scores.
/// Zero-variance columns report no coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct AssessmentCorrelation {
    pub id: String,
    pub with_overall: Option<f64>,
    pub with_final: Option<f64>,
}

pub fn correlation_table(dataset: &CohortDataset) -> Vec<AssessmentCorrelation> {
    let schedule = dataset.schedule();
    let kk = schedule.len();
    let records: Vec<&StudentRecord> = dataset.years().flat_map(|(_, r)| r.iter()).collect();
    let overalls: Vec<f64> = records
        .iter()
        .map(|r| schedule.prefix_score(&r.scores, kk))
        .collect();
    let finals: Vec<f64> = records.iter().map(|r| r.scores[kk - 1]).collect();
    schedule
        .assessments()
        .iter()
        .enumerate()
        .map(|(l, desc)| {
            let column: Vec<f64> = records.iter().map(|r| r.scores[l]).collect();
            AssessmentCorrelation {
                id: desc.id.clone(),
                with_overall: pearson(&column, &overalls),
                with_final: pearson(&column, &finals),
            }
        })
        .collect()
}

/// Sample Pearson coefficient; absent when either side has zero variance or
/// fewer than 3 points.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    if n < 3 || n != y.len() {
        return None;
    }
    let mean_x = x.iter().sum::<f64>() / n as f64;
    let mean_y = y.iter().sum::<f64>() / n as f64;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (a, b) in x.iter().zip(y) {
        let dx = a - mean_x;
        let dy = b - mean_y;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}
