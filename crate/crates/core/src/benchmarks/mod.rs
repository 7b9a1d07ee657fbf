//! Comparison prediction methods behind a common fixed-time interface.
//!
//! Unlike the stopping-rule predictor, every method here predicts each student
//! at one fixed assessment index `k` per experiment; there is no stopping
//! rule. Methods are registered by name and created at runtime, so harness
//! runs and the CLI select them from plain strings:
//!
//! - `last_score`: the most recent score alone
//! - `weighted_prefix`: weight-renormalized mean of the scores so far
//! - `knn`: mean residual of the nearest neighbors (default 7)
//! - `ols`: least-squares linear map from prefix to overall
//! - `logistic`: logistic regression on the prefix (classification)
//! - `neighborhood`: this library's ladder estimate, evaluated at fixed `k`

mod linear;
mod logistic;

use std::collections::BTreeMap;

use thiserror::Error;

pub use linear::{ols_fit, ols_fit_strict, ols_predict, OlsModel, RIDGE_LAMBDA};
pub use logistic::{
    gradient as logistic_gradient, log_likelihood as logistic_log_likelihood, logistic_fit,
    logistic_predict, LogisticModel, GRAD_TOL, MAX_ITERATIONS, SEPARATION_NORM,
};

use crate::domain::{AssessmentSchedule, CohortDataset, FeatureVector};
use crate::eval::{ConfusionCounts, MetricsReport};
use crate::neighborhoods::{radius_ladder, select_best, MIN_NEIGHBORS};
use crate::preprocess::{classify_score, ClassBands, GradeBoundary, PreprocessError};

#[derive(Debug, Error, PartialEq)]
pub enum BenchmarkError {
    #[error("unknown benchmark method `{name}`")]
    UnknownMethod { name: String },
    #[error("method not fitted")]
    NotFitted,
    #[error("score prefix is empty")]
    EmptyPrefix,
    #[error("need {required} training rows, got {rows}")]
    InsufficientRows { rows: usize, required: usize },
    #[error("pool holds {available} members; {required} neighbors requested")]
    InsufficientNeighbors { available: usize, required: usize },
    #[error("design matrix is rank deficient")]
    SingularDesign,
    #[error("training labels are single-class ({positives} positives of {rows})")]
    DegenerateLabels { positives: usize, rows: usize },
    #[error("training rows carry no class labels")]
    MissingClasses,
    #[error("method `{name}` predicts a {produced}, harness expected a {expected}")]
    OutputKind {
        name: String,
        produced: &'static str,
        expected: &'static str,
    },
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
}

/// One training example at a fixed `k`.
#[derive(Debug, Clone)]
pub struct TrainRow {
    pub features: Vec<f64>,
    pub residual: f64,
    pub overall: f64,
    pub class: Option<usize>,
    pub student_id: String,
    pub year: u32,
}

/// Everything a method may use to fit at a fixed `k`.
#[derive(Debug, Clone)]
pub struct TrainContext<'a> {
    pub schedule: &'a AssessmentSchedule,
    pub k: usize,
    pub rows: Vec<TrainRow>,
}

/// A fixed-time prediction: either an overall-score estimate or a class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BenchOutput {
    Score(f64),
    Class { class: usize, probability: f64 },
}

/// A prediction method evaluated at one fixed assessment index.
pub trait BenchmarkMethod {
    fn name(&self) -> &'static str;
    fn fit(&mut self, ctx: &TrainContext<'_>) -> Result<(), BenchmarkError>;
    fn predict(&self, prefix: FeatureVector<'_>) -> Result<BenchOutput, BenchmarkError>;
}

/// Tunables for registry-created methods.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodParams {
    pub knn_neighbors: usize,
    pub epsilon: f64,
}

impl Default for MethodParams {
    fn default() -> Self {
        Self {
            knn_neighbors: 7,
            epsilon: 0.5,
        }
    }
}

/// Registered method names, in canonical order.
pub const METHOD_NAMES: &[&str] = &[
    "last_score",
    "weighted_prefix",
    "knn",
    "ols",
    "logistic",
    "neighborhood",
];

/// Create a method by registered name.
pub fn create(name: &str, params: &MethodParams) -> Result<Box<dyn BenchmarkMethod>, BenchmarkError> {
    match name {
        "last_score" => Ok(Box::new(LastScore)),
        "weighted_prefix" => Ok(Box::new(WeightedPrefix::default())),
        "knn" => Ok(Box::new(Knn::new(params.knn_neighbors))),
        "ols" => Ok(Box::new(Ols::default())),
        "logistic" => Ok(Box::new(Logistic::default())),
        "neighborhood" => Ok(Box::new(NeighborhoodAtK::new(params.epsilon))),
        _ => Err(BenchmarkError::UnknownMethod {
            name: name.to_string(),
        }),
    }
}

/// Predict with the most recent score alone; both sides are standardized, so
/// the score itself is the estimate.
struct LastScore;

impl BenchmarkMethod for LastScore {
    fn name(&self) -> &'static str {
        "last_score"
    }

    fn fit(&mut self, _ctx: &TrainContext<'_>) -> Result<(), BenchmarkError> {
        Ok(())
    }

    fn predict(&self, prefix: FeatureVector<'_>) -> Result<BenchOutput, BenchmarkError> {
        let last = prefix.entries().last().ok_or(BenchmarkError::EmptyPrefix)?;
        Ok(BenchOutput::Score(*last))
    }
}

/// Weight-renormalized mean of the scores so far.
#[derive(Default)]
struct WeightedPrefix {
    weights: Vec<f64>,
}

impl BenchmarkMethod for WeightedPrefix {
    fn name(&self) -> &'static str {
        "weighted_prefix"
    }

    fn fit(&mut self, ctx: &TrainContext<'_>) -> Result<(), BenchmarkError> {
        self.weights = ctx.schedule.assessments().iter().map(|a| a.weight).collect();
        Ok(())
    }

    fn predict(&self, prefix: FeatureVector<'_>) -> Result<BenchOutput, BenchmarkError> {
        if self.weights.is_empty() {
            return Err(BenchmarkError::NotFitted);
        }
        if prefix.k() == 0 {
            return Err(BenchmarkError::EmptyPrefix);
        }
        let num: f64 = self
            .weights
            .iter()
            .zip(prefix.entries())
            .map(|(w, a)| w * a)
            .sum();
        let den: f64 = self.weights[..prefix.k()].iter().sum();
        Ok(BenchOutput::Score(num / den))
    }
}

/// Overall score as prefix contribution plus the mean residual of the nearest
/// neighbors under the weighted metric. Distance ties at the cutoff resolve to
/// the lexicographically-first student ids (then earlier years).
pub struct Knn {
    neighbors: usize,
    weights: Vec<f64>,
    train: Vec<TrainRow>,
}

impl Knn {
    pub fn new(neighbors: usize) -> Self {
        Self {
            neighbors,
            weights: Vec::new(),
            train: Vec::new(),
        }
    }
}

impl BenchmarkMethod for Knn {
    fn name(&self) -> &'static str {
        "knn"
    }

    fn fit(&mut self, ctx: &TrainContext<'_>) -> Result<(), BenchmarkError> {
        if ctx.rows.len() < self.neighbors {
            return Err(BenchmarkError::InsufficientNeighbors {
                available: ctx.rows.len(),
                required: self.neighbors,
            });
        }
        self.weights = ctx.schedule.assessments().iter().map(|a| a.weight).collect();
        self.train = ctx.rows.clone();
        Ok(())
    }

    fn predict(&self, prefix: FeatureVector<'_>) -> Result<BenchOutput, BenchmarkError> {
        if self.train.is_empty() {
            return Err(BenchmarkError::NotFitted);
        }
        let k = prefix.k();
        let prefix_weight: f64 = self.weights[..k].iter().sum();
        let mut ranked: Vec<(f64, &TrainRow)> = self
            .train
            .iter()
            .map(|row| {
                let num: f64 = row.features[..k]
                    .iter()
                    .zip(prefix.entries())
                    .zip(&self.weights)
                    .map(|((a, b), w)| w * (a - b).abs())
                    .sum();
                (num / prefix_weight, row)
            })
            .collect();
        ranked.sort_by(|a, b| {
            a.0.total_cmp(&b.0)
                .then_with(|| a.1.student_id.cmp(&b.1.student_id))
                .then_with(|| a.1.year.cmp(&b.1.year))
        });
        let chosen = &ranked[..self.neighbors];
        let residual_mean =
            chosen.iter().map(|(_, r)| r.residual).sum::<f64>() / self.neighbors as f64;
        let prefix_score: f64 = self.weights[..k]
            .iter()
            .zip(prefix.entries())
            .map(|(w, a)| w * a)
            .sum();
        Ok(BenchOutput::Score(prefix_score + residual_mean))
    }
}

/// Least-squares linear map from the score prefix to the overall score.
#[derive(Default)]
struct Ols {
    model: Option<OlsModel>,
}

impl BenchmarkMethod for Ols {
    fn name(&self) -> &'static str {
        "ols"
    }

    fn fit(&mut self, ctx: &TrainContext<'_>) -> Result<(), BenchmarkError> {
        let pairs: Vec<(&[f64], f64)> = ctx
            .rows
            .iter()
            .map(|r| (r.features.as_slice(), r.overall))
            .collect();
        self.model = Some(ols_fit(&pairs)?);
        Ok(())
    }

    fn predict(&self, prefix: FeatureVector<'_>) -> Result<BenchOutput, BenchmarkError> {
        let model = self.model.as_ref().ok_or(BenchmarkError::NotFitted)?;
        Ok(BenchOutput::Score(ols_predict(model, prefix.entries())))
    }
}

/// Logistic regression on the prefix; predicts the do-poorly class directly.
#[derive(Default)]
struct Logistic {
    model: Option<LogisticModel>,
}

impl BenchmarkMethod for Logistic {
    fn name(&self) -> &'static str {
        "logistic"
    }

    fn fit(&mut self, ctx: &TrainContext<'_>) -> Result<(), BenchmarkError> {
        let mut pairs = Vec::with_capacity(ctx.rows.len());
        for row in &ctx.rows {
            let class = row.class.ok_or(BenchmarkError::MissingClasses)?;
            pairs.push((row.features.as_slice(), class));
        }
        self.model = Some(logistic_fit(&pairs)?);
        Ok(())
    }

    fn predict(&self, prefix: FeatureVector<'_>) -> Result<BenchOutput, BenchmarkError> {
        let model = self.model.as_ref().ok_or(BenchmarkError::NotFitted)?;
        let (class, probability) = logistic_predict(model, prefix.entries());
        Ok(BenchOutput::Class { class, probability })
    }
}

/// The library's own single-checkpoint estimate (ladder + best rung), exposed
/// behind the fixed-time interface for side-by-side comparisons.
pub struct NeighborhoodAtK {
    epsilon: f64,
    schedule: Option<AssessmentSchedule>,
    train: Vec<TrainRow>,
}

impl NeighborhoodAtK {
    pub fn new(epsilon: f64) -> Self {
        Self {
            epsilon,
            schedule: None,
            train: Vec::new(),
        }
    }
}

impl BenchmarkMethod for NeighborhoodAtK {
    fn name(&self) -> &'static str {
        "neighborhood"
    }

    fn fit(&mut self, ctx: &TrainContext<'_>) -> Result<(), BenchmarkError> {
        if ctx.rows.len() < MIN_NEIGHBORS {
            return Err(BenchmarkError::InsufficientNeighbors {
                available: ctx.rows.len(),
                required: MIN_NEIGHBORS,
            });
        }
        self.schedule = Some(ctx.schedule.clone());
        self.train = ctx.rows.clone();
        Ok(())
    }

    fn predict(&self, prefix: FeatureVector<'_>) -> Result<BenchOutput, BenchmarkError> {
        let schedule = self.schedule.as_ref().ok_or(BenchmarkError::NotFitted)?;
        let pool: Vec<crate::domain::PoolEntry<'_>> = self
            .train
            .iter()
            .map(|row| crate::domain::PoolEntry {
                features: FeatureVector::new(&row.features),
                residual: row.residual,
                overall: row.overall,
                student_id: &row.student_id,
                year: row.year,
                letter_grade: None,
            })
            .collect();
        let ladder = radius_ladder(prefix, &pool, schedule, None).map_err(|_| {
            BenchmarkError::InsufficientNeighbors {
                available: pool.len(),
                required: MIN_NEIGHBORS,
            }
        })?;
        let (_, best) = select_best(&ladder);
        let prefix_score = schedule.prefix_score(prefix.entries(), prefix.k());
        let _ = self.epsilon; // selection never uses the gate at fixed k
        Ok(BenchOutput::Score(best.mean + prefix_score))
    }
}

/// Binary-mode wiring for the harness: normalized bands for thresholding
/// score outputs, class labels for training rows and the current-year truth.
#[derive(Debug, Clone)]
pub struct BinarySetup {
    pub bands: ClassBands,
    /// Classes of past students, keyed by (year, student id).
    pub train_classes: BTreeMap<(u32, String), usize>,
    /// Current-year truth, keyed by student id.
    pub truth: BTreeMap<String, usize>,
}

/// Build the binary setup from letter grades: the score threshold is the
/// midpoint of the two boundary-grade means over the knowledge-base years,
/// and classes come from the grade boundary.
pub fn binary_setup_from_grades(
    dataset: &CohortDataset,
    year: u32,
    window: Option<u32>,
    boundary: &GradeBoundary,
) -> Result<BinarySetup, BenchmarkError> {
    let schedule = dataset.schedule();
    let lowest = window.map(|w| year.saturating_sub(w)).unwrap_or(0);
    let past: Vec<&crate::domain::StudentRecord> = dataset
        .years()
        .filter(|(y, _)| *y >= lowest && *y < year)
        .flat_map(|(_, records)| records.iter())
        .collect();
    let z_th = crate::preprocess::derive_binary_threshold(
        &past,
        schedule,
        boundary.upper(),
        boundary.lower(),
    )?;
    let bands = ClassBands::binary(z_th, "well", "poorly");
    let mut train_classes = BTreeMap::new();
    for record in &past {
        if let Some(grade) = &record.letter_grade {
            let class = boundary.classify_grade(grade)?;
            train_classes.insert((record.year, record.student_id.clone()), class);
        }
    }
    let mut truth = BTreeMap::new();
    for record in dataset.year_records(year).into_iter().flatten() {
        if let Some(grade) = &record.letter_grade {
            truth.insert(record.student_id.clone(), boundary.classify_grade(grade)?);
        }
    }
    Ok(BinarySetup {
        bands,
        train_classes,
        truth,
    })
}

/// One harness cell: a method evaluated over a cohort at one fixed `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchCell {
    pub method: String,
    pub k: usize,
    pub report: Option<MetricsReport>,
    /// Why the cell is empty, when it is.
    pub note: Option<String>,
}

/// Run each named method at every fixed `k`, predicting the given year's
/// students from the knowledge base of earlier years.
pub fn run_benchmarks(
    dataset: &CohortDataset,
    year: u32,
    window: Option<u32>,
    methods: &[&str],
    params: &MethodParams,
    binary: Option<&BinarySetup>,
) -> Result<Vec<BenchCell>, BenchmarkError> {
    let schedule = dataset.schedule();
    let kb = dataset.knowledge_base(year, window);
    let records = dataset.year_records(year).unwrap_or(&[]);
    let truth_scores: BTreeMap<&str, f64> = records
        .iter()
        .map(|r| {
            (
                r.student_id.as_str(),
                schedule.prefix_score(&r.scores, schedule.len()),
            )
        })
        .collect();

    let mut cells = Vec::new();
    for k in 1..=schedule.len() {
        let rows: Vec<TrainRow> = kb
            .pool_at(k)
            .iter()
            .map(|entry| TrainRow {
                features: entry.features.entries().to_vec(),
                residual: entry.residual,
                overall: entry.overall,
                class: binary
                    .and_then(|b| b.train_classes.get(&(entry.year, entry.student_id.to_string())))
                    .copied(),
                student_id: entry.student_id.to_string(),
                year: entry.year,
            })
            .collect();
        let ctx = TrainContext { schedule, k, rows };
        for name in methods {
            let cell = run_cell(&ctx, name, params, records, &truth_scores, binary, k);
            cells.push(cell?);
        }
    }
    Ok(cells)
}

fn run_cell(
    ctx: &TrainContext<'_>,
    name: &str,
    params: &MethodParams,
    records: &[crate::domain::StudentRecord],
    truth_scores: &BTreeMap<&str, f64>,
    binary: Option<&BinarySetup>,
    k: usize,
) -> Result<BenchCell, BenchmarkError> {
    let mut method = create(name, params)?;
    if let Err(err) = method.fit(ctx) {
        return Ok(BenchCell {
            method: name.to_string(),
            k,
            report: None,
            note: Some(err.to_string()),
        });
    }
    let mut abs_err_sum = 0.0;
    let mut regression_n = 0usize;
    let mut counts = ConfusionCounts::default();
    for record in records {
        let prefix = FeatureVector::new(&record.scores[..k]);
        let output = method.predict(prefix)?;
        match binary {
            None => {
                let z_hat = match output {
                    BenchOutput::Score(z) => z,
                    BenchOutput::Class { .. } => {
                        return Err(BenchmarkError::OutputKind {
                            name: name.to_string(),
                            produced: "class",
                            expected: "score",
                        })
                    }
                };
                abs_err_sum += (truth_scores[record.student_id.as_str()] - z_hat).abs();
                regression_n += 1;
            }
            Some(setup) => {
                let predicted = match output {
                    BenchOutput::Score(z) => classify_score(z, &setup.bands),
                    BenchOutput::Class { class, .. } => class,
                };
                if let Some(actual) = setup.truth.get(&record.student_id) {
                    counts.add(predicted.min(1), (*actual).min(1));
                }
            }
        }
    }
    let report = match binary {
        None => (regression_n > 0).then(|| MetricsReport {
            mean_abs_error: Some(abs_err_sum / regression_n as f64),
            n: regression_n,
            ..Default::default()
        }),
        Some(_) => (counts.n() > 0).then(|| MetricsReport {
            accuracy: counts.accuracy(),
            precision: counts.precision(),
            recall: counts.recall(),
            fpr: counts.fpr(),
            fnr: counts.fnr(),
            n: counts.n(),
            ..Default::default()
        }),
    };
    let note = report.is_none().then(|| "no students evaluated".to_string());
    Ok(BenchCell {
        method: name.to_string(),
        k,
        report,
        note,
    })
}
