//! Evaluation: mean absolute error, binary classification metrics and the
//! cumulative timeliness curves.
//!
//! The positive class throughout is "does poorly" (class index 1). Forced-final
//! outcomes are exact by construction and therefore contribute zero regression
//! error; their count is carried in every report so late coverage cannot
//! silently inflate early-looking accuracy.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::predictor::PredictionOutcome;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no outcome matches any truth entry")]
    EmptyEvaluation,
    #[error("outcome for `{student_id}` carries no class prediction")]
    MissingClass { student_id: String },
    #[error("truth map has no entry for `{student_id}`")]
    MissingTruth { student_id: String },
}

/// Aggregate prediction quality over one set of outcomes. Regression fills
/// `mean_abs_error`; binary classification fills the fraction fields.
/// Undefined ratios (zero denominators) are reported as absent.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsReport {
    pub mean_abs_error: Option<f64>,
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub fpr: Option<f64>,
    pub fnr: Option<f64>,
    pub n: usize,
    pub forced_final_count: usize,
}

/// Mean absolute error of predicted overall scores, in standard-deviation
/// units of the normalized scale.
pub fn regression_metrics(
    outcomes: &[PredictionOutcome],
    truth: &BTreeMap<String, f64>,
) -> Result<MetricsReport, EvalError> {
    let mut total = 0.0;
    let mut n = 0usize;
    let mut forced = 0usize;
    for o in outcomes {
        let z = truth
            .get(&o.student_id)
            .ok_or_else(|| EvalError::MissingTruth {
                student_id: o.student_id.clone(),
            })?;
        total += (z - o.z_hat).abs();
        n += 1;
        if o.forced_final {
            forced += 1;
        }
    }
    if n == 0 {
        return Err(EvalError::EmptyEvaluation);
    }
    Ok(MetricsReport {
        mean_abs_error: Some(total / n as f64),
        n,
        forced_final_count: forced,
        ..Default::default()
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn add(&mut self, predicted: usize, truth: usize) {
        match (predicted, truth) {
            (1, 1) => self.tp += 1,
            (1, 0) => self.fp += 1,
            (0, 0) => self.tn += 1,
            (0, 1) => self.fn_ += 1,
            _ => unreachable!("binary classes only"),
        }
    }

    pub fn n(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    fn ratio(num: usize, den: usize) -> Option<f64> {
        (den > 0).then(|| num as f64 / den as f64)
    }

    pub fn accuracy(&self) -> Option<f64> {
        Self::ratio(self.tp + self.tn, self.n())
    }

    pub fn precision(&self) -> Option<f64> {
        Self::ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> Option<f64> {
        Self::ratio(self.tp, self.tp + self.fn_)
    }

    pub fn fpr(&self) -> Option<f64> {
        Self::ratio(self.fp, self.fp + self.tn)
    }

    pub fn fnr(&self) -> Option<f64> {
        Self::ratio(self.fn_, self.fn_ + self.tp)
    }
}

/// Binary classification metrics with "does poorly" (class 1) as positive.
pub fn classification_metrics(
    outcomes: &[PredictionOutcome],
    truth: &BTreeMap<String, usize>,
) -> Result<MetricsReport, EvalError> {
    let mut counts = ConfusionCounts::default();
    let mut forced = 0usize;
    for o in outcomes {
        let predicted = o.class_hat.ok_or_else(|| EvalError::MissingClass {
            student_id: o.student_id.clone(),
        })?;
        let actual = truth
            .get(&o.student_id)
            .ok_or_else(|| EvalError::MissingTruth {
                student_id: o.student_id.clone(),
            })?;
        counts.add(predicted.min(1), (*actual).min(1));
        if o.forced_final {
            forced += 1;
        }
    }
    if counts.n() == 0 {
        return Err(EvalError::EmptyEvaluation);
    }
    Ok(MetricsReport {
        accuracy: counts.accuracy(),
        precision: counts.precision(),
        recall: counts.recall(),
        fpr: counts.fpr(),
        fnr: counts.fnr(),
        n: counts.n(),
        forced_final_count: forced,
        ..Default::default()
    })
}

/// One row of a cumulative timeliness curve: coverage and cumulative metrics
/// over the students predicted by time `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub k: usize,
    pub share_predicted: f64,
    pub mean_abs_error: Option<f64>,
    pub accuracy: Option<f64>,
    pub fpr: Option<f64>,
    pub fnr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimelinessCurve {
    pub rows: Vec<CurveRow>,
}

/// Truth values used by curves and frontiers; class is required only when
/// the outcomes carry class predictions.
#[derive(Debug, Clone, Copy)]
pub struct TruthEntry {
    pub z: f64,
    pub class: Option<usize>,
}

/// Cumulative curve over `k = 1..=K`: share of students predicted by `k` and
/// the metric over exactly that subset.
pub fn cumulative_curve(
    outcomes: &[PredictionOutcome],
    truth: &BTreeMap<String, TruthEntry>,
    total_assessments: usize,
) -> Result<TimelinessCurve, EvalError> {
    if outcomes.is_empty() {
        return Err(EvalError::EmptyEvaluation);
    }
    let total = outcomes.len() as f64;
    let mut rows = Vec::with_capacity(total_assessments);
    for k in 1..=total_assessments {
        let mut abs_err = 0.0;
        let mut regression_n = 0usize;
        let mut counts = ConfusionCounts::default();
        let mut covered = 0usize;
        for o in outcomes.iter().filter(|o| o.stop_k <= k) {
            covered += 1;
            let t = truth
                .get(&o.student_id)
                .ok_or_else(|| EvalError::MissingTruth {
                    student_id: o.student_id.clone(),
                })?;
            abs_err += (t.z - o.z_hat).abs();
            regression_n += 1;
            if let (Some(pred), Some(actual)) = (o.class_hat, t.class) {
                counts.add(pred.min(1), actual.min(1));
            }
        }
        rows.push(CurveRow {
            k,
            share_predicted: covered as f64 / total,
            mean_abs_error: (regression_n > 0).then(|| abs_err / regression_n as f64),
            accuracy: counts.accuracy(),
            fpr: counts.fpr(),
            fnr: counts.fnr(),
        });
    }
    Ok(TimelinessCurve { rows })
}

/// One operating point of the accuracy-timeliness trade-off: mean stop time
/// and the aggregate metric of a whole cohort run at one threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontierPoint {
    pub q_th: f64,
    pub mean_stop: f64,
    pub mean_abs_error: Option<f64>,
    pub accuracy: Option<f64>,
}

/// Trade-off points from a sweep: one per threshold, in sweep order.
pub fn frontier_points(
    sweep: &[(f64, Vec<PredictionOutcome>)],
    truth: &BTreeMap<String, TruthEntry>,
) -> Result<Vec<FrontierPoint>, EvalError> {
    let mut points = Vec::with_capacity(sweep.len());
    for (q_th, outcomes) in sweep {
        if outcomes.is_empty() {
            return Err(EvalError::EmptyEvaluation);
        }
        let mut abs_err = 0.0;
        let mut stop_sum = 0usize;
        let mut counts = ConfusionCounts::default();
        let mut classified = false;
        for o in outcomes {
            let t = truth
                .get(&o.student_id)
                .ok_or_else(|| EvalError::MissingTruth {
                    student_id: o.student_id.clone(),
                })?;
            abs_err += (t.z - o.z_hat).abs();
            stop_sum += o.stop_k;
            if let (Some(pred), Some(actual)) = (o.class_hat, t.class) {
                counts.add(pred.min(1), actual.min(1));
                classified = true;
            }
        }
        let n = outcomes.len() as f64;
        points.push(FrontierPoint {
            q_th: *q_th,
            mean_stop: stop_sum as f64 / n,
            mean_abs_error: Some(abs_err / n),
            accuracy: if classified { counts.accuracy() } else { None },
        });
    }
    Ok(points)
}
