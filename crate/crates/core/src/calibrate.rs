//! Threshold calibration: learn the confidence threshold that achieves a
//! target coverage / error trade-off with the smallest average prediction
//! time, by brute force over a threshold grid.
//!
//! For a candidate threshold the historical replay predicts every year `t` of
//! the history from the years before it and pools the outcomes. From the
//! pooled outcomes we read off, per assessment index `k`, the coverage
//! `p(k)` (share predicted by `k`) and the cumulative error `E(k)` (mean
//! absolute error of the predictions made by `k`). A candidate is evaluated at
//! `k_req`, the earliest `k` whose coverage reaches `p_min`; it is feasible
//! when `E(k_req) <= e_max`. Among feasible candidates the one with the
//! smallest mean stop time wins (ties: smaller error, then larger threshold).
//!
//! Decision streams do not depend on the threshold, so the replay runs once
//! and every grid candidate is resolved against the same streams.

use thiserror::Error;

use crate::domain::CohortDataset;
use crate::predictor::{
    cohort_profiles, outcome_for_threshold, DecisionProfile, PredictionMode, PredictionOutcome,
};

#[derive(Debug, Error, PartialEq)]
pub enum CalibrateError {
    #[error("calibration needs at least two years of history, found {years}")]
    InsufficientHistory { years: usize },
    #[error("replay produced no outcomes")]
    EmptyReplay,
    #[error("p_min must lie in (0, 1], got {p_min}")]
    InvalidCoverage { p_min: f64 },
    #[error("e_max must be non-negative, got {e_max}")]
    InvalidErrorCap { e_max: f64 },
    #[error("threshold grid must be non-empty, strictly ascending and <= 1")]
    InvalidGrid,
}

/// Calibration targets: minimum coverage, error cap, the year-1 threshold and
/// the candidate grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationTarget {
    pub p_min: f64,
    pub e_max: f64,
    pub q_th_0: f64,
    pub grid: Vec<f64>,
}

impl CalibrationTarget {
    pub fn new(p_min: f64, e_max: f64, q_th_0: f64, grid: Vec<f64>) -> Result<Self, CalibrateError> {
        if !(p_min > 0.0 && p_min <= 1.0) {
            return Err(CalibrateError::InvalidCoverage { p_min });
        }
        if !(e_max >= 0.0) {
            return Err(CalibrateError::InvalidErrorCap { e_max });
        }
        if grid.is_empty()
            || grid.iter().any(|q| *q > 1.0 || !q.is_finite())
            || grid.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(CalibrateError::InvalidGrid);
        }
        Ok(Self {
            p_min,
            e_max,
            q_th_0,
            grid,
        })
    }

    /// The documented default grid: 0.00, 0.05, ..., 1.00.
    pub fn default_grid() -> Vec<f64> {
        (0..=20).map(|i| i as f64 / 20.0).collect()
    }
}

/// One grid candidate's measured operating point.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontierRow {
    pub q_th: f64,
    /// Coverage at `k_req`: share of replayed students predicted by then.
    pub coverage: f64,
    /// Mean absolute error of the predictions made by `k_req`.
    pub error: f64,
    /// Earliest assessment index at which coverage reaches `p_min`.
    pub k_req: usize,
    /// Mean stop time over all replayed students.
    pub mean_stop: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub year: u32,
    pub q_th_y: f64,
    /// Time estimate of the chosen candidate (its `k_req`).
    pub k_y: usize,
    pub frontier: Vec<FrontierRow>,
    /// False when no candidate met both constraints; `q_th_y` is then the
    /// constraint-nearest candidate (smallest error, then earliest, then
    /// largest threshold).
    pub feasible: bool,
}

/// Replay errors and stop times, pooled over the whole history.
struct ReplayPool {
    profiles: Vec<(DecisionProfile, f64)>, // (stream, true overall score)
    total_assessments: usize,
}

fn replay_history(
    history: &CohortDataset,
    through_year: u32,
    epsilon: f64,
    window: Option<u32>,
    m_max: Option<usize>,
) -> Result<ReplayPool, CalibrateError> {
    let schedule = history.schedule();
    let years: Vec<u32> = history
        .years()
        .map(|(y, _)| y)
        .filter(|y| *y <= through_year)
        .collect();
    if years.len() < 2 {
        return Err(CalibrateError::InsufficientHistory { years: years.len() });
    }
    let mut profiles = Vec::new();
    for &t in &years[1..] {
        let kb = history.knowledge_base(t, window);
        let records = history.year_records(t).expect("year listed above");
        for (profile, record) in
            cohort_profiles(records, &kb, schedule, epsilon, &PredictionMode::Regression, m_max)
                .into_iter()
                .zip(records)
        {
            let z = schedule.prefix_score(&record.scores, schedule.len());
            profiles.push((profile, z));
        }
    }
    if profiles.is_empty() {
        return Err(CalibrateError::EmptyReplay);
    }
    Ok(ReplayPool {
        profiles,
        total_assessments: schedule.len(),
    })
}

fn measure_candidate(pool: &ReplayPool, q_th: f64, p_min: f64, e_max: f64) -> FrontierRow {
    let n = pool.profiles.len();
    let outcomes: Vec<(usize, f64)> = pool
        .profiles
        .iter()
        .map(|(profile, z)| {
            let o = outcome_for_threshold(profile, q_th, &PredictionMode::Regression);
            (o.stop_k, (z - o.z_hat).abs())
        })
        .collect();
    let mean_stop = outcomes.iter().map(|(k, _)| *k).sum::<usize>() as f64 / n as f64;

    let mut k_req = pool.total_assessments;
    for k in 1..=pool.total_assessments {
        let covered = outcomes.iter().filter(|(stop, _)| *stop <= k).count();
        if covered as f64 / n as f64 >= p_min {
            k_req = k;
            break;
        }
    }
    let covered: Vec<&(usize, f64)> = outcomes.iter().filter(|(stop, _)| *stop <= k_req).collect();
    let coverage = covered.len() as f64 / n as f64;
    let error = covered.iter().map(|(_, e)| *e).sum::<f64>() / covered.len() as f64;
    FrontierRow {
        q_th,
        coverage,
        error,
        k_req,
        mean_stop,
        feasible: error <= e_max,
    }
}

/// Pick a threshold from the frontier: among feasible rows the smallest mean
/// stop time wins, ties broken toward smaller error and then larger
/// threshold; with no feasible row, the smallest-error row is surfaced.
fn choose(frontier: &[FrontierRow]) -> (usize, bool) {
    let feasible: Vec<usize> = frontier
        .iter()
        .enumerate()
        .filter(|(_, r)| r.feasible)
        .map(|(i, _)| i)
        .collect();
    if feasible.is_empty() {
        let mut best = 0;
        for i in 1..frontier.len() {
            let (a, b) = (&frontier[i], &frontier[best]);
            if a.error < b.error
                || (a.error == b.error && a.mean_stop < b.mean_stop)
                || (a.error == b.error && a.mean_stop == b.mean_stop && a.q_th > b.q_th)
            {
                best = i;
            }
        }
        return (best, false);
    }
    let mut best = feasible[0];
    for &i in &feasible[1..] {
        let (a, b) = (&frontier[i], &frontier[best]);
        if a.mean_stop < b.mean_stop
            || (a.mean_stop == b.mean_stop && a.error < b.error)
            || (a.mean_stop == b.mean_stop && a.error == b.error && a.q_th > b.q_th)
        {
            best = i;
        }
    }
    (best, true)
}

/// Learn `q_th` from the history through `year` (at least two years), to be
/// used for predicting the following year.
pub fn calibrate_year(
    history: &CohortDataset,
    year: u32,
    target: &CalibrationTarget,
    epsilon: f64,
    window: Option<u32>,
    m_max: Option<usize>,
) -> Result<CalibrationResult, CalibrateError> {
    let pool = replay_history(history, year, epsilon, window, m_max)?;
    let frontier: Vec<FrontierRow> = target
        .grid
        .iter()
        .map(|&q_th| measure_candidate(&pool, q_th, target.p_min, target.e_max))
        .collect();
    let (chosen, feasible) = choose(&frontier);
    Ok(CalibrationResult {
        year,
        q_th_y: frontier[chosen].q_th,
        k_y: frontier[chosen].k_req,
        frontier,
        feasible,
    })
}

/// One year of the rolling scheme: the threshold in force, the outcomes it
/// produced, and the calibration (if any) that chose it.
#[derive(Debug, Clone, PartialEq)]
pub struct YearRun {
    pub year: u32,
    pub q_th_used: f64,
    pub outcomes: Vec<PredictionOutcome>,
    pub calibration: Option<CalibrationResult>,
}

/// The rolling yearly scheme: the first year (and the second, whose history
/// cannot be replayed) runs at `q_th_0`; each later year runs at the threshold
/// calibrated from the years before it.
pub fn run_yearly(
    dataset: &CohortDataset,
    target: &CalibrationTarget,
    epsilon: f64,
    window: Option<u32>,
    m_max: Option<usize>,
) -> Result<Vec<YearRun>, CalibrateError> {
    let schedule = dataset.schedule();
    let years: Vec<u32> = dataset.years().map(|(y, _)| y).collect();
    if years.is_empty() {
        return Err(CalibrateError::InsufficientHistory { years: 0 });
    }
    let mut runs = Vec::with_capacity(years.len());
    for (i, &year) in years.iter().enumerate() {
        let calibration = if i >= 2 {
            Some(calibrate_year(
                dataset,
                years[i - 1],
                target,
                epsilon,
                window,
                m_max,
            )?)
        } else {
            None
        };
        let q_th_used = calibration
            .as_ref()
            .map(|c| c.q_th_y)
            .unwrap_or(target.q_th_0);
        let kb = dataset.knowledge_base(year, window);
        let records = dataset.year_records(year).expect("year listed");
        let params = crate::neighborhoods::ConfidenceParams {
            epsilon,
            q_th: q_th_used,
        };
        let outcomes = crate::predictor::predict_cohort(
            records,
            &kb,
            schedule,
            params,
            &PredictionMode::Regression,
            m_max,
        );
        runs.push(YearRun {
            year,
            q_th_used,
            outcomes,
            calibration,
        });
    }
    Ok(runs)
}
