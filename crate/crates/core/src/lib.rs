//! Personalized, timeliness-aware grade prediction.
//!
//! For each student the library decides *when* enough evidence exists to
//! predict (a variance-based confidence over nearest-neighbor residual
//! distributions gates the stopping time) and *what* to predict, either the
//! overall score or a grade class. Around that core sit a threshold
//! calibrator that learns the confidence level achieving a target
//! coverage/error trade-off, an executable error-bound calculator with a
//! Monte Carlo validator, a set of fixed-time benchmark methods behind a
//! name-based registry, evaluation metrics and timeliness curves, a synthetic
//! cohort generator, and CSV ingestion/emission for the command-line tool.

pub mod benchmarks;
pub mod bounds;
pub mod calibrate;
pub mod domain;
pub mod eval;
pub mod io;
pub mod neighborhoods;
pub mod predictor;
pub mod preprocess;
pub mod synth;

pub use domain::{
    feature_prefix, overall_score, residual, AssessmentDesc, AssessmentKind, AssessmentSchedule,
    CohortDataset, FeatureVector, KnowledgeBase, PoolEntry, StudentRecord,
};
pub use neighborhoods::{distance, ConfidenceParams};
pub use predictor::{predict_cohort, predict_student, PredictionMode, PredictionOutcome};
