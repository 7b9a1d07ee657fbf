//! File formats: schedule and score CSVs, the flat synthesis config, and the
//! CSV reports the command-line tool emits.
//!
//! Floats are serialized with Rust's shortest-round-trip formatting, so
//! emitted numbers re-parse to the exact same value. All writes go through a
//! temp file in the target directory followed by a rename.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::calibrate::FrontierRow;
use crate::domain::{
    AssessmentDesc, AssessmentKind, AssessmentSchedule, CohortDataset, DomainError, StudentRecord,
    YearNormalization,
};
use crate::eval::{CurveRow, FrontierPoint};
use crate::preprocess::{normalize_year, ClassBands, PreprocessError};
use crate::predictor::PredictionOutcome;
use crate::synth::{StudentsPerYear, SynthConfig};

/// Weight-sum tolerance for schedule files (weights are re-normalized to the
/// strict internal tolerance after passing this check).
pub const WEIGHT_SUM_FILE_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}:{row}:{column}: {message}")]
    Schema {
        path: PathBuf,
        row: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
}

fn fmt_float(v: f64) -> String {
    format!("{v}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_float).unwrap_or_default()
}

/// Write bytes through a sibling temp file and rename into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), IoError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let wrap = |source: std::io::Error| IoError::File {
        path: path.to_path_buf(),
        source,
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(wrap)?;
    tmp.write_all(contents).map_err(wrap)?;
    tmp.persist(path).map_err(|e| wrap(e.error))?;
    Ok(())
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::Writer::from_writer(Vec::new())
}

fn finish(writer: csv::Writer<Vec<u8>>, path: &Path) -> Result<(), IoError> {
    let bytes = writer.into_inner().map_err(|e| IoError::File {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    })?;
    write_atomic(path, &bytes)
}

// ---------------------------------------------------------------------------
// Schedule files
// ---------------------------------------------------------------------------

pub fn write_schedule_csv(schedule: &AssessmentSchedule, path: &Path) -> Result<(), IoError> {
    let mut w = csv_writer();
    let wrap = |source: csv::Error| IoError::Csv {
        path: path.to_path_buf(),
        source,
    };
    w.write_record(["id", "kind", "topic", "weight"]).map_err(wrap)?;
    for a in schedule.assessments() {
        w.write_record([
            a.id.as_str(),
            a.kind.as_str(),
            a.topic.as_str(),
            &fmt_float(a.weight),
        ])
        .map_err(wrap)?;
    }
    finish(w, path)
}

pub fn read_schedule_csv(path: &Path) -> Result<AssessmentSchedule, IoError> {
    let mut reader = csv::Reader::from_path(path).map_err(|source| IoError::Csv {
        path: path.to_path_buf(),
        source,
    })?;
    let schema_err = |row: usize, column: usize, message: String| IoError::Schema {
        path: path.to_path_buf(),
        row,
        column,
        message,
    };
    let headers = reader
        .headers()
        .map_err(|source| IoError::Csv {
            path: path.to_path_buf(),
            source,
        })?
        .clone();
    let expected = ["id", "kind", "topic", "weight"];
    for (i, want) in expected.iter().enumerate() {
        if headers.get(i) != Some(*want) {
            return Err(schema_err(
                1,
                i + 1,
                format!("expected header `{want}`, got `{}`", headers.get(i).unwrap_or("")),
            ));
        }
    }
    let mut assessments = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let row = idx + 2;
        let record = record.map_err(|source| IoError::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        let field = |col: usize| record.get(col).unwrap_or("").trim().to_string();
        let kind = AssessmentKind::parse(&field(1))
            .ok_or_else(|| schema_err(row, 2, format!("unknown kind `{}`", field(1))))?;
        let weight: f64 = field(3)
            .parse()
            .map_err(|_| schema_err(row, 4, format!("bad weight `{}`", field(3))))?;
        assessments.push(AssessmentDesc {
            id: field(0),
            kind,
            topic: field(2),
            weight,
        });
    }
    AssessmentSchedule::new_with_tolerance(assessments, WEIGHT_SUM_FILE_TOL).map_err(Into::into)
}

// ---------------------------------------------------------------------------
// Score files
// ---------------------------------------------------------------------------

/// Emit raw scores plus letter grades, one row per student. Assessment
/// columns follow the schedule order exactly.
pub fn write_scores_csv(dataset: &CohortDataset, path: &Path) -> Result<(), IoError> {
    let mut w = csv_writer();
    let wrap = |source: csv::Error| IoError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut header = vec!["student_id".to_string(), "year".to_string()];
    header.extend(
        dataset
            .schedule()
            .assessments()
            .iter()
            .map(|a| a.id.clone()),
    );
    header.push("letter_grade".to_string());
    w.write_record(&header).map_err(wrap)?;
    for (_, records) in dataset.years() {
        for r in records {
            let mut row = vec![r.student_id.clone(), r.year.to_string()];
            row.extend(r.raw_scores.iter().map(|v| fmt_float(*v)));
            row.push(r.letter_grade.clone().unwrap_or_default());
            w.write_record(&row).map_err(wrap)?;
        }
    }
    finish(w, path)
}

fn read_scores_csv(
    path: &Path,
    schedule: &AssessmentSchedule,
) -> Result<Vec<StudentRecord>, IoError> {
    let mut reader = csv::Reader::from_path(path).map_err(|source| IoError::Csv {
        path: path.to_path_buf(),
        source,
    })?;
    let schema_err = |row: usize, column: usize, message: String| IoError::Schema {
        path: path.to_path_buf(),
        row,
        column,
        message,
    };
    let headers = reader
        .headers()
        .map_err(|source| IoError::Csv {
            path: path.to_path_buf(),
            source,
        })?
        .clone();
    if headers.get(0) != Some("student_id") || headers.get(1) != Some("year") {
        return Err(schema_err(
            1,
            1,
            "score files start with columns `student_id,year`".into(),
        ));
    }
    let kk = schedule.len();
    for (i, a) in schedule.assessments().iter().enumerate() {
        let got = headers.get(i + 2).unwrap_or("");
        if got != a.id {
            return Err(schema_err(
                1,
                i + 3,
                format!("expected assessment column `{}`, got `{got}`", a.id),
            ));
        }
    }
    let has_grades = headers.get(kk + 2) == Some("letter_grade");
    let expected_cols = kk + 2 + usize::from(has_grades);
    if headers.len() != expected_cols {
        return Err(schema_err(
            1,
            expected_cols + 1,
            format!(
                "unexpected trailing column `{}`",
                headers.get(expected_cols).unwrap_or("")
            ),
        ));
    }

    let mut records = Vec::new();
    let mut seen: BTreeSet<(u32, String)> = BTreeSet::new();
    for (idx, record) in reader.records().enumerate() {
        let row = idx + 2;
        let record = record.map_err(|source| IoError::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        let student_id = record.get(0).unwrap_or("").trim().to_string();
        if student_id.is_empty() {
            return Err(schema_err(row, 1, "empty student_id".into()));
        }
        let year: u32 = record
            .get(1)
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|_| schema_err(row, 2, format!("bad year `{}`", record.get(1).unwrap_or(""))))?;
        if !seen.insert((year, student_id.clone())) {
            return Err(schema_err(
                row,
                1,
                format!("duplicate student id `{student_id}` in year {year}"),
            ));
        }
        let mut raw_scores = Vec::with_capacity(kk);
        for col in 0..kk {
            let text = record.get(col + 2).unwrap_or("").trim();
            let value: f64 = text
                .parse()
                .map_err(|_| schema_err(row, col + 3, format!("bad score `{text}`")))?;
            raw_scores.push(value);
        }
        let letter_grade = if has_grades {
            let text = record.get(kk + 2).unwrap_or("").trim();
            (!text.is_empty()).then(|| text.to_string())
        } else {
            None
        };
        records.push(StudentRecord {
            student_id,
            year,
            scores: vec![],
            raw_scores,
            letter_grade,
        });
    }
    Ok(records)
}

/// Parse and validate both files, then normalize each year. Returns the
/// dataset plus the per-year normalization report.
pub fn ingest(
    schedule_path: &Path,
    scores_path: &Path,
) -> Result<(CohortDataset, Vec<YearNormalization>), IoError> {
    let schedule = read_schedule_csv(schedule_path)?;
    let raw = read_scores_csv(scores_path, &schedule)?;
    let mut years: std::collections::BTreeMap<u32, Vec<StudentRecord>> = Default::default();
    for r in raw {
        years.entry(r.year).or_default().push(r);
    }
    let mut records = Vec::new();
    let mut stats = Vec::new();
    for (_, year_records) in years {
        let (normalized, year_stats) = normalize_year(&year_records, &schedule)?;
        records.extend(normalized);
        stats.push(year_stats);
    }
    let dataset = CohortDataset::new(schedule, records, stats.clone())?;
    Ok((dataset, stats))
}

// ---------------------------------------------------------------------------
// Report files
// ---------------------------------------------------------------------------

pub fn write_predictions_csv(
    outcomes: &[PredictionOutcome],
    path: &Path,
) -> Result<(), IoError> {
    let mut w = csv_writer();
    let wrap = |source: csv::Error| IoError::Csv {
        path: path.to_path_buf(),
        source,
    };
    w.write_record([
        "student_id",
        "stop_k",
        "z_hat",
        "class_hat",
        "confidence",
        "forced_final",
    ])
    .map_err(wrap)?;
    for o in outcomes {
        w.write_record([
            o.student_id.as_str(),
            &o.stop_k.to_string(),
            &fmt_float(o.z_hat),
            &o.class_hat.map(|c| c.to_string()).unwrap_or_default(),
            &fmt_float(o.confidence_at_stop),
            if o.forced_final { "true" } else { "false" },
        ])
        .map_err(wrap)?;
    }
    finish(w, path)
}

pub fn write_frontier_csv(
    rows: &[FrontierRow],
    chosen_q_th: f64,
    path: &Path,
) -> Result<(), IoError> {
    let mut w = csv_writer();
    let wrap = |source: csv::Error| IoError::Csv {
        path: path.to_path_buf(),
        source,
    };
    w.write_record([
        "q_th", "coverage", "error", "k_req", "k_bar", "feasible", "chosen",
    ])
    .map_err(wrap)?;
    for r in rows {
        w.write_record([
            fmt_float(r.q_th),
            fmt_float(r.coverage),
            fmt_float(r.error),
            r.k_req.to_string(),
            fmt_float(r.mean_stop),
            (if r.feasible { "true" } else { "false" }).to_string(),
            (if r.q_th == chosen_q_th { "true" } else { "false" }).to_string(),
        ])
        .map_err(wrap)?;
    }
    finish(w, path)
}

/// Frontier sweep rows: `q_th,k_bar,e` in regression mode,
/// `q_th,k_bar,accuracy` in binary mode.
pub fn write_sweep_csv(
    points: &[FrontierPoint],
    binary: bool,
    path: &Path,
) -> Result<(), IoError> {
    let mut w = csv_writer();
    let wrap = |source: csv::Error| IoError::Csv {
        path: path.to_path_buf(),
        source,
    };
    if binary {
        w.write_record(["q_th", "k_bar", "accuracy"]).map_err(wrap)?;
    } else {
        w.write_record(["q_th", "k_bar", "e"]).map_err(wrap)?;
    }
    for p in points {
        let metric = if binary { p.accuracy } else { p.mean_abs_error };
        w.write_record([fmt_float(p.q_th), fmt_float(p.mean_stop), fmt_opt(metric)])
            .map_err(wrap)?;
    }
    finish(w, path)
}

/// Cumulative timeliness curve: `k,share_predicted,cum_e` in regression mode,
/// `k,share_predicted,cum_accuracy,cum_fpr,cum_fnr` in binary mode.
pub fn write_curve_csv(rows: &[CurveRow], binary: bool, path: &Path) -> Result<(), IoError> {
    let mut w = csv_writer();
    let wrap = |source: csv::Error| IoError::Csv {
        path: path.to_path_buf(),
        source,
    };
    if binary {
        w.write_record(["k", "share_predicted", "cum_accuracy", "cum_fpr", "cum_fnr"])
            .map_err(wrap)?;
    } else {
        w.write_record(["k", "share_predicted", "cum_e"]).map_err(wrap)?;
    }
    for r in rows {
        if binary {
            w.write_record([
                r.k.to_string(),
                fmt_float(r.share_predicted),
                fmt_opt(r.accuracy),
                fmt_opt(r.fpr),
                fmt_opt(r.fnr),
            ])
            .map_err(wrap)?;
        } else {
            w.write_record([
                r.k.to_string(),
                fmt_float(r.share_predicted),
                fmt_opt(r.mean_abs_error),
            ])
            .map_err(wrap)?;
        }
    }
    finish(w, path)
}

/// Benchmark grid: one row per (method, k) cell.
pub fn write_bench_csv(
    cells: &[crate::benchmarks::BenchCell],
    binary: bool,
    path: &Path,
) -> Result<(), IoError> {
    let mut w = csv_writer();
    let wrap = |source: csv::Error| IoError::Csv {
        path: path.to_path_buf(),
        source,
    };
    if binary {
        w.write_record([
            "method", "k", "n", "accuracy", "precision", "recall", "fpr", "fnr", "note",
        ])
        .map_err(wrap)?;
    } else {
        w.write_record(["method", "k", "n", "e", "note"]).map_err(wrap)?;
    }
    for cell in cells {
        let note = cell.note.clone().unwrap_or_default();
        match (&cell.report, binary) {
            (Some(r), true) => w.write_record([
                cell.method.clone(),
                cell.k.to_string(),
                r.n.to_string(),
                fmt_opt(r.accuracy),
                fmt_opt(r.precision),
                fmt_opt(r.recall),
                fmt_opt(r.fpr),
                fmt_opt(r.fnr),
                note,
            ]),
            (Some(r), false) => w.write_record([
                cell.method.clone(),
                cell.k.to_string(),
                r.n.to_string(),
                fmt_opt(r.mean_abs_error),
                note,
            ]),
            (None, true) => w.write_record([
                cell.method.clone(),
                cell.k.to_string(),
                "0".into(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                note,
            ]),
            (None, false) => w.write_record([
                cell.method.clone(),
                cell.k.to_string(),
                "0".into(),
                String::new(),
                note,
            ]),
        }
        .map_err(wrap)?;
    }
    finish(w, path)
}

// ---------------------------------------------------------------------------
// Flat key = value config for the generator
// ---------------------------------------------------------------------------

/// Parse a flat `key = value` synthesis config. Recognized keys: `seed`,
/// `years`, `students_per_year` (a count or an inclusive `lo..hi` range),
/// `ability_std`, `noise_take_home`, `noise_in_class`, `trend_fraction`,
/// `band_thresholds`, `band_labels` (comma-separated, best first), and
/// `schedule` (a schedule CSV path, resolved relative to the config file).
/// Missing keys keep the documented defaults; unknown keys are rejected.
pub fn read_synth_config(path: &Path) -> Result<SynthConfig, IoError> {
    let text = std::fs::read_to_string(path).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })?;
    let err = |message: String| IoError::Config {
        path: path.to_path_buf(),
        message,
    };
    let mut config = SynthConfig::with_seed(0);
    let mut thresholds: Option<Vec<f64>> = None;
    let mut labels: Option<Vec<String>> = None;
    for (lineno, raw_line) in text.lines().enumerate() {
        let line = raw_line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(format!("line {}: expected `key = value`", lineno + 1)))?;
        let key = key.trim();
        let value = value.trim();
        let bad = |what: &str| err(format!("line {}: bad {what} `{value}`", lineno + 1));
        match key {
            "seed" => config.seed = value.parse().map_err(|_| bad("seed"))?,
            "years" => config.years = value.parse().map_err(|_| bad("years"))?,
            "students_per_year" => {
                config.students_per_year = if let Some((lo, hi)) = value.split_once("..") {
                    StudentsPerYear::Range(
                        lo.trim().parse().map_err(|_| bad("range"))?,
                        hi.trim().parse().map_err(|_| bad("range"))?,
                    )
                } else {
                    StudentsPerYear::Fixed(value.parse().map_err(|_| bad("count"))?)
                }
            }
            "ability_std" => config.ability_std = value.parse().map_err(|_| bad("ability_std"))?,
            "noise_take_home" => {
                config.noise_take_home = value.parse().map_err(|_| bad("noise_take_home"))?
            }
            "noise_in_class" => {
                config.noise_in_class = value.parse().map_err(|_| bad("noise_in_class"))?
            }
            "trend_fraction" => {
                config.trend_fraction = value.parse().map_err(|_| bad("trend_fraction"))?
            }
            "band_thresholds" => {
                thresholds = Some(
                    value
                        .split(',')
                        .map(|v| v.trim().parse::<f64>())
                        .collect::<Result<_, _>>()
                        .map_err(|_| bad("band_thresholds"))?,
                )
            }
            "band_labels" => {
                labels = Some(value.split(',').map(|v| v.trim().to_string()).collect())
            }
            "schedule" => {
                let base = path.parent().unwrap_or(Path::new("."));
                config.schedule = read_schedule_csv(&base.join(value))?;
            }
            _ => return Err(err(format!("line {}: unknown key `{key}`", lineno + 1))),
        }
    }
    match (thresholds, labels) {
        (None, None) => {}
        (Some(t), Some(l)) => {
            config.grade_bands = ClassBands::new(t, l)?;
        }
        _ => {
            return Err(err(
                "band_thresholds and band_labels must be given together".into(),
            ))
        }
    }
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthConfig};
    use tempfile::TempDir;

    #[test]
    fn schedule_round_trip() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("schedule.csv");
        let schedule = crate::synth::default_schedule();
        write_schedule_csv(&schedule, &path).unwrap();
        let back = read_schedule_csv(&path).unwrap();
        assert_eq!(schedule, back);
    }

    #[test]
    fn dataset_round_trip_is_exact() {
        let dir = TempDir::new().unwrap();
        let schedule_path = dir.path().join("schedule.csv");
        let scores_path = dir.path().join("scores.csv");
        let config = SynthConfig::with_seed(9);
        let dataset = generate(&config).unwrap();
        write_schedule_csv(dataset.schedule(), &schedule_path).unwrap();
        write_scores_csv(&dataset, &scores_path).unwrap();
        let (back, _) = ingest(&schedule_path, &scores_path).unwrap();
        assert_eq!(back.student_count(), dataset.student_count());
        for ((_, original), (_, reread)) in dataset.years().zip(back.years()) {
            for (a, b) in original.iter().zip(reread) {
                assert_eq!(a.student_id, b.student_id);
                assert_eq!(a.letter_grade, b.letter_grade);
                // Shortest round-trip formatting: bit-exact raw scores, and
                // therefore identical normalized scores.
                assert_eq!(a.raw_scores, b.raw_scores);
                assert_eq!(a.scores, b.scores);
            }
        }
    }

    #[test]
    fn bad_weight_sum_is_rejected() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("schedule.csv");
        std::fs::write(
            &path,
            "id,kind,topic,weight\na,in_class,t,0.5\nb,take_home,u,0.4\n",
        )
        .unwrap();
        match read_schedule_csv(&path) {
            Err(IoError::Domain(DomainError::WeightSum { .. })) => {}
            other => panic!("expected weight-sum rejection, got {other:?}"),
        }
    }

    #[test]
    fn missing_assessment_column_names_it() {
        let dir = TempDir::new().unwrap();
        let schedule_path = dir.path().join("schedule.csv");
        std::fs::write(
            &schedule_path,
            "id,kind,topic,weight\nhw1,take_home,t,0.5\nfinal,in_class,u,0.5\n",
        )
        .unwrap();
        let scores_path = dir.path().join("scores.csv");
        std::fs::write(
            &scores_path,
            "student_id,year,hw1,letter_grade\ns1,1,80,B\n",
        )
        .unwrap();
        match ingest(&schedule_path, &scores_path) {
            Err(IoError::Schema { message, .. }) => assert!(message.contains("final")),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_student_rows_are_rejected_with_coordinates() {
        let dir = TempDir::new().unwrap();
        let schedule_path = dir.path().join("schedule.csv");
        std::fs::write(&schedule_path, "id,kind,topic,weight\na,in_class,t,1.0\n").unwrap();
        let scores_path = dir.path().join("scores.csv");
        std::fs::write(
            &scores_path,
            "student_id,year,a\ns1,1,80\ns1,1,90\n",
        )
        .unwrap();
        match ingest(&schedule_path, &scores_path) {
            Err(IoError::Schema { row, .. }) => assert_eq!(row, 3),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn synth_config_parsing_and_defaults() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("synth.cfg");
        std::fs::write(
            &path,
            "# demo config\nseed = 99\nyears = 2\nstudents_per_year = 10..20\nability_std = 4.5\ntrend_fraction = 0.3\n",
        )
        .unwrap();
        let config = read_synth_config(&path).unwrap();
        assert_eq!(config.seed, 99);
        assert_eq!(config.years, 2);
        assert_eq!(config.students_per_year, StudentsPerYear::Range(10, 20));
        assert_eq!(config.ability_std, 4.5);
        // Untouched keys keep defaults.
        assert_eq!(config.noise_in_class, 3.0);
        assert_eq!(config.schedule.len(), 10);

        std::fs::write(&path, "seeds = 1\n").unwrap();
        assert!(matches!(
            read_synth_config(&path),
            Err(IoError::Config { .. })
        ));
        std::fs::write(&path, "band_thresholds = 50,70\n").unwrap();
        assert!(read_synth_config(&path).is_err());
    }

    #[test]
    fn predictions_csv_schema_is_stable() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("predictions.csv");
        let outcomes = vec![PredictionOutcome {
            student_id: "s1".into(),
            stop_k: 3,
            z_hat: 0.25,
            class_hat: Some(1),
            confidence_at_stop: 0.9375,
            neighborhood: None,
            forced_final: false,
        }];
        write_predictions_csv(&outcomes, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "student_id,stop_k,z_hat,class_hat,confidence,forced_final\ns1,3,0.25,1,0.9375,false\n"
        );
    }
}
