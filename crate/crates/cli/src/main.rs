//! Command-line surface for the grade prediction library.
//!
//! Errors print a single `error: ...` line on stderr and exit 1; usage
//! problems exit 2 (clap's default). Everything is deterministic given the
//! input files and `--seed`.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use gradecast_core::bounds::{
    bernstein_std_bound, chebyshev_bound, hoeffding_bound, lemma1_bound, monte_carlo_validate,
    theorem_bound, BoundInputs, McGenerator, ResidualModel,
};
use gradecast_core::calibrate::{calibrate_year, CalibrationTarget};
use gradecast_core::domain::CohortDataset;
use gradecast_core::eval::{cumulative_curve, frontier_points, TruthEntry};
use gradecast_core::io;
use gradecast_core::neighborhoods::ConfidenceParams;
use gradecast_core::predictor::{
    cohort_profiles, outcome_for_threshold, predict_cohort, PredictionMode,
};
use gradecast_core::preprocess::{derive_binary_threshold, ClassBands, GradeBoundary};
use gradecast_core::synth;

#[derive(Parser)]
#[command(name = "gradecast", version, about = "Timeliness-aware grade prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a schedule/scores file pair and print a normalization summary.
    Ingest(IngestArgs),
    /// Generate a synthetic dataset from a flat config file.
    Synth(SynthArgs),
    /// Run the confidence-gated predictor over one year.
    Predict(PredictArgs),
    /// Learn the confidence threshold meeting coverage/error targets.
    Calibrate(CalibrateArgs),
    /// Trace the accuracy-timeliness frontier over a threshold grid.
    Sweep(SweepArgs),
    /// Run the fixed-time benchmark methods at every assessment index.
    Bench(BenchArgs),
    /// Evaluate the error bounds from explicit inputs.
    Bound(BoundArgs),
    /// Monte Carlo check of the error bound on synthetic neighborhoods.
    ValidateBound(ValidateBoundArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Schedule CSV (columns id,kind,topic,weight).
    #[arg(long)]
    schedule: PathBuf,
    /// Scores CSV (student_id,year,<assessment ids...>[,letter_grade]).
    #[arg(long)]
    scores: PathBuf,
}

#[derive(Args)]
struct IngestArgs {
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args)]
struct SynthArgs {
    /// Flat key = value generator config.
    #[arg(long)]
    config: PathBuf,
    /// Directory receiving schedule.csv and scores.csv.
    #[arg(long)]
    out_dir: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Mode {
    Regression,
    Binary,
}

#[derive(Args)]
struct ClassArgs {
    /// Boundary letter grades `UPPER,LOWER` for the binary split.
    #[arg(long, default_value = "B,C")]
    bands: String,
    /// Letter-grade scale, best first.
    #[arg(long, default_value = "A,B,C,D,F")]
    grade_order: String,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Year to predict (default: latest year in the file).
    #[arg(long)]
    year: Option<u32>,
    #[arg(long, value_enum, default_value_t = Mode::Regression)]
    mode: Mode,
    /// Confidence threshold.
    #[arg(long, default_value_t = 0.8)]
    q_th: f64,
    /// Desired confidence interval, in normalized score units.
    #[arg(long, default_value_t = 0.5)]
    epsilon: f64,
    /// Knowledge-base window in years (default: all past years).
    #[arg(long)]
    window: Option<u32>,
    /// Cap on the number of ladder rungs.
    #[arg(long)]
    m_max: Option<usize>,
    #[command(flatten)]
    class: ClassArgs,
    /// Predictions CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Optional cumulative timeliness-curve CSV.
    #[arg(long)]
    curve: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Minimum share of students predicted.
    #[arg(long, default_value_t = 0.8)]
    p_min: f64,
    /// Maximum tolerated mean absolute error (std units).
    #[arg(long, default_value_t = 0.5)]
    e_max: f64,
    /// Starting threshold used before any calibration exists.
    #[arg(long, default_value_t = 0.8)]
    q_th_0: f64,
    /// Comma-separated ascending candidate thresholds (default 0,0.05,..,1).
    #[arg(long)]
    grid: Option<String>,
    #[arg(long, default_value_t = 0.5)]
    epsilon: f64,
    #[arg(long)]
    window: Option<u32>,
    #[arg(long)]
    m_max: Option<usize>,
    /// Frontier CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    year: Option<u32>,
    #[arg(long, value_enum, default_value_t = Mode::Regression)]
    mode: Mode,
    #[arg(long)]
    grid: Option<String>,
    #[arg(long, default_value_t = 0.5)]
    epsilon: f64,
    #[arg(long)]
    window: Option<u32>,
    #[arg(long)]
    m_max: Option<usize>,
    #[command(flatten)]
    class: ClassArgs,
    /// Frontier-curve CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    year: Option<u32>,
    #[arg(long, value_enum, default_value_t = Mode::Regression)]
    mode: Mode,
    /// Comma-separated method names (defaults depend on the mode).
    #[arg(long)]
    methods: Option<String>,
    #[arg(long, default_value_t = 7)]
    knn_neighbors: usize,
    #[arg(long, default_value_t = 0.5)]
    epsilon: f64,
    #[arg(long)]
    window: Option<u32>,
    #[command(flatten)]
    class: ClassArgs,
    /// Benchmark grid CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum FactKind {
    Chebyshev,
    Hoeffding,
    Bernstein,
    Lemma1,
}

#[derive(Args)]
struct BoundArgs {
    /// Evaluate a single building-block bound instead of the full theorem.
    #[arg(long, value_enum)]
    fact: Option<FactKind>,
    #[arg(long, default_value_t = 0.2)]
    epsilon: f64,
    /// True (or plug-in) variance of the best neighborhood.
    #[arg(long, default_value_t = 0.0025)]
    var_star: f64,
    /// Comma-separated neighborhood sizes.
    #[arg(long, default_value = "200,300,400")]
    sizes: String,
    /// Gap between the two smallest residual standard deviations.
    #[arg(long, default_value_t = 0.5)]
    delta: f64,
    /// Sample count for the fact bounds.
    #[arg(long)]
    n: Option<usize>,
    /// Variance for the Chebyshev fact bound.
    #[arg(long)]
    variance: Option<f64>,
}

#[derive(Args)]
struct ValidateBoundArgs {
    #[arg(long, default_value_t = 0.2)]
    epsilon: f64,
    /// Comma-separated neighborhood sizes.
    #[arg(long, default_value = "200,300,400")]
    sizes: String,
    /// Comma-separated residual models, one per neighborhood. Forms:
    /// `uniform:STD`, `twopoint:STD`, `constant`, `spike:OFFSET:TAILPROB`;
    /// all centered at 0.5.
    #[arg(long, default_value = "uniform:0.05,uniform:0.28867513459481287,uniform:0.28867513459481287")]
    models: String,
    /// Override the bound's variance input (default: the best model's true variance).
    #[arg(long)]
    var_star: Option<f64>,
    /// Override the bound's standard-deviation gap (default: from the models).
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long, default_value_t = 100_000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(args) => cmd_ingest(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Calibrate(args) => cmd_calibrate(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Bound(args) => cmd_bound(args),
        Command::ValidateBound(args) => cmd_validate_bound(args),
    }
}

fn load(data: &DataArgs) -> Result<CohortDataset> {
    let (dataset, _) = io::ingest(&data.schedule, &data.scores)?;
    Ok(dataset)
}

fn target_year(dataset: &CohortDataset, year: Option<u32>) -> Result<u32> {
    let year = match year {
        Some(y) => y,
        None => dataset.max_year().ok_or_else(|| anyhow!("dataset is empty"))?,
    };
    if dataset.year_records(year).is_none() {
        bail!("year {year} not present in the dataset");
    }
    Ok(year)
}

fn parse_grid(grid: Option<&str>) -> Result<Vec<f64>> {
    match grid {
        None => Ok(CalibrationTarget::default_grid()),
        Some(text) => text
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .with_context(|| format!("bad grid value `{v}`"))
            })
            .collect(),
    }
}

fn parse_sizes(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|v| {
            v.trim()
                .parse::<usize>()
                .with_context(|| format!("bad size `{v}`"))
        })
        .collect()
}

fn grade_boundary(class: &ClassArgs) -> Result<GradeBoundary> {
    let order: Vec<String> = class
        .grade_order
        .split(',')
        .map(|g| g.trim().to_string())
        .collect();
    let (upper, lower) = class
        .bands
        .split_once(',')
        .ok_or_else(|| anyhow!("--bands takes `UPPER,LOWER` boundary grades"))?;
    Ok(GradeBoundary::new(order, upper.trim(), lower.trim())?)
}

/// Binary prediction mode for one target year: the class threshold is the
/// boundary-grade midpoint over the knowledge-base years.
fn binary_mode(
    dataset: &CohortDataset,
    year: u32,
    window: Option<u32>,
    boundary: &GradeBoundary,
) -> Result<PredictionMode> {
    let lowest = window.map(|w| year.saturating_sub(w)).unwrap_or(0);
    let past: Vec<&gradecast_core::domain::StudentRecord> = dataset
        .years()
        .filter(|(y, _)| *y >= lowest && *y < year)
        .flat_map(|(_, r)| r.iter())
        .collect();
    let z_th = derive_binary_threshold(
        &past,
        dataset.schedule(),
        boundary.upper(),
        boundary.lower(),
    )?;
    Ok(PredictionMode::Classification(ClassBands::binary(
        z_th, "well", "poorly",
    )))
}

fn truth_entries(
    dataset: &CohortDataset,
    year: u32,
    boundary: Option<&GradeBoundary>,
) -> Result<BTreeMap<String, TruthEntry>> {
    let schedule = dataset.schedule();
    let mut map = BTreeMap::new();
    for record in dataset.year_records(year).into_iter().flatten() {
        let z = schedule.prefix_score(&record.scores, schedule.len());
        let class = match (boundary, &record.letter_grade) {
            (Some(b), Some(grade)) => Some(b.classify_grade(grade)?),
            (Some(_), None) => bail!(
                "student `{}` has no letter grade; binary mode needs grades",
                record.student_id
            ),
            (None, _) => None,
        };
        map.insert(record.student_id.clone(), TruthEntry { z, class });
    }
    Ok(map)
}

fn cmd_ingest(args: IngestArgs) -> Result<()> {
    let (dataset, stats) = io::ingest(&args.data.schedule, &args.data.scores)?;
    println!(
        "ok schedule_k={} years={} students={}",
        dataset.schedule().len(),
        stats.len(),
        dataset.student_count()
    );
    for s in &stats {
        println!(
            "year={} students={} overall_std={}",
            s.year, s.students, s.overall_std
        );
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let mut config = io::read_synth_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let dataset = synth::generate(&config)?;
    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    let schedule_path = args.out_dir.join("schedule.csv");
    let scores_path = args.out_dir.join("scores.csv");
    io::write_schedule_csv(dataset.schedule(), &schedule_path)?;
    io::write_scores_csv(&dataset, &scores_path)?;
    println!(
        "wrote {} and {} (seed={} students={})",
        schedule_path.display(),
        scores_path.display(),
        config.seed,
        dataset.student_count()
    );
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<()> {
    let dataset = load(&args.data)?;
    let year = target_year(&dataset, args.year)?;
    let params = ConfidenceParams::new(args.epsilon, args.q_th)?;
    let boundary = (args.mode == Mode::Binary)
        .then(|| grade_boundary(&args.class))
        .transpose()?;
    let mode = match &boundary {
        Some(b) => binary_mode(&dataset, year, args.window, b)?,
        None => PredictionMode::Regression,
    };
    let kb = dataset.knowledge_base(year, args.window);
    let records = dataset.year_records(year).expect("checked");
    let outcomes = predict_cohort(records, &kb, dataset.schedule(), params, &mode, args.m_max);
    io::write_predictions_csv(&outcomes, &args.out)?;
    println!(
        "wrote {} ({} students, year {year}, q_th={})",
        args.out.display(),
        outcomes.len(),
        args.q_th
    );
    if let Some(curve_path) = &args.curve {
        let truth = truth_entries(&dataset, year, boundary.as_ref())?;
        let curve = cumulative_curve(&outcomes, &truth, dataset.schedule().len())?;
        io::write_curve_csv(&curve.rows, args.mode == Mode::Binary, curve_path)?;
        println!("wrote {}", curve_path.display());
    }
    Ok(())
}

fn cmd_calibrate(args: CalibrateArgs) -> Result<()> {
    let dataset = load(&args.data)?;
    let year = dataset
        .max_year()
        .ok_or_else(|| anyhow!("dataset is empty"))?;
    let target = CalibrationTarget::new(args.p_min, args.e_max, args.q_th_0, parse_grid(args.grid.as_deref())?)?;
    let result = calibrate_year(&dataset, year, &target, args.epsilon, args.window, args.m_max)?;
    io::write_frontier_csv(&result.frontier, result.q_th_y, &args.out)?;
    println!(
        "q_th={} k={} feasible={} frontier={}",
        result.q_th_y,
        result.k_y,
        result.feasible,
        args.out.display()
    );
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let dataset = load(&args.data)?;
    let year = target_year(&dataset, args.year)?;
    let grid = parse_grid(args.grid.as_deref())?;
    let boundary = (args.mode == Mode::Binary)
        .then(|| grade_boundary(&args.class))
        .transpose()?;
    let mode = match &boundary {
        Some(b) => binary_mode(&dataset, year, args.window, b)?,
        None => PredictionMode::Regression,
    };
    let kb = dataset.knowledge_base(year, args.window);
    let records = dataset.year_records(year).expect("checked");
    let profiles = cohort_profiles(
        records,
        &kb,
        dataset.schedule(),
        args.epsilon,
        &mode,
        args.m_max,
    );
    let sweep: Vec<(f64, Vec<_>)> = grid
        .iter()
        .map(|&q_th| {
            (
                q_th,
                profiles
                    .iter()
                    .map(|p| outcome_for_threshold(p, q_th, &mode))
                    .collect(),
            )
        })
        .collect();
    let truth = truth_entries(&dataset, year, boundary.as_ref())?;
    let points = frontier_points(&sweep, &truth)?;
    io::write_sweep_csv(&points, args.mode == Mode::Binary, &args.out)?;
    println!("wrote {} ({} thresholds)", args.out.display(), points.len());
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let dataset = load(&args.data)?;
    let year = target_year(&dataset, args.year)?;
    let params = gradecast_core::benchmarks::MethodParams {
        knn_neighbors: args.knn_neighbors,
        epsilon: args.epsilon,
    };
    let binary = if args.mode == Mode::Binary {
        let boundary = grade_boundary(&args.class)?;
        Some(gradecast_core::benchmarks::binary_setup_from_grades(
            &dataset,
            year,
            args.window,
            &boundary,
        )?)
    } else {
        None
    };
    let default_methods = match args.mode {
        Mode::Regression => "last_score,weighted_prefix,knn,ols,neighborhood",
        Mode::Binary => "last_score,weighted_prefix,knn,logistic,neighborhood",
    };
    let methods_text = args.methods.as_deref().unwrap_or(default_methods);
    let methods: Vec<&str> = methods_text.split(',').map(str::trim).collect();
    let cells = gradecast_core::benchmarks::run_benchmarks(
        &dataset,
        year,
        args.window,
        &methods,
        &params,
        binary.as_ref(),
    )?;
    io::write_bench_csv(&cells, args.mode == Mode::Binary, &args.out)?;
    println!("wrote {} ({} cells)", args.out.display(), cells.len());
    Ok(())
}

fn cmd_bound(args: BoundArgs) -> Result<()> {
    match args.fact {
        None => {
            let sizes = parse_sizes(&args.sizes)?;
            let inputs = BoundInputs::new(args.epsilon, args.var_star, sizes, args.delta)?;
            let bound = theorem_bound(&inputs);
            println!("chebyshev_term={}", bound.chebyshev_term);
            println!("hoeffding_term={}", bound.hoeffding_term);
            println!("selection_term={}", bound.selection_term);
            println!("total_uncapped={}", bound.total_uncapped);
            println!("total={}", bound.total);
            println!("degenerate_gap={}", bound.degenerate_gap);
        }
        Some(FactKind::Chebyshev) => {
            let variance = args
                .variance
                .ok_or_else(|| anyhow!("--fact chebyshev needs --variance"))?;
            println!(
                "chebyshev={}",
                chebyshev_bound(variance, args.epsilon)?
            );
        }
        Some(FactKind::Hoeffding) => {
            let n = args.n.ok_or_else(|| anyhow!("--fact hoeffding needs --n"))?;
            println!("hoeffding={}", hoeffding_bound(n, args.epsilon)?);
        }
        Some(FactKind::Bernstein) => {
            let n = args.n.ok_or_else(|| anyhow!("--fact bernstein needs --n"))?;
            println!("bernstein={}", bernstein_std_bound(n, args.epsilon)?);
        }
        Some(FactKind::Lemma1) => {
            let sizes = parse_sizes(&args.sizes)?;
            println!(
                "lemma1={}",
                lemma1_bound(sizes.len(), args.delta, &sizes)?
            );
        }
    }
    Ok(())
}

fn parse_models(text: &str) -> Result<Vec<ResidualModel>> {
    text.split(',')
        .map(|item| {
            let item = item.trim();
            let mut parts = item.split(':');
            let kind = parts.next().unwrap_or("");
            let arg = |p: Option<&str>| -> Result<f64> {
                p.ok_or_else(|| anyhow!("model `{item}` is missing a parameter"))?
                    .parse::<f64>()
                    .with_context(|| format!("bad model parameter in `{item}`"))
            };
            match kind {
                "uniform" => {
                    let std = arg(parts.next())?;
                    Ok(ResidualModel::Uniform {
                        center: 0.5,
                        half_width: std * 3f64.sqrt(),
                    })
                }
                "twopoint" => {
                    let std = arg(parts.next())?;
                    Ok(ResidualModel::TwoPoint {
                        lo: 0.5 - std,
                        hi: 0.5 + std,
                    })
                }
                "constant" => Ok(ResidualModel::Constant { value: 0.5 }),
                "spike" => {
                    let offset = arg(parts.next())?;
                    let tail = arg(parts.next())?;
                    Ok(ResidualModel::Spike {
                        center: 0.5,
                        offset,
                        tail_prob: tail,
                    })
                }
                _ => bail!("unknown model `{item}`"),
            }
        })
        .collect()
}

fn cmd_validate_bound(args: ValidateBoundArgs) -> Result<()> {
    let sizes = parse_sizes(&args.sizes)?;
    let models = parse_models(&args.models)?;
    if sizes.len() != models.len() {
        bail!(
            "{} sizes but {} models; they must match",
            sizes.len(),
            models.len()
        );
    }
    let mut stds: Vec<f64> = models.iter().map(|m| m.variance().sqrt()).collect();
    stds.sort_by(f64::total_cmp);
    let var_star = args.var_star.unwrap_or(stds[0] * stds[0]);
    let delta = args.delta.unwrap_or(if stds.len() >= 2 {
        stds[1] - stds[0]
    } else {
        0.0
    });
    let generator = McGenerator::new(sizes.iter().copied().zip(models).collect())?;
    let inputs = BoundInputs::new(args.epsilon, var_star, sizes, delta)?;
    let report = monte_carlo_validate(&generator, &inputs, args.trials, args.seed)?;
    println!("trials={} violations={}", report.trials, report.violations);
    println!("observed={}", report.observed);
    println!("bound_total={}", report.bound.total);
    println!("slack={}", report.slack);
    println!("within_bound={}", report.within_bound);
    if !report.within_bound {
        bail!("observed violation frequency exceeds the bound plus slack");
    }
    Ok(())
}
