//! Command-line front end: corpus generation, model training,
//! cross-validated evaluation, closed-loop control episodes, and a
//! self-test that checks the numeric core against independent oracles.
//!
//! Exit codes: 0 success, 1 failed self-test, 2 usage, 3 I/O, 4 parse
//! failure, 5 unusable data, 6 training failure, 7 bad configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lsds_core::control::{
    episode_report, pd_step, run_episode, write_trace, ControlError, ControlSign, EpisodeReport,
    PdGains, PdState, DEFAULT_KD, DEFAULT_KP,
};
use lsds_core::dataset::{
    dataset_kind, read_detection_dataset, read_severity_dataset, write_detection_dataset,
    write_severity_dataset, DataError, DatasetKind,
};
use lsds_core::eval::{
    group_by_object, leave_one_object_out, regression_metrics, run_cv_classification,
    run_cv_regression, stratified_kfold, write_classification_table, write_regression_table,
    ClassificationReport, CvClassification, CvRegression, EvalError, MeanRegression,
    RegressionReport, ReportRow, SplitPlan, SplitReport, REPORT_MAGIC,
};
use lsds_core::features::{select_features, FeatureSet, SeveritySample};
use lsds_core::field::{
    displacement_entropy, divergence_curl, ewma_update, marker_velocities, mean_net_velocity,
    normalized_contact_area, DepthMap, EwmaState, MarkerField,
};
use lsds_core::learn::gradcheck::{check_lstm_gradients, check_mlp_gradients};
use lsds_core::learn::lstm::{LstmDropoutPlan, LstmModel, Window, LSTM_SEQ_LEN};
use lsds_core::learn::mlp::{MlpDropoutPlan, MlpModel};
use lsds_core::learn::model_io::{load_model, save_model, AnyModel, ModelIoError};
use lsds_core::learn::{
    train_gradient_boosting, train_lstm, train_mlp, train_random_forest, windows_from_samples,
    LearnError, TrainConfig, TreeHyperparams,
};
use lsds_core::sim::corpus::{
    generate_detection_corpus, generate_severity_corpus, generate_severity_corpus_with,
};
use lsds_core::sim::objects::training_objects;
use lsds_core::sim::scene::{read_scene, SceneConfig, SceneError, SceneKind};
use lsds_core::sim::{TactileConfig, VerticalSlideEnv};
use lsds_core::textio::fmt_f64_data;

/// Neural-trainer presets; tree models take their library defaults.
const MLP_EPOCHS: usize = 40;
const LSTM_EPOCHS: usize = 8;
/// Window stride for LSTM training; evaluation always scores stride 1.
const LSTM_STRIDE: usize = 2;
const KFOLD: usize = 5;

#[derive(Parser)]
#[command(name = "lsds", about = "Tactile slip detection, severity estimation, and grip control")]
struct Cli {
    /// Seed for everything stochastic; a fixed seed reproduces output
    /// byte for byte.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Worker threads (default: all cores). Never affects results.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Directory for generated files.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate labeled tactile corpora.
    Gen(GenArgs),
    /// Train one model on a corpus file.
    Train(TrainArgs),
    /// Cross-validate a model kind on a corpus file.
    Eval(EvalArgs),
    /// Run a closed-loop grip episode with trained models.
    Control(ControlArgs),
    /// Check the numeric core against independently coded oracles.
    Selftest,
}

#[derive(Args)]
struct GenArgs {
    /// Scene file; without one, both corpora cover the training objects.
    #[arg(long)]
    scene: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Corpus file written by `gen`.
    data: PathBuf,
    /// Model kind; rf/gb train on detection data, mlp/lstm on severity.
    #[arg(long)]
    model: ModelKind,
    /// baseline | proposed | combined.
    #[arg(long, default_value = "combined", value_parser = parse_feature_set)]
    feature_set: FeatureSet,
}

#[derive(Args)]
struct EvalArgs {
    /// Corpus file written by `gen`.
    data: PathBuf,
    /// Model kind; detection runs stratified k-fold, severity runs
    /// leave-one-object-out.
    #[arg(long)]
    model: ModelKind,
    /// Restrict to one feature set; detection otherwise covers all three.
    #[arg(long, value_parser = parse_feature_set)]
    feature_set: Option<FeatureSet>,
}

#[derive(Args)]
struct ControlArgs {
    /// Control scene file; defaults to the stock control scene.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Trained classifier file (defaults to OUT/rf.model).
    #[arg(long)]
    detector: Option<PathBuf>,
    /// Trained regressor file (defaults to OUT/lstm.model).
    #[arg(long)]
    estimator: Option<PathBuf>,
    /// Proportional and derivative gains as KP,KD.
    #[arg(long, value_parser = parse_gains)]
    gains: Option<(f64, f64)>,
    /// Direction a positive adjustment moves the gripper.
    #[arg(long, default_value = "tighten", value_parser = parse_sign)]
    sign: ControlSign,
    /// Tick budget override.
    #[arg(long)]
    max_ticks: Option<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelKind {
    Rf,
    Gb,
    Mlp,
    Lstm,
}

impl ModelKind {
    fn name(self) -> &'static str {
        match self {
            ModelKind::Rf => "rf",
            ModelKind::Gb => "gb",
            ModelKind::Mlp => "mlp",
            ModelKind::Lstm => "lstm",
        }
    }

    fn dataset(self) -> DatasetKind {
        match self {
            ModelKind::Rf | ModelKind::Gb => DatasetKind::Detection,
            ModelKind::Mlp | ModelKind::Lstm => DatasetKind::Severity,
        }
    }
}

fn parse_feature_set(s: &str) -> Result<FeatureSet, String> {
    s.parse()
}

fn parse_sign(s: &str) -> Result<ControlSign, String> {
    s.parse()
}

fn parse_gains(s: &str) -> Result<(f64, f64), String> {
    let (kp, kd) = s
        .split_once(',')
        .ok_or_else(|| "expected KP,KD".to_string())?;
    let kp: f64 = kp.trim().parse().map_err(|_| format!("bad KP '{kp}'"))?;
    let kd: f64 = kd.trim().parse().map_err(|_| format!("bad KD '{kd}'"))?;
    Ok((kp, kd))
}

// ---------------------------------------------------------------- errors

/// One variant per exit code; each carries the finished message.
#[derive(Debug)]
enum CliError {
    Io(String),
    Format(String),
    Data(String),
    Train(String),
    Config(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Io(_) => 3,
            CliError::Format(_) => 4,
            CliError::Data(_) => 5,
            CliError::Train(_) => 6,
            CliError::Config(_) => 7,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Io(m)
            | CliError::Format(m)
            | CliError::Data(m)
            | CliError::Train(m)
            | CliError::Config(m) => m,
        }
    }
}

impl From<SceneError> for CliError {
    fn from(e: SceneError) -> Self {
        match e {
            SceneError::Io { .. } => CliError::Io(e.to_string()),
            SceneError::Format { .. } => CliError::Format(e.to_string()),
            SceneError::UnknownObject { .. } | SceneError::Invalid(_) => {
                CliError::Config(e.to_string())
            }
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io { .. } => CliError::Io(e.to_string()),
            DataError::Format { .. } => CliError::Format(e.to_string()),
            DataError::WrongKind { .. } | DataError::InvalidSample(_) => {
                CliError::Data(e.to_string())
            }
        }
    }
}

impl From<ModelIoError> for CliError {
    fn from(e: ModelIoError) -> Self {
        match e {
            ModelIoError::Io { .. } => CliError::Io(e.to_string()),
            ModelIoError::Format { .. } => CliError::Format(e.to_string()),
            ModelIoError::WrongKind { .. } => CliError::Config(e.to_string()),
        }
    }
}

impl From<LearnError> for CliError {
    fn from(e: LearnError) -> Self {
        CliError::Train(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Trainer { .. } | EvalError::Prediction { .. } => {
                CliError::Train(e.to_string())
            }
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<ControlError> for CliError {
    fn from(e: ControlError) -> Self {
        match e {
            ControlError::BadGain { .. }
            | ControlError::DetectorKind(_)
            | ControlError::EstimatorKind(_) => CliError::Config(e.to_string()),
            ControlError::Io { .. } => CliError::Io(e.to_string()),
            ControlError::Learn(_) => CliError::Train(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

fn ensure_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

// ------------------------------------------------------------------ main

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("lsds: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Config(format!("--jobs {jobs}: {e}")))?;
    }
    match &cli.command {
        Command::Gen(a) => cmd_gen(&cli, a)?,
        Command::Train(a) => cmd_train(&cli, a)?,
        Command::Eval(a) => cmd_eval(&cli, a)?,
        Command::Control(a) => cmd_control(&cli, a)?,
        Command::Selftest => return cmd_selftest(cli.seed),
    }
    Ok(ExitCode::SUCCESS)
}

// ------------------------------------------------------------------- gen

fn cmd_gen(cli: &Cli, args: &GenArgs) -> Result<(), CliError> {
    println!("seed {}", cli.seed);
    ensure_out(&cli.out)?;
    match &args.scene {
        None => {
            let objects = training_objects();
            println!("objects training ({})", objects.len());
            let rows = generate_detection_corpus(&objects, cli.seed);
            write_corpus_file(&cli.out.join("detection.data"), &rows, |p, r| {
                write_detection_dataset(p, r)
            })?;
            let rows = generate_severity_corpus(&objects, cli.seed);
            write_corpus_file(&cli.out.join("severity.data"), &rows, |p, r| {
                write_severity_dataset(p, r)
            })?;
        }
        Some(path) => {
            let scene = read_scene(path)?;
            println!("scene {} ({}, {})", path.display(), scene.kind, scene.selection);
            match scene.kind {
                SceneKind::Detection => {
                    let rows = generate_detection_corpus(&scene.objects, cli.seed);
                    write_corpus_file(&cli.out.join("detection.data"), &rows, |p, r| {
                        write_detection_dataset(p, r)
                    })?;
                }
                SceneKind::Severity => {
                    let rows = generate_severity_corpus_with(
                        &scene.objects,
                        &scene.speeds,
                        scene.repeats,
                        cli.seed,
                    );
                    write_corpus_file(&cli.out.join("severity.data"), &rows, |p, r| {
                        write_severity_dataset(p, r)
                    })?;
                }
                SceneKind::Control => {
                    return Err(CliError::Config(
                        "a control scene drives `lsds control`; `gen` takes detection or \
                         severity scenes"
                            .into(),
                    ));
                }
            }
        }
    }
    Ok(())
}

fn write_corpus_file<S>(
    path: &Path,
    rows: &[S],
    write: impl Fn(&Path, &[S]) -> Result<(), DataError>,
) -> Result<(), CliError> {
    write(path, rows)?;
    println!("wrote {} ({} rows)", path.display(), rows.len());
    Ok(())
}

// ----------------------------------------------------------------- train

fn cmd_train(cli: &Cli, args: &TrainArgs) -> Result<(), CliError> {
    println!("seed {}", cli.seed);
    let found = dataset_kind(&args.data)?;
    let expected = args.model.dataset();
    if found != expected {
        return Err(CliError::Config(format!(
            "a {} model trains on a {expected} dataset; {} holds a {found} dataset",
            args.model.name(),
            args.data.display(),
        )));
    }
    ensure_out(&cli.out)?;
    let fs_name = args.feature_set;

    let model = match args.model {
        ModelKind::Rf => {
            let samples = read_detection_dataset(&args.data)?;
            println!("read {} ({} rows, {found})", args.data.display(), samples.len());
            let hp = TreeHyperparams::forest_defaults(cli.seed);
            let m = train_random_forest(&samples, fs_name, &hp)?;
            println!("trained rf ({fs_name} features, {} trees)", hp.n_estimators);
            AnyModel::Forest(m)
        }
        ModelKind::Gb => {
            let samples = read_detection_dataset(&args.data)?;
            println!("read {} ({} rows, {found})", args.data.display(), samples.len());
            let hp = TreeHyperparams::boost_defaults(cli.seed);
            let m = train_gradient_boosting(&samples, fs_name, &hp)?;
            println!("trained gb ({fs_name} features, {} stages)", hp.n_estimators);
            AnyModel::Boost(m)
        }
        ModelKind::Mlp => {
            let samples = read_severity_dataset(&args.data)?;
            println!("read {} ({} rows, {found})", args.data.display(), samples.len());
            let cfg = TrainConfig {
                epochs: MLP_EPOCHS,
                ..TrainConfig::new(cli.seed)
            };
            let m = train_mlp(&samples, fs_name, &cfg)?;
            println!("trained mlp ({fs_name} features, {MLP_EPOCHS} epochs)");
            AnyModel::Mlp(m)
        }
        ModelKind::Lstm => {
            let samples = read_severity_dataset(&args.data)?;
            println!("read {} ({} rows, {found})", args.data.display(), samples.len());
            let windows = windows_from_samples(&samples, fs_name, LSTM_SEQ_LEN, LSTM_STRIDE);
            let cfg = TrainConfig {
                epochs: LSTM_EPOCHS,
                ..TrainConfig::new(cli.seed)
            };
            let m = train_lstm(&windows, fs_name, &cfg)?;
            println!(
                "trained lstm ({fs_name} features, {} windows of {LSTM_SEQ_LEN}, \
                 {LSTM_EPOCHS} epochs)",
                windows.len()
            );
            AnyModel::Lstm(m)
        }
    };

    let path = cli.out.join(format!("{}.model", args.model.name()));
    save_model(&model, &path)?;
    println!("wrote {}", path.display());
    Ok(())
}

// ------------------------------------------------------------------ eval

fn cmd_eval(cli: &Cli, args: &EvalArgs) -> Result<(), CliError> {
    println!("seed {}", cli.seed);
    let found = dataset_kind(&args.data)?;
    let expected = args.model.dataset();
    if found != expected {
        return Err(CliError::Config(format!(
            "a {} model evaluates on a {expected} dataset; {} holds a {found} dataset",
            args.model.name(),
            args.data.display(),
        )));
    }
    ensure_out(&cli.out)?;
    match expected {
        DatasetKind::Detection => eval_detection(cli, args),
        DatasetKind::Severity => eval_severity(cli, args),
    }
}

fn eval_detection(cli: &Cli, args: &EvalArgs) -> Result<(), CliError> {
    let samples = read_detection_dataset(&args.data)?;
    println!("read {} ({} rows, detection)", args.data.display(), samples.len());
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    let plan = stratified_kfold(&labels, KFOLD, cli.seed)?;
    warn_all(&plan);
    println!("stratified {KFOLD}-fold cross-validation");

    let sets = match args.feature_set {
        Some(one) => vec![one],
        None => vec![FeatureSet::Baseline, FeatureSet::Proposed, FeatureSet::Combined],
    };
    let name = args.model.name();
    let mut rows: Vec<ReportRow<ClassificationReport>> = Vec::new();
    for set in sets {
        let cv = match args.model {
            ModelKind::Rf => {
                let hp = TreeHyperparams::forest_defaults(cli.seed);
                run_cv_classification(
                    &samples,
                    &plan,
                    |s| s.label,
                    |tr| train_random_forest(tr, set, &hp),
                    |m, s| m.predict_class(&select_features(&s.features, set)).map(|(c, _)| c),
                )?
            }
            ModelKind::Gb => {
                let hp = TreeHyperparams::boost_defaults(cli.seed);
                run_cv_classification(
                    &samples,
                    &plan,
                    |s| s.label,
                    |tr| train_gradient_boosting(tr, set, &hp),
                    |m, s| m.predict_class(&select_features(&s.features, set)).map(|(c, _)| c),
                )?
            }
            ModelKind::Mlp | ModelKind::Lstm => unreachable!("kind checked in cmd_eval"),
        };
        println!(
            "{name} {set} mean accuracy {} f1 {}",
            fmt_f64_data(cv.mean.accuracy),
            fmt_f64_data(cv.mean.f1)
        );
        push_classification_rows(&mut rows, name, set, &cv);
    }

    let path = cli.out.join(format!("eval-{name}.report"));
    write_text(&path, &write_classification_table(&rows))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn push_classification_rows(
    rows: &mut Vec<ReportRow<ClassificationReport>>,
    model: &str,
    set: FeatureSet,
    cv: &CvClassification,
) {
    for r in &cv.per_split {
        rows.push(ReportRow {
            model: model.into(),
            feature_set: set.to_string(),
            split: r.split.clone(),
            report: r.report.clone(),
        });
    }
    // Aggregate row: unweighted means beside summed confusion counts.
    let sum = |get: fn(&ClassificationReport) -> usize| -> usize {
        cv.per_split.iter().map(|r| get(&r.report)).sum()
    };
    rows.push(ReportRow {
        model: model.into(),
        feature_set: set.to_string(),
        split: "mean".into(),
        report: ClassificationReport {
            accuracy: cv.mean.accuracy,
            precision: cv.mean.precision,
            recall: cv.mean.recall,
            f1: cv.mean.f1,
            true_pos: sum(|r| r.true_pos),
            true_neg: sum(|r| r.true_neg),
            false_pos: sum(|r| r.false_pos),
            false_neg: sum(|r| r.false_neg),
            precision_undefined: cv.per_split.iter().any(|r| r.report.precision_undefined),
            recall_undefined: cv.per_split.iter().any(|r| r.report.recall_undefined),
            f1_undefined: cv.per_split.iter().any(|r| r.report.f1_undefined),
        },
    });
}

fn eval_severity(cli: &Cli, args: &EvalArgs) -> Result<(), CliError> {
    let samples = read_severity_dataset(&args.data)?;
    println!("read {} ({} rows, severity)", args.data.display(), samples.len());
    let ids: Vec<&str> = samples.iter().map(|s| s.object_id.as_str()).collect();
    let groups = group_by_object(&ids);
    let plan = leave_one_object_out(&groups)?;
    warn_all(&plan);
    println!("leave-one-object-out cross-validation ({} folds)", plan.splits.len());

    let set = args.feature_set.unwrap_or(FeatureSet::Combined);
    let name = args.model.name();
    let cv = match args.model {
        ModelKind::Mlp => {
            let cfg = TrainConfig {
                epochs: MLP_EPOCHS,
                ..TrainConfig::new(cli.seed)
            };
            run_cv_regression(
                &samples,
                &plan,
                |s| s.v_slip,
                |tr| train_mlp(tr, set, &cfg),
                |m, s| m.predict_severity(&select_features(&s.features, set)),
            )?
        }
        ModelKind::Lstm => lstm_loocv(&samples, &plan, set, cli.seed)?,
        ModelKind::Rf | ModelKind::Gb => unreachable!("kind checked in cmd_eval"),
    };
    println!(
        "{name} {set} mean mae {} rmse {}",
        fmt_f64_data(cv.mean.mae),
        fmt_f64_data(cv.mean.rmse)
    );

    let mut rows: Vec<ReportRow<RegressionReport>> = Vec::new();
    for r in &cv.per_split {
        rows.push(ReportRow {
            model: name.into(),
            feature_set: set.to_string(),
            split: r.split.clone(),
            report: r.report.clone(),
        });
    }
    rows.push(ReportRow {
        model: name.into(),
        feature_set: set.to_string(),
        split: "mean".into(),
        report: RegressionReport {
            mae: cv.mean.mae,
            rmse: cv.mean.rmse,
            r2: cv.mean.r2,
            r2_undefined: cv.per_split.iter().any(|r| r.report.r2_undefined),
        },
    });
    let path = cli.out.join(format!("eval-{name}.report"));
    write_text(&path, &write_regression_table(&rows))?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Held-out objects are scored window by window, so the generic
/// per-sample driver does not fit; folds are run by hand. Training
/// windows stride as in `train`; test windows stride 1.
fn lstm_loocv(
    samples: &[SeveritySample],
    plan: &SplitPlan,
    set: FeatureSet,
    seed: u64,
) -> Result<CvRegression, CliError> {
    let cfg = TrainConfig {
        epochs: LSTM_EPOCHS,
        ..TrainConfig::new(seed)
    };
    let mut per_split = Vec::with_capacity(plan.splits.len());
    for split in &plan.splits {
        let train: Vec<SeveritySample> =
            split.train.iter().map(|&i| samples[i].clone()).collect();
        let test: Vec<SeveritySample> = split.test.iter().map(|&i| samples[i].clone()).collect();
        let windows = windows_from_samples(&train, set, LSTM_SEQ_LEN, LSTM_STRIDE);
        let model = train_lstm(&windows, set, &cfg).map_err(|e| EvalError::Trainer {
            split: split.name.clone(),
            source: e,
        })?;
        let held = windows_from_samples(&test, set, LSTM_SEQ_LEN, 1);
        let mut truth = Vec::with_capacity(held.len());
        let mut preds = Vec::with_capacity(held.len());
        for w in &held {
            truth.push(w.target);
            preds.push(model.predict_severity(&w.steps).map_err(|e| EvalError::Prediction {
                split: split.name.clone(),
                source: e,
            })?);
        }
        per_split.push(SplitReport {
            split: split.name.clone(),
            report: regression_metrics(&truth, &preds)?,
        });
    }
    let n = per_split.len() as f64;
    let mean_of = |get: fn(&RegressionReport) -> f64| -> f64 {
        per_split.iter().map(|r| get(&r.report)).sum::<f64>() / n
    };
    Ok(CvRegression {
        mean: MeanRegression {
            mae: mean_of(|r| r.mae),
            rmse: mean_of(|r| r.rmse),
            r2: mean_of(|r| r.r2),
        },
        per_split,
    })
}

fn warn_all(plan: &SplitPlan) {
    for w in &plan.warnings {
        eprintln!("warning: {w}");
    }
}

// --------------------------------------------------------------- control

fn cmd_control(cli: &Cli, args: &ControlArgs) -> Result<(), CliError> {
    println!("seed {}", cli.seed);
    let scene = match &args.scene {
        Some(path) => {
            let s = read_scene(path)?;
            println!("scene {} ({}, {})", path.display(), s.kind, s.selection);
            s
        }
        None => {
            let s = SceneConfig::default_for(SceneKind::Control);
            println!("scene default ({}, {})", s.kind, s.selection);
            s
        }
    };
    if scene.kind != SceneKind::Control {
        return Err(CliError::Config(format!(
            "`control` needs a control scene, got a {} scene",
            scene.kind
        )));
    }
    let object = scene.control_object()?.clone();
    let max_ticks = args.max_ticks.unwrap_or(scene.max_ticks);
    println!("margin {} stroke_cm {} max_ticks {max_ticks}", scene.margin, scene.stroke_cm);

    let det_path = args.detector.clone().unwrap_or_else(|| cli.out.join("rf.model"));
    let est_path = args.estimator.clone().unwrap_or_else(|| cli.out.join("lstm.model"));
    let detector = load_model(&det_path)?;
    let estimator = load_model(&est_path)?;
    println!("detector {} ({}, {})", det_path.display(), detector.kind(), detector.feature_set());
    println!(
        "estimator {} ({}, {})",
        est_path.display(),
        estimator.kind(),
        estimator.feature_set()
    );

    let (kp, kd) = args.gains.unwrap_or((DEFAULT_KP, DEFAULT_KD));
    let gains = PdGains::new(kp, kd, args.sign)?;
    println!("gains kp {kp} kd {kd} {}", args.sign);

    ensure_out(&cli.out)?;
    let rng = ChaCha8Rng::seed_from_u64(cli.seed);
    let mut env =
        VerticalSlideEnv::new_force(object, TactileConfig::default(), rng, scene.margin, scene.stroke_cm);
    let trace = run_episode(&mut env, &detector, &estimator, &gains, max_ticks)?;
    let report = episode_report(&trace)?;

    let trace_path = cli.out.join("control.trace");
    write_trace(&trace, &trace_path)?;
    let text = episode_report_text(&report);
    for line in text.lines().skip(1) {
        println!("{line}");
    }
    let report_path = cli.out.join("control.report");
    write_text(&report_path, &text)?;
    println!("wrote {}", trace_path.display());
    println!("wrote {}", report_path.display());
    Ok(())
}

fn episode_report_text(r: &EpisodeReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{REPORT_MAGIC} episode");
    let _ = writeln!(s, "total_ticks {}", r.total_ticks);
    let _ = writeln!(s, "settling_ticks {}", r.settling_ticks);
    let _ = writeln!(s, "peak_true_severity {}", fmt_f64_data(r.peak_true_severity));
    let _ = writeln!(s, "severity_mae {}", fmt_f64_data(r.severity_mae));
    let _ = writeln!(s, "severity_rmse {}", fmt_f64_data(r.severity_rmse));
    let _ = writeln!(s, "misclassified_ticks {}", r.misclassified_ticks);
    s
}

// -------------------------------------------------------------- selftest

fn cmd_selftest(seed: u64) -> Result<ExitCode, CliError> {
    let mut all = true;
    let mut check = |name: &str, result: Result<(), String>| match result {
        Ok(()) => println!("selftest {name}: PASS"),
        Err(why) => {
            all = false;
            println!("selftest {name}: FAIL ({why})");
        }
    };
    check("field-linear", selftest_linear_fields(seed));
    check("field-velocity", selftest_velocity(seed));
    check("field-entropy", selftest_entropy(seed));
    check("field-area", selftest_area(seed));
    check("field-ewma", selftest_ewma(seed));
    check("grad-mlp", selftest_grad_mlp(seed));
    check("grad-lstm", selftest_grad_lstm(seed));
    check("pd-step", selftest_pd_step(seed));
    Ok(if all { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn rel_close(got: f64, want: f64, tol: f64) -> bool {
    (got - want).abs() <= tol * got.abs().max(want.abs()).max(1.0)
}

/// Linear displacement fields have spatially constant derivatives, so
/// both the interior and boundary stencils are exact and the node sum
/// collapses to a closed form. Dyadic coefficients on the integer
/// lattice keep every intermediate value exactly representable, making
/// bit equality the right assertion.
fn selftest_linear_fields(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for trial in 0..200 {
        let mut coef = || f64::from(rng.gen_range(-16..=16i32)) / 8.0;
        let (a, b, c, d) = (coef(), coef(), coef(), coef());
        let mut field = MarkerField::default_lattice(0.0);
        let refs = field.ref_positions().to_vec();
        for (u, p) in field.displacements_mut().iter_mut().zip(&refs) {
            *u = [a * p[0] + b * p[1], c * p[0] + d * p[1]];
        }
        let spacing = field.spacing();
        let n = field.len() as f64;
        let (div, curl) = divergence_curl(&field, spacing).map_err(|e| e.to_string())?;
        let (want_div, want_curl) = (n * (a + d), n * (c - b));
        if div != want_div || curl != want_curl {
            return Err(format!(
                "trial {trial}: div {div} want {want_div}, curl {curl} want {want_curl}"
            ));
        }
    }
    Ok(())
}

fn random_field(rng: &mut ChaCha8Rng, timestamp: f64) -> MarkerField {
    let mut field = MarkerField::default_lattice(timestamp);
    for u in field.displacements_mut() {
        *u = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
    }
    field
}

fn selftest_velocity(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dt = 0.04;
    for trial in 0..200 {
        let prev = random_field(&mut rng, 0.0);
        let curr = random_field(&mut rng, dt);
        let vel = marker_velocities(&prev, &curr, dt).map_err(|e| e.to_string())?;
        let (vx, vy, mag) = mean_net_velocity(&vel).map_err(|e| e.to_string())?;

        let (mut sx, mut sy) = (0.0, 0.0);
        for (p, c) in prev.displacements().iter().zip(curr.displacements()) {
            sx += (c[0] - p[0]) / dt;
            sy += (c[1] - p[1]) / dt;
        }
        let n = prev.len() as f64;
        let (ox, oy) = (sx / n, sy / n);
        let omag = (ox * ox + oy * oy).sqrt();
        if !(rel_close(vx, ox, 1e-12) && rel_close(vy, oy, 1e-12) && rel_close(mag, omag, 1e-12)) {
            return Err(format!("trial {trial}: ({vx}, {vy}, {mag}) want ({ox}, {oy}, {omag})"));
        }
    }
    Ok(())
}

fn selftest_entropy(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (bins, lo, hi) = (16usize, 0.0f64, 10.0f64);
    for trial in 0..200 {
        let field = random_field(&mut rng, 0.0);
        let got = displacement_entropy(&field, bins, (lo, hi)).map_err(|e| e.to_string())?;

        let mut counts = vec![0usize; bins];
        let width = (hi - lo) / bins as f64;
        for u in field.displacements() {
            let mag = (u[0] * u[0] + u[1] * u[1]).sqrt();
            let idx = if mag <= lo {
                0
            } else {
                (((mag - lo) / width) as usize).min(bins - 1)
            };
            counts[idx] += 1;
        }
        let n = field.len() as f64;
        let want: f64 = counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n;
                -p * p.log2()
            })
            .sum();
        if !rel_close(got, want, 1e-12) {
            return Err(format!("trial {trial}: {got} want {want}"));
        }
    }
    Ok(())
}

fn selftest_area(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (32usize, 24usize);
    for trial in 0..200 {
        let depths: Vec<f64> = (0..w * h).map(|_| rng.gen_range(0.0..3.0)).collect();
        let z_t = rng.gen_range(0.5..2.5);
        let map = DepthMap::new(w, h, depths.clone()).map_err(|e| e.to_string())?;
        let got = normalized_contact_area(&map, z_t);
        let over = depths.iter().filter(|&&z| z > z_t).count();
        let want = over as f64 / (w * h) as f64;
        if got != want {
            return Err(format!("trial {trial}: {got} want {want}"));
        }
    }
    Ok(())
}

/// The oracle uses the update's algebraically equivalent incremental
/// form, an independent arithmetic path.
fn selftest_ewma(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for trial in 0..200 {
        let alpha = rng.gen_range(0.05..1.0);
        let mut state = EwmaState::new(alpha).map_err(|e| e.to_string())?;
        let mut oracle = f64::NAN;
        for step in 0..100 {
            let x = rng.gen_range(0.0..5.0);
            state = ewma_update(state, x);
            oracle = if oracle.is_nan() { x } else { oracle + alpha * (x - oracle) };
            if !rel_close(state.value(), oracle, 1e-12) {
                return Err(format!(
                    "trial {trial} step {step}: {} want {oracle}",
                    state.value()
                ));
            }
        }
    }
    Ok(())
}

fn selftest_grad_mlp(seed: u64) -> Result<(), String> {
    let model = MlpModel::new(FeatureSet::Combined, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let dim = FeatureSet::Combined.dim();
    let xs: Vec<Vec<f64>> = (0..10)
        .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let ys: Vec<f64> = (0..10).map(|_| rng.gen_range(0.0..5.0)).collect();
    let plan = MlpDropoutPlan::draw(xs.len(), model.hidden, model.dropout, &mut rng);
    let report = check_mlp_gradients(&model, &xs, &ys, Some(&plan));
    if report.passed() {
        Ok(())
    } else {
        Err(format!(
            "tensor {} rel err {:.3e} over {:.1e}",
            report.worst_tensor, report.max_rel_err, report.tolerance
        ))
    }
}

fn selftest_grad_lstm(seed: u64) -> Result<(), String> {
    let model = LstmModel::new(FeatureSet::Combined, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let dim = FeatureSet::Combined.dim();
    let windows: Vec<Window> = (0..3)
        .map(|_| Window {
            steps: (0..model.seq_len)
                .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect(),
            target: rng.gen_range(0.0..5.0),
        })
        .collect();
    let plan = LstmDropoutPlan::draw(
        windows.len(),
        model.layers,
        model.seq_len,
        model.hidden,
        model.dropout,
        &mut rng,
    );
    let report = check_lstm_gradients(&model, &windows, Some(&plan));
    if report.passed() {
        Ok(())
    } else {
        Err(format!(
            "tensor {} rel err {:.3e} over {:.1e}",
            report.worst_tensor, report.max_rel_err, report.tolerance
        ))
    }
}

/// Replays the update symbolically and demands bit equality, both
/// adjustment signs, clamp included.
fn selftest_pd_step(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for trial in 0..10_000 {
        let sign = if rng.gen_bool(0.5) { ControlSign::Tighten } else { ControlSign::Literal };
        let gains =
            PdGains::new(rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0), sign)
                .map_err(|e| e.to_string())?;
        let p0 = rng.gen_range(0.0..225.0);
        let e_prev = rng.gen_range(0.0..8.0);
        let e = rng.gen_range(0.0..8.0);

        // A zero-gain slip step plants e_prev without moving p.
        let idle = PdGains::new(0.0, 0.0, sign).map_err(|e| e.to_string())?;
        let (primed, _) = pd_step(PdState::new(p0), true, e_prev, &idle);

        let (quiet, p_quiet) = pd_step(primed, false, e, &gains);
        if p_quiet != p0 || quiet.e_previous() != e_prev {
            return Err(format!("trial {trial}: quiet tick moved the state"));
        }

        let (next, p_cmd) = pd_step(primed, true, e, &gains);
        let adjustment = gains.kp * e + gains.kd * (e - e_prev);
        let moved = match sign {
            ControlSign::Tighten => p0 + adjustment,
            ControlSign::Literal => p0 - adjustment,
        };
        let want = moved.clamp(0.0, 225.0);
        if p_cmd != want || next.p_current() != want || next.e_previous() != e {
            return Err(format!("trial {trial}: p {p_cmd} want {want}"));
        }
    }
    Ok(())
}
