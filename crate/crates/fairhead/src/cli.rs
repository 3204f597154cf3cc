//! Command-line surface: experiment orchestration and report emission.
//!
//! Subcommands map onto the library operations; every run is controlled by
//! `--seed`, and `--threads` (or the `FAIRHEAD_THREADS` environment variable)
//! caps parallelism without changing any emitted number. Exit codes: 0 on
//! success, 1 on usage errors, 2 on data errors.

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::dataio::{
    generate_synthetic, read_embeddings, read_samples, write_embeddings, write_samples, Axis,
    EmbeddingMatrix, Label, OracleSpec, SampleTable, Split,
};
use crate::detect::{
    bias_report, bias_report_on, direction_consistency, leakage_probe, prevalence_table,
    projection_2d,
};
use crate::gbt::{fit_gbt, GbtParams};
use crate::heads::{train_multihead, HeadKind, HeadParams, MultiHeadModel};
use crate::linalg::{fit_pca, pca_transform};
use crate::metrics::{confusion_rates, equalized_odds_gap, select_threshold_min_recall};
use crate::mitigate::{
    active_learning_loop, run_experiment, tune_hyperparams, ActiveLearningConfig, EvalData,
    ExperimentConfig, Mitigation,
};
use crate::report::{
    emit_report, GroupRates, MitigationSection, ReportDocument, ReportMetadata, ThresholdSection,
};

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) => m,
        }
    }
}

macro_rules! impl_data_error {
    ($($ty:ty),*) => {
        $(impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::Data(e.to_string())
            }
        })*
    };
}

impl_data_error!(
    crate::dataio::DataError,
    crate::detect::DetectError,
    crate::gbt::GbtError,
    crate::heads::HeadError,
    crate::linalg::LinalgError,
    crate::metrics::MetricError,
    crate::mitigate::MitigateError,
    crate::report::ReportError,
    std::io::Error
);

#[derive(Parser, Debug)]
#[command(
    name = "fairhead",
    version,
    about = "Bias detection and mitigation for classifier heads on frozen embeddings"
)]
struct Cli {
    /// Cap worker threads (falls back to FAIRHEAD_THREADS, then all cores).
    /// Never changes results.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic benchmark with a known bias oracle
    Synth(SynthArgs),
    /// Run the bias detection suite and emit a report
    Detect(DetectArgs),
    /// Train a multi-head classifier and save it
    Train(TrainArgs),
    /// Recall-constrained threshold and equalized-odds analysis
    Evaluate(EvaluateArgs),
    /// Run mitigation strategies with repeated seeds and compare
    Mitigate(MitigateArgs),
    /// Pool-based active learning with round-by-round history
    #[command(name = "active-learn")]
    ActiveLearn(ActiveLearnArgs),
    /// Select boosted-tree hyperparameters by validation composite score
    Tune(TuneArgs),
    /// Re-emit tables and plots from an existing report document
    Report(ReportArgs),
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// Embeddings file (FAIREMB1 binary with .ids sidecar)
    #[arg(long)]
    embeddings: PathBuf,
    /// Samples table (csv)
    #[arg(long)]
    samples: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct GbtFlags {
    #[arg(long, default_value_t = 0.05)]
    learning_rate: f64,
    #[arg(long, default_value_t = 150)]
    n_estimators: usize,
    #[arg(long, default_value_t = 10)]
    max_depth: usize,
    #[arg(long, default_value_t = 1.0)]
    lambda_l2: f64,
    #[arg(long, default_value_t = 0.0)]
    gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    min_child_hessian: f64,
}

impl GbtFlags {
    fn to_params(&self, seed: u64) -> GbtParams {
        GbtParams {
            learning_rate: self.learning_rate,
            n_estimators: self.n_estimators,
            max_depth: self.max_depth,
            lambda_l2: self.lambda_l2,
            gamma: self.gamma,
            min_child_hessian: self.min_child_hessian,
            seed,
        }
    }
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 20_000)]
    n: usize,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Benchmark preset: `biased` injects a sex signal and black-group label
    /// noise; `null` is signal- and noise-free
    #[arg(long, default_value = "biased")]
    preset: String,
    /// Override the degraded-group label flip rate
    #[arg(long)]
    noise_rate: Option<f64>,
    /// Load the full oracle spec from a key=value file instead of a preset
    #[arg(long)]
    spec: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DetectArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 0.95)]
    variance_target: f64,
    /// Rows in the attribution direction table
    #[arg(long, default_value_t = 5)]
    top_k: usize,
    /// Condition explained by the direction analysis
    #[arg(long, default_value = "cardiomegaly")]
    direction_condition: String,
    #[command(flatten)]
    gbt: GbtFlags,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Output model file
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "gbt")]
    head: String,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 0.95)]
    variance_target: f64,
    #[command(flatten)]
    gbt: GbtFlags,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Trained model file; trains a fresh head when omitted
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value = "gbt")]
    head: String,
    #[arg(long, default_value_t = 0.95)]
    recall_floor: f64,
    /// Axis whose groups the rates are split by
    #[arg(long, default_value = "race")]
    axis: String,
    /// Restrict rows first, e.g. `sex=female`
    #[arg(long)]
    filter: Option<String>,
    #[arg(long, default_value = "pleural_effusion")]
    condition: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 0.95)]
    variance_target: f64,
    #[command(flatten)]
    gbt: GbtFlags,
}

#[derive(Args, Debug)]
struct MitigateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "gbt")]
    head: String,
    /// Comma-separated set of
    /// reweight|augment|active_learning|adversarial
    #[arg(long, default_value = "")]
    strategies: String,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.95)]
    variance_target: f64,
    /// Skip the unmitigated comparison arm
    #[arg(long)]
    no_baseline: bool,
    #[arg(long, default_value = "race")]
    reweight_axis: String,
    #[arg(long, default_value = "race")]
    augment_axis: String,
    /// Fixed augmentation target group (auto-selected when omitted)
    #[arg(long)]
    augment_group: Option<String>,
    /// Synthetic rows per condition (fills the gap to the largest group when
    /// omitted)
    #[arg(long)]
    augment_count: Option<usize>,
    #[arg(long, default_value_t = 15_000)]
    al_initial: usize,
    #[arg(long, default_value_t = 2_000)]
    al_batch: usize,
    #[arg(long, default_value_t = 10)]
    al_rounds: usize,
    #[arg(long, default_value = "uncertainty")]
    al_strategy: String,
    #[command(flatten)]
    gbt: GbtFlags,
}

#[derive(Args, Debug)]
struct ActiveLearnArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "gbt")]
    head: String,
    #[arg(long, default_value_t = 15_000)]
    initial_pool: usize,
    #[arg(long, default_value_t = 2_000)]
    batch_size: usize,
    #[arg(long, default_value_t = 10)]
    rounds: usize,
    #[arg(long, default_value = "uncertainty")]
    strategy: String,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 0.95)]
    variance_target: f64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    gbt: GbtFlags,
}

#[derive(Args, Debug)]
struct TuneArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Grid file: one candidate per line, comma-separated key=value pairs
    #[arg(long)]
    grid: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 0.95)]
    variance_target: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Existing report document (report.json)
    #[arg(long, name = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

/// Entry point behind the binary; returns the process exit code.
pub fn cli_main<I>(args: I) -> u8
where
    I: IntoIterator<Item = String>,
{
    let argv = std::iter::once("fairhead".to_string()).chain(args);
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };

    let threads = cli.threads.or_else(|| {
        std::env::var("FAIRHEAD_THREADS").ok().and_then(|v| v.parse().ok())
    });
    if let Some(t) = threads {
        // The pool can only be installed once per process; later calls keep
        // the first setting, which is fine because results are
        // thread-count-invariant.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }

    let result = match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Detect(args) => cmd_detect(args, threads),
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args, threads),
        Command::Mitigate(args) => cmd_mitigate(args, threads),
        Command::ActiveLearn(args) => cmd_active_learn(args, threads),
        Command::Tune(args) => cmd_tune(args, threads),
        Command::Report(args) => cmd_report(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.code()
        }
    }
}

fn parse_head(name: &str) -> Result<HeadKind, CliError> {
    name.parse::<HeadKind>().map_err(CliError::Usage)
}

fn parse_axis(name: &str) -> Result<Axis, CliError> {
    name.parse::<Axis>().map_err(CliError::Usage)
}

fn load_dataset(data: &DataArgs) -> Result<(EmbeddingMatrix, SampleTable), CliError> {
    let embeddings = read_embeddings(&data.embeddings)?;
    let samples = read_samples(&data.samples)?;
    if embeddings.ids() != samples.ids() {
        return Err(CliError::Data(format!(
            "embeddings and samples ids do not match ({} vs {} rows)",
            embeddings.n_samples(),
            samples.n_samples()
        )));
    }
    Ok((embeddings, samples))
}

fn labels_of(samples: &SampleTable, rows: &[usize]) -> Vec<Vec<Label>> {
    (0..samples.n_conditions())
        .map(|c| rows.iter().map(|&i| samples.label(c, i)).collect())
        .collect()
}

/// PCA on the train split plus one head per condition.
fn train_pipeline(
    embeddings: &EmbeddingMatrix,
    samples: &SampleTable,
    head: HeadKind,
    params: &HeadParams,
    variance_target: f64,
    seed: u64,
) -> Result<MultiHeadModel, CliError> {
    let train = samples.split_indices(Split::Train);
    if train.is_empty() {
        return Err(CliError::Data("train split is empty".into()));
    }
    let pca = fit_pca(&embeddings.data().select_rows(&train), variance_target)?;
    let reduced_train = pca_transform(&pca, &embeddings.data().select_rows(&train))?;
    let labels = labels_of(samples, &train);
    let weights = vec![1.0; train.len()];
    let names = samples.condition_names().to_vec();
    let model =
        train_multihead(head, &reduced_train, &labels, &names, &weights, params, seed)?;
    Ok(model.with_pca(pca))
}

fn config_entry(config: &mut BTreeMap<String, String>, key: &str, value: impl ToString) {
    config.insert(key.to_string(), value.to_string());
}

fn cmd_synth(args: SynthArgs) -> Result<(), CliError> {
    let mut spec = match &args.spec {
        Some(path) => OracleSpec::read_config(path)?,
        None => match args.preset.as_str() {
            "biased" => OracleSpec::biased(args.dim, 0.25),
            "null" => OracleSpec::null(args.dim),
            other => {
                return Err(CliError::Usage(format!(
                    "unknown preset `{other}` (expected biased|null)"
                )))
            }
        },
    };
    if let Some(rate) = args.noise_rate {
        spec.label_noise_rate = rate;
    }
    let (embeddings, samples, used) = generate_synthetic(&spec, args.n, args.seed)?;

    std::fs::create_dir_all(&args.out)?;
    write_embeddings(&embeddings, &args.out.join("embeddings.femb"))?;
    write_samples(&samples, &args.out.join("samples.csv"))?;
    used.write_config(&args.out.join("oracle.spec"))?;
    println!(
        "wrote {} samples (dim {}) to {}",
        args.n,
        embeddings.dim(),
        args.out.display()
    );
    Ok(())
}

fn cmd_detect(args: DetectArgs, threads: Option<usize>) -> Result<(), CliError> {
    let (embeddings, samples) = load_dataset(&args.data)?;
    let head_params =
        HeadParams { gbt: args.gbt.to_params(args.seed), ..HeadParams::default() };

    let prevalence = prevalence_table(&samples);
    let leakage = leakage_probe(&embeddings, &samples, args.seed)?;

    // Fairness snapshot from a model on reduced features.
    let model = train_pipeline(
        &embeddings,
        &samples,
        HeadKind::Gbt,
        &head_params,
        args.variance_target,
        args.seed,
    )?;
    let fairness = bias_report(&model, &embeddings, &samples)?;

    // Direction analysis on raw embedding dimensions for one condition, so
    // reported dimensions refer to the encoder's feature space.
    let direction = {
        let c = samples
            .condition_names()
            .iter()
            .position(|n| n == &args.direction_condition)
            .ok_or_else(|| {
                CliError::Usage(format!("unknown condition `{}`", args.direction_condition))
            })?;
        let train = samples.split_indices(Split::Train);
        let kept: Vec<usize> = train
            .iter()
            .copied()
            .filter(|&i| samples.label(c, i) != Label::Missing)
            .collect();
        let x = embeddings.data().select_rows(&kept);
        let y: Vec<u8> =
            kept.iter().map(|&i| samples.label(c, i).as_binary().unwrap()).collect();
        // Shallower ensemble than the head default: exact greedy over every
        // raw dimension is quadratic-ish in width.
        let params = GbtParams {
            n_estimators: 50,
            max_depth: 4,
            learning_rate: 0.1,
            ..GbtParams::default()
        };
        let gbt = fit_gbt(&x, &y, &vec![1.0; kept.len()], &params)?;
        let test = samples.split_indices(Split::Test);
        let x_test = embeddings.data().select_rows(&test);
        let groups: Vec<(Axis, Vec<Option<usize>>)> = Axis::ALL
            .iter()
            .map(|&axis| {
                (axis, test.iter().map(|&i| samples.metric_group_index(axis, i)).collect())
            })
            .collect();
        direction_consistency(&gbt, &x_test, &groups, args.top_k)?
    };

    let mut config = BTreeMap::new();
    config_entry(&mut config, "command", "detect");
    config_entry(&mut config, "embeddings", args.data.embeddings.display());
    config_entry(&mut config, "samples", args.data.samples.display());
    config_entry(&mut config, "seed", args.seed);
    config_entry(&mut config, "variance_target", args.variance_target);
    config_entry(&mut config, "top_k", args.top_k);
    config_entry(&mut config, "direction_condition", &args.direction_condition);

    let mut doc = ReportDocument::new(ReportMetadata::new(args.seed, threads, config));
    doc.prevalence = Some(prevalence);
    doc.leakage = Some(leakage);
    doc.direction = Some(direction);
    doc.fairness = Some(fairness.clone());
    let written = emit_report(&doc, &args.out)?;

    // Per-sample projection coordinates for plotting by demographic group.
    let coords = projection_2d(&embeddings, &samples)?;
    let tables = args.out.join("tables");
    std::fs::create_dir_all(&tables)?;
    let mut out = String::from("id,sex,age_group,race,split,pc1,pc2\n");
    for (i, (pc1, pc2)) in coords.iter().enumerate() {
        let split = match samples.split(i) {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        };
        out.push_str(&format!(
            "{},{},{},{},{},{pc1:.6},{pc2:.6}\n",
            samples.ids()[i],
            samples.group_name(Axis::Sex, i),
            samples.group_name(Axis::Age, i),
            samples.group_name(Axis::Race, i),
            split
        ));
    }
    std::fs::write(tables.join("projection.csv"), out)?;

    println!(
        "detection report written to {} ({} files)",
        args.out.display(),
        written.len() + 1
    );
    println!(
        "mean AUPRC {:.1} | deltas: sex {:.1}, age {:.1}, race {:.1} (percentage points)",
        fairness.mean_auprc * 100.0,
        fairness.mean_delta_sex * 100.0,
        fairness.mean_delta_age * 100.0,
        fairness.mean_delta_race * 100.0
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let (embeddings, samples) = load_dataset(&args.data)?;
    let head = parse_head(&args.head)?;
    let params = HeadParams { gbt: args.gbt.to_params(args.seed), ..HeadParams::default() };
    let model =
        train_pipeline(&embeddings, &samples, head, &params, args.variance_target, args.seed)?;

    let val = samples.split_indices(Split::Val);
    if !val.is_empty() {
        let report = bias_report_on(&model, &embeddings, &samples, &val)?;
        println!(
            "val composite {:.4} (mean AUPRC {:.1} pp)",
            report.composite,
            report.mean_auprc * 100.0
        );
    }
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    model.save(&args.out)?;
    println!("model saved to {}", args.out.display());
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs, threads: Option<usize>) -> Result<(), CliError> {
    let (embeddings, samples) = load_dataset(&args.data)?;
    let axis = parse_axis(&args.axis)?;
    if !(0.0 < args.recall_floor && args.recall_floor <= 1.0) {
        return Err(CliError::Usage(format!(
            "--recall-floor {} out of (0, 1]",
            args.recall_floor
        )));
    }
    let filter = match &args.filter {
        None => None,
        Some(spec) => {
            let (attr, value) = spec.split_once('=').ok_or_else(|| {
                CliError::Usage(format!("--filter `{spec}`: expected attribute=value"))
            })?;
            let f_axis = parse_axis(attr)?;
            if !f_axis.all_groups().contains(&value) {
                return Err(CliError::Usage(format!(
                    "--filter value `{value}` not valid for axis {f_axis}"
                )));
            }
            Some((f_axis, value.to_string()))
        }
    };
    let condition = samples
        .condition_names()
        .iter()
        .position(|n| n == &args.condition)
        .ok_or_else(|| CliError::Usage(format!("unknown condition `{}`", args.condition)))?;

    let model = match &args.model {
        Some(path) => MultiHeadModel::load(path)?,
        None => {
            let head = parse_head(&args.head)?;
            let params =
                HeadParams { gbt: args.gbt.to_params(args.seed), ..HeadParams::default() };
            train_pipeline(&embeddings, &samples, head, &params, args.variance_target, args.seed)?
        }
    };
    let head_index = model
        .condition_names
        .iter()
        .position(|n| n == &args.condition)
        .ok_or_else(|| {
            CliError::Data(format!("model has no head for condition `{}`", args.condition))
        })?;

    // Filtered, labeled test rows.
    let rows: Vec<usize> = samples
        .split_indices(Split::Test)
        .into_iter()
        .filter(|&i| samples.label(condition, i) != Label::Missing)
        .filter(|&i| match &filter {
            Some((f_axis, value)) => samples.group_name(*f_axis, i) == value.as_str(),
            None => true,
        })
        .collect();
    if rows.is_empty() {
        return Err(CliError::Data("no test rows left after filtering".into()));
    }
    let x = embeddings.data().select_rows(&rows);
    let scores = model.predict_proba_embeddings(&x)?[head_index].clone();
    let labels: Vec<u8> =
        rows.iter().map(|&i| samples.label(condition, i).as_binary().unwrap()).collect();

    let threshold = select_threshold_min_recall(&scores, &labels, args.recall_floor)?;
    let overall = confusion_rates(&scores, &labels, threshold)?;

    let mut per_group = Vec::new();
    for (g, group) in axis.metric_groups().iter().enumerate() {
        let idx: Vec<usize> = (0..rows.len())
            .filter(|&j| samples.metric_group_index(axis, rows[j]) == Some(g))
            .collect();
        let g_scores: Vec<f64> = idx.iter().map(|&j| scores[j]).collect();
        let g_labels: Vec<u8> = idx.iter().map(|&j| labels[j]).collect();
        match confusion_rates(&g_scores, &g_labels, threshold) {
            Ok(rates) => per_group.push(GroupRates {
                group: group.to_string(),
                fnr: rates.fnr,
                tpr: rates.tpr,
                fpr: rates.fpr,
            }),
            Err(_) => log::warn!("group `{group}` lacks both classes at evaluation, skipped"),
        }
    }
    if per_group.len() < 2 {
        return Err(CliError::Data(
            "fewer than 2 groups evaluable for the threshold analysis".into(),
        ));
    }
    let gap = |f: fn(&GroupRates) -> f64| {
        let values: Vec<f64> = per_group.iter().map(f).collect();
        values.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b))
            - values.iter().fold(f64::INFINITY, |a, &b| a.min(b))
    };
    let delta_fnr = gap(|g| g.fnr);
    let delta_tpr = gap(|g| g.tpr);
    let delta_fpr = gap(|g| g.fpr);
    let tprs: Vec<f64> = per_group.iter().map(|g| g.tpr).collect();
    let fprs: Vec<f64> = per_group.iter().map(|g| g.fpr).collect();
    let eo_max_gap = equalized_odds_gap(&tprs, &fprs)?;

    let section = ThresholdSection {
        condition: args.condition.clone(),
        axis,
        filter: filter.map(|(a, v)| (a.to_string(), v)),
        recall_floor: args.recall_floor,
        threshold,
        overall_recall: overall.tpr,
        per_group,
        delta_fnr,
        delta_tpr,
        delta_fpr,
        eo_max_gap,
    };

    let mut config = BTreeMap::new();
    config_entry(&mut config, "command", "evaluate");
    config_entry(&mut config, "condition", &args.condition);
    config_entry(&mut config, "axis", axis);
    config_entry(&mut config, "recall_floor", args.recall_floor);
    config_entry(&mut config, "filter", args.filter.as_deref().unwrap_or("-"));
    config_entry(&mut config, "seed", args.seed);

    let mut doc = ReportDocument::new(ReportMetadata::new(args.seed, threads, config));
    doc.threshold_analysis = Some(section.clone());
    emit_report(&doc, &args.out)?;

    println!(
        "threshold {:.6} achieves recall {:.3} (floor {})",
        section.threshold, section.overall_recall, section.recall_floor
    );
    for g in &section.per_group {
        println!("  {:<8} FNR {:.3}  TPR {:.3}  FPR {:.3}", g.group, g.fnr, g.tpr, g.fpr);
    }
    println!(
        "  gaps     dFNR {:.3}  dTPR {:.3}  dFPR {:.3}  EO max gap {:.3}",
        section.delta_fnr, section.delta_tpr, section.delta_fpr, section.eo_max_gap
    );
    Ok(())
}

fn parse_strategies(spec: &str) -> Result<std::collections::BTreeSet<Mitigation>, CliError> {
    let mut set = std::collections::BTreeSet::new();
    for token in spec.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        set.insert(token.parse::<Mitigation>().map_err(CliError::Usage)?);
    }
    Ok(set)
}

fn strategy_label(set: &std::collections::BTreeSet<Mitigation>) -> String {
    if set.is_empty() {
        "baseline".to_string()
    } else {
        set.iter().map(|m| m.name()).collect::<Vec<_>>().join("+")
    }
}

fn cmd_mitigate(args: MitigateArgs, threads: Option<usize>) -> Result<(), CliError> {
    let (embeddings, samples) = load_dataset(&args.data)?;
    let strategies = parse_strategies(&args.strategies)?;
    let base_cfg = ExperimentConfig {
        head: parse_head(&args.head)?,
        params: HeadParams { gbt: args.gbt.to_params(args.seed), ..HeadParams::default() },
        mitigations: strategies.clone(),
        n_repeats: args.repeats,
        base_seed: args.seed,
        variance_target: args.variance_target,
        reweight_axis: parse_axis(&args.reweight_axis)?,
        augment_axis: parse_axis(&args.augment_axis)?,
        augment_group: args.augment_group.clone(),
        augment_count: args.augment_count,
        active: ActiveLearningConfig {
            initial_pool: args.al_initial,
            batch_size: args.al_batch,
            rounds: args.al_rounds,
            strategy: args.al_strategy.parse().map_err(CliError::Usage)?,
        },
    };
    base_cfg.validate()?;

    let mut arms: Vec<std::collections::BTreeSet<Mitigation>> = Vec::new();
    if !args.no_baseline && !strategies.is_empty() {
        arms.push(std::collections::BTreeSet::new());
    }
    arms.push(strategies);

    let mut sections = Vec::new();
    for set in arms {
        let label = strategy_label(&set);
        let cfg = ExperimentConfig { mitigations: set, ..base_cfg.clone() };
        let result = run_experiment(&embeddings, &samples, &cfg)?;
        println!("[{label}]");
        for key in ["mean_auprc", "delta_sex", "delta_age", "delta_race", "composite"] {
            if let Some(agg) = result.aggregates.get(key) {
                println!(
                    "  {:<11} {:>6.1} pp  (std {:.2}, 95% CI [{:.1}, {:.1}], n={})",
                    key,
                    agg.mean * 100.0,
                    agg.std * 100.0,
                    agg.ci_low * 100.0,
                    agg.ci_high * 100.0,
                    agg.n_runs
                );
            }
        }
        sections.push(MitigationSection { strategy: label, aggregates: result.aggregates });
    }

    let mut config = BTreeMap::new();
    config_entry(&mut config, "command", "mitigate");
    config_entry(&mut config, "head", &args.head);
    config_entry(&mut config, "strategies", &args.strategies);
    config_entry(&mut config, "repeats", args.repeats);
    config_entry(&mut config, "seed", args.seed);
    config_entry(&mut config, "variance_target", args.variance_target);
    config_entry(&mut config, "reweight_axis", &args.reweight_axis);
    config_entry(&mut config, "augment_axis", &args.augment_axis);
    config_entry(
        &mut config,
        "augment_group",
        args.augment_group.as_deref().unwrap_or("auto"),
    );
    config_entry(
        &mut config,
        "al_schedule",
        format!("{}+{}x{}", args.al_initial, args.al_batch, args.al_rounds),
    );
    config_entry(&mut config, "gbt.learning_rate", args.gbt.learning_rate);
    config_entry(&mut config, "gbt.n_estimators", args.gbt.n_estimators);
    config_entry(&mut config, "gbt.max_depth", args.gbt.max_depth);

    let mut doc = ReportDocument::new(ReportMetadata::new(args.seed, threads, config));
    doc.mitigation = Some(sections);
    emit_report(&doc, &args.out)?;
    println!("mitigation report written to {}", args.out.display());
    Ok(())
}

fn cmd_active_learn(args: ActiveLearnArgs, threads: Option<usize>) -> Result<(), CliError> {
    let (embeddings, samples) = load_dataset(&args.data)?;
    let head = parse_head(&args.head)?;
    let params = HeadParams { gbt: args.gbt.to_params(args.seed), ..HeadParams::default() };
    let cfg = ActiveLearningConfig {
        initial_pool: args.initial_pool,
        batch_size: args.batch_size,
        rounds: args.rounds,
        strategy: args.strategy.parse().map_err(CliError::Usage)?,
    };

    let train = samples.split_indices(Split::Train);
    let val = samples.split_indices(Split::Val);
    let pool_x = embeddings.data().select_rows(&train);
    let pool_labels = labels_of(&samples, &train);
    let weights = vec![1.0; train.len()];
    let names = samples.condition_names().to_vec();

    let val_x = embeddings.data().select_rows(&val);
    let val_labels = labels_of(&samples, &val);
    let val_groups: Vec<(Axis, Vec<Option<usize>>)> = Axis::ALL
        .iter()
        .map(|&axis| {
            (axis, val.iter().map(|&i| samples.metric_group_index(axis, i)).collect())
        })
        .collect();
    let eval = if val.is_empty() {
        None
    } else {
        Some(EvalData { x: &val_x, labels: &val_labels, groups: &val_groups })
    };

    let (model, history) = active_learning_loop(
        &pool_x,
        &pool_labels,
        &names,
        &weights,
        &cfg,
        head,
        &params,
        eval.as_ref(),
        Some(args.variance_target),
        args.seed,
    )?;

    println!("round  labeled  composite");
    for (round, entry) in history.iter().enumerate() {
        match entry.composite {
            Some(c) => println!("{round:>5}  {:>7}  {c:.4}", entry.labeled),
            None => println!("{round:>5}  {:>7}        -", entry.labeled),
        }
    }
    let report = bias_report(&model, &embeddings, &samples)?;
    println!(
        "final test composite {:.4} (race delta {:.1} pp)",
        report.composite,
        report.mean_delta_race * 100.0
    );

    let mut config = BTreeMap::new();
    config_entry(&mut config, "command", "active-learn");
    config_entry(&mut config, "head", &args.head);
    config_entry(&mut config, "initial_pool", args.initial_pool);
    config_entry(&mut config, "batch_size", args.batch_size);
    config_entry(&mut config, "rounds", args.rounds);
    config_entry(&mut config, "strategy", &args.strategy);
    config_entry(&mut config, "seed", args.seed);

    let mut doc = ReportDocument::new(ReportMetadata::new(args.seed, threads, config));
    doc.active_learning = Some(history);
    doc.fairness = Some(report);
    emit_report(&doc, &args.out)?;
    println!("active-learning report written to {}", args.out.display());
    Ok(())
}

/// One grid candidate per line: `learning_rate=0.05,n_estimators=150,...`;
/// unset keys keep the defaults.
fn parse_grid(text: &str) -> Result<Vec<GbtParams>, CliError> {
    let mut grid = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut params = GbtParams::default();
        for token in line.split(',') {
            let (key, value) = token.trim().split_once('=').ok_or_else(|| {
                CliError::Usage(format!("grid line {}: expected key=value", lineno + 1))
            })?;
            let bad = |k: &str| {
                CliError::Usage(format!("grid line {}: bad value for {k}", lineno + 1))
            };
            match key {
                "learning_rate" => {
                    params.learning_rate = value.parse().map_err(|_| bad(key))?
                }
                "n_estimators" => params.n_estimators = value.parse().map_err(|_| bad(key))?,
                "max_depth" => params.max_depth = value.parse().map_err(|_| bad(key))?,
                "lambda_l2" => params.lambda_l2 = value.parse().map_err(|_| bad(key))?,
                "gamma" => params.gamma = value.parse().map_err(|_| bad(key))?,
                "min_child_hessian" => {
                    params.min_child_hessian = value.parse().map_err(|_| bad(key))?
                }
                other => {
                    return Err(CliError::Usage(format!(
                        "grid line {}: unknown key `{other}`",
                        lineno + 1
                    )))
                }
            }
        }
        grid.push(params);
    }
    if grid.is_empty() {
        return Err(CliError::Usage("grid file holds no candidates".into()));
    }
    Ok(grid)
}

fn cmd_tune(args: TuneArgs, threads: Option<usize>) -> Result<(), CliError> {
    let (embeddings, samples) = load_dataset(&args.data)?;
    let grid = parse_grid(&std::fs::read_to_string(&args.grid)?)?;
    let (best, params, scores) =
        tune_hyperparams(&embeddings, &samples, &grid, args.variance_target, args.seed)?;

    std::fs::create_dir_all(&args.out)?;
    let mut out = String::from(
        "candidate,learning_rate,n_estimators,max_depth,lambda_l2,gamma,min_child_hessian,val_composite,best\n",
    );
    for (i, candidate) in grid.iter().enumerate() {
        let score =
            scores[i].map_or_else(|| "failed".to_string(), |s| format!("{s:.6}"));
        out.push_str(&format!(
            "{i},{},{},{},{},{},{},{score},{}\n",
            candidate.learning_rate,
            candidate.n_estimators,
            candidate.max_depth,
            candidate.lambda_l2,
            candidate.gamma,
            candidate.min_child_hessian,
            if i == best { "*" } else { "" }
        ));
        println!(
            "candidate {i}: lr={} trees={} depth={} -> {score}{}",
            candidate.learning_rate,
            candidate.n_estimators,
            candidate.max_depth,
            if i == best { "  (best)" } else { "" }
        );
    }
    std::fs::write(args.out.join("tuning.csv"), out)?;
    let _ = threads;
    println!(
        "best: learning_rate={} n_estimators={} max_depth={}",
        params.learning_rate, params.n_estimators, params.max_depth
    );
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.input)?;
    let doc = ReportDocument::from_json(&text)?;
    let written = emit_report(&doc, &args.out)?;
    println!("re-emitted {} files to {}", written.len(), args.out.display());
    Ok(())
}

/// Convenience used by tests and docs.
pub fn run(args: &[&str]) -> u8 {
    cli_main(args.iter().map(|s| s.to_string()))
}
