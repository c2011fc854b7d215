use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cogvox::config::{RunConfig, TaskSelection};
use cogvox::ensemble::{fit_ensemble, FeatureSource, ModelSpec, TrainSplit, VotingEnsemble, SUBMISSION_NAMES};
use cogvox::eval::{cross_validate, make_folds, Metrics};
use cogvox::features::{feature_column_names, FeatureTable};
use cogvox::learners::TaskKind;
use cogvox::manifest::{check_files, read_manifest, validate_cohort, CohortManifest, ValidationMode};
use cogvox::pipeline::{
    embedding_table, evaluate_predictions, feature_matrix, feature_table, labelled_dataset, linguistic_table,
    read_predictions, run_pipeline, tune_members, write_predictions,
};
use cogvox::synth::{gen_cohort, gen_regression_signal, CohortSpec, RegressionSignal};
use cogvox::transcript::Task;
use cogvox::{Error, Result};

#[derive(Parser)]
#[command(name = "cogvox", version, about = "Linguistic and embedding markers, voted ensembles and challenge metrics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by the data-handling subcommands. Any flag given here wins
/// over the same key in `--config`.
#[derive(Args, Clone, Default)]
struct Common {
    /// Run configuration file (TOML). A submission name (cls1..reg3) is also
    /// accepted here as a shorthand for --model-config.
    #[arg(long)]
    config: Option<String>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for parsing, grid cells and forest fitting.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args, Clone, Default)]
struct ModelFlags {
    /// Submission name (cls1, cls2, cls3, reg1, reg2, reg3) or a TOML file
    /// holding a model spec.
    #[arg(long)]
    model_config: Option<String>,
    #[arg(long, value_parser = parse_features)]
    features: Option<FeatureSource>,
    /// Development manifest, merged into training for train+dev configs.
    #[arg(long)]
    dev: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Classification,
    Regression,
}

#[derive(Subcommand)]
enum Command {
    /// Check a manifest and the files it references.
    Validate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "classification")]
        mode: Mode,
    },
    /// Write the per-participant feature table.
    Features {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_parser = parse_task)]
        task: Option<TaskSelection>,
        #[arg(long, value_parser = parse_features)]
        features: Option<FeatureSource>,
    },
    /// Fit a model on the manifest and save it.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelFlags,
        /// Output model file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cross-validate, tuning each member over its grid first.
    Cv {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelFlags,
        #[arg(long)]
        k: Option<usize>,
        /// Skip grid search and cross-validate the configured hyperparameters.
        #[arg(long)]
        no_grid: bool,
        /// Also write the results as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict with a saved model.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        /// Predictions file; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a predictions file against the manifest's labels.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic cohort.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Cohort spec (TOML); defaults apply to missing keys.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        separation: Option<f64>,
        /// Regression signal (TOML: intercept, coefficients, noise_sigma).
        #[arg(long)]
        signal: Option<PathBuf>,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Print configuration.
    Config {
        /// Print the reference configuration with every default spelled out.
        #[arg(long)]
        dump: bool,
        #[arg(long)]
        config: Option<String>,
    },
    /// Full pipeline: cross-validation, final fit, predictions and report.
    Run {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelFlags,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_task(s: &str) -> std::result::Result<TaskSelection, String> {
    s.parse()
}

fn parse_features(s: &str) -> std::result::Result<FeatureSource, String> {
    s.parse()
}

fn emit(level: &str, code: &str, message: &str) {
    let line = serde_json::json!({ "level": level, "code": code, "message": message });
    eprintln!("{line}");
}

fn warn_all(warnings: &[String]) {
    warnings.iter().for_each(|w| emit("warning", "data", w));
}

/// Loads `--config` and applies flags on top.
fn resolve(common: &Common, model: Option<&ModelFlags>) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut shorthand = None;
    if let Some(c) = &common.config {
        if SUBMISSION_NAMES.contains(&c.as_str()) && !Path::new(c).exists() {
            shorthand = Some(c.clone());
        } else {
            cfg = RunConfig::load(Path::new(c))?;
        }
    }
    if let Some(n) = shorthand {
        cfg.submission = n;
    }
    if let Some(m) = &common.manifest {
        cfg.manifest = Some(m.clone());
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(j) = common.jobs {
        cfg.jobs = Some(j);
    }
    if let Some(mf) = model {
        if let Some(mc) = &mf.model_config {
            if SUBMISSION_NAMES.contains(&mc.as_str()) && !Path::new(mc).exists() {
                cfg.submission = mc.clone();
                cfg.model = None;
            } else {
                let text = fs::read_to_string(mc).map_err(|e| Error::io(Path::new(mc), e))?;
                let spec: ModelSpec = toml::from_str(&text)
                    .map_err(|e| cogvox::config::ConfigError::Parse { path: mc.clone(), message: e.to_string() })?;
                cfg.model = Some(spec);
            }
        }
        if let Some(f) = mf.features {
            cfg.features = Some(f);
        }
        if let Some(d) = &mf.dev {
            cfg.dev_manifest = Some(d.clone());
        }
    }
    Ok(cfg)
}

fn init_jobs(jobs: Option<usize>) -> Result<()> {
    if let Some(j) = jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| Error::Validation(format!("cannot size worker pool: {e}")))?;
    }
    Ok(())
}

fn finish(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    init_jobs(cfg.jobs)
}

fn manifest_of(cfg: &RunConfig) -> Result<CohortManifest> {
    let path = cfg.manifest.as_ref().ok_or_else(|| Error::Validation("--manifest is required".into()))?;
    read_manifest(path)
}

fn write_out(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            fs::write(p, bytes).map_err(|e| Error::io(p, e))
        }
        None => std::io::stdout().write_all(bytes).map_err(|e| Error::io(Path::new("<stdout>"), e)),
    }
}

/// Training manifest for a run: the main manifest plus the dev manifest when
/// the split calls for it.
fn training_manifest(cfg: &RunConfig, split: TrainSplit) -> Result<CohortManifest> {
    let train = manifest_of(cfg)?;
    match (split, &cfg.dev_manifest) {
        (TrainSplit::TrainDev, Some(d)) => Ok(train.merge(&read_manifest(d)?)?),
        _ => Ok(train),
    }
}

fn cmd_validate(common: Common, mode: Mode) -> Result<bool> {
    let cfg = resolve(&common, None)?;
    finish(&cfg)?;
    let m = manifest_of(&cfg)?;
    let mode = match mode {
        Mode::Classification => ValidationMode::Classification,
        Mode::Regression => ValidationMode::Regression,
    };
    let mut report = validate_cohort(&m, mode);
    report.findings.extend(check_files(&m, &cfg.rules.fillers));
    for f in &report.findings {
        println!("{f}");
    }
    let blocking = report.findings.iter().filter(|f| f.blocking).count();
    println!(
        "participants: {}, retained: {}, findings: {}, blocking: {}",
        report.participants,
        report.retained,
        report.findings.len(),
        blocking
    );
    Ok(blocking == 0)
}

fn cmd_features(
    common: Common,
    out: Option<PathBuf>,
    task: Option<TaskSelection>,
    features: Option<FeatureSource>,
) -> Result<()> {
    let mut cfg = resolve(&common, None)?;
    if let Some(t) = task {
        cfg.task = t;
    }
    if features.is_some() {
        cfg.features = features;
    }
    finish(&cfg)?;
    let m = manifest_of(&cfg)?;
    let opts = cfg.pipeline_options();
    let (table, warnings) = match cfg.features.unwrap_or(FeatureSource::Linguistic42) {
        FeatureSource::Linguistic42 => linguistic_table(&m, &cfg.task.tasks(), &opts)?,
        FeatureSource::EmbeddingCtd => embedding_table(&m, &opts),
    };
    warn_all(&warnings);
    let mut buf = Vec::new();
    table.write(&mut buf)?;
    write_out(out.as_deref(), &buf)?;
    eprintln!("wrote {} rows x {} columns", table.rows.len(), table.columns.len());
    Ok(())
}

fn cmd_train(common: Common, model: ModelFlags, out: Option<PathBuf>) -> Result<()> {
    let cfg = resolve(&common, Some(&model))?;
    finish(&cfg)?;
    let sub = cfg.submission_config()?;
    let opts = cfg.pipeline_options();
    let m = training_manifest(&cfg, sub.train_split)?;
    let (table, warnings) = feature_table(sub.features, &m, &opts)?;
    warn_all(&warnings);
    let d = labelled_dataset(&table, &m, sub.task())?;
    let spec = if sub.grid_search { tune_members(&sub.model, &d, &opts)?.0 } else { sub.model.clone() };
    let ens = fit_ensemble(&spec, &d, opts.seed)?;
    let path = out.unwrap_or_else(|| cfg.out.join("model.cvxe"));
    write_out(Some(&path), &ens.to_bytes())?;
    println!("trained {} ({} members) on {} participants: {}", sub.name, spec.members.len(), d.len(), path.display());
    Ok(())
}

fn cmd_cv(common: Common, model: ModelFlags, k: Option<usize>, no_grid: bool, out: Option<PathBuf>) -> Result<()> {
    let mut cfg = resolve(&common, Some(&model))?;
    if let Some(k) = k {
        cfg.k = k;
    }
    finish(&cfg)?;
    let sub = cfg.submission_config()?;
    let opts = cfg.pipeline_options();
    let m = training_manifest(&cfg, sub.train_split)?;
    let (table, warnings) = feature_table(sub.features, &m, &opts)?;
    warn_all(&warnings);
    let d = labelled_dataset(&table, &m, sub.task())?;
    let objective = match sub.task() {
        TaskKind::Classification => "macro_f1",
        TaskKind::Regression => "rmse",
    };

    let (spec, tables) = if no_grid { (sub.model.clone(), Vec::new()) } else { tune_members(&sub.model, &d, &opts)? };
    for (member, t) in spec.members.iter().zip(&tables) {
        println!("grid {} ({objective}, {} points)", member.kind(), t.rows.len());
        for (i, row) in t.rows.iter().enumerate() {
            let point: Vec<String> = row.point.iter().map(|(k, v)| format!("{k}={v}")).collect();
            let score = match (row.mean, &row.error) {
                (Some(s), _) => format!("{s:.6}"),
                (None, Some(e)) => format!("failed: {e}"),
                (None, None) => "-".into(),
            };
            let mark = if i == t.best_index { " *" } else { "" };
            println!("  {}  {score}{mark}", point.join(" "));
        }
    }

    let plan = make_folds(&d.targets, opts.k, opts.seed, true)?;
    warn_all(&plan.warnings);
    let cv = cross_validate(&d, &spec, &plan, opts.seed)?;
    println!("cv {} on {} participants, k = {}", sub.name, d.len(), opts.k);
    for f in &cv.folds {
        println!("  fold {}: {objective} {:.6} (n = {})", f.fold + 1, f.metrics.score(), f.n_test);
    }
    println!("  mean: {objective} {:.6}", cv.mean_score);
    if let Some(path) = out {
        let json = serde_json::json!({
            "config": sub.name,
            "objective": objective,
            "members": spec.members,
            "grids": tables.iter().map(|t| &t.rows).collect::<Vec<_>>(),
            "folds": cv.folds,
            "mean": cv.mean_score,
        });
        let mut text = serde_json::to_string_pretty(&json).expect("serializes");
        text.push('\n');
        write_out(Some(&path), text.as_bytes())?;
    }
    Ok(())
}

/// Rebuilds the feature table a saved model expects from its column names.
fn table_for_model(ens: &VotingEnsemble, m: &CohortManifest, cfg: &RunConfig) -> Result<(FeatureTable, Vec<String>)> {
    let cols = ens.columns();
    let opts = cfg.pipeline_options();
    if cols.first().is_some_and(|c| c.starts_with("CTD__emb_")) {
        let opts = cogvox::pipeline::PipelineOptions { embedding_dim: cols.len(), ..opts };
        return Ok(embedding_table(m, &opts));
    }
    let tasks: Vec<Task> =
        Task::ALL.into_iter().filter(|t| cols.iter().any(|c| c.starts_with(&format!("{t}__")))).collect();
    if feature_column_names(&tasks) != cols {
        return Err(Error::Validation("model columns match neither a linguistic nor an embedding layout".into()));
    }
    linguistic_table(m, &tasks, &opts)
}

fn cmd_predict(common: Common, model: PathBuf, out: Option<PathBuf>) -> Result<()> {
    let cfg = resolve(&common, None)?;
    finish(&cfg)?;
    let bytes = fs::read(&model).map_err(|e| Error::io(&model, e))?;
    let ens = VotingEnsemble::from_bytes(&bytes)?;
    let m = manifest_of(&cfg)?;
    let (table, warnings) = table_for_model(&ens, &m, &cfg)?;
    warn_all(&warnings);
    let x = feature_matrix(&table)?;
    let pred = ens.predict(&x)?;
    let mut buf = Vec::new();
    write_predictions(&x.ids, &pred, &mut buf)?;
    write_out(out.as_deref(), &buf)
}

fn cmd_evaluate(common: Common, predictions: PathBuf, out: Option<PathBuf>) -> Result<()> {
    let cfg = resolve(&common, None)?;
    finish(&cfg)?;
    let m = manifest_of(&cfg)?;
    let f = fs::File::open(&predictions).map_err(|e| Error::io(&predictions, e))?;
    let preds = read_predictions(f)?;
    let metrics = evaluate_predictions(&preds, &m)?;
    match &metrics {
        Metrics::Classification(c) => {
            println!("macro_precision {:.6}", c.macro_precision);
            println!("macro_recall {:.6}", c.macro_recall);
            println!("macro_f1 {:.6}", c.macro_f1);
            println!("macro_f1_per_class_avg {:.6}", c.macro_f1_per_class_avg);
            println!("confusion (rows true HC/MCI/AD, columns predicted)");
            for row in c.confusion {
                println!("  {} {} {}", row[0], row[1], row[2]);
            }
        }
        Metrics::Regression { rmse } => println!("rmse {rmse:.6}"),
    }
    if let Some(p) = out {
        let mut text = serde_json::to_string_pretty(&metrics).expect("serializes");
        text.push('\n');
        write_out(Some(&p), text.as_bytes())?;
    }
    Ok(())
}

fn cmd_synth(
    out: PathBuf,
    spec: Option<PathBuf>,
    seed: Option<u64>,
    separation: Option<f64>,
    signal: Option<PathBuf>,
    jobs: Option<usize>,
) -> Result<()> {
    init_jobs(jobs)?;
    let parse = |p: &Path| -> Result<String> { fs::read_to_string(p).map_err(|e| Error::io(p, e)) };
    let config_err = |p: &Path, e: toml::de::Error| cogvox::config::ConfigError::Parse {
        path: p.display().to_string(),
        message: e.to_string(),
    };
    let mut cs = match &spec {
        Some(p) => toml::from_str::<CohortSpec>(&parse(p)?).map_err(|e| config_err(p, e))?,
        None => CohortSpec::default(),
    };
    if let Some(s) = seed {
        cs.seed = s;
    }
    if let Some(s) = separation {
        cs.separation = s;
    }
    let cohort = match &signal {
        Some(p) => {
            let sig: RegressionSignal = toml::from_str(&parse(p)?).map_err(|e| config_err(p, e))?;
            gen_regression_signal(&cs, &sig, &out)?.0
        }
        None => gen_cohort(&cs, &out)?,
    };
    let n = cohort.all.participants();
    let with_mmse = n.iter().filter(|p| cohort.all.mmse(p).is_some()).count();
    println!(
        "wrote {} participants ({} train, {} dev), {} transcripts, {} with mmse to {}",
        n.len(),
        cohort.train.participants().len(),
        cohort.dev.participants().len(),
        cohort.all.rows.len(),
        with_mmse,
        out.display()
    );
    Ok(())
}

fn cmd_config(dump: bool, config: Option<String>) -> Result<()> {
    let cfg = match (&config, dump) {
        (Some(c), _) => RunConfig::load(Path::new(c))?,
        (None, true) => RunConfig::reference(),
        (None, false) => RunConfig::default(),
    };
    cfg.validate()?;
    print!("{}", cfg.dump());
    Ok(())
}

fn cmd_run(
    common: Common,
    model: ModelFlags,
    test: Option<PathBuf>,
    k: Option<usize>,
    out: Option<PathBuf>,
) -> Result<()> {
    let mut cfg = resolve(&common, Some(&model))?;
    if let Some(k) = k {
        cfg.k = k;
    }
    if let Some(t) = test {
        cfg.test_manifest = Some(t);
    }
    if let Some(o) = out {
        cfg.out = o;
    }
    finish(&cfg)?;
    let sub = cfg.submission_config()?;
    let train = manifest_of(&cfg)?;
    let dev = cfg.dev_manifest.as_deref().map(read_manifest).transpose()?;
    let test = cfg.test_manifest.as_deref().map(read_manifest).transpose()?;
    let res = run_pipeline(&sub, &cfg.pipeline_options(), &train, dev.as_ref(), test.as_ref(), &cfg.out)?;
    warn_all(&res.report.warnings);
    let r = &res.report;
    println!("{} on {} participants: cv mean {:.6}", r.config, r.n_train, r.cv_mean);
    if let Some(e) = &r.eval {
        println!("evaluation on {} participants: {}", r.n_eval, serde_json::to_string(e).expect("serializes"));
    }
    println!("outputs in {}", cfg.out.display());
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Validation(_) | Error::Config(_) | Error::Manifest(_) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate { common, mode } => cmd_validate(common, mode).and_then(|ok| {
            if ok {
                Ok(())
            } else {
                Err(Error::Validation("blocking findings".into()))
            }
        }),
        Command::Features { common, out, task, features } => cmd_features(common, out, task, features),
        Command::Train { common, model, out } => cmd_train(common, model, out),
        Command::Cv { common, model, k, no_grid, out } => cmd_cv(common, model, k, no_grid, out),
        Command::Predict { common, model, out } => cmd_predict(common, model, out),
        Command::Evaluate { common, predictions, out } => cmd_evaluate(common, predictions, out),
        Command::Synth { out, spec, seed, separation, signal, jobs } => {
            cmd_synth(out, spec, seed, separation, signal, jobs)
        }
        Command::Config { dump, config } => cmd_config(dump, config),
        Command::Run { common, model, test, k, out } => cmd_run(common, model, test, k, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            emit("error", e.code(), &e.to_string());
            ExitCode::from(exit_code(&e))
        }
    }
}
