//! Command-line pipeline: synth | ingest | stats | label | train | eval |
//! target | report.
//!
//! Every subcommand writes its artifacts plus a `run_manifest.json` (config
//! echo, seed, sha256 per artifact — no timestamps) into `--out`. Exit codes:
//! 0 success, 1 user error, 2 internal error.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::Digest;

use crate::attribution::{build_labels, AttributionModel, NUM_CLASSES};
use crate::features::{
    apply_normalizer, category_histograms, compute_rpt_stats, encode_journey, fit_normalizer,
    pearson_correlation_matrix, EncodedJourney, NormMethod,
};
use crate::ingest::{
    join_journeys, parse_ga_report_json, parse_table, DropReport, Journey, ParsedTable, TableKind,
    SESSIONS_HEADER,
};
use crate::model::{load_params, save_params, ModelConfig, ModelParams};
use crate::synthgen::{generate, SynthConfig};
use crate::targeting::{
    default_cost_grid, profit_curve, render_plots, score_users, simulate_targeting, MethodKind,
    ProfitCurve, ScoringMethod, TargetingOutcome, DEFAULT_NOISE_HALFWIDTH,
};
use crate::training::{evaluate, split_by_user, train, EvalReport, TrainConfig};

/// Error carrying the process exit code (1 user, 2 internal).
#[derive(Debug)]
struct CliError {
    code: i32,
    message: String,
}

impl CliError {
    fn user(message: impl Into<String>) -> Self {
        CliError { code: 1, message: message.into() }
    }
    fn internal(message: impl Into<String>) -> Self {
        CliError { code: 2, message: message.into() }
    }
}

type CliResult<T> = Result<T, CliError>;

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::internal(format!("io error: {e}"))
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "funnelcast",
    about = "Journey ingestion, attribution labeling, double-LSTM training, and targeting simulation",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus (users/sessions/hits/truth CSVs)
    Synth(CommonOpts),
    /// Parse and join a corpus; report journey counts and drop statistics
    Ingest(CommonOpts),
    /// Revenue-per-transaction stats, category histograms, correlations
    Stats(CommonOpts),
    /// Emit per-session attribution label rows
    Label(CommonOpts),
    /// Train the double-LSTM model and save parameters
    Train(CommonOpts),
    /// Evaluate saved model(s); prints one row per attribution/normalization
    Eval(CommonOpts),
    /// Monte-Carlo targeting simulation with profit curves
    Target(CommonOpts),
    /// Combined evaluation + targeting summary report
    Report(CommonOpts),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Ingest(_) => "ingest",
            Command::Stats(_) => "stats",
            Command::Label(_) => "label",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Target(_) => "target",
            Command::Report(_) => "report",
        }
    }
    fn opts(&self) -> &CommonOpts {
        match self {
            Command::Synth(o)
            | Command::Ingest(o)
            | Command::Stats(o)
            | Command::Label(o)
            | Command::Train(o)
            | Command::Eval(o)
            | Command::Target(o)
            | Command::Report(o) => o,
        }
    }
}

#[derive(Args, Debug, Default, Clone)]
struct CommonOpts {
    /// Corpus directory (users/sessions/hits tables)
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory for artifacts and the run manifest
    #[arg(long)]
    out: Option<PathBuf>,
    /// Model directory (a training output, or a directory of them)
    #[arg(long)]
    model: Option<PathBuf>,
    /// Master seed for every stochastic stage
    #[arg(long)]
    seed: Option<u64>,
    /// Attribution model: linear | timedecay
    #[arg(long)]
    attribution: Option<String>,
    /// Normalization: minmax | standard
    #[arg(long)]
    norm: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Learning rate
    #[arg(long)]
    lr: Option<f64>,
    /// Mini-batch size (journeys)
    #[arg(long)]
    batch: Option<usize>,
    /// Monte-Carlo trials for targeting
    #[arg(long)]
    trials: Option<usize>,
    /// Worker cap; outputs are deterministic regardless of its value
    #[arg(long)]
    threads: Option<usize>,
    /// JSON config file; keys mirror flags, flags override file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Users to generate (synth)
    #[arg(long)]
    users: Option<usize>,
    /// Validation fraction for the user-level split
    #[arg(long)]
    val_fraction: Option<f64>,
    /// Targeting method: random | statistical | model_linear | model_timedecay | all
    #[arg(long)]
    method: Option<String>,
}

/// Config-file shape; keys mirror the flags.
#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    data: Option<PathBuf>,
    out: Option<PathBuf>,
    model: Option<PathBuf>,
    seed: Option<u64>,
    attribution: Option<String>,
    norm: Option<String>,
    epochs: Option<usize>,
    lr: Option<f64>,
    batch: Option<usize>,
    trials: Option<usize>,
    threads: Option<usize>,
    users: Option<usize>,
    val_fraction: Option<f64>,
    method: Option<String>,
}

/// Fully resolved options: flag > config file > default.
#[derive(Debug, Clone, Serialize)]
struct Resolved {
    data: Option<PathBuf>,
    out: PathBuf,
    model: Option<PathBuf>,
    seed: u64,
    attribution: String,
    norm: String,
    epochs: usize,
    lr: f64,
    batch: usize,
    trials: usize,
    threads: usize,
    users: usize,
    val_fraction: f64,
    method: String,
}

impl Resolved {
    fn attribution(&self) -> CliResult<AttributionModel> {
        parse_attribution(&self.attribution)
    }
    fn norm(&self) -> CliResult<NormMethod> {
        match self.norm.as_str() {
            "minmax" => Ok(NormMethod::MinMax),
            "standard" => Ok(NormMethod::Standardize),
            other => Err(CliError::user(format!("unknown --norm '{other}' (minmax|standard)"))),
        }
    }
    fn data(&self) -> CliResult<&Path> {
        self.data.as_deref().ok_or_else(|| CliError::user("--data is required for this command"))
    }
    fn model_dir(&self) -> CliResult<&Path> {
        self.model.as_deref().ok_or_else(|| CliError::user("--model is required for this command"))
    }
}

fn parse_attribution(s: &str) -> CliResult<AttributionModel> {
    match s {
        "linear" => Ok(AttributionModel::Linear),
        "timedecay" => Ok(AttributionModel::TimeDecay),
        other => Err(CliError::user(format!("unknown attribution '{other}' (linear|timedecay)"))),
    }
}

fn resolve(opts: &CommonOpts) -> CliResult<Resolved> {
    let file: FileConfig = match &opts.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::user(format!("cannot read --config {}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::user(format!("bad config file {}: {e}", path.display())))?
        }
        None => FileConfig::default(),
    };
    let defaults = TrainConfig::default();
    let resolved = Resolved {
        data: opts.data.clone().or(file.data),
        out: opts
            .out
            .clone()
            .or(file.out)
            .ok_or_else(|| CliError::user("--out is required"))?,
        model: opts.model.clone().or(file.model),
        seed: opts.seed.or(file.seed).unwrap_or(0),
        attribution: opts
            .attribution
            .clone()
            .or(file.attribution)
            .unwrap_or_else(|| defaults.attribution.as_str().to_string()),
        norm: opts
            .norm
            .clone()
            .or(file.norm)
            .unwrap_or_else(|| defaults.normalization.as_str().to_string()),
        epochs: opts.epochs.or(file.epochs).unwrap_or(defaults.epochs),
        lr: opts.lr.or(file.lr).unwrap_or(defaults.learning_rate),
        batch: opts.batch.or(file.batch).unwrap_or(defaults.batch_size),
        trials: opts.trials.or(file.trials).unwrap_or(200),
        threads: opts.threads.or(file.threads).unwrap_or(1),
        users: opts.users.or(file.users).unwrap_or(100),
        val_fraction: opts.val_fraction.or(file.val_fraction).unwrap_or(0.2),
        method: opts.method.clone().or(file.method).unwrap_or_else(|| "all".into()),
    };
    resolved.attribution()?;
    resolved.norm()?;
    if resolved.threads == 0 {
        return Err(CliError::user("--threads must be >= 1"));
    }
    Ok(resolved)
}

/// Entry point usable from tests; returns the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // --help / --version are successes, everything else is a user error
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let cfg = match resolve(cli.command.opts()) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {}", e.message);
            return e.code;
        }
    };
    let outcome = match &cli.command {
        Command::Synth(_) => cmd_synth(&cfg),
        Command::Ingest(_) => cmd_ingest(&cfg),
        Command::Stats(_) => cmd_stats(&cfg),
        Command::Label(_) => cmd_label(&cfg),
        Command::Train(_) => cmd_train(&cfg),
        Command::Eval(_) => cmd_eval(&cfg),
        Command::Target(_) => cmd_target(&cfg),
        Command::Report(_) => cmd_report(&cfg),
    };
    match outcome.and_then(|artifacts| write_manifest(&cfg, cli.command.name(), &artifacts)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

/// Write a file into the out dir and record it as an artifact.
fn emit(cfg: &Resolved, artifacts: &mut Vec<String>, name: &str, content: &str) -> CliResult<()> {
    std::fs::create_dir_all(&cfg.out)?;
    std::fs::write(cfg.out.join(name), content)?;
    artifacts.push(name.to_string());
    Ok(())
}

fn write_manifest(cfg: &Resolved, command: &str, artifacts: &[String]) -> CliResult<()> {
    let mut checksums = BTreeMap::new();
    for name in artifacts {
        let bytes = std::fs::read(cfg.out.join(name))?;
        checksums.insert(name.clone(), hex::encode(sha2::Sha256::digest(&bytes)));
    }
    #[derive(Serialize)]
    struct RunManifest<'a> {
        command: &'a str,
        seed: u64,
        config: &'a Resolved,
        artifacts: BTreeMap<String, String>,
    }
    let manifest = RunManifest { command, seed: cfg.seed, config: cfg, artifacts: checksums };
    std::fs::create_dir_all(&cfg.out)?;
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CliError::internal(format!("manifest serialization: {e}")))?;
    std::fs::write(cfg.out.join("run_manifest.json"), json + "\n")?;
    Ok(())
}

// ---------------------------------------------------------------------------
// corpus loading
// ---------------------------------------------------------------------------

fn load_table(data: &Path, kind: TableKind, base: &str) -> CliResult<ParsedTable> {
    let csv_path = data.join(format!("{base}.csv"));
    if csv_path.exists() {
        let file = File::open(&csv_path)
            .map_err(|e| CliError::user(format!("cannot open {}: {e}", csv_path.display())))?;
        return parse_table(kind, file)
            .map_err(|e| CliError::user(format!("{}: {e}", csv_path.display())));
    }
    let json_path = data.join(format!("{base}.json"));
    if json_path.exists() {
        let file = File::open(&json_path)
            .map_err(|e| CliError::user(format!("cannot open {}: {e}", json_path.display())))?;
        return parse_ga_report_json(file, kind)
            .map(|(table, _unknown)| table)
            .map_err(|e| CliError::user(format!("{}: {e}", json_path.display())));
    }
    Err(CliError::user(format!(
        "missing {base}.csv / {base}.json in {}",
        data.display()
    )))
}

fn load_corpus(data: &Path) -> CliResult<(Vec<Journey>, DropReport)> {
    let users = match load_table(data, TableKind::Users, "users")? {
        ParsedTable::Users(v) => v,
        _ => unreachable!(),
    };
    let sessions = match load_table(data, TableKind::Sessions, "sessions")? {
        ParsedTable::Sessions(v) => v,
        _ => unreachable!(),
    };
    let hits = match load_table(data, TableKind::Hits, "hits")? {
        ParsedTable::Hits(v) => v,
        _ => unreachable!(),
    };
    Ok(join_journeys(&users, &sessions, &hits))
}

/// The split + feature pipeline shared by train/eval/target: stats and the
/// normalizer are fit on the training side only.
struct Pipeline {
    train_set: Vec<EncodedJourney<f64>>,
    val_set: Vec<EncodedJourney<f64>>,
    /// Raw validation journeys, index-aligned with `val_set`.
    val_raw: Vec<Journey>,
}

fn build_pipeline(
    journeys: Vec<Journey>,
    norm: NormMethod,
    val_fraction: f64,
    seed: u64,
) -> CliResult<Pipeline> {
    let (train_raw, val_raw) = split_by_user(journeys, val_fraction, seed)
        .map_err(|e| CliError::user(e.to_string()))?;
    let stats = compute_rpt_stats(&train_raw).map_err(|e| CliError::user(e.to_string()))?;
    let encode_all = |raw: &[Journey]| -> CliResult<Vec<EncodedJourney<f64>>> {
        raw.iter()
            .map(|j| encode_journey(j, &stats).map_err(|e| CliError::user(e.to_string())))
            .collect()
    };
    let mut train_set = encode_all(&train_raw)?;
    let mut val_set = encode_all(&val_raw)?;
    let normalizer =
        fit_normalizer(&train_set, norm).map_err(|e| CliError::user(e.to_string()))?;
    apply_normalizer(&normalizer, &mut train_set);
    apply_normalizer(&normalizer, &mut val_set);
    Ok(Pipeline { train_set, val_set, val_raw })
}

// ---------------------------------------------------------------------------
// subcommands (each returns the artifact list for the manifest)
// ---------------------------------------------------------------------------

fn cmd_synth(cfg: &Resolved) -> CliResult<Vec<String>> {
    let synth_cfg = SynthConfig { n_users: cfg.users, seed: cfg.seed, ..SynthConfig::default() };
    let corpus = generate(&synth_cfg).map_err(|e| CliError::user(e.to_string()))?;
    let mut artifacts = Vec::new();
    emit(cfg, &mut artifacts, "users.csv", &corpus.users_csv)?;
    emit(cfg, &mut artifacts, "sessions.csv", &corpus.sessions_csv)?;
    emit(cfg, &mut artifacts, "hits.csv", &corpus.hits_csv)?;
    emit(cfg, &mut artifacts, "truth.csv", &corpus.truth_csv)?;
    println!("wrote synthetic corpus ({} users) to {}", cfg.users, cfg.out.display());
    Ok(artifacts)
}

fn cmd_ingest(cfg: &Resolved) -> CliResult<Vec<String>> {
    let (journeys, drops) = load_corpus(cfg.data()?)?;
    let n_sessions: usize = journeys.iter().map(|j| j.sessions.len()).sum();
    let n_hits: usize =
        journeys.iter().flat_map(|j| j.sessions.iter().map(|(_, h)| h.len())).sum();
    #[derive(Serialize)]
    struct IngestReport {
        n_journeys: usize,
        n_sessions: usize,
        n_hits: usize,
        drops: DropReport,
    }
    let report =
        IngestReport { n_journeys: journeys.len(), n_sessions, n_hits, drops: drops.clone() };
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::internal(e.to_string()))?;
    let mut artifacts = Vec::new();
    emit(cfg, &mut artifacts, "ingest_report.json", &(json + "\n"))?;
    println!(
        "{} journeys, {} sessions, {} hits (dropped: {} sessions without hits, {} orphan hits)",
        report.n_journeys, report.n_sessions, report.n_hits,
        drops.sessions_without_hits, drops.orphan_hits
    );
    Ok(artifacts)
}

fn cmd_stats(cfg: &Resolved) -> CliResult<Vec<String>> {
    let (journeys, _) = load_corpus(cfg.data()?)?;
    if journeys.is_empty() {
        return Err(CliError::user("corpus joined to zero journeys"));
    }
    let stats = compute_rpt_stats(&journeys).map_err(|e| CliError::user(e.to_string()))?;
    let hist = category_histograms(&journeys).map_err(|e| CliError::user(e.to_string()))?;

    let mut rpt = String::from("kind,category,rpt\n");
    for (name, v) in &stats.browser_rpt {
        rpt.push_str(&format!("browser,{name},{v}\n"));
    }
    for (name, v) in &stats.device_rpt {
        rpt.push_str(&format!("device,{name},{v}\n"));
    }
    rpt.push_str(&format!("browser,__global__,{}\n", stats.global_browser_rpt));
    rpt.push_str(&format!("device,__global__,{}\n", stats.global_device_rpt));

    let mut histogram = String::from("kind,category,users,revenue,transactions,rpt\n");
    for (kind, map) in [("browser", &hist.by_browser), ("device", &hist.by_device)] {
        for (name, b) in map {
            histogram.push_str(&format!(
                "{kind},{name},{},{},{},{}\n",
                b.users, b.revenue, b.transactions, b.rpt
            ));
        }
    }

    // session-feature correlation over raw encoded session vectors
    let session_rows: Vec<Vec<f64>> = journeys
        .iter()
        .flat_map(|j| j.sessions.iter().map(|(s, _)| crate::features::encode_session(s)))
        .collect();
    let corr = pearson_correlation_matrix(&session_rows)
        .map_err(|e| CliError::user(e.to_string()))?;
    let feature_names: Vec<&str> = SESSIONS_HEADER[2..13].to_vec();
    let mut corr_csv = String::from("feature,");
    corr_csv.push_str(&feature_names.join(","));
    corr_csv.push('\n');
    for (i, name) in feature_names.iter().enumerate() {
        let row: Vec<String> = (0..feature_names.len()).map(|j| corr[(i, j)].to_string()).collect();
        corr_csv.push_str(&format!("{name},{}\n", row.join(",")));
    }

    let mut artifacts = Vec::new();
    emit(cfg, &mut artifacts, "rpt_stats.csv", &rpt)?;
    emit(cfg, &mut artifacts, "category_histograms.csv", &histogram)?;
    emit(cfg, &mut artifacts, "session_correlation.csv", &corr_csv)?;
    println!("wrote stats for {} journeys to {}", journeys.len(), cfg.out.display());
    Ok(artifacts)
}

fn cmd_label(cfg: &Resolved) -> CliResult<Vec<String>> {
    let attribution = cfg.attribution()?;
    let (journeys, _) = load_corpus(cfg.data()?)?;
    if journeys.is_empty() {
        return Err(CliError::user("corpus joined to zero journeys"));
    }
    let stats = compute_rpt_stats(&journeys).map_err(|e| CliError::user(e.to_string()))?;
    let mut csv = String::from("client_id,session_index,class_id,p0,p1,p2,p3,p4,p5\n");
    for journey in &journeys {
        let encoded: EncodedJourney<f64> =
            encode_journey(journey, &stats).map_err(|e| CliError::user(e.to_string()))?;
        let labels = build_labels::<f64>(&encoded.class_ids, attribution)
            .map_err(|e| CliError::user(e.to_string()))?;
        for (i, class_id) in encoded.class_ids.iter().enumerate() {
            let row: Vec<String> =
                (0..NUM_CLASSES).map(|c| labels.t[(i, c)].to_string()).collect();
            csv.push_str(&format!(
                "{},{},{},{}\n",
                journey.user.client_id,
                i,
                class_id,
                row.join(",")
            ));
        }
    }
    let mut artifacts = Vec::new();
    emit(cfg, &mut artifacts, "labels.csv", &csv)?;
    println!(
        "wrote {} labels ({} journeys) to {}",
        cfg.attribution,
        journeys.len(),
        cfg.out.display()
    );
    Ok(artifacts)
}

/// Training settings persisted next to the parameters so that eval/target can
/// rebuild the identical split and feature pipeline.
#[derive(Serialize, Deserialize, Debug, Clone)]
struct TrainManifest {
    attribution: String,
    norm: String,
    seed: u64,
    val_fraction: f64,
    epochs: usize,
    lr: f64,
    batch: usize,
}

fn cmd_train(cfg: &Resolved) -> CliResult<Vec<String>> {
    let attribution = cfg.attribution()?;
    let norm = cfg.norm()?;
    let (journeys, _) = load_corpus(cfg.data()?)?;
    let pipeline = build_pipeline(journeys, norm, cfg.val_fraction, cfg.seed)?;
    let train_cfg = TrainConfig {
        attribution,
        normalization: norm,
        epochs: cfg.epochs,
        learning_rate: cfg.lr,
        batch_size: cfg.batch,
        seed: cfg.seed,
        ..TrainConfig::default()
    };
    let (params, history) =
        train(&pipeline.train_set, &pipeline.val_set, &train_cfg, ModelConfig::default())
            .map_err(|e| CliError::internal(e.to_string()))?;

    std::fs::create_dir_all(&cfg.out)?;
    save_params(&params, &cfg.out.join("params.bin"), &cfg.out.join("params_manifest.txt"))
        .map_err(|e| CliError::internal(e.to_string()))?;
    let mut artifacts = vec!["params.bin".to_string(), "params_manifest.txt".to_string()];

    let mut history_csv = String::from("epoch,train_mse,val_mse\n");
    for (epoch, (t, v)) in history.iter().enumerate() {
        history_csv.push_str(&format!("{},{t},{v}\n", epoch + 1));
    }
    emit(cfg, &mut artifacts, "history.csv", &history_csv)?;

    let train_manifest = TrainManifest {
        attribution: cfg.attribution.clone(),
        norm: cfg.norm.clone(),
        seed: cfg.seed,
        val_fraction: cfg.val_fraction,
        epochs: cfg.epochs,
        lr: cfg.lr,
        batch: cfg.batch,
    };
    let tm_json = serde_json::to_string_pretty(&train_manifest)
        .map_err(|e| CliError::internal(e.to_string()))?;
    emit(cfg, &mut artifacts, "train_manifest.json", &(tm_json + "\n"))?;

    let report = evaluate(&params, &pipeline.val_set, attribution)
        .map_err(|e| CliError::internal(e.to_string()))?;
    let report_text = eval_report_text(&cfg.attribution, &cfg.norm, &report);
    emit(cfg, &mut artifacts, "eval.txt", &report_text)?;
    print!("{report_text}");
    Ok(artifacts)
}

fn eval_report_text(attribution: &str, norm: &str, r: &EvalReport) -> String {
    let mut s = format!(
        "attribution={attribution} norm={norm} n_journeys={}\n\
         mse            {:.6}\n\
         acc_wide       {:.4}\n\
         acc_tight      {:.4}\n",
        r.n_journeys, r.mse, r.acc_wide, r.acc_tight
    );
    s.push_str("class          acc_wide acc_tight\n");
    for c in 0..NUM_CLASSES {
        s.push_str(&format!(
            "class_{c}        {:.4}   {:.4}\n",
            r.per_class_acc_wide[c], r.per_class_acc_tight[c]
        ));
    }
    s
}

/// Model directories found under `--model`: itself if it holds a
/// train_manifest.json, otherwise each immediate subdirectory that does.
fn find_models(model_dir: &Path) -> CliResult<Vec<(PathBuf, TrainManifest)>> {
    let read_manifest = |dir: &Path| -> CliResult<Option<TrainManifest>> {
        let path = dir.join("train_manifest.json");
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path)?;
        let tm = serde_json::from_str(&text)
            .map_err(|e| CliError::user(format!("bad {}: {e}", path.display())))?;
        Ok(Some(tm))
    };
    if let Some(tm) = read_manifest(model_dir)? {
        return Ok(vec![(model_dir.to_path_buf(), tm)]);
    }
    let mut found = Vec::new();
    let entries = std::fs::read_dir(model_dir)
        .map_err(|e| CliError::user(format!("cannot read --model {}: {e}", model_dir.display())))?;
    let mut dirs: Vec<PathBuf> =
        entries.filter_map(|e| e.ok()).map(|e| e.path()).filter(|p| p.is_dir()).collect();
    dirs.sort();
    for dir in dirs {
        if let Some(tm) = read_manifest(&dir)? {
            found.push((dir, tm));
        }
    }
    if found.is_empty() {
        return Err(CliError::user(format!(
            "no train_manifest.json under {}",
            model_dir.display()
        )));
    }
    Ok(found)
}

fn load_model(dir: &Path) -> CliResult<ModelParams<f64>> {
    load_params(&dir.join("params.bin"))
        .map_err(|e| CliError::user(format!("{}: {e}", dir.join("params.bin").display())))
}

fn cmd_eval(cfg: &Resolved) -> CliResult<Vec<String>> {
    let models = find_models(cfg.model_dir()?)?;
    let (journeys, _) = load_corpus(cfg.data()?)?;
    let mut grid = String::from("attribution  norm     mse        acc_wide  acc_tight\n");
    let mut details = String::new();
    for (dir, tm) in &models {
        let attribution = parse_attribution(&tm.attribution)?;
        let norm = match tm.norm.as_str() {
            "minmax" => NormMethod::MinMax,
            "standard" => NormMethod::Standardize,
            other => return Err(CliError::user(format!("bad norm '{other}' in {}", dir.display()))),
        };
        let pipeline = build_pipeline(journeys.clone(), norm, tm.val_fraction, tm.seed)?;
        let params = load_model(dir)?;
        let report = evaluate(&params, &pipeline.val_set, attribution)
            .map_err(|e| CliError::internal(e.to_string()))?;
        grid.push_str(&format!(
            "{:<12} {:<8} {:<10.6} {:<9.4} {:<9.4}\n",
            tm.attribution, tm.norm, report.mse, report.acc_wide, report.acc_tight
        ));
        details.push_str(&eval_report_text(&tm.attribution, &tm.norm, &report));
        details.push('\n');
    }
    let text = format!("{grid}\n{details}");
    let mut artifacts = Vec::new();
    emit(cfg, &mut artifacts, "eval_report.txt", &text)?;
    print!("{grid}");
    Ok(artifacts)
}

struct MethodRun {
    kind: MethodKind,
    outcome: TargetingOutcome,
    curve: ProfitCurve,
}

/// Score, simulate, and summarize every requested method over the validation
/// population. Shared by `target` and `report`.
fn run_targeting(cfg: &Resolved) -> CliResult<(String, Vec<MethodRun>)> {
    let models = find_models(cfg.model_dir()?)?;
    let (journeys, _) = load_corpus(cfg.data()?)?;

    // population: the validation split of the first model's pipeline; outcome
    // truth (bought/revenue in the final session) comes from the raw rows
    let base_tm = &models[0].1;
    let base_norm = match base_tm.norm.as_str() {
        "minmax" => NormMethod::MinMax,
        _ => NormMethod::Standardize,
    };
    let pipeline = build_pipeline(journeys.clone(), base_norm, base_tm.val_fraction, base_tm.seed)?;
    let bought_last: Vec<bool> = pipeline
        .val_raw
        .iter()
        .map(|j| j.sessions.last().map(|(s, _)| s.transactions > 0).unwrap_or(false))
        .collect();
    let revenue_last: Vec<f64> =
        pipeline.val_raw.iter().map(|j| j.sessions.last().map(|(s, _)| s.revenue).unwrap_or(0.0)).collect();

    let model_for = |attribution: AttributionModel| -> Option<&(PathBuf, TrainManifest)> {
        models.iter().find(|(_, tm)| tm.attribution == attribution.as_str())
    };

    let requested: Vec<MethodKind> = match cfg.method.as_str() {
        "all" => {
            let mut v = vec![MethodKind::Random, MethodKind::Statistical];
            if model_for(AttributionModel::Linear).is_some() {
                v.push(MethodKind::ModelLinear);
            }
            if model_for(AttributionModel::TimeDecay).is_some() {
                v.push(MethodKind::ModelTimeDecay);
            }
            v
        }
        name => vec![MethodKind::ALL
            .into_iter()
            .find(|k| k.as_str() == name)
            .ok_or_else(|| CliError::user(format!("unknown --method '{name}'")))?],
    };

    let mut table = String::from(
        "method           tp_mean  tp_std   tp_pct   fp_mean  fp_std   fp_pct   bp_mean  bp_std   zero_trials\n",
    );
    let grid = default_cost_grid();
    let mut runs = Vec::new();
    for (idx, kind) in requested.iter().enumerate() {
        let loaded;
        let method = match kind {
            MethodKind::Random => ScoringMethod::Random,
            MethodKind::Statistical => {
                ScoringMethod::Statistical { noise_halfwidth: DEFAULT_NOISE_HALFWIDTH }
            }
            MethodKind::ModelLinear | MethodKind::ModelTimeDecay => {
                let attribution = if *kind == MethodKind::ModelLinear {
                    AttributionModel::Linear
                } else {
                    AttributionModel::TimeDecay
                };
                let (dir, _) = model_for(attribution).ok_or_else(|| {
                    CliError::user(format!(
                        "no model trained with attribution={} under --model",
                        attribution.as_str()
                    ))
                })?;
                loaded = load_model(dir)?;
                ScoringMethod::Model { params: &loaded, attribution }
            }
        };
        let score_seed = cfg.seed.wrapping_add(100 + idx as u64);
        let sim_seed = cfg.seed.wrapping_add(200 + idx as u64);
        let scores = score_users(&method, &pipeline.val_set, score_seed)
            .map_err(|e| CliError::internal(e.to_string()))?;
        let (outcome, trial_results) =
            simulate_targeting(&scores, &bought_last, &revenue_last, cfg.trials, sim_seed)
                .map_err(|e| CliError::internal(e.to_string()))?;
        let curve =
            profit_curve(&trial_results, &grid).map_err(|e| CliError::internal(e.to_string()))?;
        table.push_str(&format!(
            "{:<16} {:<8.2} {:<8.2} {:<8.4} {:<8.2} {:<8.2} {:<8.4} {:<8.2} {:<8.2} {}\n",
            kind.as_str(),
            outcome.tp_mean,
            outcome.tp_std,
            outcome.tp_pct,
            outcome.fp_mean,
            outcome.fp_std,
            outcome.fp_pct,
            outcome.bp_mean,
            outcome.bp_std,
            outcome.zero_target_trials
        ));
        runs.push(MethodRun { kind: *kind, outcome, curve });
    }
    Ok((table, runs))
}

fn emit_targeting(
    cfg: &Resolved,
    artifacts: &mut Vec<String>,
    table: &str,
    runs: &[MethodRun],
) -> CliResult<()> {
    emit(cfg, artifacts, "targeting_table.txt", table)?;
    let outcomes: BTreeMap<&str, &TargetingOutcome> =
        runs.iter().map(|r| (r.kind.as_str(), &r.outcome)).collect();
    let json = serde_json::to_string_pretty(&outcomes)
        .map_err(|e| CliError::internal(e.to_string()))?;
    emit(cfg, artifacts, "targeting.json", &(json + "\n"))?;
    let curves: Vec<(String, ProfitCurve)> =
        runs.iter().map(|r| (r.kind.as_str().to_string(), r.curve.clone())).collect();
    render_plots(&curves, &cfg.out).map_err(|e| CliError::internal(e.to_string()))?;
    artifacts.push("profit_linear.svg".into());
    artifacts.push("profit_log.svg".into());
    artifacts.push("profit_curve.csv".into());
    Ok(())
}

fn cmd_target(cfg: &Resolved) -> CliResult<Vec<String>> {
    let (table, runs) = run_targeting(cfg)?;
    let mut artifacts = Vec::new();
    emit_targeting(cfg, &mut artifacts, &table, &runs)?;
    print!("{table}");
    Ok(artifacts)
}

fn cmd_report(cfg: &Resolved) -> CliResult<Vec<String>> {
    let models = find_models(cfg.model_dir()?)?;
    let (journeys, drops) = load_corpus(cfg.data()?)?;
    let mut text = String::from("== corpus ==\n");
    text.push_str(&format!(
        "{} journeys; drops: {:?}\n\n== evaluation ==\n",
        journeys.len(),
        drops
    ));
    for (dir, tm) in &models {
        let attribution = parse_attribution(&tm.attribution)?;
        let norm = match tm.norm.as_str() {
            "minmax" => NormMethod::MinMax,
            _ => NormMethod::Standardize,
        };
        let pipeline = build_pipeline(journeys.clone(), norm, tm.val_fraction, tm.seed)?;
        let params = load_model(dir)?;
        let report = evaluate(&params, &pipeline.val_set, attribution)
            .map_err(|e| CliError::internal(e.to_string()))?;
        text.push_str(&eval_report_text(&tm.attribution, &tm.norm, &report));
        text.push('\n');
    }
    let (table, runs) = run_targeting(cfg)?;
    text.push_str("== targeting ==\n");
    text.push_str(&table);
    let mut artifacts = Vec::new();
    emit(cfg, &mut artifacts, "report.txt", &text)?;
    emit_targeting(cfg, &mut artifacts, &table, &runs)?;
    print!("{text}");
    Ok(artifacts)
}
