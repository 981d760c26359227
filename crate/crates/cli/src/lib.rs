//! The `scriptalign` command.
//!
//! Exit codes: 0 on success, 1 when the command ran but the outcome is a
//! failure (an invalid corpus, mismatched evaluation inputs, a backend
//! error mid-simulation), 2 for usage and I/O errors.

pub mod config;
pub mod simulate;

use std::ffi::OsString;
use std::fmt;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};

use scriptalign_core::backend::{Backend, BackendKind, LiveConfig, LiveHttpBackend, RecordingBackend};
use scriptalign_core::conversation::EngineConfig;
use scriptalign_core::metrics::{
    eval_strategy_predictions, metrics_by_condition, render_metrics_table, render_pred_table, PredMode,
    DEFAULT_MATCH_THRESHOLD,
};
use scriptalign_core::sag::export_finetune_pairs;
use scriptalign_core::script::{load_corpus, validate_library, ScriptLibrary};
use scriptalign_core::strategy::{load_label_map, LabelMap, LabelMapConfig};
use scriptalign_core::transcript::{load_transcript_dir, Condition};
use scriptalign_service::{BackendRegistry, ServiceOptions, SessionService};

use crate::config::FileConfig;
use crate::simulate::{
    simulate_batch, write_transcripts, BatchSpec, ProfileName, SimProfile, DEFAULT_DIGRESS_EVERY, DEFAULT_MAX_TURNS,
};

pub const FINETUNE_FORMAT: &str = "scriptalign-finetune";
const DEFAULT_LIBRARY: &str = "corpus/sample";

#[derive(Debug, Parser)]
#[command(name = "scriptalign", version, about = "Scripted dialogue corpora, simulations and evaluation")]
pub struct Cli {
    #[command(flatten)]
    pub flags: Flags,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by all commands; `scriptalign.toml` supplies defaults.
#[derive(Debug, Default, Args)]
pub struct Flags {
    /// Script library directory (holds library.json).
    #[arg(long, global = true)]
    pub library: Option<PathBuf>,
    #[arg(long, global = true)]
    pub condition: Option<String>,
    /// script_faithful, freeform, live or replay:<recording>.
    #[arg(long, global = true)]
    pub backend: Option<String>,
    /// compliant, digressive or adversarial.
    #[arg(long, global = true)]
    pub profile: Option<String>,
    #[arg(long, global = true)]
    pub sessions: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Similarity threshold for node matching and the metrics.
    #[arg(long, global = true)]
    pub threshold: Option<f64>,
    /// Built-in strategy label map name, or a JSON file.
    #[arg(long, global = true)]
    pub labelmap: Option<String>,
    /// Config file; defaults to ./scriptalign.toml when present.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a script library and list every structural problem.
    Validate {
        /// Library directory; defaults to --library.
        path: Option<PathBuf>,
    },
    /// Run the HTTP API.
    Serve {
        #[arg(long)]
        bind: Option<String>,
        /// Event log file.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Built UI to serve under `/`.
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
    /// Run synthetic users against an engine and write their transcripts.
    Simulate {
        /// Only use this topic; by default sessions cycle through all topics.
        #[arg(long)]
        topic: Option<String>,
        #[arg(long)]
        max_turns: Option<usize>,
        #[arg(long)]
        digress_every: Option<usize>,
        /// Save every backend exchange as a replay recording.
        #[arg(long)]
        record: Option<PathBuf>,
    },
    /// Compute completion and question coverage over a transcript directory.
    Metrics { transcripts: PathBuf },
    /// Score strategy predictions against gold labels.
    EvalPred {
        gold: PathBuf,
        pred: PathBuf,
        /// single or multi.
        #[arg(long)]
        mode: Option<String>,
    },
    /// Write one supervised example per scripted bot turn.
    ExportFt,
}

/// The command ran but the result is a failure (exit code 1).
#[derive(Debug)]
pub struct DomainFailure(pub String);

impl fmt::Display for DomainFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for DomainFailure {}

fn domain(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(DomainFailure(msg.into()))
}

/// Parses `args` (program name first) and runs the command, printing to
/// stdout and stderr. Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(args, &mut stdout.lock(), &mut stderr.lock())
}

pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{}", e.render());
                return 2;
            }
            let _ = write!(out, "{}", e.render());
            return 0;
        }
    };
    init_logging(matches!(cli.command, Command::Serve { .. }));
    match dispatch(cli, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {}", error_chain(&e));
            if e.downcast_ref::<DomainFailure>().is_some() {
                1
            } else {
                2
            }
        }
    }
}

/// Joins the error's causes, skipping any cause its parent already quotes.
fn error_chain(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if out.contains(&msg) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&msg);
    }
    out
}

fn init_logging(verbose: bool) {
    let default = if verbose { "info" } else { "warn" };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

/// Flags merged with the config file.
struct Settings {
    flags: Flags,
    file: FileConfig,
}

impl Settings {
    fn library_path(&self) -> PathBuf {
        self.flags
            .library
            .clone()
            .or_else(|| self.file.library.clone())
            .unwrap_or_else(|| PathBuf::from(DEFAULT_LIBRARY))
    }

    fn library(&self) -> anyhow::Result<ScriptLibrary> {
        let path = self.library_path();
        ScriptLibrary::load(&path).with_context(|| format!("loading library {}", path.display()))
    }

    fn threshold(&self) -> anyhow::Result<f64> {
        let t = self
            .flags
            .threshold
            .or(self.file.threshold)
            .unwrap_or(DEFAULT_MATCH_THRESHOLD);
        if !(0.0..=1.0).contains(&t) {
            bail!("threshold must be within 0..=1, got {t}");
        }
        Ok(t)
    }

    fn condition(&self) -> anyhow::Result<Condition> {
        let raw = self
            .flags
            .condition
            .clone()
            .or_else(|| self.file.condition.clone())
            .ok_or_else(|| anyhow!("--condition is required"))?;
        raw.parse().map_err(|e: String| anyhow!(e))
    }

    fn backend_name(&self) -> Option<String> {
        self.flags.backend.clone().or_else(|| self.file.backend.clone())
    }

    fn out(&self) -> Option<PathBuf> {
        self.flags.out.clone().or_else(|| self.file.out.clone())
    }

    fn label_map(&self) -> anyhow::Result<LabelMap> {
        let Some(raw) = self.flags.labelmap.clone().or_else(|| self.file.labelmap.clone()) else {
            return Ok(EngineConfig::default().ssag.label_map);
        };
        let config = if raw.ends_with(".json") || Path::new(&raw).is_file() {
            let text = std::fs::read_to_string(&raw).with_context(|| format!("reading label map {raw}"))?;
            LabelMapConfig::Custom(serde_json::from_str(&text).with_context(|| format!("parsing label map {raw}"))?)
        } else {
            LabelMapConfig::Named(raw)
        };
        Ok(load_label_map(&config)?)
    }

    fn engine_config(&self) -> anyhow::Result<EngineConfig> {
        let mut cfg = EngineConfig::default();
        let threshold = self.threshold()?;
        cfg.sag.threshold = threshold;
        cfg.ssag.threshold = threshold;
        cfg.ssag.label_map = self.label_map()?;
        Ok(cfg)
    }
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> anyhow::Result<i32> {
    let file = FileConfig::load(cli.flags.config.as_deref())?;
    let settings = Settings { flags: cli.flags, file };
    match cli.command {
        Command::Validate { path } => cmd_validate(&path.unwrap_or_else(|| settings.library_path()), out),
        Command::Serve { bind, log, static_dir } => {
            let bind = bind
                .or_else(|| settings.file.bind.clone())
                .unwrap_or_else(|| "127.0.0.1:8080".into());
            let log = log
                .or_else(|| settings.file.log.clone())
                .unwrap_or_else(|| PathBuf::from("data/events.jsonl"));
            let static_dir = static_dir.or_else(|| settings.file.static_dir.clone());
            cmd_serve(&settings, &bind, &log, static_dir)
        }
        Command::Simulate {
            topic,
            max_turns,
            digress_every,
            record,
        } => {
            let profile_name: ProfileName = settings
                .flags
                .profile
                .clone()
                .or_else(|| settings.file.profile.clone())
                .unwrap_or_else(|| "compliant".into())
                .parse()
                .map_err(|e: String| anyhow!(e))?;
            let profile = SimProfile::new(
                profile_name,
                max_turns.or(settings.file.max_turns).unwrap_or(DEFAULT_MAX_TURNS),
                digress_every
                    .or(settings.file.digress_every)
                    .unwrap_or(DEFAULT_DIGRESS_EVERY),
            )
            .map_err(|e| anyhow!(e))?;
            let topic = topic.or_else(|| settings.file.topic.clone());
            cmd_simulate(&settings, topic.as_deref(), &profile, record.as_deref(), out)
        }
        Command::Metrics { transcripts } => cmd_metrics(&settings, &transcripts, out),
        Command::EvalPred { gold, pred, mode } => {
            let mode: PredMode = mode
                .or_else(|| settings.file.mode.clone())
                .unwrap_or_else(|| "single".into())
                .parse()
                .map_err(|e: String| anyhow!(e))?;
            cmd_eval_pred(&gold, &pred, mode, settings.out().as_deref(), out)
        }
        Command::ExportFt => {
            let path = settings.out().ok_or_else(|| anyhow!("--out is required"))?;
            cmd_export_ft(&settings.library()?, &path, out)
        }
    }
}

pub fn cmd_validate(path: &Path, out: &mut dyn Write) -> anyhow::Result<i32> {
    let corpus = load_corpus(path).with_context(|| format!("reading library {}", path.display()))?;
    let report = validate_library(&corpus);
    if report.ok {
        let docs: Vec<_> = corpus.entries.iter().filter_map(|e| e.document.as_ref().ok()).collect();
        let nodes: usize = docs.iter().map(|d| d.nodes.0.len()).sum();
        writeln!(out, "ok: {} topics, {} nodes (library {})", docs.len(), nodes, corpus.version)?;
        return Ok(0);
    }
    for issue in &report.issues {
        match &issue.node_id {
            Some(node) => writeln!(out, "{} {}/{}: {}", issue.code, issue.topic_id, node, issue.message)?,
            None => writeln!(out, "{} {}: {}", issue.code, issue.topic_id, issue.message)?,
        }
    }
    writeln!(out, "{} issue(s)", report.issues.len())?;
    Ok(1)
}

fn build_backend(name: &str) -> anyhow::Result<Arc<dyn Backend>> {
    let kind = BackendKind::parse(name)?;
    kind.build().with_context(|| format!("setting up backend {kind}"))
}

fn cmd_simulate(
    settings: &Settings,
    topic: Option<&str>,
    profile: &SimProfile,
    record: Option<&Path>,
    out: &mut dyn Write,
) -> anyhow::Result<i32> {
    let library = settings.library()?;
    let condition = settings.condition()?;
    let config = settings.engine_config()?;
    let backend_name = match settings.backend_name() {
        Some(b) => b,
        None if condition.needs_backend() => bail!("--backend is required for condition {condition}"),
        None => "script_faithful".into(),
    };
    let mut backend = build_backend(&backend_name)?;
    let recorder = record.map(|_| Arc::new(RecordingBackend::new(backend.clone())));
    if let Some(r) = &recorder {
        backend = r.clone();
    }
    let topics: Vec<&str> = match topic {
        Some(t) => {
            library.get(t)?;
            vec![t]
        }
        None => library.topic_ids().collect(),
    };
    let batch = BatchSpec {
        condition,
        topics,
        sessions: settings.flags.sessions.or(settings.file.sessions).unwrap_or(1),
        seed: settings.flags.seed.or(settings.file.seed).unwrap_or(0),
        jobs: settings.flags.jobs.or(settings.file.jobs).unwrap_or(1),
    };
    let transcripts =
        simulate_batch(&library, &batch, &*backend, &config, profile).map_err(|e| domain(e.to_string()))?;
    let dir = settings.out().unwrap_or_else(|| PathBuf::from("transcripts"));
    write_transcripts(&dir, &transcripts).with_context(|| format!("writing transcripts to {}", dir.display()))?;
    if let (Some(r), Some(path)) = (recorder, record) {
        r.save(path)?;
    }
    let completed = transcripts.iter().filter(|t| t.completed).count();
    writeln!(
        out,
        "wrote {} transcript(s) to {} ({} completed)",
        transcripts.len(),
        dir.display(),
        completed
    )?;
    Ok(0)
}

fn cmd_metrics(settings: &Settings, dir: &Path, out: &mut dyn Write) -> anyhow::Result<i32> {
    let library = settings.library()?;
    let threshold = settings.threshold()?;
    let transcripts = load_transcript_dir(dir).with_context(|| format!("reading transcripts in {}", dir.display()))?;
    let reports = metrics_by_condition(&transcripts, &library, threshold).map_err(|e| domain(e.to_string()))?;
    let table = render_metrics_table(&reports);
    let target = settings.out().unwrap_or_else(|| dir.to_path_buf());
    std::fs::create_dir_all(&target)?;
    let json = serde_json::to_string_pretty(&reports)?;
    std::fs::write(target.join("metrics.json"), json + "\n")
        .with_context(|| format!("writing {}", target.display()))?;
    std::fs::write(target.join("metrics.txt"), &table)?;
    write!(out, "{table}")?;
    Ok(0)
}

/// One label set per line: a JSON string or an array of strings.
pub fn read_label_file(path: &Path) -> anyhow::Result<Vec<Vec<String>>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut items = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(line).with_context(|| format!("{}: line {}", path.display(), i + 1))?;
        let labels = match value {
            serde_json::Value::String(s) => vec![s],
            serde_json::Value::Array(a) => a
                .into_iter()
                .map(|v| v.as_str().map(str::to_string))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| anyhow!("{}: line {} has a non-string label", path.display(), i + 1))?,
            _ => bail!("{}: line {} is neither a label nor a list of labels", path.display(), i + 1),
        };
        items.push(labels);
    }
    Ok(items)
}

pub fn cmd_eval_pred(
    gold: &Path,
    pred: &Path,
    mode: PredMode,
    json_out: Option<&Path>,
    out: &mut dyn Write,
) -> anyhow::Result<i32> {
    let gold = read_label_file(gold)?;
    let pred = read_label_file(pred)?;
    let report = eval_strategy_predictions(&gold, &pred, mode).map_err(|e| domain(e.to_string()))?;
    if let Some(path) = json_out {
        std::fs::write(path, serde_json::to_string_pretty(&report)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
    }
    write!(out, "{}", render_pred_table(&report))?;
    Ok(0)
}

pub fn cmd_export_ft(library: &ScriptLibrary, path: &Path, out: &mut dyn Write) -> anyhow::Result<i32> {
    let pairs = export_finetune_pairs(library);
    let mut body = serde_json::to_string(&serde_json::json!({
        "format": FINETUNE_FORMAT,
        "version": 1,
        "library_version": library.version(),
        "pairs": pairs.len(),
    }))?;
    body.push('\n');
    for pair in &pairs {
        body.push_str(&serde_json::to_string(pair)?);
        body.push('\n');
    }
    std::fs::write(path, body).with_context(|| format!("writing {}", path.display()))?;
    writeln!(out, "wrote {} pair(s) to {}", pairs.len(), path.display())?;
    Ok(0)
}

fn cmd_serve(settings: &Settings, bind: &str, log: &Path, static_dir: Option<PathBuf>) -> anyhow::Result<i32> {
    let library = settings.library()?;
    let addr: SocketAddr = bind.parse().with_context(|| format!("bad bind address `{bind}`"))?;
    let mut backends = BackendRegistry::with_mocks();
    // The live client must be built outside the async runtime.
    if let Ok(cfg) = LiveConfig::from_env() {
        backends.insert("live", Arc::new(LiveHttpBackend::new(cfg)?));
    }
    if let Some(name) = settings.backend_name().filter(|n| n.starts_with("replay:")) {
        backends.insert(name.clone(), build_backend(&name)?);
    }
    let options = ServiceOptions {
        engine: settings.engine_config()?,
        threshold: settings.threshold()?,
        ..ServiceOptions::default()
    };
    let service = SessionService::open(library, backends, options, log)?;
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(scriptalign_service::http::serve(Arc::new(service), addr, static_dir))?;
    Ok(0)
}
