mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;
use trajsmith::agent::Agent;
use trajsmith::eval::{evaluate, load_tasks, render_table, Judge};
use trajsmith::exec::{ImportPolicy, MockFactory, ProcessFactory, SessionFactory};
use trajsmith::gateway::{Gateway, HttpProvider, HttpProviderConfig, Provider};
use trajsmith::model::{validate_datapoint_with, FileKind, Task, ValidationContext};
use trajsmith::pipeline::{load_pool, load_seeds, run_pipeline, ImageIndex, PipelineContext};
use trajsmith::store::{export_sft, load_dataset, stats, write_sft, DatasetStore, FileStore, SftLayout};
use trajsmith::tools::{ToolRegistry, Toolset};

use config::{CassetteMode, ConfigError, ExecutorKind, RunConfig};

/// Synthesize, inspect and evaluate tool-use trajectories.
#[derive(Debug, Parser)]
#[command(name = "trajsmith", version)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Answer every model call from the cassette in this directory.
    #[arg(long, global = true, conflicts_with = "record")]
    replay: Option<PathBuf>,
    /// Call the live endpoint and record a cassette into this directory.
    #[arg(long, global = true)]
    record: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    parallel: Option<usize>,
    #[arg(long, global = true)]
    max_steps: Option<u32>,
    #[arg(long, global = true, value_enum)]
    executor: Option<ExecutorKind>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the data pipeline and append admitted records to a store.
    Synth {
        /// Seed queries, one per line.
        #[arg(long)]
        seeds: PathBuf,
        /// Number of query drafts.
        #[arg(short = 'n', long)]
        n: Option<usize>,
        /// Store directory.
        #[arg(long)]
        out: PathBuf,
        /// `pool.jsonl` of source images; overrides the config.
        #[arg(long)]
        pool: Option<PathBuf>,
    },
    /// Check every record offline: schema, file digests and verdicts.
    Verify {
        #[arg(long)]
        dataset: PathBuf,
        /// Directory file paths are relative to; the dataset's directory by default.
        #[arg(long)]
        files_root: Option<PathBuf>,
    },
    /// Composition histograms.
    Stats {
        #[arg(long)]
        dataset: PathBuf,
        /// Also write `stats.json` and one CSV per histogram here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the agent on a single query.
    Run {
        #[arg(long)]
        query: String,
        /// Attach a file; repeatable.
        #[arg(long = "file")]
        files: Vec<PathBuf>,
        /// Where attached files are stored for the episode.
        #[arg(long)]
        files_dir: Option<PathBuf>,
    },
    /// Score the agent on a task file.
    Eval {
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long, value_enum, default_value_t = JudgeKind::Exact)]
        judge: JudgeKind,
        /// Directory task file paths are relative to.
        #[arg(long)]
        files_root: Option<PathBuf>,
    },
    /// Render admitted records as training conversations.
    Export {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Layout::Episode)]
        layout: Layout,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum JudgeKind {
    Exact,
    Model,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Layout {
    Episode,
    PerStep,
}

/// Exit status classes: bad input data is 1, bad configuration is 2.
enum Failure {
    Data(anyhow::Error),
    Config(anyhow::Error),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.into())
    }
}

trait OrFail<T> {
    fn data(self) -> Result<T, Failure>;
    fn config(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> OrFail<T> for Result<T, E> {
    fn data(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Data(e.into()))
    }

    fn config(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Config(e.into()))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// Config file plus command-line overrides.
fn load_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(dir) = &cli.replay {
        cfg.cassette.mode = CassetteMode::Replay;
        cfg.cassette.dir = Some(dir.clone());
    }
    if let Some(dir) = &cli.record {
        cfg.cassette.mode = CassetteMode::Record;
        cfg.cassette.dir = Some(dir.clone());
    }
    if cli.parallel.is_some() {
        cfg.parallel = cli.parallel;
    }
    if let Some(n) = cli.max_steps {
        cfg.episode.max_steps = n;
    }
    if let Some(kind) = cli.executor {
        cfg.executor.kind = kind;
    }
    cfg.pipeline.episode = cfg.episode.clone();
    cfg.pipeline.parallel = cfg.parallel();
    Ok(cfg)
}

fn gateway(cfg: &RunConfig) -> Result<Arc<Gateway>, Failure> {
    cfg.validate()?;
    let provider = || -> Arc<dyn Provider> {
        Arc::new(HttpProvider::new(HttpProviderConfig {
            base_url: cfg.provider.base_url.clone().unwrap_or_default(),
            api_key: cfg.provider.api_key_env.as_ref().and_then(|v| std::env::var(v).ok()),
            timeout: cfg.timeout(),
        }))
    };
    let dir = cfg.cassette.dir.as_deref();
    let gateway = match cfg.cassette.mode {
        CassetteMode::Live => Gateway::live(provider()),
        CassetteMode::Record => Gateway::record(provider(), dir.expect("validated")).config()?,
        CassetteMode::Replay => Gateway::replay(dir.expect("validated")).config()?,
    };
    Ok(Arc::new(gateway.with_concurrency(cfg.provider.concurrency.max(1))))
}

fn sessions(cfg: &RunConfig) -> Arc<dyn SessionFactory> {
    match cfg.executor.kind {
        ExecutorKind::Mock => Arc::new(MockFactory::new(ImportPolicy::new(&cfg.episode.authorized_imports))),
        ExecutorKind::Process => Arc::new(ProcessFactory::new(cfg.executor.session.clone())),
    }
}

fn agent(cfg: &RunConfig, gateway: Arc<Gateway>, files_root: Option<PathBuf>) -> Agent {
    let tools = Toolset::new(ToolRegistry::standard(), gateway.clone()).with_models(cfg.tools.clone());
    Agent { gateway, tools: Arc::new(tools), sessions: sessions(cfg), cfg: cfg.episode.clone(), files_root }
}

fn print_json(value: &impl serde::Serialize) {
    use std::io::Write;
    let text = serde_json::to_string_pretty(value).expect("serializable");
    // a closed pipe (`| head`) is not an error worth a panic
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn report_telemetry(gateway: &Gateway) {
    let t = gateway.telemetry();
    tracing::info!(calls = t.calls, retries = t.retries, replay_hits = t.replay_hits, replay_misses = t.replay_misses, "gateway");
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Synth { seeds, n, out, pool } => synth(cfg, &seeds, n, &out, pool),
        Command::Verify { dataset, files_root } => verify(&dataset, files_root),
        Command::Stats { dataset, out } => {
            let ds = load_dataset(&dataset).data()?;
            let report = stats(&ds, &ToolRegistry::standard().names());
            if let Some(out) = out {
                std::fs::create_dir_all(&out).data()?;
                std::fs::write(out.join("stats.json"), serde_json::to_string_pretty(&report).expect("serializable"))
                    .data()?;
                for (name, csv) in report.csv_tables() {
                    std::fs::write(out.join(format!("{name}.csv")), csv).data()?;
                }
            }
            print_json(&report);
            Ok(())
        }
        Command::Run { query, files, files_dir } => {
            let gateway = gateway(&cfg)?;
            let root = files_dir.unwrap_or_else(|| std::env::temp_dir().join("trajsmith-run"));
            let store = FileStore::new(&root);
            let mut task = Task::new("cli-run", query);
            for path in &files {
                let kind = FileKind::from_path(&path.to_string_lossy())
                    .ok_or_else(|| Failure::Data(anyhow!("unsupported file type: {}", path.display())))?;
                task.files.push(store.put_file(path, kind, None).with_context(|| path.display().to_string()).data()?);
            }
            let traj = agent(&cfg, gateway.clone(), Some(root)).run(&task).data()?;
            report_telemetry(&gateway);
            print_json(&traj);
            Ok(())
        }
        Command::Eval { tasks, judge, files_root } => {
            let tasks = load_tasks(&tasks).data()?;
            let gateway = gateway(&cfg)?;
            let judge = match judge {
                JudgeKind::Exact => Judge::Exact,
                JudgeKind::Model => Judge::Model { gateway: &gateway, model_id: cfg.judge_model.clone() },
            };
            let runner = agent(&cfg, gateway.clone(), files_root);
            let names = ToolRegistry::standard().names();
            let (metrics, results) = evaluate(&runner, &tasks, &judge, &names, cfg.parallel()).data()?;
            report_telemetry(&gateway);
            eprint!("{}", render_table(&metrics));
            print_json(&json!({ "metrics": metrics, "results": results }));
            Ok(())
        }
        Command::Export { dataset, out, layout } => {
            let ds = load_dataset(&dataset).data()?;
            let layout = match layout {
                Layout::Episode => SftLayout::Episode,
                Layout::PerStep => SftLayout::PerStep,
            };
            let samples = export_sft(&ds, &cfg.episode, &ToolRegistry::standard(), layout).data()?;
            write_sft(&out, &samples).data()?;
            print_json(&json!({ "records": ds.len(), "samples": samples.len() }));
            Ok(())
        }
    }
}

fn synth(mut cfg: RunConfig, seeds: &Path, n: Option<usize>, out: &Path, pool: Option<PathBuf>) -> Result<(), Failure> {
    if let Some(n) = n {
        cfg.pipeline.n = n;
    }
    let gateway = gateway(&cfg)?;
    let seeds = load_seeds(seeds).with_context(|| seeds.display().to_string()).data()?;
    let index = match pool.or(cfg.image_pool.clone()) {
        Some(path) => {
            let (root, items) = load_pool(&path).data()?;
            Some(ImageIndex::build(&gateway, &cfg.pipeline.models.embed, root, items).data()?)
        }
        None => None,
    };
    let store = DatasetStore::open(out).data()?;
    let tools = Toolset::new(ToolRegistry::standard(), gateway.clone()).with_models(cfg.tools.clone());
    let sessions = sessions(&cfg);
    let ctx = PipelineContext {
        gateway: &gateway,
        tools: &tools,
        sessions: sessions.as_ref(),
        store: &store,
        images: index.as_ref(),
    };
    let report = run_pipeline(&ctx, &seeds, &cfg.pipeline).data()?;
    report_telemetry(&gateway);
    std::fs::write(out.join("report.json"), serde_json::to_string_pretty(&report).expect("serializable")).data()?;
    print_json(&report);
    Ok(())
}

fn verify(dataset: &Path, files_root: Option<PathBuf>) -> Result<(), Failure> {
    let ds = load_dataset(dataset).data()?;
    let root = files_root.unwrap_or_else(|| dataset.parent().map(Path::to_path_buf).unwrap_or_default());
    let names = ToolRegistry::standard().names();
    let ctx = ValidationContext { tool_names: Some(&names), files_root: Some(&root), require_admitted: true };
    let mut seen = std::collections::HashSet::new();
    let mut problems = Vec::new();
    for dp in &ds {
        if !seen.insert(dp.task.id.as_str()) {
            problems.push(json!({ "id": dp.task.id, "violations": "duplicate task id" }));
        }
        let report = validate_datapoint_with(dp, &ctx);
        if !report.is_empty() {
            problems.push(json!({ "id": dp.task.id, "violations": report.to_string() }));
        }
    }
    print_json(&json!({ "records": ds.len(), "invalid": problems.len(), "problems": problems }));
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Failure::Data(anyhow!("{} of {} records failed verification", problems.len(), ds.len())))
    }
}
