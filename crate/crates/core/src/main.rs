use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

use agentmem::benchkit::{self, BenchError, BenchSample, DatasetFormat, MetricReport, Position, RunOptions};
use agentmem::config::{AppConfig, ConfigError};
use agentmem::hiermem::{Engine, EngineError, IncomingMessage};
use agentmem::memstore::persist::MANIFEST_FILE;
use agentmem::pipeline::{build_pipeline, PipelineKind};
use agentmem::service::{self, AnswerRequest, ApiEnvelope, ServiceError};

#[derive(Parser)]
#[command(name = "agentmem", version, about = "Tiered conversational memory engine")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest a JSONL file of turns into a conversation's persistence directory.
    Ingest {
        #[arg(long)]
        conv: String,
        #[arg(long)]
        file: PathBuf,
        #[command(flatten)]
        store: StoreArgs,
    },
    /// Answer a question from a stored conversation or a running server.
    Query {
        #[arg(long)]
        conv: String,
        question: String,
        /// Base URL of a running `serve`, e.g. http://127.0.0.1:8080
        #[arg(long)]
        server: Option<String>,
        /// Bearer token for the server.
        #[arg(long, env = "AGENTMEM_BEARER_TOKEN")]
        token: Option<String>,
        /// Print the full answer record as JSON.
        #[arg(long)]
        json: bool,
        #[command(flatten)]
        store: StoreArgs,
    },
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Aggregate a trace into a metric table.
    Report {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, default_value = "hiermem")]
        method: String,
        /// Print the report as JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        bind: Option<String>,
        #[command(flatten)]
        store: StoreArgs,
    },
}

#[derive(Args)]
struct StoreArgs {
    /// Root of per-conversation persistence directories.
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Run a benchmark and write the per-sample trace.
    Run {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "canonical")]
        format: DatasetFormat,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the configured pipeline.
        #[arg(long)]
        pipeline: Option<PipelineKind>,
        #[arg(long)]
        no_simplify: bool,
        #[arg(long)]
        sequential: bool,
    },
    /// Build scale or position variants of a dataset.
    Variants {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "canonical")]
        format: DatasetFormat,
        #[arg(long)]
        kind: VariantKind,
        #[arg(long, default_value_t = 0.5)]
        factor: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Only this position; all three (with suffixed ids) otherwise.
        #[arg(long)]
        position: Option<Position>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantKind {
    Scale,
    Position,
}

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{path}:{line}: {message}")]
    Input { path: PathBuf, line: usize, message: String },
    #[error("server: {0}")]
    Remote(String),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Engine(_) => "engine",
            CliError::Bench(_) => "bench",
            CliError::Service(_) => "service",
            CliError::Io(_) => "io",
            CliError::Input { .. } => "input",
            CliError::Remote(_) => "remote",
        }
    }
}

fn data_dir(cfg: &AppConfig, store: &StoreArgs) -> PathBuf {
    store.data_dir.clone().unwrap_or_else(|| cfg.service.data_dir.clone())
}

fn open_engine(cfg: &AppConfig, dir: &Path, conv: &str, create: bool) -> Result<Engine, CliError> {
    let gateway = cfg.build_gateway()?;
    let prompts = cfg.build_prompts()?;
    if dir.join(MANIFEST_FILE).exists() {
        let engine = Engine::load(dir, gateway, prompts)?;
        if engine.conversation_id() != conv {
            return Err(EngineError::WrongConversation { expected: conv.into(), found: engine.conversation_id().into() }.into());
        }
        Ok(engine)
    } else if create {
        Ok(Engine::new(conv, cfg.engine.clone(), gateway, prompts)?)
    } else {
        Err(ServiceError::NotFound(conv.to_string()).into())
    }
}

fn read_turns(path: &Path) -> Result<Vec<IncomingMessage>, CliError> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let turn = serde_json::from_str(&line)
            .map_err(|e| CliError::Input { path: path.to_path_buf(), line: i + 1, message: e.to_string() })?;
        out.push(turn);
    }
    Ok(out)
}

fn print_json<T: Serialize>(v: &T) {
    println!("{}", serde_json::to_string(v).expect("serializable"));
}

fn ingest(cfg: &AppConfig, conv: &str, file: &Path, store: &StoreArgs) -> Result<(), CliError> {
    let dir = data_dir(cfg, store).join(conv);
    let turns = read_turns(file)?;
    let mut engine = open_engine(cfg, &dir, conv, true)?;
    let mut last = None;
    for t in turns.iter().cloned() {
        last = Some(engine.ingest(t)?);
    }
    engine.save(&dir)?;
    print_json(&serde_json::json!({
        "conversation_id": conv,
        "ingested": turns.len(),
        "total_messages": engine.ingested(),
        "last": last,
    }));
    Ok(())
}

fn query_remote(server: &str, conv: &str, question: &str, token: Option<&str>) -> Result<agentmem::hiermem::Answer, CliError> {
    let url = format!("{}/v1/conversations/{conv}/answers", server.trim_end_matches('/'));
    let client = reqwest::blocking::Client::new();
    let mut req = client.post(url).json(&AnswerRequest { question: question.into() });
    if let Some(t) = token {
        req = req.bearer_auth(t);
    }
    let resp = req.send().map_err(|e| CliError::Remote(e.to_string()))?;
    let env: ApiEnvelope<agentmem::hiermem::Answer> = resp.json().map_err(|e| CliError::Remote(e.to_string()))?;
    match (env.payload, env.error) {
        (Some(a), None) => Ok(a),
        (_, Some(e)) => Err(CliError::Remote(format!("{}: {}", e.code, e.message))),
        _ => Err(CliError::Remote("empty envelope".into())),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = AppConfig::resolve(cli.config.as_deref())?;
    match cli.command {
        Command::Ingest { conv, file, store } => ingest(&cfg, &conv, &file, &store),
        Command::Query { conv, question, server, token, json, store } => {
            let answer = match server {
                Some(url) => query_remote(&url, &conv, &question, token.as_deref())?,
                None => {
                    let dir = data_dir(&cfg, &store).join(&conv);
                    let mut engine = open_engine(&cfg, &dir, &conv, false)?;
                    let answer = engine.answer(&question)?;
                    // access counts feed promotion, so keep them
                    engine.save(&dir)?;
                    answer
                }
            };
            if json {
                print_json(&answer);
            } else {
                println!("{}", answer.answer);
            }
            Ok(())
        }
        Command::Bench(BenchCommand::Run { dataset, format, out, pipeline, no_simplify, sequential }) => {
            let samples = benchkit::load_dataset(&dataset, format)?;
            let gateway = cfg.build_gateway()?;
            let prompts = cfg.build_prompts()?;
            let kind = pipeline.unwrap_or(cfg.pipeline);
            let (g, p, engine_cfg) = (gateway.clone(), prompts.clone(), cfg.engine.clone());
            let factory = move |id: &str| build_pipeline(kind, id, &engine_cfg, g.clone(), p.clone());
            let opts = RunOptions { simplify: !no_simplify, parallel: !sequential };
            let trace = benchkit::run_benchmark(&samples, &gateway, &prompts, &factory, &opts)?;
            benchkit::write_trace(&out, &trace)?;
            let report = MetricReport::from_trace(&trace);
            print!("{}", report.to_table(&format!("{kind:?}").to_lowercase()));
            Ok(())
        }
        Command::Bench(BenchCommand::Variants { dataset, format, kind, factor, seed, position, out }) => {
            let samples = benchkit::load_dataset(&dataset, format)?;
            let variants: Vec<BenchSample> = match kind {
                VariantKind::Scale => {
                    let pool = benchkit::session_pool(&samples);
                    samples
                        .iter()
                        .map(|s| benchkit::build_scale_variant(s, factor, &pool, seed))
                        .collect::<Result<_, _>>()?
                }
                VariantKind::Position => {
                    let mut out = Vec::new();
                    for s in &samples {
                        match position {
                            Some(p) => out.push(benchkit::build_position_variant(s, p)?),
                            None => {
                                for p in Position::ALL {
                                    let mut v = benchkit::build_position_variant(s, p)?;
                                    v.sample_id = format!("{}@{}", s.sample_id, format!("{p:?}").to_lowercase());
                                    out.push(v);
                                }
                            }
                        }
                    }
                    out
                }
            };
            benchkit::write_canonical(&out, &variants)?;
            print_json(&serde_json::json!({ "samples": variants.len(), "out": out }));
            Ok(())
        }
        Command::Report { trace, method, json } => {
            let report = MetricReport::from_trace(&benchkit::read_trace(&trace)?);
            if json {
                println!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
            } else {
                print!("{}", report.to_table(&method));
            }
            Ok(())
        }
        Command::Serve { port, bind, store } => {
            let mut cfg = cfg;
            if let Some(p) = port {
                cfg.service.port = p;
            }
            if let Some(b) = bind {
                cfg.service.bind = b;
            }
            cfg.service.data_dir = data_dir(&cfg, &store);
            let addr = format!("{}:{}", cfg.service.bind, cfg.service.port);
            let state = service::AppState::new(cfg)?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(&addr).await?;
                service::serve(state, listener).await
            })?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({ "error": { "kind": e.kind(), "message": e.to_string() } });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
