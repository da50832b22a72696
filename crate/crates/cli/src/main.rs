//! `rehearsal`: parse screenplays, run sessions, compare modes and replay
//! recorded runs. Every command talks to the service over HTTP, either a
//! remote one (`--server`) or one started in-process on a loopback port.

mod error;
mod flow;
mod replay;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use rehearsal_client::Client;
use rehearsal_core::api::UploadScreenplay;
use rehearsal_core::orchestrator::ComparisonTable;
use rehearsal_core::provider::scripted::RecordingProvider;
use rehearsal_core::{LlmProvider, Mode};
use rehearsal_service::{ProviderKind, ServiceConfig};

use crate::error::CliError;
use crate::flow::{RunInputs, RunRecord};

#[derive(Debug, Parser)]
#[command(name = "rehearsal", version, about = "Character-grounded screenplay feedback")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// TOML config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Use a running service instead of an in-process one.
    #[arg(long, global = true)]
    server: Option<String>,
    /// Store directory for the in-process service (default: a temporary one).
    #[arg(long, global = true)]
    store: Option<PathBuf>,
    /// heuristic, http or transcript.
    #[arg(long, global = true)]
    provider: Option<String>,
    /// Transcript to answer from when `--provider transcript`.
    #[arg(long, global = true)]
    transcript: Option<PathBuf>,
    #[arg(long, global = true)]
    endpoint: Option<String>,
    #[arg(long, global = true)]
    model: Option<String>,
    /// RFC 3339 time used for every mark.
    #[arg(long, global = true)]
    fixed_clock: Option<String>,
    /// Segment scenes with patterns only.
    #[arg(long, global = true)]
    no_model_segmentation: bool,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Args)]
struct Source {
    /// Screenplay text file.
    file: PathBuf,
    #[arg(long)]
    title: Option<String>,
    /// Character bios file.
    #[arg(long)]
    bios: Option<PathBuf>,
    /// Story outline file.
    #[arg(long)]
    outline: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse a screenplay and write the structured result.
    Parse {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one session to the end and write its report.
    Run {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        mode: Mode,
        /// Comma-separated character names.
        #[arg(long, value_delimiter = ',')]
        roles: Vec<String>,
        /// Report destination (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the full session document here.
        #[arg(long)]
        export: Option<PathBuf>,
        /// Write the value marks here.
        #[arg(long)]
        marks: Option<PathBuf>,
        /// Mark this thought or feedback id; repeatable.
        #[arg(long = "mark")]
        mark: Vec<String>,
        /// Mark every inner thought and accepted item.
        #[arg(long)]
        mark_all: bool,
        #[arg(long)]
        session_id: Option<String>,
        /// Record provider traffic to a transcript for `replay`.
        #[arg(long)]
        record: Option<PathBuf>,
    },
    /// Run all four modes and write a side-by-side comparison.
    Compare {
        #[command(flatten)]
        source: Source,
        #[arg(long, value_delimiter = ',')]
        roles: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Start the HTTP service.
    Serve {
        #[arg(long)]
        bind: Option<String>,
    },
    /// Re-run a recorded session and check its outputs are byte-identical.
    Replay {
        transcript: PathBuf,
        /// Write the replayed artifacts here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn service_config(global: &Global) -> Result<ServiceConfig, CliError> {
    let mut config = ServiceConfig::load(global.config.as_deref()).map_err(|e| CliError::Usage(e.to_string()))?;
    if let Some(p) = &global.provider {
        config.provider_kind = serde_json::from_value(serde_json::Value::String(p.to_lowercase()))
            .map_err(|_| CliError::Usage(format!("--provider `{p}` is not one of heuristic, http, transcript")))?;
    }
    if let Some(t) = &global.transcript {
        config.transcript = Some(t.clone());
        if global.provider.is_none() {
            config.provider_kind = ProviderKind::Transcript;
        }
    }
    if let Some(e) = &global.endpoint {
        config.provider.endpoint = e.clone();
    }
    if let Some(m) = &global.model {
        config.provider.model = m.clone();
    }
    if let Some(c) = &global.fixed_clock {
        config.fixed_clock = Some(c.clone());
    }
    if global.no_model_segmentation {
        config.model_segmentation = false;
    }
    if let Some(s) = &global.store {
        config.store_root = s.clone();
    }
    Ok(config)
}

/// A client plus whatever keeps its in-process service alive.
pub struct Connection {
    pub client: Client,
    _store: Option<tempfile::TempDir>,
}

pub async fn connect(
    global_server: Option<&str>,
    global_store: Option<&Path>,
    mut config: ServiceConfig,
    provider: Option<Arc<dyn LlmProvider>>,
) -> Result<Connection, CliError> {
    if let Some(url) = global_server {
        return Ok(Connection {
            client: Client::new(url),
            _store: None,
        });
    }
    let temp = match global_store {
        Some(_) => None,
        None => {
            let dir = tempfile::tempdir().map_err(|e| CliError::Io(format!("temporary store: {e}")))?;
            config.store_root = dir.path().to_path_buf();
            Some(dir)
        }
    };
    let provider = match provider {
        Some(p) => p,
        None => rehearsal_service::build_provider(&config).map_err(CliError::from_start)?,
    };
    let state = rehearsal_service::state_with_provider(&config, provider).map_err(CliError::from_start)?;
    let (addr, _) = rehearsal_service::spawn(state, "127.0.0.1:0").await.map_err(CliError::from_start)?;
    Ok(Connection {
        client: Client::new(format!("http://{addr}")),
        _store: temp,
    })
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))
}

pub fn write(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => write(p, text),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn load_source(source: &Source) -> Result<UploadScreenplay, CliError> {
    let title = source.title.clone().unwrap_or_else(|| {
        source
            .file
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "Untitled".into())
    });
    Ok(UploadScreenplay {
        title,
        body: read(&source.file)?,
        bios: source.bios.as_deref().map(read).transpose()?,
        outline: source.outline.as_deref().map(read).transpose()?,
    })
}

async fn execute(cli: Cli) -> Result<(), CliError> {
    let global = &cli.global;
    match cli.command {
        Command::Parse { source, out } => {
            let upload = load_source(&source)?;
            let conn = connect(global.server.as_deref(), global.store.as_deref(), service_config(global)?, None).await?;
            let summary = conn.client.upload_screenplay(&upload).await?;
            for d in &summary.diagnostics {
                eprintln!("note: {d}");
            }
            let parsed = conn.client.screenplay(&summary.id).await?;
            emit(out.as_deref(), &serde_json::to_string_pretty(&parsed).expect("screenplay serializes"))
        }
        Command::Run {
            source,
            mode,
            roles,
            out,
            export,
            marks,
            mark,
            mark_all,
            session_id,
            record,
        } => {
            let upload = load_source(&source)?;
            let mut config = service_config(global)?;
            let recorder = match &record {
                Some(_) if global.server.is_some() => {
                    return Err(CliError::Usage("--record needs the in-process service; drop --server".into()))
                }
                Some(_) => {
                    if config.fixed_clock.is_none() {
                        let now = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true);
                        config.fixed_clock = Some(now);
                    }
                    let inner = rehearsal_service::build_provider(&config).map_err(CliError::from_start)?;
                    Some(Arc::new(RecordingProvider::new(inner)))
                }
                None => None,
            };
            let provider = recorder.clone().map(|r| r as Arc<dyn LlmProvider>);
            let conn = connect(global.server.as_deref(), global.store.as_deref(), config.clone(), provider).await?;
            let inputs = RunInputs {
                upload,
                mode,
                roles,
                session_id,
                marks: mark,
                mark_all,
            };
            let outputs = flow::drive(&conn.client, &inputs).await?;
            emit(out.as_deref(), &outputs.report)?;
            if let Some(p) = &export {
                write(p, &outputs.export)?;
            }
            if let Some(p) = &marks {
                write(p, &outputs.marks)?;
            }
            if let (Some(path), Some(recorder)) = (&record, recorder) {
                let header = RunRecord::new(&inputs, &outputs, &config);
                let transcript = recorder.transcript(serde_json::to_value(&header).expect("record serializes"));
                let jsonl = transcript.to_jsonl();
                write(path, &jsonl)?;
                eprintln!("recorded {} exchange(s) to {}", jsonl.lines().count().saturating_sub(2), path.display());
            }
            eprintln!("session {} finished", outputs.session_id);
            Ok(())
        }
        Command::Compare { source, roles, out } => {
            let upload = load_source(&source)?;
            let conn = connect(global.server.as_deref(), global.store.as_deref(), service_config(global)?, None).await?;
            let mut reports = Vec::new();
            for mode in Mode::ALL {
                let inputs = RunInputs {
                    upload: upload.clone(),
                    mode,
                    roles: roles.clone(),
                    session_id: None,
                    marks: Vec::new(),
                    mark_all: false,
                };
                let outputs = flow::drive(&conn.client, &inputs).await?;
                write(&out.join(format!("{mode}.report.json")), &outputs.report)?;
                reports.push(outputs.parsed_report);
            }
            let table = ComparisonTable::from_reports(&reports);
            write(&out.join("comparison.md"), &table.to_markdown())?;
            write(
                &out.join("comparison.json"),
                &serde_json::to_string_pretty(&table).expect("table serializes"),
            )?;
            print!("{}", table.to_markdown());
            Ok(())
        }
        Command::Serve { bind } => {
            let mut config = service_config(global)?;
            if let Some(b) = bind {
                config.bind = b;
            }
            rehearsal_service::serve(&config).await.map_err(CliError::from_start)
        }
        Command::Replay { transcript, out } => replay::replay(&transcript, out.as_deref()).await,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => tracing::Level::WARN,
        1 => tracing::Level::INFO,
        _ => tracing::Level::DEBUG,
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_max_level(level)
        .with_target(false)
        .init();
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: cannot start runtime: {e}");
            return ExitCode::from(1);
        }
    };
    match runtime.block_on(execute(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
