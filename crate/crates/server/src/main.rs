use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use regulearn::analyzer::RuleSet;
use regulearn::clock::SystemClock;
use regulearn::engine::{replay_session_labels, Engine, EngineConfig};
use regulearn::model::Vocabulary;

#[derive(Parser)]
#[command(name = "regulearn", version, about = "Learning-trace engine server and research tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Start every service behind the HTTP API.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the configured port; 0 picks a free one.
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Write an experiment's events as newline-delimited JSON.
    Export {
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        experiment: String,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print experiment statistics recomputed from the event log.
    Stats {
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        experiment: String,
    },
    /// Re-run the labeler over one session of an export and print labels,
    /// one JSON document per line.
    ReplaySession {
        /// Export file produced by `export` or the export endpoint.
        export: PathBuf,
        #[arg(long)]
        session: String,
        /// Label rule file; the bundled rules when omitted.
        #[arg(long)]
        rules: Option<PathBuf>,
        /// Actions to accept beyond the built-in vocabulary.
        #[arg(long = "extra-action")]
        extra_actions: Vec<String>,
    },
}

fn load_config(path: Option<&PathBuf>) -> anyhow::Result<EngineConfig> {
    match path {
        Some(p) => EngineConfig::load(p).map_err(anyhow::Error::msg),
        None => Ok(EngineConfig::default()),
    }
}

fn open_offline(data_dir: PathBuf) -> anyhow::Result<Engine> {
    if !data_dir.exists() {
        bail!("data directory {} does not exist", data_dir.display());
    }
    let config = EngineConfig {
        data_dir: Some(data_dir),
        ..EngineConfig::default()
    };
    Engine::open(config, Arc::new(SystemClock)).context("opening engine state")
}

fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Serve { config, port, data_dir } => {
            let mut cfg = load_config(config.as_ref())?;
            if let Some(p) = port {
                cfg.port = p;
            }
            if data_dir.is_some() {
                cfg.data_dir = data_dir;
            }
            serve(cfg)
        }
        Command::Export { data_dir, experiment, out } => {
            let engine = open_offline(data_dir)?;
            let bytes = engine.export(&experiment, None)?;
            match out {
                Some(p) => std::fs::write(&p, &bytes).with_context(|| p.display().to_string())?,
                None => std::io::stdout().write_all(&bytes)?,
            }
            engine.shutdown();
            Ok(())
        }
        Command::Stats { data_dir, experiment } => {
            let engine = open_offline(data_dir)?;
            let stats = engine.stats(&experiment)?;
            println!("{}", serde_json::to_string_pretty(&stats)?);
            engine.shutdown();
            Ok(())
        }
        Command::ReplaySession {
            export,
            session,
            rules,
            extra_actions,
        } => {
            let bytes = std::fs::read(&export).with_context(|| export.display().to_string())?;
            let rules = match rules {
                Some(p) => RuleSet::from_json(&std::fs::read_to_string(&p)?).map_err(anyhow::Error::msg)?,
                None => RuleSet::default_rules(),
            };
            let vocab = Vocabulary::with_extra(extra_actions);
            let labels = replay_session_labels(&bytes, &session, &Arc::new(rules), &vocab).map_err(anyhow::Error::msg)?;
            let mut out = std::io::stdout().lock();
            for l in labels {
                writeln!(out, "{}", serde_json::to_string(&l)?)?;
            }
            Ok(())
        }
    }
}

fn serve(cfg: EngineConfig) -> anyhow::Result<()> {
    let port = cfg.port;
    let engine = Arc::new(Engine::open(cfg, Arc::new(SystemClock)).context("opening engine")?);
    let _ticker = engine.start_ticker();
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(SocketAddr::from(([127, 0, 0, 1], port))).await?;
        // Scripts read this line to find the bound port.
        println!("listening on {}", listener.local_addr()?);
        std::io::stdout().flush()?;
        regulearn_server::serve(Arc::clone(&engine), listener, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
        anyhow::Ok(())
    })?;
    engine.shutdown();
    Ok(())
}
