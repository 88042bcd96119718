//! `anthro-server`: HTTP/SSE front end for the conversation engine.

use std::path::PathBuf;
use std::sync::Arc;

use anthro_core::clock::SystemClock;
use anthro_core::fixtures::{demo_persona, demo_provider};
use anthro_core::llm::Llm;
use anthro_core::memory::knowledge::{KnowledgeSource, OfflineCorpus};
use anthro_core::orchestrator::{Engine, EngineConfig};
use anthro_core::provider::{RemoteConfig, RemoteProvider, ScriptedProvider, TextGenerator};
use anthro_core::templates::Templates;
use anthro_service::{load_personas, router, Registry};
use clap::{Parser, ValueEnum};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProviderKind {
    Scripted,
    Remote,
}

#[derive(Debug, Parser)]
#[command(name = "anthro-server", about = "Serve persona conversations over HTTP with streamed turns")]
struct Args {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value = "./data")]
    data_dir: PathBuf,
    /// Directory of persona JSON files. The bundled demo persona is always available.
    #[arg(long)]
    persona_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "scripted")]
    provider: ProviderKind,
    /// Seed for the analytical loop's continuation draws.
    #[arg(long)]
    seed: Option<u64>,
    /// Script for the scripted provider (JSON lines). Defaults to the bundled demo script.
    #[arg(long)]
    script: Option<PathBuf>,
    /// Remote provider settings (JSON). Environment overrides apply when absent.
    #[arg(long)]
    remote_config: Option<PathBuf>,
    /// Engine configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory of .txt/.md documents used as an offline knowledge source.
    #[arg(long)]
    knowledge_dir: Option<PathBuf>,
    /// Directory of prompt templates overriding the built-in set.
    #[arg(long)]
    templates: Option<PathBuf>,
}

fn fail(msg: String) -> ! {
    eprintln!("anthro-server: {msg}");
    std::process::exit(2)
}

#[tokio::main]
async fn main() {
    tracing_subscriber::fmt().with_target(false).init();
    let args = Args::parse();

    let mut config = match &args.config {
        Some(p) => EngineConfig::from_file(p).unwrap_or_else(|e| fail(format!("config {}: {e}", p.display()))),
        None => EngineConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.loop_cfg.rng_seed = seed;
    }

    let provider: Arc<dyn TextGenerator> = match args.provider {
        ProviderKind::Scripted => match &args.script {
            Some(p) => Arc::new(ScriptedProvider::from_file(p).unwrap_or_else(|e| fail(format!("script {}: {e}", p.display())))),
            None => Arc::new(demo_provider(0)),
        },
        ProviderKind::Remote => {
            let cfg = match &args.remote_config {
                Some(p) => RemoteConfig::from_file(p).unwrap_or_else(|e| fail(format!("remote config {}: {e}", p.display()))),
                None => RemoteConfig::from_env(),
            };
            Arc::new(RemoteProvider::new(cfg))
        }
    };
    let templates = match &args.templates {
        Some(p) => Templates::load_dir(p).unwrap_or_else(|e| fail(format!("templates {}: {e}", p.display()))),
        None => Templates::builtin(),
    };

    let mut sources: Vec<Arc<dyn KnowledgeSource>> = Vec::new();
    if let Some(dir) = &args.knowledge_dir {
        let corpus = OfflineCorpus::load_dir(dir).unwrap_or_else(|e| fail(format!("knowledge {}: {e}", dir.display())));
        sources.push(Arc::new(corpus));
    }

    let mut personas = match &args.persona_dir {
        Some(dir) => load_personas(dir).unwrap_or_else(|e| fail(format!("personas {}: {e}", dir.display()))),
        None => Default::default(),
    };
    let demo = demo_persona();
    personas.entry(demo.id.clone()).or_insert(demo);

    let engine = Engine::new(Llm::new(provider, templates), config, Arc::new(SystemClock::new()))
        .with_sources(sources)
        .with_data_dir(&args.data_dir)
        .unwrap_or_else(|e| fail(format!("data dir {}: {e}", args.data_dir.display())));
    let registry = Registry::open(Arc::new(engine), personas).unwrap_or_else(|e| fail(e.to_string()));

    let addr = format!("{}:{}", args.host, args.port);
    let listener = tokio::net::TcpListener::bind(&addr).await.unwrap_or_else(|e| fail(format!("bind {addr}: {e}")));
    tracing::info!(%addr, "listening");
    axum::serve(listener, router(Arc::new(registry)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .unwrap_or_else(|e| fail(format!("server: {e}")));
}
