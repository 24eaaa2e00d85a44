use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::Parser;
use icp_core::clock::SystemClock;
use icp_service::config::{ServiceConfig, CONFIG_ENV};
use icp_service::{http, ControlPlane};
use tracing_subscriber::EnvFilter;

/// Identity control plane daemon.
#[derive(Debug, Parser)]
#[command(name = "icpd", version)]
struct Args {
    /// Configuration file.
    #[arg(long, env = CONFIG_ENV)]
    config: PathBuf,
    /// Overrides `listen` from the configuration file.
    #[arg(long)]
    listen: Option<std::net::SocketAddr>,
}

async fn shutdown_signal() {
    let _ = tokio::signal::ctrl_c().await;
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .init();
    let args = Args::parse();
    let mut cfg = match ServiceConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("icpd: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(listen) = args.listen {
        cfg.listen = listen;
    }
    let plane = match ControlPlane::from_config(&cfg, Arc::new(SystemClock)) {
        Ok(p) => Arc::new(p),
        Err(e) => {
            eprintln!("icpd: {e}");
            return ExitCode::FAILURE;
        }
    };
    let listener = match tokio::net::TcpListener::bind(cfg.listen).await {
        Ok(l) => l,
        Err(e) => {
            eprintln!("icpd: bind {}: {e}", cfg.listen);
            return ExitCode::FAILURE;
        }
    };
    tracing::info!(
        trust_domain = %cfg.trust_domain,
        listen = %cfg.listen,
        policy_version = %plane.policies().version,
        "icpd ready"
    );
    if let Err(e) = http::serve(listener, http::router(plane), shutdown_signal()).await {
        eprintln!("icpd: {e}");
        return ExitCode::FAILURE;
    }
    ExitCode::SUCCESS
}
