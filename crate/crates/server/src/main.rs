use std::net::SocketAddr;

use clap::Parser;
use gsculpt_server::{router, workers_from_env, AppState};
use tracing_subscriber::EnvFilter;

/// Serve the interactive segmentation and editing session API.
#[derive(Parser)]
#[command(name = "gsculpt-server", version)]
struct Args {
    /// Address to listen on.
    #[arg(long, env = "GSCULPT_ADDR", default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
}

#[tokio::main]
async fn main() -> std::io::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .init();
    let args = Args::parse();
    let workers = workers_from_env();
    let listener = tokio::net::TcpListener::bind(args.addr).await?;
    tracing::info!(addr = %listener.local_addr()?, workers, "listening");
    axum::serve(listener, router(AppState::new(workers)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
