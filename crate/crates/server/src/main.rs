use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use clap::Parser;
use urbanflow_server::{router, Config, Service};

#[derive(Parser)]
#[command(about = "Serve shared dataflow workspaces over HTTP")]
struct Args {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    /// Loader paths are resolved under this directory; the template
    /// registry lives here too.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Embedded database file. Without it all state is in memory.
    #[arg(long)]
    db_path: Option<PathBuf>,
    #[arg(long, default_value_t = 60_000)]
    exec_timeout_ms: u64,
    #[arg(long, default_value_t = urbanflow::provenance::DEFAULT_CAPTURE_ROW_LIMIT)]
    capture_row_limit: usize,
    /// Worker command for node code that is not an op document.
    #[arg(long, num_args = 1.., value_delimiter = ' ')]
    worker: Option<Vec<String>>,
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    tracing_subscriber::fmt().with_env_filter(tracing_subscriber::EnvFilter::from_default_env()).init();
    let args = Args::parse();
    let config = Config {
        data_dir: args.data_dir,
        db_path: args.db_path,
        exec_timeout: Duration::from_millis(args.exec_timeout_ms),
        capture_row_limit: args.capture_row_limit,
        worker: args.worker,
    };
    let svc = Arc::new(Service::open(config)?);
    let addr = SocketAddr::from(([0, 0, 0, 0], args.port));
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on {addr}");
    axum::serve(listener, router(svc)).await?;
    Ok(())
}
