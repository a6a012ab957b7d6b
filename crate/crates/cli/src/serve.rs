use std::net::IpAddr;
use std::path::PathBuf;
use std::sync::Arc;

use clap::Args;
use divrec_service::config::ConfigLayer;
use divrec_service::{AppState, ServiceConfig, Snapshot};
use tracing::{info, warn};

use crate::failure::{Classify, StageResult};

/// Settings resolve in this order, later winning: built-in defaults, the config file,
/// `DIVREC_*` environment variables, then these flags.
#[derive(Debug, Args)]
pub struct ServeArgs {
    /// TOML file with any of: data_dir, model_dir, seed, arm_seed, session_timeout_secs,
    /// pool_size, host, port, event_log.
    #[arg(long, env = "DIVREC_CONFIG")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub model_dir: Option<PathBuf>,
    /// Seed for session tokens. Omit in production.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Arm seed, used when the model directory has cohorts.csv but no arms.csv.
    #[arg(long)]
    pub arm_seed: Option<u64>,
    /// Inactivity after which a session token stops working.
    #[arg(long)]
    pub session_timeout_secs: Option<i64>,
    #[arg(long)]
    pub pool_size: Option<usize>,
    #[arg(long)]
    pub host: Option<IpAddr>,
    #[arg(long)]
    pub port: Option<u16>,
    /// JSON-lines event log; defaults to events.jsonl in the data directory.
    #[arg(long)]
    pub event_log: Option<PathBuf>,
}

impl ServeArgs {
    fn layer(&self) -> ConfigLayer {
        ConfigLayer {
            data_dir: self.data_dir.clone(),
            model_dir: self.model_dir.clone(),
            seed: self.seed,
            arm_seed: self.arm_seed,
            session_timeout_secs: self.session_timeout_secs,
            pool_size: self.pool_size,
            host: self.host,
            port: self.port,
            event_log: self.event_log.clone(),
        }
    }

    pub fn resolve(&self) -> StageResult<ServiceConfig> {
        let file = match &self.config {
            Some(p) => ConfigLayer::from_file(p).user("reading the config file")?,
            None => ConfigLayer::default(),
        };
        let env = ConfigLayer::from_env(std::env::vars()).user("reading the environment")?;
        Ok(ServiceConfig::resolve([&file, &env, &self.layer()]))
    }
}

pub fn run(args: &ServeArgs) -> StageResult {
    let config = args.resolve()?;
    let state = Arc::new(AppState::open(&config).user("loading the service snapshot")?);
    let runtime = tokio::runtime::Runtime::new().internal("starting the runtime")?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(config.addr())
            .await
            .user(format!("binding {}", config.addr()))?;
        info!(addr = %config.addr(), events = %config.event_log_path().display(), "serving");
        tokio::spawn(reload_on_hangup(state.clone(), config.clone()));
        divrec_service::serve(state, listener, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .internal("serving")
    })
}

/// SIGHUP re-reads the model directory and swaps the snapshot in; sessions stay open.
#[cfg(unix)]
async fn reload_on_hangup(state: Arc<AppState>, config: ServiceConfig) {
    use tokio::signal::unix::{signal, SignalKind};
    let Ok(mut hangups) = signal(SignalKind::hangup()) else {
        warn!("SIGHUP handler unavailable; reload by restarting");
        return;
    };
    while hangups.recv().await.is_some() {
        match Snapshot::load(&config) {
            Ok(s) => {
                state.swap_snapshot(s);
                info!("snapshot reloaded");
            }
            Err(e) => warn!("reload failed, keeping the current snapshot: {e}"),
        }
    }
}

#[cfg(not(unix))]
async fn reload_on_hangup(_: Arc<AppState>, _: ServiceConfig) {}
