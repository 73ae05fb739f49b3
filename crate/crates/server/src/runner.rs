//! Starting an optimization: bind the protocol server, spawn the coordinator,
//! and hand back a handle to wait on.

use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::sync::Arc;
use std::time::Duration;

use hpo_core::Study;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::{mpsc, oneshot, watch};
use tokio::task::JoinHandle;
use tracing::{info, warn};

use crate::api::{router, AppState};
use crate::coordinator::{Coordinator, CoordinatorConfig, ResourcePool, RunReport, Snapshot};
use crate::scheduler::{LocalScheduler, Scheduler};

pub const DEFAULT_PORT: u16 = 8880;
pub const DEFAULT_POLL_INTERVAL: Duration = Duration::from_millis(250);

/// Capacity of the queue between request handlers and the coordinator.
const COMMAND_QUEUE: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunnerConfig {
    /// Shell command that runs one trial.
    pub command: String,
    pub max_concurrent: usize,
    /// Resource tokens handed to workers; empty means no declared resources.
    pub resources: Vec<String>,
    pub poll_interval: Duration,
    pub trial_timeout: Option<Duration>,
    pub bind: SocketAddr,
}

impl Default for RunnerConfig {
    fn default() -> Self {
        Self {
            command: String::new(),
            max_concurrent: 1,
            resources: Vec::new(),
            poll_interval: DEFAULT_POLL_INTERVAL,
            trial_timeout: None,
            bind: SocketAddr::new(IpAddr::V4(Ipv4Addr::LOCALHOST), DEFAULT_PORT),
        }
    }
}

impl RunnerConfig {
    pub fn validate(&self) -> Result<(), RunnerError> {
        if self.max_concurrent == 0 {
            return Err(RunnerError::InvalidConfig("max_concurrent must be at least 1".into()));
        }
        if !self.resources.is_empty() && self.max_concurrent > self.resources.len() {
            return Err(RunnerError::InvalidConfig(format!(
                "max_concurrent {} exceeds the {} declared resources",
                self.max_concurrent,
                self.resources.len()
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        if let Some(dup) = self.resources.iter().find(|r| !seen.insert(*r)) {
            return Err(RunnerError::InvalidConfig(format!("resource {dup:?} is declared twice")));
        }
        if self.poll_interval.is_zero() {
            return Err(RunnerError::InvalidConfig("poll interval must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("invalid runner configuration: {0}")]
    InvalidConfig(String),
    #[error("port {0} is already in use")]
    PortInUse(SocketAddr),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error("scheduler unavailable: {0}")]
    SchedulerUnavailable(String),
}

/// A running optimization.
pub struct RunHandle {
    addr: SocketAddr,
    snapshot: watch::Receiver<Arc<Snapshot>>,
    coordinator: JoinHandle<RunReport>,
    server: JoinHandle<()>,
    shutdown: oneshot::Sender<()>,
}

impl RunHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Latest published snapshot.
    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.borrow().clone()
    }

    /// Waits for the optimization to finish, then stops the server.
    pub async fn wait(self) -> RunReport {
        let report = self.coordinator.await.expect("coordinator task panicked");
        let _ = self.shutdown.send(());
        let mut server = self.server;
        if tokio::time::timeout(Duration::from_secs(2), &mut server).await.is_err() {
            warn!("server did not shut down in time; aborting open connections");
            server.abort();
        }
        report
    }
}

/// Binds the protocol server and starts the coordinator with `scheduler`.
pub async fn start(study: Study, scheduler: Box<dyn Scheduler>, config: &RunnerConfig) -> Result<RunHandle, RunnerError> {
    config.validate()?;
    let listener = TcpListener::bind(config.bind).await.map_err(|source| {
        if source.kind() == std::io::ErrorKind::AddrInUse {
            RunnerError::PortInUse(config.bind)
        } else {
            RunnerError::Bind { addr: config.bind, source }
        }
    })?;
    let addr = listener.local_addr().map_err(|source| RunnerError::Bind { addr: config.bind, source })?;
    let worker_addr = if addr.ip().is_unspecified() {
        SocketAddr::new(IpAddr::V4(Ipv4Addr::LOCALHOST), addr.port())
    } else {
        addr
    };

    let pool = ResourcePool::new(&config.resources, config.max_concurrent);
    let coordinator_config = CoordinatorConfig {
        poll_interval: config.poll_interval,
        trial_timeout: config.trial_timeout,
        server: worker_addr.to_string(),
    };
    let (coordinator, snapshot) = Coordinator::new(study, scheduler, pool, coordinator_config);
    let (commands, inbox) = mpsc::channel(COMMAND_QUEUE);
    let app = router(AppState { commands, snapshot: snapshot.clone() });

    let (shutdown, shutdown_rx) = oneshot::channel::<()>();
    let server = tokio::spawn(async move {
        let serve = axum::serve(listener, app).with_graceful_shutdown(async {
            let _ = shutdown_rx.await;
        });
        if let Err(e) = serve.await {
            warn!(error = %e, "server error");
        }
    });
    let coordinator = tokio::spawn(coordinator.run(inbox));
    info!(%addr, "trial server listening");
    Ok(RunHandle { addr, snapshot, coordinator, server, shutdown })
}

/// Runs `study` to completion with worker processes on this machine.
pub async fn optimize(study: Study, config: &RunnerConfig) -> Result<RunReport, RunnerError> {
    if config.command.trim().is_empty() {
        return Err(RunnerError::InvalidConfig("command must not be empty".into()));
    }
    let scheduler = LocalScheduler::new(config.command.clone());
    Ok(start(study, Box::new(scheduler), config).await?.wait().await)
}
