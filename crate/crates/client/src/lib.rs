//! Worker-side client. A worker started by the runner finds the server and
//! its trial id in the environment, fetches its trial, streams metrics and
//! may poll for a stop request.
//!
//! ```no_run
//! use hpo_client::ClientSession;
//!
//! let session = ClientSession::from_env()?;
//! let trial = session.get_trial()?;
//! for epoch in 0..15 {
//!     let accuracy = 0.9; // train one epoch here
//!     session.send_metrics(epoch, accuracy, [("loss", 0.31)])?;
//!     if session.should_stop() {
//!         break;
//!     }
//! }
//! # let _ = trial;
//! # Ok::<(), hpo_client::ClientError>(())
//! ```

use std::collections::BTreeMap;
use std::thread::sleep;
use std::time::Duration;

use hpo_core::protocol::{ErrorBody, MetricsPayload, ResultsDocument, StopFlag, TrialPayload, WireObjective};
use hpo_core::TrialId;
use reqwest::blocking::{Client, RequestBuilder, Response};
use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use thiserror::Error;
use tracing::debug;

pub const TRIAL_ID_VAR: &str = "SHERPA_TRIAL_ID";
pub const SERVER_VAR: &str = "SHERPA_SERVER";
pub const RESOURCE_VAR: &str = "SHERPA_RESOURCE";

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("not running inside a trial: {0}")]
    NotInTrialContext(String),
    #[error("server unreachable after {attempts} attempts: {detail}")]
    ServerUnreachable { attempts: u32, detail: String },
    #[error("rejected by server: {0}")]
    Rejected(String),
    #[error("unexpected response: {0}")]
    Protocol(String),
}

/// Attempts per call and the backoff before the first retry; the backoff
/// doubles after each failed attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff: Duration,
    /// Hard deadline of a single request.
    pub request_timeout: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { attempts: 5, initial_backoff: Duration::from_millis(100), request_timeout: Duration::from_secs(5) }
    }
}

/// Plain HTTP access to a trial server with retries on transport failures
/// and server errors.
#[derive(Debug, Clone)]
pub struct ServiceClient {
    base: String,
    http: Client,
    policy: RetryPolicy,
}

impl ServiceClient {
    /// `server` is `host:port` or a full `http://` URL.
    pub fn new(server: &str) -> Self {
        Self::with_policy(server, RetryPolicy::default())
    }

    pub fn with_policy(server: &str, policy: RetryPolicy) -> Self {
        let base = if server.starts_with("http://") || server.starts_with("https://") {
            server.trim_end_matches('/').to_string()
        } else {
            format!("http://{server}")
        };
        let http = Client::builder().timeout(policy.request_timeout).build().expect("HTTP client");
        Self { base, http, policy }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn send(&self, build: impl Fn(&Client) -> RequestBuilder) -> Result<Response, ClientError> {
        let mut backoff = self.policy.initial_backoff;
        let mut detail = String::new();
        for attempt in 1..=self.policy.attempts.max(1) {
            match build(&self.http).send() {
                Ok(resp) if resp.status().is_server_error() => detail = format!("status {}", resp.status()),
                Ok(resp) => return Ok(resp),
                Err(e) => detail = e.to_string(),
            }
            debug!(attempt, detail, "request failed");
            if attempt < self.policy.attempts {
                sleep(backoff);
                backoff *= 2;
            }
        }
        Err(ClientError::ServerUnreachable { attempts: self.policy.attempts.max(1), detail })
    }

    fn reject(resp: Response) -> ClientError {
        let status = resp.status();
        match resp.json::<ErrorBody>() {
            Ok(body) => ClientError::Rejected(body.error),
            Err(_) => ClientError::Rejected(format!("status {status}")),
        }
    }

    fn read<T: DeserializeOwned>(resp: Response) -> Result<T, ClientError> {
        if !resp.status().is_success() {
            return Err(Self::reject(resp));
        }
        resp.json::<T>().map_err(|e| ClientError::Protocol(e.to_string()))
    }

    pub fn trial(&self, id: TrialId) -> Result<TrialPayload, ClientError> {
        let url = format!("{}/api/trials/{id}", self.base);
        Self::read(self.send(|c| c.get(&url))?)
    }

    pub fn post_metrics(&self, metrics: &MetricsPayload) -> Result<(), ClientError> {
        let url = format!("{}/api/trials/{}/observations", self.base, metrics.trial_id);
        let resp = self.send(|c| c.post(&url).json(metrics))?;
        match resp.status() {
            StatusCode::ACCEPTED => Ok(()),
            s if s.is_success() => Err(ClientError::Protocol(format!("expected 202, got {s}"))),
            _ => Err(Self::reject(resp)),
        }
    }

    pub fn stop_requested(&self, id: TrialId) -> Result<bool, ClientError> {
        let url = format!("{}/api/trials/{id}/stop", self.base);
        Self::read::<StopFlag>(self.send(|c| c.get(&url))?).map(|f| f.stop)
    }

    /// Asks the server to stop a trial.
    pub fn stop(&self, id: TrialId) -> Result<(), ClientError> {
        let url = format!("{}/api/trials/{id}/stop", self.base);
        let resp = self.send(|c| c.post(&url))?;
        if resp.status().is_success() {
            Ok(())
        } else {
            Err(Self::reject(resp))
        }
    }

    pub fn results(&self) -> Result<ResultsDocument, ClientError> {
        let url = format!("{}/api/results", self.base);
        Self::read(self.send(|c| c.get(&url))?)
    }

    /// Raw bytes of the results document.
    pub fn results_bytes(&self) -> Result<Vec<u8>, ClientError> {
        let url = format!("{}/api/results", self.base);
        let resp = self.send(|c| c.get(&url))?;
        if !resp.status().is_success() {
            return Err(Self::reject(resp));
        }
        resp.bytes().map(|b| b.to_vec()).map_err(|e| ClientError::Protocol(e.to_string()))
    }
}

/// The worker's view of its own trial. Not meant to be shared between threads.
#[derive(Debug, Clone)]
pub struct ClientSession {
    service: ServiceClient,
    trial_id: TrialId,
    resource: Option<String>,
}

impl ClientSession {
    pub fn new(server: &str, trial_id: TrialId) -> Self {
        Self { service: ServiceClient::new(server), trial_id, resource: None }
    }

    pub fn with_policy(server: &str, trial_id: TrialId, policy: RetryPolicy) -> Self {
        Self { service: ServiceClient::with_policy(server, policy), trial_id, resource: None }
    }

    /// Builds a session from the variables the runner sets for each worker.
    pub fn from_env() -> Result<Self, ClientError> {
        Self::from_env_vars(|key| std::env::var(key).ok())
    }

    /// Like [`from_env`](Self::from_env) with a custom variable lookup.
    pub fn from_env_vars(lookup: impl Fn(&str) -> Option<String>) -> Result<Self, ClientError> {
        let server = lookup(SERVER_VAR).filter(|s| !s.trim().is_empty());
        let trial = lookup(TRIAL_ID_VAR);
        let (server, trial) = match (server, trial) {
            (Some(s), Some(t)) => (s, t),
            _ => return Err(ClientError::NotInTrialContext(format!("{SERVER_VAR} and {TRIAL_ID_VAR} must both be set"))),
        };
        let trial_id = trial
            .trim()
            .parse::<TrialId>()
            .map_err(|_| ClientError::NotInTrialContext(format!("{TRIAL_ID_VAR}={trial:?} is not a trial id")))?;
        let mut session = Self::new(server.trim(), trial_id);
        session.resource = lookup(RESOURCE_VAR);
        Ok(session)
    }

    pub fn trial_id(&self) -> TrialId {
        self.trial_id
    }

    /// The resource token assigned to this worker, passed through untouched.
    pub fn resource(&self) -> Option<&str> {
        self.resource.as_deref()
    }

    pub fn service(&self) -> &ServiceClient {
        &self.service
    }

    pub fn get_trial(&self) -> Result<TrialPayload, ClientError> {
        self.service.trial(self.trial_id)
    }

    /// Reports one observation. No finalize call is needed: the runner
    /// finalizes the trial when the worker exits.
    pub fn send_metrics<K: Into<String>>(
        &self,
        iteration: u64,
        objective: f64,
        context: impl IntoIterator<Item = (K, f64)>,
    ) -> Result<(), ClientError> {
        let context: BTreeMap<String, f64> = context.into_iter().map(|(k, v)| (k.into(), v)).collect();
        self.service.post_metrics(&MetricsPayload {
            trial_id: self.trial_id,
            iteration,
            objective: WireObjective(objective),
            context,
        })
    }

    /// Whether a stop was requested. Any failure reads as "keep going".
    pub fn should_stop(&self) -> bool {
        self.service.stop_requested(self.trial_id).unwrap_or(false)
    }
}
