//! The trial server: an HTTP front for a single study, the coordinator loop
//! that owns it, and the schedulers that run worker processes.

mod api;
pub mod coordinator;
pub mod runner;
pub mod scheduler;

pub use coordinator::{LedgerAction, LedgerEvent, Rejection, ResourcePool, RunReport, Snapshot};
pub use runner::{optimize, start, RunHandle, RunnerConfig, RunnerError, DEFAULT_POLL_INTERVAL, DEFAULT_PORT};
pub use scheduler::{
    CommandTemplateScheduler, CommandTemplates, ExternalJobs, ExternalOutcome, ExternalScheduler, JobSpec, JobStatus,
    LocalScheduler, Scheduler, SchedulerError, SchedulerJob,
};
