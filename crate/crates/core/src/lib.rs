//! Core of the hyperparameter optimizer: parameter spaces, the study state
//! machine, suggestion algorithms, the Gaussian-process model, wire types and
//! the synthetic benchmark harness.

pub mod algorithm;
pub mod bench;
pub mod gp;
pub mod protocol;
pub mod results;
pub mod space;
pub mod study;

pub type TrialId = u64;

/// Random stream used by studies and algorithms.
pub type StudyRng = rand_chacha::ChaCha8Rng;

pub use algorithm::{Algorithm, AlgorithmError, AlgorithmSpec};
pub use results::{ResultRecord, ResultRow, ResultsTable, RowStatus};
pub use space::{Assignment, Category, Domain, ParameterDef, ParameterValue, SearchSpace, SpaceError};
pub use study::{BestResult, Study, StudyConfig, StudyError, Suggest, Trial, TrialRecord, TrialStatus};
