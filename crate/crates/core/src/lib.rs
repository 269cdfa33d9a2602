//! Stochastic relaxed forward-backward methods for (generalized) Nash equilibrium
//! seeking in merely monotone games.

pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod game;
pub mod oracle;
pub mod rng;
pub mod scenarios;
pub mod solvers;
pub mod splitting;
pub mod tuning;

pub use error::{Error, Result};
pub use game::{AffineCoupling, Coupling, GameProblem, LocalTerm, MultiplierGraph};
pub use oracle::{BatchSchedule, OracleMode};
pub use splitting::{IterateState, Omega, StepSizes};
pub use solvers::{run, RunOptions, SolverConfig, SolverKind};
pub use diagnostics::{MetricRow, RunRecord, RunStatus};
pub use tuning::{StepConfig, StepMode};
pub use experiment::{run_experiment, ExperimentConfig, ExperimentError, ExperimentOutcome, Overrides};
