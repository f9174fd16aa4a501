//! Tabular off-policy evaluation with doubly truncated importance ratios
//! (Q-trace) and an off-policy natural actor-critic built on it.
//!
//! Every analytical object the algorithms are measured against is available
//! as an exact oracle: policy Q functions, the biased limit point of the
//! critic, the expected critic operator and its contraction factor, mixing
//! times of the behavior chain, and the closed-form finite-sample bounds.

pub mod bounds;
pub mod chain;
pub mod error;
pub mod format;
pub mod instances;
pub mod linalg;
pub mod mdp;
pub mod nac;
pub mod qtrace;
pub mod rng;

pub use error::{Error, Result};
pub use mdp::{Distribution, Policy, QTable, TabularMdp, Trajectory, VTable};
pub use nac::{NacParams, NacRun, RunRecord, RunRow, SampleMode};
pub use qtrace::{QTraceParams, TruncationLevels};
