//! Branch-and-bound MIP solver over a bounded-variable simplex.

mod bnb;
mod lp;

use serde::Serialize;

use crate::mip::Assignment;

pub use bnb::solve;
pub use lp::{solve_lp, LpSolution, LpStatus};

/// Limits and tolerances for [`solve`].
#[derive(Clone, Debug)]
pub struct SolveConfig {
    /// Wall-clock limit in seconds.
    pub time_limit: Option<f64>,
    /// Maximum number of branch-and-bound nodes whose LP is solved.
    pub node_limit: Option<u64>,
    pub workers: usize,
    /// Relative optimality gap used for pruning.
    pub mip_gap: f64,
    pub int_tol: f64,
    /// With one worker the search order, and so the node count, is reproducible.
    pub deterministic: bool,
    /// Seconds between progress log lines; `None` logs only incumbent changes.
    pub log_interval: Option<f64>,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            time_limit: None,
            node_limit: None,
            workers: 1,
            mip_gap: 1e-6,
            int_tol: 1e-6,
            deterministic: true,
            log_interval: None,
        }
    }
}

impl SolveConfig {
    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers.max(1);
        self
    }

    pub fn with_node_limit(mut self, nodes: u64) -> Self {
        self.node_limit = Some(nodes);
        self
    }

    pub fn with_time_limit(mut self, seconds: f64) -> Self {
        self.time_limit = Some(seconds);
        self
    }

    /// Absolute pruning tolerance around an incumbent value.
    pub(crate) fn abs_gap(&self, incumbent: f64) -> f64 {
        self.mip_gap * incumbent.abs().max(1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    /// A limit stopped the search after an incumbent was found.
    FeasibleBound,
    Unbounded,
    /// A limit stopped the search before any incumbent was found.
    Limit,
}

impl SolveStatus {
    pub fn has_solution(self) -> bool {
        matches!(self, SolveStatus::Optimal | SolveStatus::FeasibleBound)
    }

    pub fn is_limit(self) -> bool {
        matches!(self, SolveStatus::FeasibleBound | SolveStatus::Limit)
    }
}

/// A snapshot of the search, recorded at every incumbent change and log tick.
#[derive(Clone, Debug, Serialize)]
pub struct Progress {
    pub nodes: u64,
    #[serde(serialize_with = "crate::serialize_real")]
    pub incumbent: f64,
    #[serde(serialize_with = "crate::serialize_real")]
    pub bound: f64,
    #[serde(serialize_with = "crate::serialize_real")]
    pub gap: f64,
    pub time: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveResult {
    pub status: SolveStatus,
    /// Incumbent objective in the model's sense; infinite when there is none.
    #[serde(serialize_with = "crate::serialize_real")]
    pub objective: f64,
    #[serde(serialize_with = "crate::serialize_real")]
    pub dual_bound: f64,
    #[serde(skip)]
    pub assignment: Option<Assignment>,
    pub nodes_explored: u64,
    pub lp_iterations: u64,
    pub wall_time: f64,
    pub progress: Vec<Progress>,
}

impl SolveResult {
    /// Relative gap between incumbent and bound.
    pub fn gap(&self) -> f64 {
        relative_gap(self.objective, self.dual_bound)
    }
}

pub(crate) fn relative_gap(incumbent: f64, bound: f64) -> f64 {
    if !incumbent.is_finite() || !bound.is_finite() {
        return f64::INFINITY;
    }
    (incumbent - bound).abs() / incumbent.abs().max(1.0)
}
