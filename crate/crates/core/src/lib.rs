//! Latency-aware test-time scaling planner.
//!
//! Given an accelerator, a target/draft model pair, a single-branch
//! accuracy curve and a wall-clock budget, pick the number of parallel
//! branches `B` and the speculative draft length `gamma` that maximise the
//! expected vote accuracy. [`planner`] holds the searches, [`simulator`] a
//! Monte Carlo replay used to check them.

// Small fixed-size numeric kernels read more clearly with explicit indices.
#![allow(clippy::needless_range_loop)]

pub mod curves;
pub mod error;
pub mod fixtures;
pub mod planner;
pub mod profiles;
pub mod rng;
pub mod roofline;
pub mod simulator;
pub mod specdec;
pub mod voting;

pub use curves::{curve_fit, load_anchors_csv, CurveAnchor, CurveFit, EfficiencyCurve, FitBounds};
pub use error::{Error, Result};
pub use planner::{
    evaluate_config, greedy_search, grid_search, pareto_frontier, ConfigEvaluation, Objective, ScenarioObjective,
    SearchResult,
};
pub use profiles::{
    builtin_pair, builtin_pairs, kv_bytes_from_anchor, load_scenario, save_scenario, ConcurrencyConfig,
    HardwareProfile, ModelProfile, Scenario, SpecDecPair, GB,
};
pub use roofline::{crossover_sequences, step_cost, throughput, tokens_within_budget, Bound, Crossover, StepCost};
pub use simulator::{simulate, simulate_trace, simulate_trial, SimulationSummary, SummaryRow, TraceEvent, TrialRecord};
pub use specdec::{best_gamma, cycle_model, expected_tokens_per_cycle, CycleModel};
pub use voting::{
    aggregate_confidence, vote_accuracy_exact, vote_accuracy_mc, Aggregation, AnswerModel, AnswerSettings,
    BranchOutput, TieRule,
};
