//! Configuration search over branches and draft length.
//!
//! The objective for a configuration is the expected vote accuracy after
//! spending the wall-clock budget: the roofline timeline gives tokens per
//! branch, the efficiency curve turns that into a per-branch hit rate and the
//! vote model aggregates the branches.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::profiles::{ConcurrencyConfig, Scenario};
use crate::roofline::{tokens_within_budget, Bound};
use crate::voting::{outcome_vectors, vote_accuracy_exact, vote_accuracy_mc, ENUMERATION_LIMIT};

/// Minimum gain that counts as an improvement in greedy search.
pub const IMPROVEMENT_EPS: f64 = 1e-9;

/// Trials used when the exact vote is too large to enumerate.
pub const FALLBACK_TRIALS: u64 = 100_000;
pub const FALLBACK_SEED: u64 = 0;

/// Default search space: `B` in powers of two up to 64, `gamma` in `0..=7`.
pub const DEFAULT_B_SET: [u32; 7] = [1, 2, 4, 8, 16, 32, 64];
pub const DEFAULT_GAMMA_SET: [u32; 8] = [0, 1, 2, 3, 4, 5, 6, 7];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConfigEvaluation {
    pub config: ConcurrencyConfig,
    pub tokens_per_branch: f64,
    pub predicted_accuracy: f64,
    /// Prefill offset plus decode time actually used.
    pub wall_latency: f64,
    pub bound: Bound,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub best: ConfigEvaluation,
    pub evaluations_used: usize,
    pub trace: Vec<ConfigEvaluation>,
}

/// Anything that can score a configuration.
pub trait Objective: Sync {
    fn evaluate(&self, config: ConcurrencyConfig) -> Result<ConfigEvaluation>;
}

/// The accuracy-under-budget objective of a scenario.
#[derive(Debug, Clone, Copy)]
pub struct ScenarioObjective<'a> {
    pub scenario: &'a Scenario,
    pub budget: f64,
}

impl<'a> ScenarioObjective<'a> {
    pub fn new(scenario: &'a Scenario, budget: f64) -> Self {
        Self { scenario, budget }
    }
}

impl Objective for ScenarioObjective<'_> {
    fn evaluate(&self, config: ConcurrencyConfig) -> Result<ConfigEvaluation> {
        evaluate_config(self.scenario, &config, self.budget)
    }
}

/// Wraps a plain scoring function; handy for synthetic objectives.
pub struct Synthetic<F>(pub F);

impl<F> Objective for Synthetic<F>
where
    F: Fn(ConcurrencyConfig) -> f64 + Sync,
{
    fn evaluate(&self, config: ConcurrencyConfig) -> Result<ConfigEvaluation> {
        Ok(ConfigEvaluation {
            config,
            tokens_per_branch: 0.0,
            predicted_accuracy: (self.0)(config),
            wall_latency: 0.0,
            bound: Bound::MemoryBound,
            feasible: true,
        })
    }
}

/// Expected plurality-vote accuracy of `branches` branches at per-branch
/// hit rate `p`, falling back to a fixed-seed Monte Carlo estimate when the
/// outcome space is too large to enumerate.
pub fn vote_accuracy(scenario: &Scenario, p: f64, branches: u32) -> Result<f64> {
    let answers = &scenario.answer_model;
    let model = answers.model(p);
    if outcome_vectors(branches, answers.distractors) <= ENUMERATION_LIMIT {
        vote_accuracy_exact(&model, branches, answers.tie_rule)
    } else {
        Ok(vote_accuracy_mc(&model, branches, answers.tie_rule, FALLBACK_TRIALS, FALLBACK_SEED)?.0)
    }
}

/// Device bytes needed when every sequence reaches `final_len` tokens.
pub fn memory_footprint(scenario: &Scenario, config: &ConcurrencyConfig, final_len: f64) -> f64 {
    let pair = &scenario.pair;
    let seqs = config.sequences() as f64;
    let mut bytes = pair.target.weights_bytes() + seqs * pair.target.kv_bytes_per_token * final_len;
    if config.draft_len >= 1 {
        bytes += pair.draft.weights_bytes() + seqs * pair.draft.kv_bytes_per_token * final_len;
    }
    bytes
}

/// Scores one configuration under budget `budget` seconds.
///
/// Configurations whose weights plus final KV cache overflow device memory
/// are reported with `feasible = false` and accuracy 0.
pub fn evaluate_config(scenario: &Scenario, config: &ConcurrencyConfig, budget: f64) -> Result<ConfigEvaluation> {
    config.validate()?;
    if !(budget.is_finite() && budget > 0.0) {
        return Err(Error::InvalidArgument(format!("budget must be > 0, got {budget}")));
    }
    let outcome = tokens_within_budget(
        &scenario.hardware,
        &scenario.pair,
        config,
        budget,
        scenario.prefill_offset,
        scenario.max_tokens_per_branch,
    );
    let wall_latency = scenario.prefill_offset.min(budget) + outcome.elapsed;
    let feasible = memory_footprint(scenario, config, outcome.tokens) <= scenario.hardware.mem_capacity;
    let predicted_accuracy = if feasible {
        let p = scenario.curve.eval_or_floor(outcome.tokens);
        vote_accuracy(scenario, p, config.branches)?
    } else {
        0.0
    };
    Ok(ConfigEvaluation {
        config: *config,
        tokens_per_branch: outcome.tokens,
        predicted_accuracy,
        wall_latency,
        bound: outcome.bound,
        feasible,
    })
}

fn argmax(trace: &[ConfigEvaluation]) -> ConfigEvaluation {
    let mut best = trace[0];
    for e in &trace[1..] {
        if e.predicted_accuracy > best.predicted_accuracy {
            best = *e;
        }
    }
    best
}

/// Coordinate-greedy search: grow `B` by doubling at `gamma = 0`, then grow
/// `gamma` one step at a time at the chosen `B`.
///
/// Each phase stops at the first step that does not improve by more than
/// [`IMPROVEMENT_EPS`], with one exception: a non-improving `B = 2` is
/// looked past and `B = 4` is compared against `B = 1`. With split credit
/// two branches never beat one (a 1-1 split is a coin flip), so without the
/// look-ahead every such search would stop at `B = 1`.
pub fn greedy_search<O: Objective + ?Sized>(objective: &O, b_max: u32, gamma_max: u32) -> Result<SearchResult> {
    if b_max == 0 || !b_max.is_power_of_two() {
        return Err(Error::InvalidArgument(format!(
            "b_max must be a power of two >= 1, got {b_max}"
        )));
    }
    let mut trace = Vec::new();

    let first = objective.evaluate(ConcurrencyConfig::new(1, 0))?;
    trace.push(first);
    let mut best_b = first;
    let mut b = 1_u32;
    while b < b_max {
        b *= 2;
        let e = objective.evaluate(ConcurrencyConfig::new(b, 0))?;
        trace.push(e);
        if e.predicted_accuracy > best_b.predicted_accuracy + IMPROVEMENT_EPS {
            best_b = e;
        } else if b != 2 {
            break;
        }
    }

    let mut current = best_b;
    for gamma in 1..=gamma_max {
        let e = objective.evaluate(ConcurrencyConfig::new(current.config.branches, gamma))?;
        trace.push(e);
        if e.predicted_accuracy > current.predicted_accuracy + IMPROVEMENT_EPS {
            current = e;
        } else {
            break;
        }
    }

    Ok(SearchResult {
        best: argmax(&trace),
        evaluations_used: trace.len(),
        trace,
    })
}

fn sorted_unique(values: &[u32]) -> Vec<u32> {
    let mut v = values.to_vec();
    v.sort_unstable();
    v.dedup();
    v
}

/// Exhaustive search over `b_set x gamma_set`.
///
/// Cells are scored in parallel but the trace is always in ascending
/// `(B, gamma)` order and the first maximum wins, so ties resolve toward
/// the smaller configuration regardless of scheduling.
pub fn grid_search<O: Objective + ?Sized>(objective: &O, b_set: &[u32], gamma_set: &[u32]) -> Result<SearchResult> {
    if b_set.is_empty() || gamma_set.is_empty() {
        return Err(Error::InvalidArgument(
            "grid search needs non-empty B and gamma sets".into(),
        ));
    }
    let gammas = sorted_unique(gamma_set);
    let cells: Vec<ConcurrencyConfig> = sorted_unique(b_set)
        .into_iter()
        .flat_map(|b| gammas.iter().map(move |&g| ConcurrencyConfig::new(b, g)))
        .collect();
    let trace = cells
        .par_iter()
        .map(|&c| objective.evaluate(c))
        .collect::<Result<Vec<_>>>()?;
    Ok(SearchResult {
        best: argmax(&trace),
        evaluations_used: trace.len(),
        trace,
    })
}

/// Grid optimum for each budget in `budgets`, in the order given.
pub fn sweep(
    scenario: &Scenario,
    budgets: &[f64],
    b_set: &[u32],
    gamma_set: &[u32],
) -> Result<Vec<(f64, ConfigEvaluation)>> {
    budgets
        .iter()
        .map(|&t| {
            Ok((
                t,
                grid_search(&ScenarioObjective::new(scenario, t), b_set, gamma_set)?.best,
            ))
        })
        .collect()
}

/// Latency-accuracy boundary: the grid optimum at each budget, sorted by
/// budget, keeping only points not beaten by a shorter budget.
pub fn pareto_frontier(
    scenario: &Scenario,
    budgets: &[f64],
    b_set: &[u32],
    gamma_set: &[u32],
) -> Result<Vec<(f64, ConfigEvaluation)>> {
    if budgets.is_empty() {
        return Err(Error::InvalidArgument(
            "pareto frontier needs at least one budget".into(),
        ));
    }
    let mut sorted = budgets.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let points = sweep(scenario, &sorted, b_set, gamma_set)?;
    let mut frontier = Vec::with_capacity(points.len());
    let mut running = f64::NEG_INFINITY;
    for (t, e) in points {
        if e.predicted_accuracy >= running {
            running = e.predicted_accuracy;
            frontier.push((t, e));
        }
    }
    Ok(frontier)
}

fn csv_error(e: csv::Error) -> Error {
    Error::InvalidArgument(format!("csv write failed: {e}"))
}

/// Writes `B,gamma,tokens_per_branch,accuracy,latency,bound,feasible`.
pub fn write_trace_csv<W: Write>(out: W, trace: &[ConfigEvaluation]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "B",
        "gamma",
        "tokens_per_branch",
        "accuracy",
        "latency",
        "bound",
        "feasible",
    ])
    .map_err(csv_error)?;
    for e in trace {
        w.write_record([
            e.config.branches.to_string(),
            e.config.draft_len.to_string(),
            e.tokens_per_branch.to_string(),
            e.predicted_accuracy.to_string(),
            e.wall_latency.to_string(),
            e.bound.to_string(),
            e.feasible.to_string(),
        ])
        .map_err(csv_error)?;
    }
    w.flush()
        .map_err(|e| Error::InvalidArgument(format!("csv write failed: {e}")))
}

/// Writes `T,B,gamma,accuracy,latency`.
pub fn write_frontier_csv<W: Write>(out: W, points: &[(f64, ConfigEvaluation)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["T", "B", "gamma", "accuracy", "latency"])
        .map_err(csv_error)?;
    for (t, e) in points {
        w.write_record([
            t.to_string(),
            e.config.branches.to_string(),
            e.config.draft_len.to_string(),
            e.predicted_accuracy.to_string(),
            e.wall_latency.to_string(),
        ])
        .map_err(csv_error)?;
    }
    w.flush()
        .map_err(|e| Error::InvalidArgument(format!("csv write failed: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn peaked(b_star: u32, g_star: u32) -> impl Fn(ConcurrencyConfig) -> f64 + Sync {
        move |c| {
            let db = (f64::from(c.branches).log2() - f64::from(b_star).log2()).abs();
            let dg = (f64::from(c.draft_len) - f64::from(g_star)).abs();
            1.0 / (1.0 + db + 0.5 * dg)
        }
    }

    #[test]
    fn greedy_finds_separable_peak() {
        let obj = Synthetic(peaked(16, 5));
        let r = greedy_search(&obj, 64, 7).unwrap();
        assert_eq!(r.best.config, ConcurrencyConfig::new(16, 5));
        assert!(r.evaluations_used <= 12, "{}", r.evaluations_used);
        let grid = grid_search(&obj, &DEFAULT_B_SET, &DEFAULT_GAMMA_SET).unwrap();
        assert_eq!(grid.best.config, r.best.config);
    }

    #[test]
    fn greedy_flat_objective_stays_at_origin() {
        let r = greedy_search(&Synthetic(|_| 0.5), 64, 7).unwrap();
        assert_eq!(r.best.config, ConcurrencyConfig::new(1, 0));
        // B = 1, 2, 4 and one draft step
        assert_eq!(r.evaluations_used, 4);
    }

    #[test]
    fn greedy_rejects_non_power_of_two() {
        assert!(greedy_search(&Synthetic(|_| 0.5), 48, 7).is_err());
        assert!(greedy_search(&Synthetic(|_| 0.5), 0, 7).is_err());
    }

    #[test]
    fn greedy_gamma_zero_is_branch_only() {
        let r = greedy_search(&Synthetic(peaked(8, 3)), 64, 0).unwrap();
        assert!(r.trace.iter().all(|e| e.config.draft_len == 0));
        assert_eq!(r.best.config, ConcurrencyConfig::new(8, 0));
    }

    #[test]
    fn grid_counts_and_ties() {
        let r = grid_search(&Synthetic(|_| 0.5), &DEFAULT_B_SET, &DEFAULT_GAMMA_SET).unwrap();
        assert_eq!(r.evaluations_used, 56);
        assert_eq!(r.best.config, ConcurrencyConfig::new(1, 0));
        let single = grid_search(&Synthetic(|_| 0.1), &[4], &[2]).unwrap();
        assert_eq!(single.evaluations_used, 1);
        assert_eq!(single.best.config, ConcurrencyConfig::new(4, 2));
        assert!(grid_search(&Synthetic(|_| 0.1), &[], &[2]).is_err());
    }

    #[test]
    fn sequential_config_is_curve_value() {
        let s = fixtures::s1_32b();
        let e = evaluate_config(&s, &ConcurrencyConfig::new(1, 0), 60.0).unwrap();
        assert_eq!(e.predicted_accuracy, s.curve.eval(e.tokens_per_branch).unwrap());
        assert!(e.feasible);
        assert!(e.wall_latency <= 60.0);
    }

    #[test]
    fn starved_budget_hits_floor() {
        let s = fixtures::s1_32b();
        let e = evaluate_config(&s, &ConcurrencyConfig::new(1, 0), 1e-3).unwrap();
        assert!(e.tokens_per_branch < 1.0);
        assert_eq!(e.predicted_accuracy, s.curve.a_min);
    }

    #[test]
    fn combined_config_beats_sequential() {
        let s = fixtures::s1_32b();
        let combo = evaluate_config(&s, &ConcurrencyConfig::new(16, 5), 60.0).unwrap();
        let seq = evaluate_config(&s, &ConcurrencyConfig::new(1, 0), 60.0).unwrap();
        assert!(combo.predicted_accuracy > seq.predicted_accuracy);
    }

    #[test]
    fn memory_overflow_is_infeasible() {
        let mut s = fixtures::s1_32b();
        s.hardware.mem_capacity = 70e9;
        let e = evaluate_config(&s, &ConcurrencyConfig::new(64, 3), 60.0).unwrap();
        assert!(!e.feasible);
        assert_eq!(e.predicted_accuracy, 0.0);
    }

    #[test]
    fn frontier_single_budget_and_order() {
        let s = fixtures::s1_3b();
        let one = pareto_frontier(&s, &[10.0], &[1, 4], &[0, 2]).unwrap();
        assert_eq!(one.len(), 1);
        let grid = grid_search(&ScenarioObjective::new(&s, 10.0), &[1, 4], &[0, 2]).unwrap();
        assert_eq!(one[0].1, grid.best);
        let many = pareto_frontier(&s, &[8.0, 2.0, 4.0], &[1, 4], &[0, 2]).unwrap();
        let ts: Vec<f64> = many.iter().map(|p| p.0).collect();
        assert_eq!(ts, vec![2.0, 4.0, 8.0]);
        assert!(many
            .windows(2)
            .all(|w| w[0].1.predicted_accuracy <= w[1].1.predicted_accuracy));
    }

    #[test]
    fn trace_csv_shape() {
        let r = grid_search(&Synthetic(|_| 0.25), &[1, 2], &[0]).unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &r.trace).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "B,gamma,tokens_per_branch,accuracy,latency,bound,feasible");
        assert_eq!(lines[1], "1,0,0,0.25,0,memory,true");
        assert_eq!(lines.len(), 3);
        assert!(text.ends_with('\n'));
    }
}
