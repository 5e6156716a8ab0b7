//! Monte Carlo replay of the decode timeline.
//!
//! All branches of a trial share one batched clock. Each cycle costs the
//! roofline time at the batch's current mean context length; under
//! speculative decoding every branch draws its own accepted run, so branch
//! lengths drift apart. A cycle that would overrun the budget is dropped.
//! When time runs out each branch draws an answer at the hit rate its own
//! token count earns, and the branches are aggregated.

use std::io::Write;

use rand::RngCore;
use rand_distr::{Beta, Distribution};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::profiles::{ConcurrencyConfig, Scenario};
use crate::rng::{self, LANE_ANSWER_BASE, LANE_TIE};
use crate::roofline::{step_cost, Bound};
use crate::specdec::cycle_cost;
use crate::voting::{aggregate_confidence, cumulative, plurality_winner, sample_answer, Aggregation, BranchOutput};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub trial_id: u64,
    pub tokens_per_branch: Vec<u64>,
    pub cycles: u64,
    /// Decode seconds used, excluding the prefill offset.
    pub elapsed: f64,
    pub chosen_answer: u32,
    pub correct: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimulationSummary {
    pub accuracy_estimate: f64,
    pub std_error: f64,
    /// Mean tokens per branch.
    pub mean_tokens: f64,
    pub mean_cycles: f64,
    /// Mean tokens one branch gains per cycle.
    pub mean_tokens_per_cycle: f64,
    pub trials: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    Start,
    Cycle,
}

impl TraceKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TraceKind::Start => "start",
            TraceKind::Cycle => "cycle",
        }
    }
}

/// One row of a trial timeline. Batch rows leave `branch` empty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceEvent {
    pub event: TraceKind,
    /// Decode seconds elapsed when the event completes.
    pub elapsed_s: f64,
    pub branch: Option<u32>,
    /// Tokens emitted by the event, summed over branches.
    pub tokens: u64,
    /// Mean context length the event was costed at.
    pub seq_len: f64,
    pub bound: Bound,
}

/// `thresholds[i] = alpha^i` on the `u32` scale, so a uniform draw
/// `u < thresholds[i]` has probability `alpha^i` of accepting at least `i`.
fn accept_thresholds(alpha: f64, gamma: u32) -> Vec<u64> {
    (0..=gamma)
        .map(|i| (alpha.powi(i as i32) * 4_294_967_296.0).round() as u64)
        .collect()
}

struct Timeline {
    tokens: Vec<u64>,
    cycles: u64,
    elapsed: f64,
}

fn run_timeline(
    scenario: &Scenario,
    config: &ConcurrencyConfig,
    budget: f64,
    seed: u64,
    trial: u64,
    mut on_cycle: impl FnMut(&TraceEvent),
) -> Timeline {
    let branches = config.branches as usize;
    let sequences = config.sequences();
    let gamma = config.draft_len;
    let available = budget - scenario.prefill_offset;
    let cap = scenario
        .max_tokens_per_branch
        .map(|c| c.floor() as u64)
        .unwrap_or(u64::MAX);
    let thresholds = accept_thresholds(scenario.pair.acceptance_rate, gamma);
    let mut streams: Vec<_> = if gamma == 0 {
        Vec::new()
    } else {
        (0..branches as u64).map(|b| rng::stream(seed, trial, b)).collect()
    };

    let mut tokens = vec![0_u64; branches];
    let mut total: u64 = 0;
    let mut cycles = 0_u64;
    let mut elapsed = 0.0;
    while available > 0.0 && tokens.iter().any(|&t| t < cap) {
        let seq_len = total as f64 / branches as f64;
        let (dt, bound) = if gamma == 0 {
            let c = step_cost(&scenario.hardware, &scenario.pair.target, sequences, 1, seq_len);
            (c.step_time, c.bound)
        } else {
            let c = cycle_cost(&scenario.hardware, &scenario.pair, sequences, gamma, seq_len);
            (c.cycle_time, c.verify.bound)
        };
        if elapsed + dt > available {
            break;
        }
        elapsed += dt;
        cycles += 1;
        let mut emitted = 0;
        for (b, t) in tokens.iter_mut().enumerate() {
            let run = if gamma == 0 {
                1
            } else {
                let u = u64::from(streams[b].next_u32());
                thresholds[1..].iter().take_while(|&&th| u < th).count() as u64 + 1
            };
            let gain = run.min(cap - *t);
            *t += gain;
            emitted += gain;
        }
        total += emitted;
        on_cycle(&TraceEvent {
            event: TraceKind::Cycle,
            elapsed_s: elapsed,
            branch: None,
            tokens: emitted,
            seq_len,
            bound,
        });
    }
    Timeline {
        tokens,
        cycles,
        elapsed,
    }
}

fn check_inputs(scenario: &Scenario, config: &ConcurrencyConfig, budget: f64) -> Result<()> {
    config.validate()?;
    if !(budget.is_finite() && budget > 0.0) {
        return Err(Error::InvalidArgument(format!("budget must be > 0, got {budget}")));
    }
    scenario.validate()
}

/// Runs one trial end to end.
pub fn simulate_trial(
    scenario: &Scenario,
    config: &ConcurrencyConfig,
    budget: f64,
    seed: u64,
    trial_id: u64,
) -> Result<TrialRecord> {
    check_inputs(scenario, config, budget)?;
    Ok(trial(scenario, config, budget, seed, trial_id))
}

fn trial(scenario: &Scenario, config: &ConcurrencyConfig, budget: f64, seed: u64, trial_id: u64) -> TrialRecord {
    let timeline = run_timeline(scenario, config, budget, seed, trial_id, |_| {});
    let answers = &scenario.answer_model;
    let k = answers.distractors;
    let confidence = match (answers.aggregation, answers.confidence) {
        (Aggregation::PlainVote, _) | (_, None) => None,
        (_, Some(c)) => Some((
            Beta::new(c.correct.alpha, c.correct.beta).expect("validated Beta"),
            Beta::new(c.wrong.alpha, c.wrong.beta).expect("validated Beta"),
        )),
    };

    let mut counts = vec![0_u32; k + 1];
    let mut outputs = Vec::with_capacity(timeline.tokens.len());
    for (b, &t) in timeline.tokens.iter().enumerate() {
        let mut r = rng::stream(seed, trial_id, LANE_ANSWER_BASE + b as u64);
        let model = answers.model(scenario.curve.eval_or_floor(t as f64));
        let answer = sample_answer(&mut r, &cumulative(&model));
        counts[answer] += 1;
        if let Some((correct, wrong)) = &confidence {
            let c = if answer == 0 {
                correct.sample(&mut r)
            } else {
                wrong.sample(&mut r)
            };
            outputs.push(BranchOutput::new(answer as u32, c));
        }
    }
    let chosen_answer = if confidence.is_some() {
        aggregate_confidence(&outputs, answers.aggregation).expect("at least one branch")
    } else {
        let mut r = rng::stream(seed, trial_id, LANE_TIE);
        plurality_winner(&counts, answers.tie_rule, &mut r)
    };
    TrialRecord {
        trial_id,
        tokens_per_branch: timeline.tokens,
        cycles: timeline.cycles,
        elapsed: timeline.elapsed,
        chosen_answer,
        correct: chosen_answer == 0,
    }
}

/// Averages `trials` independent trials. Trial `i` draws only from streams
/// keyed by `(seed, i)`, and the reduction runs in trial order, so the result
/// is the same for any thread count.
pub fn simulate(
    scenario: &Scenario,
    config: &ConcurrencyConfig,
    budget: f64,
    trials: u64,
    seed: u64,
) -> Result<SimulationSummary> {
    check_inputs(scenario, config, budget)?;
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be >= 1".into()));
    }
    let per_trial: Vec<(bool, u64, u64)> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let r = trial(scenario, config, budget, seed, i);
            (r.correct, r.tokens_per_branch.iter().sum(), r.cycles)
        })
        .collect();
    let mut correct = 0_u64;
    let mut tokens = 0_u128;
    let mut cycles = 0_u128;
    for &(c, t, n) in &per_trial {
        correct += u64::from(c);
        tokens += u128::from(t);
        cycles += u128::from(n);
    }
    let n = trials as f64;
    let accuracy_estimate = correct as f64 / n;
    let branches = f64::from(config.branches);
    let mean_tokens = tokens as f64 / (n * branches);
    let mean_cycles = cycles as f64 / n;
    let mean_tokens_per_cycle = if cycles == 0 {
        0.0
    } else {
        tokens as f64 / (cycles as f64 * branches)
    };
    Ok(SimulationSummary {
        accuracy_estimate,
        std_error: (accuracy_estimate * (1.0 - accuracy_estimate) / n).sqrt(),
        mean_tokens,
        mean_cycles,
        mean_tokens_per_cycle,
        trials,
        seed,
    })
}

/// Timeline of trial 0 for `seed`: a `start` row then one row per cycle.
pub fn simulate_trace(
    scenario: &Scenario,
    config: &ConcurrencyConfig,
    budget: f64,
    seed: u64,
) -> Result<Vec<TraceEvent>> {
    check_inputs(scenario, config, budget)?;
    let mut events = vec![TraceEvent {
        event: TraceKind::Start,
        elapsed_s: 0.0,
        branch: None,
        tokens: 0,
        seq_len: 0.0,
        bound: Bound::MemoryBound,
    }];
    run_timeline(scenario, config, budget, seed, 0, |e| events.push(*e));
    Ok(events)
}

/// One line of a simulation summary file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryRow {
    pub config: ConcurrencyConfig,
    pub budget: f64,
    pub summary: SimulationSummary,
    /// Planner prediction for the same configuration and budget.
    pub predicted_accuracy: f64,
}

fn csv_error(e: impl std::fmt::Display) -> Error {
    Error::InvalidArgument(format!("csv write failed: {e}"))
}

/// Writes `event,elapsed_s,branch,tokens,seq_len,bound`.
pub fn write_trace_csv<W: Write>(out: W, events: &[TraceEvent]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["event", "elapsed_s", "branch", "tokens", "seq_len", "bound"])
        .map_err(csv_error)?;
    for e in events {
        w.write_record([
            e.event.as_str().to_string(),
            e.elapsed_s.to_string(),
            e.branch.map(|b| b.to_string()).unwrap_or_default(),
            e.tokens.to_string(),
            e.seq_len.to_string(),
            e.bound.to_string(),
        ])
        .map_err(csv_error)?;
    }
    w.flush().map_err(csv_error)
}

/// Writes `B,gamma,T,trials,seed,accuracy,std_error,mean_tokens,mean_cycles,mean_tokens_per_cycle,predicted_accuracy`.
pub fn write_summary_csv<W: Write>(out: W, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "B",
        "gamma",
        "T",
        "trials",
        "seed",
        "accuracy",
        "std_error",
        "mean_tokens",
        "mean_cycles",
        "mean_tokens_per_cycle",
        "predicted_accuracy",
    ])
    .map_err(csv_error)?;
    for r in rows {
        let s = &r.summary;
        w.write_record([
            r.config.branches.to_string(),
            r.config.draft_len.to_string(),
            r.budget.to_string(),
            s.trials.to_string(),
            s.seed.to_string(),
            s.accuracy_estimate.to_string(),
            s.std_error.to_string(),
            s.mean_tokens.to_string(),
            s.mean_cycles.to_string(),
            s.mean_tokens_per_cycle.to_string(),
            r.predicted_accuracy.to_string(),
        ])
        .map_err(csv_error)?;
    }
    w.flush().map_err(csv_error)
}
