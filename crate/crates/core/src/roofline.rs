//! Roofline cost of one decode step.
//!
//! A step streams the weights plus every resident sequence's KV cache from
//! memory, and performs `flops_per_token` FLOPs per token processed. The step
//! takes whichever of the two is slower. Activations and the attention FLOP
//! term are ignored.

use serde::{Deserialize, Serialize};

use crate::profiles::{ConcurrencyConfig, HardwareProfile, ModelProfile, SpecDecPair};
use crate::specdec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Bound {
    MemoryBound,
    ComputeBound,
}

impl Bound {
    pub fn as_str(&self) -> &'static str {
        match self {
            Bound::MemoryBound => "memory",
            Bound::ComputeBound => "compute",
        }
    }
}

impl std::fmt::Display for Bound {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepCost {
    pub mem_time: f64,
    pub compute_time: f64,
    pub step_time: f64,
    pub bound: Bound,
    pub mem_bytes: f64,
    pub flops: f64,
    /// Weights plus KV of this model alone exceed device memory.
    pub over_capacity: bool,
}

/// Cost of one forward pass over `sequences` sequences, each processing
/// `tokens_per_seq` tokens with `seq_len` tokens already cached.
pub fn step_cost(
    hw: &HardwareProfile,
    model: &ModelProfile,
    sequences: u64,
    tokens_per_seq: u64,
    seq_len: f64,
) -> StepCost {
    debug_assert!(sequences >= 1 && tokens_per_seq >= 1 && seq_len >= 0.0);
    let seqs = sequences as f64;
    let mem_bytes = model.weights_bytes() + seqs * model.kv_bytes_per_token * seq_len;
    let flops = model.flops_per_token() * seqs * tokens_per_seq as f64;
    let mem_time = mem_bytes / hw.effective_bandwidth();
    let compute_time = flops / hw.effective_compute();
    let bound = if mem_time >= compute_time {
        Bound::MemoryBound
    } else {
        Bound::ComputeBound
    };
    StepCost {
        mem_time,
        compute_time,
        step_time: mem_time.max(compute_time),
        bound,
        mem_bytes,
        flops,
        over_capacity: mem_bytes > hw.mem_capacity,
    }
}

/// Output tokens per second for plain decoding (`draft_len` is ignored).
pub fn throughput(hw: &HardwareProfile, model: &ModelProfile, config: &ConcurrencyConfig, seq_len: f64) -> f64 {
    let sequences = config.sequences();
    sequences as f64 / step_cost(hw, model, sequences, 1, seq_len).step_time
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Crossover {
    /// Smallest sequence count with `compute_time >= mem_time`.
    At(u64),
    /// KV traffic grows at least as fast as FLOPs; compute never dominates.
    Never,
}

fn compute_dominates(
    hw: &HardwareProfile,
    model: &ModelProfile,
    sequences: u64,
    tokens_per_seq: u64,
    seq_len: f64,
) -> bool {
    let c = step_cost(hw, model, sequences, tokens_per_seq, seq_len);
    c.compute_time >= c.mem_time
}

/// Sequence count at which the step turns compute-bound.
///
/// Solves `s * f * t / C >= (W + s * kv * L) / M` for the smallest integer
/// `s >= 1`, then nudges the root so it agrees with [`step_cost`]'s own
/// comparison under floating point.
pub fn crossover_sequences(hw: &HardwareProfile, model: &ModelProfile, tokens_per_seq: u64, seq_len: f64) -> Crossover {
    let per_seq_compute = model.flops_per_token() * tokens_per_seq as f64 / hw.effective_compute();
    let per_seq_mem = model.kv_bytes_per_token * seq_len / hw.effective_bandwidth();
    let slack = per_seq_compute - per_seq_mem;
    if slack.is_nan() || slack <= 0.0 {
        return Crossover::Never;
    }
    let root = (model.weights_bytes() / hw.effective_bandwidth()) / slack;
    if !root.is_finite() || root >= u64::MAX as f64 / 2.0 {
        return Crossover::Never;
    }
    let mut s = (root.ceil() as u64).max(1);
    while s > 1 && compute_dominates(hw, model, s - 1, tokens_per_seq, seq_len) {
        s -= 1;
    }
    while !compute_dominates(hw, model, s, tokens_per_seq, seq_len) {
        s += 1;
    }
    Crossover::At(s)
}

/// Result of running the deterministic decode timeline against a budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BudgetOutcome {
    /// Expected tokens generated per branch (fractional last step prorated).
    pub tokens: f64,
    /// Decode seconds consumed, excluding the prefill offset.
    pub elapsed: f64,
    /// Whole steps (or speculative cycles) completed.
    pub steps: u64,
    /// Bound state of the last step executed or attempted.
    pub bound: Bound,
}

/// Expected tokens per branch generated within `budget` seconds.
///
/// With `draft_len == 0` every step emits one token per sequence; otherwise
/// each speculative cycle emits the expected accepted run plus one. The KV
/// term is recomputed from the growing sequence length before every step.
pub fn tokens_within_budget(
    hw: &HardwareProfile,
    pair: &SpecDecPair,
    config: &ConcurrencyConfig,
    budget: f64,
    prefill_offset: f64,
    max_tokens: Option<f64>,
) -> BudgetOutcome {
    let available = budget - prefill_offset;
    let sequences = config.sequences();
    let gamma = config.draft_len;
    let cap = max_tokens.unwrap_or(f64::INFINITY);
    let per_cycle = specdec::expected_tokens_per_cycle(pair.acceptance_rate, gamma).expect("validated acceptance rate");

    let mut tokens = 0.0_f64;
    let mut elapsed = 0.0_f64;
    let mut steps = 0_u64;
    let mut bound = Bound::MemoryBound;

    if available.is_nan() || available <= 0.0 {
        return BudgetOutcome {
            tokens,
            elapsed,
            steps,
            bound,
        };
    }

    while tokens < cap {
        let (dt, step_bound) = if gamma == 0 {
            let c = step_cost(hw, &pair.target, sequences, 1, tokens);
            (c.step_time, c.bound)
        } else {
            let cycle = specdec::cycle_cost(hw, pair, sequences, gamma, tokens);
            (cycle.cycle_time, cycle.verify.bound)
        };
        bound = step_bound;
        let emit = per_cycle.min(cap - tokens);
        if elapsed + dt > available {
            let fraction = (available - elapsed) / dt;
            tokens += emit * fraction;
            elapsed = available;
            break;
        }
        elapsed += dt;
        tokens += emit;
        steps += 1;
    }
    BudgetOutcome {
        tokens,
        elapsed,
        steps,
        bound,
    }
}
