//! Sequence-wise parallelism: draft-then-verify speculative decoding.
//!
//! Acceptance model: each of the `gamma` draft positions is accepted
//! independently with probability `alpha`, the cycle keeps the leading run of
//! accepted tokens and the verify pass always contributes one more token.

use crate::error::{Error, Result};
use crate::profiles::{HardwareProfile, SpecDecPair};
use crate::roofline::{step_cost, StepCost};

/// `sum_{i=0..=gamma} alpha^i`, the mean tokens emitted per cycle.
pub fn expected_tokens_per_cycle(alpha: f64, gamma: u32) -> Result<f64> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!(
            "acceptance rate must lie in [0, 1), got {alpha}"
        )));
    }
    if gamma == 0 || alpha == 0.0 {
        return Ok(1.0);
    }
    Ok((1.0 - alpha.powi(gamma as i32 + 1)) / (1.0 - alpha))
}

/// Timing of one batched draft+verify cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleCost {
    pub cycle_time: f64,
    pub draft_step: StepCost,
    pub verify: StepCost,
}

pub(crate) fn cycle_cost(
    hw: &HardwareProfile,
    pair: &SpecDecPair,
    sequences: u64,
    gamma: u32,
    seq_len: f64,
) -> CycleCost {
    let draft_step = step_cost(hw, &pair.draft, sequences, 1, seq_len);
    let verify = step_cost(hw, &pair.target, sequences, u64::from(gamma) + 1, seq_len);
    CycleCost {
        cycle_time: f64::from(gamma) * draft_step.step_time + verify.step_time,
        draft_step,
        verify,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleModel {
    pub gamma: u32,
    pub expected_tokens: f64,
    pub cycle_time: f64,
    /// Tokens per second per branch.
    pub effective_rate: f64,
    /// Rate relative to plain decoding at the same batch and context.
    pub speedup_vs_plain: f64,
    pub verify: StepCost,
}

/// Latency and yield of a speculative cycle over `sequences` sequences.
pub fn cycle_model(
    hw: &HardwareProfile,
    pair: &SpecDecPair,
    sequences: u64,
    gamma: u32,
    seq_len: f64,
) -> Result<CycleModel> {
    if gamma == 0 {
        return Err(Error::InvalidArgument(
            "draft length 0 disables speculative decoding; use the plain decode path".into(),
        ));
    }
    let cost = cycle_cost(hw, pair, sequences, gamma, seq_len);
    let expected_tokens = expected_tokens_per_cycle(pair.acceptance_rate, gamma)?;
    let effective_rate = expected_tokens / cost.cycle_time;
    let plain = step_cost(hw, &pair.target, sequences, 1, seq_len).step_time;
    Ok(CycleModel {
        gamma,
        expected_tokens,
        cycle_time: cost.cycle_time,
        effective_rate,
        speedup_vs_plain: effective_rate * plain,
        verify: cost.verify,
    })
}

/// Draft length in `1..=gamma_max` with the highest speedup; ties go to the
/// shorter draft.
pub fn best_gamma(
    hw: &HardwareProfile,
    pair: &SpecDecPair,
    sequences: u64,
    seq_len: f64,
    gamma_max: u32,
) -> Result<(u32, CycleModel)> {
    if gamma_max == 0 {
        return Err(Error::InvalidArgument("gamma_max must be >= 1".into()));
    }
    let mut best = cycle_model(hw, pair, sequences, 1, seq_len)?;
    for gamma in 2..=gamma_max {
        let m = cycle_model(hw, pair, sequences, gamma, seq_len)?;
        if m.speedup_vs_plain > best.speedup_vs_plain {
            best = m;
        }
    }
    Ok((best.gamma, best))
}
