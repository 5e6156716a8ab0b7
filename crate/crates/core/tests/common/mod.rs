//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use rand::Rng;
use ttslat_core::roofline::step_cost;
use ttslat_core::{AnswerModel, HardwareProfile, ModelProfile, TieRule};

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

fn compositions(total: u32, parts: usize, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if parts == 1 {
        prefix.push(total);
        out.push(prefix.clone());
        prefix.pop();
        return;
    }
    for n in 0..=total {
        prefix.push(n);
        compositions(total - n, parts - 1, prefix, out);
        prefix.pop();
    }
}

/// Every count vector over `1 + k` answers summing to `branches`, with its
/// multinomial probability.
pub fn outcome_table(model: &AnswerModel, branches: u32) -> Vec<(Vec<u32>, f64)> {
    let probs: Vec<f64> = std::iter::once(model.p_correct)
        .chain(model.wrong_probs.iter().copied())
        .collect();
    let mut vectors = Vec::new();
    compositions(branches, probs.len(), &mut Vec::new(), &mut vectors);
    vectors
        .into_iter()
        .map(|v| {
            let mut p = factorial(branches);
            for (&n, &q) in v.iter().zip(&probs) {
                p *= q.powi(n as i32) / factorial(n);
            }
            (v, p)
        })
        .collect()
}

/// Plurality-vote accuracy by brute-force multinomial enumeration.
pub fn brute_force_vote(model: &AnswerModel, branches: u32, rule: TieRule) -> f64 {
    outcome_table(model, branches)
        .into_iter()
        .map(|(v, p)| {
            let top = *v.iter().max().unwrap();
            if v[0] != top {
                return 0.0;
            }
            let ties = v[1..].iter().filter(|&&n| n == top).count();
            let credit = match rule {
                TieRule::SplitCredit => 1.0 / (1 + ties) as f64,
                TieRule::FavorCorrect => 1.0,
                TieRule::FavorWrong => f64::from(u8::from(ties == 0)),
            };
            p * credit
        })
        .sum()
}

/// Mean tokens per speculative cycle from explicit Bernoulli draws.
pub fn mc_tokens_per_cycle<R: Rng>(rng: &mut R, alpha: f64, gamma: u32, cycles: u64) -> (f64, f64) {
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..cycles {
        let mut accepted = 0;
        while accepted < gamma && rng.random_bool(alpha) {
            accepted += 1;
        }
        let tokens = f64::from(accepted + 1);
        sum += tokens;
        sum_sq += tokens * tokens;
    }
    let n = cycles as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0);
    (mean, (var / n).sqrt())
}

/// Smallest sequence count in `1..=limit` whose step is compute bound.
pub fn scan_crossover(
    hw: &HardwareProfile,
    model: &ModelProfile,
    tokens_per_seq: u64,
    seq_len: f64,
    limit: u64,
) -> Option<u64> {
    (1..=limit).find(|&s| {
        let c = step_cost(hw, model, s, tokens_per_seq, seq_len);
        c.compute_time >= c.mem_time
    })
}
