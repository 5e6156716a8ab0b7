//! Aggregating branch outputs: exact plurality-vote accuracy, a Monte Carlo
//! estimator and confidence-weighted selection rules.
//!
//! Answer id 0 is the correct answer; ids `1..=k` are distractors.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Largest `C(B + k, k)` accepted by [`vote_accuracy_exact`].
pub const ENUMERATION_LIMIT: f64 = 1e7;

const SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieRule {
    /// The correct answer earns `1 / #tied` when it shares the lead.
    #[default]
    SplitCredit,
    FavorCorrect,
    FavorWrong,
}

impl TieRule {
    /// Credit for the correct answer when it ties with `ties` distractors
    /// and none beats it.
    fn credit(self, ties: usize) -> f64 {
        match self {
            TieRule::SplitCredit => 1.0 / (1 + ties) as f64,
            TieRule::FavorCorrect => 1.0,
            TieRule::FavorWrong => {
                if ties == 0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    PlainVote,
    MinMax,
    MinVote,
    AvgMax,
    AvgVote,
}

impl Aggregation {
    pub const ALL: [Aggregation; 5] = [
        Aggregation::PlainVote,
        Aggregation::MinMax,
        Aggregation::MinVote,
        Aggregation::AvgMax,
        Aggregation::AvgVote,
    ];
}

/// Outcome distribution of one branch at a fixed token budget.
#[derive(Debug, Clone, PartialEq)]
pub struct AnswerModel {
    pub p_correct: f64,
    /// Probability of each distractor; sums to `1 - p_correct`.
    pub wrong_probs: Vec<f64>,
}

impl AnswerModel {
    pub fn new(p_correct: f64, wrong_probs: Vec<f64>) -> Result<Self> {
        let model = Self { p_correct, wrong_probs };
        model.validate()?;
        Ok(model)
    }

    /// Wrong mass split evenly over `k` distractors.
    pub fn uniform(p_correct: f64, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::validation("distractors", "must be >= 1"));
        }
        Self::new(p_correct, vec![(1.0 - p_correct) / k as f64; k])
    }

    pub fn distractors(&self) -> usize {
        self.wrong_probs.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_correct) {
            return Err(Error::validation(
                "p_correct",
                format!("must lie in [0, 1], got {}", self.p_correct),
            ));
        }
        if self.wrong_probs.is_empty() {
            return Err(Error::validation("wrong_probs", "need at least one distractor"));
        }
        if self.wrong_probs.iter().any(|q| !(q.is_finite() && *q >= 0.0)) {
            return Err(Error::validation("wrong_probs", "entries must be >= 0"));
        }
        let total = self.p_correct + self.wrong_probs.iter().sum::<f64>();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::validation(
                "wrong_probs",
                format!("probabilities sum to {total}, not 1"),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetaParams {
    pub alpha: f64,
    pub beta: f64,
}

/// Synthetic per-branch confidence: one Beta law for correct branches and
/// one for wrong branches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfidenceModel {
    pub correct: BetaParams,
    pub wrong: BetaParams,
}

fn default_distractors() -> usize {
    4
}

/// Scenario-level description of how wrong answers and aggregation behave.
/// The correct-answer probability comes from the efficiency curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnswerSettings {
    #[serde(default = "default_distractors")]
    pub distractors: usize,
    /// Relative weight of each distractor within the wrong mass. Normalised
    /// on use; `None` means uniform.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wrong_shares: Option<Vec<f64>>,
    #[serde(default)]
    pub tie_rule: TieRule,
    #[serde(default)]
    pub aggregation: Aggregation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<ConfidenceModel>,
}

impl Default for AnswerSettings {
    fn default() -> Self {
        Self {
            distractors: default_distractors(),
            wrong_shares: None,
            tie_rule: TieRule::default(),
            aggregation: Aggregation::default(),
            confidence: None,
        }
    }
}

impl AnswerSettings {
    pub(crate) fn validate_at(&self, prefix: &str) -> Result<()> {
        if self.distractors == 0 {
            return Err(Error::validation(format!("{prefix}.distractors"), "must be >= 1"));
        }
        if let Some(shares) = &self.wrong_shares {
            let field = format!("{prefix}.wrong_shares");
            if shares.len() != self.distractors {
                return Err(Error::validation(
                    field,
                    format!("has {} entries but distractors = {}", shares.len(), self.distractors),
                ));
            }
            if shares.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
                return Err(Error::validation(field, "entries must be >= 0"));
            }
            if shares.iter().sum::<f64>() <= 0.0 {
                return Err(Error::validation(field, "entries must not all be zero"));
            }
        }
        if self.aggregation != Aggregation::PlainVote {
            let Some(conf) = &self.confidence else {
                return Err(Error::validation(
                    format!("{prefix}.confidence"),
                    "required when aggregation is confidence based",
                ));
            };
            for (name, b) in [("correct", conf.correct), ("wrong", conf.wrong)] {
                if !(b.alpha.is_finite() && b.alpha > 0.0 && b.beta.is_finite() && b.beta > 0.0) {
                    return Err(Error::validation(
                        format!("{prefix}.confidence.{name}"),
                        "Beta parameters must be > 0",
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_at("answer_model")
    }

    /// The branch outcome distribution when a branch is correct w.p. `p`.
    pub fn model(&self, p_correct: f64) -> AnswerModel {
        let k = self.distractors;
        let wrong = 1.0 - p_correct;
        let wrong_probs = match &self.wrong_shares {
            Some(shares) => {
                let total: f64 = shares.iter().sum();
                shares.iter().map(|s| wrong * s / total).collect()
            }
            None => vec![wrong / k as f64; k],
        };
        AnswerModel { p_correct, wrong_probs }
    }
}

/// `C(B + k, k)`: the number of multinomial outcome vectors.
pub fn outcome_vectors(branches: u32, distractors: usize) -> f64 {
    (1..=distractors).fold(1.0, |acc, i| acc * (f64::from(branches) + i as f64) / i as f64)
}

fn pascal(n: usize) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let mut row = vec![1.0; i + 1];
        for j in 1..i {
            row[j] = rows[i - 1][j - 1] + rows[i - 1][j];
        }
        rows.push(row);
    }
    rows
}

/// `pmf[n][x] = P(Bin(n, r) = x)` for every `n <= max_n`.
fn binomial_table(binom: &[Vec<f64>], max_n: usize, r: f64) -> Vec<Vec<f64>> {
    let up: Vec<f64> = (0..=max_n).map(|i| r.powi(i as i32)).collect();
    let down: Vec<f64> = (0..=max_n).map(|i| (1.0 - r).powi(i as i32)).collect();
    (0..=max_n)
        .map(|n| (0..=n).map(|x| binom[n][x] * up[x] * down[n - x]).collect())
        .collect()
}

/// Exact probability that the correct answer wins a plurality vote of
/// `branches` i.i.d. branches, with ties settled by `tie_rule`.
///
/// Sums over every outcome vector, factored as the correct count followed by
/// each distractor's count conditioned on the ones before it. A distractor
/// that out-votes the correct answer ends the branch of the sum, so only
/// counts `<= c` are kept, together with how many distractors tie at `c`.
pub fn vote_accuracy_exact(model: &AnswerModel, branches: u32, tie_rule: TieRule) -> Result<f64> {
    model.validate()?;
    if branches == 0 {
        return Err(Error::InvalidArgument("branches must be >= 1".into()));
    }
    let k = model.distractors();
    let outcomes = outcome_vectors(branches, k);
    if outcomes > ENUMERATION_LIMIT {
        return Err(Error::EnumerationGuard {
            outcomes,
            limit: ENUMERATION_LIMIT,
        });
    }
    if branches == 1 {
        return Ok(model.p_correct);
    }

    let b = branches as usize;
    let binom = pascal(b);
    let correct_pmf = binomial_table(&binom, b, model.p_correct);
    // Conditional share of distractor j among distractors j..k.
    let mut suffix = vec![0.0; k + 1];
    for j in (0..k).rev() {
        suffix[j] = suffix[j + 1] + model.wrong_probs[j];
    }
    let tables: Vec<Vec<Vec<f64>>> = (0..k)
        .map(|j| {
            let r = if suffix[j] > 0.0 {
                (model.wrong_probs[j] / suffix[j]).min(1.0)
            } else {
                0.0
            };
            binomial_table(&binom, b, r)
        })
        .collect();

    let mut total = 0.0;
    // layout: state[used * (k + 1) + ties]
    let mut state = vec![0.0; (b + 1) * (k + 1)];
    let mut next = vec![0.0; (b + 1) * (k + 1)];
    for c in 1..=b {
        let pc = correct_pmf[b][c];
        if pc == 0.0 {
            continue;
        }
        let rest = b - c;
        state[..(rest + 1) * (k + 1)].fill(0.0);
        state[0] = 1.0;
        for table in &tables {
            next[..(rest + 1) * (k + 1)].fill(0.0);
            for used in 0..=rest {
                let remaining = rest - used;
                let pmf = &table[remaining];
                for ties in 0..=k {
                    let mass = state[used * (k + 1) + ties];
                    if mass == 0.0 {
                        continue;
                    }
                    for (n, &pn) in pmf.iter().enumerate().take(remaining.min(c) + 1) {
                        if pn == 0.0 {
                            continue;
                        }
                        let t = ties + usize::from(n == c);
                        next[(used + n) * (k + 1) + t] += mass * pn;
                    }
                }
            }
            std::mem::swap(&mut state, &mut next);
        }
        let win: f64 = (0..=k).map(|t| state[rest * (k + 1) + t] * tie_rule.credit(t)).sum();
        total += pc * win;
    }
    Ok(total.clamp(0.0, 1.0))
}

pub(crate) fn sample_answer<R: Rng>(rng: &mut R, cumulative: &[f64]) -> usize {
    let u: f64 = rng.random();
    cumulative.iter().position(|&c| u < c).unwrap_or(cumulative.len() - 1)
}

pub(crate) fn cumulative(model: &AnswerModel) -> Vec<f64> {
    let masses: Vec<f64> = std::iter::once(model.p_correct)
        .chain(model.wrong_probs.iter().copied())
        .collect();
    let mut acc = 0.0;
    let mut out: Vec<f64> = masses
        .iter()
        .map(|m| {
            acc += m;
            acc
        })
        .collect();
    // Absorb rounding into the last category that can actually occur.
    if let Some(last) = masses.iter().rposition(|&m| m > 0.0) {
        out[last] = f64::INFINITY;
    }
    out
}

/// Plurality winner of `counts`, with ties among the leaders settled by
/// `tie_rule`. SplitCredit picks a leader uniformly at random.
pub(crate) fn plurality_winner<R: Rng>(counts: &[u32], tie_rule: TieRule, rng: &mut R) -> u32 {
    let top = counts.iter().copied().max().unwrap_or(0);
    let leaders: Vec<u32> = (0..counts.len() as u32)
        .filter(|&i| counts[i as usize] == top)
        .collect();
    if leaders.len() == 1 {
        return leaders[0];
    }
    let correct_leads = leaders[0] == 0;
    match tie_rule {
        TieRule::FavorCorrect if correct_leads => 0,
        TieRule::FavorCorrect => leaders[0],
        TieRule::FavorWrong if correct_leads => leaders[1],
        TieRule::FavorWrong => leaders[0],
        TieRule::SplitCredit => leaders[rng.random_range(0..leaders.len())],
    }
}

/// Monte Carlo estimate of [`vote_accuracy_exact`] with its standard error.
/// SplitCredit ties are settled by a uniform random pick among the leaders.
pub fn vote_accuracy_mc(
    model: &AnswerModel,
    branches: u32,
    tie_rule: TieRule,
    trials: u64,
    seed: u64,
) -> Result<(f64, f64)> {
    model.validate()?;
    if branches == 0 {
        return Err(Error::InvalidArgument("branches must be >= 1".into()));
    }
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be >= 1".into()));
    }
    let cdf = cumulative(model);
    let k = model.distractors();
    let wins: u64 = (0..trials)
        .into_par_iter()
        .map_init(
            || vec![0_u32; k + 1],
            |counts, trial| {
                counts.fill(0);
                let mut r = rng::stream(seed, trial, 0);
                for _ in 0..branches {
                    counts[sample_answer(&mut r, &cdf)] += 1;
                }
                u64::from(plurality_winner(counts, tie_rule, &mut r) == 0)
            },
        )
        .sum();
    let estimate = wins as f64 / trials as f64;
    let std_error = (estimate * (1.0 - estimate) / trials as f64).sqrt();
    Ok((estimate, std_error))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchOutput {
    pub answer_id: u32,
    pub confidence: f64,
}

impl BranchOutput {
    pub fn new(answer_id: u32, confidence: f64) -> Self {
        Self { answer_id, confidence }
    }
}

/// Picks one answer from `outputs` under `strategy`.
///
/// Each answer's group weight is the min or mean confidence of its members.
/// `*Max` rules pick the highest group weight; `*Vote` rules pick the highest
/// weight times member count; `PlainVote` counts. Ties go to the smaller id.
pub fn aggregate_confidence(outputs: &[BranchOutput], strategy: Aggregation) -> Result<u32> {
    if outputs.is_empty() {
        return Err(Error::InvalidArgument("cannot aggregate zero outputs".into()));
    }
    // answer -> (count, min, sum)
    let mut groups: BTreeMap<u32, (u32, f64, f64)> = BTreeMap::new();
    for o in outputs {
        if !(0.0..=1.0).contains(&o.confidence) {
            return Err(Error::InvalidArgument(format!(
                "confidence {} outside [0, 1]",
                o.confidence
            )));
        }
        let g = groups.entry(o.answer_id).or_insert((0, f64::INFINITY, 0.0));
        g.0 += 1;
        g.1 = g.1.min(o.confidence);
        g.2 += o.confidence;
    }
    let score = |&(count, min, sum): &(u32, f64, f64)| {
        let n = f64::from(count);
        match strategy {
            Aggregation::PlainVote => n,
            Aggregation::MinMax => min,
            Aggregation::AvgMax => sum / n,
            Aggregation::MinVote => min * n,
            Aggregation::AvgVote => sum,
        }
    };
    let mut best: Option<(u32, f64)> = None;
    for (&answer, group) in &groups {
        let s = score(group);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((answer, s));
        }
    }
    Ok(best.expect("non-empty").0)
}
