//! Hardware, model and scenario descriptions.
//!
//! Scenario documents are JSON with field names matching the struct fields
//! below. Unknown keys are rejected so that a typo in a sweep file fails
//! loudly instead of silently falling back to a default.
//!
//! Byte quantities use decimal units: 1 GB = 1e9 bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::curves::EfficiencyCurve;
use crate::error::{Error, Result};
use crate::voting::AnswerSettings;

/// Decimal gigabyte.
pub const GB: f64 = 1e9;

fn check_positive(field: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::validation(field, format!("must be finite and > 0, got {value}")))
    }
}

fn check_efficiency(field: &str, value: f64) -> Result<()> {
    if value > 0.0 && value <= 1.0 {
        Ok(())
    } else {
        Err(Error::validation(field, format!("must lie in (0, 1], got {value}")))
    }
}

/// Accelerator description used by the roofline model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareProfile {
    pub name: String,
    /// Peak memory bandwidth in bytes/second.
    pub mem_bandwidth: f64,
    /// Peak arithmetic throughput in FLOP/second.
    pub peak_compute: f64,
    /// Achieved fraction of `mem_bandwidth`.
    pub bandwidth_efficiency: f64,
    /// Achieved fraction of `peak_compute`.
    pub compute_efficiency: f64,
    /// Device memory in bytes.
    pub mem_capacity: f64,
}

impl HardwareProfile {
    pub fn effective_bandwidth(&self) -> f64 {
        self.mem_bandwidth * self.bandwidth_efficiency
    }

    pub fn effective_compute(&self) -> f64 {
        self.peak_compute * self.compute_efficiency
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_at("hardware")
    }

    fn validate_at(&self, prefix: &str) -> Result<()> {
        check_positive(&format!("{prefix}.mem_bandwidth"), self.mem_bandwidth)?;
        check_positive(&format!("{prefix}.peak_compute"), self.peak_compute)?;
        check_efficiency(&format!("{prefix}.bandwidth_efficiency"), self.bandwidth_efficiency)?;
        check_efficiency(&format!("{prefix}.compute_efficiency"), self.compute_efficiency)?;
        check_positive(&format!("{prefix}.mem_capacity"), self.mem_capacity)
    }
}

fn default_bytes_per_param() -> f64 {
    2.0
}

/// Dense decoder model description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelProfile {
    pub name: String,
    pub param_count: u64,
    #[serde(default = "default_bytes_per_param")]
    pub bytes_per_param: f64,
    /// KV-cache bytes appended per generated token, per sequence.
    pub kv_bytes_per_token: f64,
    /// FLOPs per generated token; `None` means `2 * param_count`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flops_per_token: Option<f64>,
}

impl ModelProfile {
    pub fn new(name: impl Into<String>, param_count: u64, kv_bytes_per_token: f64) -> Self {
        Self {
            name: name.into(),
            param_count,
            bytes_per_param: default_bytes_per_param(),
            kv_bytes_per_token,
            flops_per_token: None,
        }
    }

    pub fn weights_bytes(&self) -> f64 {
        self.param_count as f64 * self.bytes_per_param
    }

    pub fn flops_per_token(&self) -> f64 {
        self.flops_per_token.unwrap_or(2.0 * self.param_count as f64)
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_at("model")
    }

    fn validate_at(&self, prefix: &str) -> Result<()> {
        if self.param_count == 0 {
            return Err(Error::validation(format!("{prefix}.param_count"), "must be > 0"));
        }
        check_positive(&format!("{prefix}.bytes_per_param"), self.bytes_per_param)?;
        check_positive(&format!("{prefix}.kv_bytes_per_token"), self.kv_bytes_per_token)?;
        if let Some(flops) = self.flops_per_token {
            check_positive(&format!("{prefix}.flops_per_token"), flops)?;
        }
        Ok(())
    }
}

/// Target model, draft model and the per-token acceptance probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecDecPair {
    pub target: ModelProfile,
    pub draft: ModelProfile,
    pub acceptance_rate: f64,
}

impl SpecDecPair {
    pub fn validate(&self) -> Result<()> {
        self.validate_at("pair")
    }

    fn validate_at(&self, prefix: &str) -> Result<()> {
        self.target.validate_at(&format!("{prefix}.target"))?;
        self.draft.validate_at(&format!("{prefix}.draft"))?;
        if !(0.0..1.0).contains(&self.acceptance_rate) {
            return Err(Error::validation(
                format!("{prefix}.acceptance_rate"),
                format!("must lie in [0, 1), got {}", self.acceptance_rate),
            ));
        }
        Ok(())
    }

    /// Non-fatal oddities, e.g. a draft larger than its target.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.draft.param_count > self.target.param_count {
            out.push(format!(
                "draft `{}` has more parameters than target `{}`",
                self.draft.name, self.target.name
            ));
        }
        out
    }
}

fn one() -> u32 {
    1
}

/// The searchable concurrency knobs: branches, draft length and requests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConcurrencyConfig {
    pub branches: u32,
    /// 0 disables speculative decoding.
    pub draft_len: u32,
    #[serde(default = "one")]
    pub requests: u32,
}

impl ConcurrencyConfig {
    pub fn new(branches: u32, draft_len: u32) -> Self {
        Self {
            branches,
            draft_len,
            requests: 1,
        }
    }

    pub fn with_requests(mut self, requests: u32) -> Self {
        self.requests = requests;
        self
    }

    /// Sequences resident in the batch (`requests * branches`).
    pub fn sequences(&self) -> u64 {
        u64::from(self.requests) * u64::from(self.branches)
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_at("config")
    }

    fn validate_at(&self, prefix: &str) -> Result<()> {
        if self.branches == 0 {
            return Err(Error::validation(format!("{prefix}.branches"), "must be >= 1"));
        }
        if self.requests == 0 {
            return Err(Error::validation(format!("{prefix}.requests"), "must be >= 1"));
        }
        Ok(())
    }
}

fn zero() -> f64 {
    0.0
}

/// Everything the planner and simulator need for one workload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub notes: String,
    pub hardware: HardwareProfile,
    pub pair: SpecDecPair,
    /// Single-branch accuracy as a function of generated tokens.
    pub curve: EfficiencyCurve,
    pub answer_model: AnswerSettings,
    /// Wall-clock budget in seconds.
    pub budget: f64,
    /// Per-branch generation cap; `None` is unbounded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens_per_branch: Option<f64>,
    /// Constant time charged before decoding starts.
    #[serde(default = "zero")]
    pub prefill_offset: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default_config: Option<ConcurrencyConfig>,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.hardware.validate_at("hardware")?;
        self.pair.validate_at("pair")?;
        self.curve.validate_at("curve")?;
        self.answer_model.validate_at("answer_model")?;
        check_positive("budget", self.budget)?;
        if !(self.prefill_offset.is_finite() && self.prefill_offset >= 0.0) {
            return Err(Error::validation("prefill_offset", "must be finite and >= 0"));
        }
        if self.prefill_offset >= self.budget {
            return Err(Error::validation("prefill_offset", "must be smaller than budget"));
        }
        if let Some(cap) = self.max_tokens_per_branch {
            if !(cap.is_finite() && cap >= 1.0) {
                return Err(Error::validation("max_tokens_per_branch", "must be >= 1"));
            }
        }
        if let Some(config) = &self.default_config {
            config.validate_at("default_config")?;
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Parses and validates a scenario document held in memory.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let scenario = Self::from_json(text).map_err(|source| Error::Parse {
            path: origin.to_path_buf(),
            source,
        })?;
        scenario.validate()?;
        for warning in scenario.pair.warnings() {
            log::warn!("{}: {warning}", origin.display());
        }
        Ok(scenario)
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Scenario::parse(&text, path)
}

pub fn save_scenario(scenario: &Scenario, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = scenario.to_json();
    text.push('\n');
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Per-token KV bytes from a measured total at a given sequence length.
pub fn kv_bytes_from_anchor(total_kv: f64, seq_len: u64) -> Result<f64> {
    if !(total_kv.is_finite() && total_kv > 0.0) {
        return Err(Error::InvalidArgument(format!("total_kv must be > 0, got {total_kv}")));
    }
    if seq_len == 0 {
        return Err(Error::InvalidArgument("seq_len must be >= 1".into()));
    }
    Ok(total_kv / seq_len as f64)
}

// ============================================================================
// Built-in model pairs
// ============================================================================
//
// KV bytes/token = 2 (K and V) * layers * kv_heads * head_dim * 2 bytes, from
// the published architectures. The 32B targets use the 0.25 GB @ 1024 tokens
// figure directly.

fn qwen25_32b(name: &str) -> ModelProfile {
    ModelProfile::new(name, 32_000_000_000, 0.25 * GB / 1024.0)
}

fn qwen25_7b(name: &str) -> ModelProfile {
    // 28 layers, 4 KV heads, head_dim 128.
    ModelProfile::new(name, 7_600_000_000, 57_344.0)
}

/// The five target/draft pairs with their measured acceptance rates.
pub fn builtin_pairs() -> Vec<SpecDecPair> {
    vec![
        SpecDecPair {
            target: qwen25_32b("s1.1-32B"),
            draft: qwen25_7b("s1.1-7B"),
            acceptance_rate: 0.831,
        },
        SpecDecPair {
            target: qwen25_32b("DeepSeek-R1-Distill-Qwen-32B"),
            draft: qwen25_7b("DeepSeek-R1-Distill-Qwen-7B"),
            acceptance_rate: 0.897,
        },
        SpecDecPair {
            target: qwen25_32b("QwQ-32B"),
            draft: qwen25_7b("DeepSeek-R1-Distill-Qwen-7B"),
            acceptance_rate: 0.781,
        },
        SpecDecPair {
            // 32 layers, 8 KV heads, head_dim 128.
            target: ModelProfile::new("LLaMa-3.1-8B-Instruct", 8_030_000_000, 131_072.0),
            // Single decoder layer plus its own LM head.
            draft: ModelProfile::new("Eagle3", 500_000_000, 4_096.0),
            acceptance_rate: 0.904,
        },
        SpecDecPair {
            // 36 layers, 2 KV heads, head_dim 128.
            target: ModelProfile::new("s1.1-3B", 3_090_000_000, 36_864.0),
            // 24 layers, 2 KV heads, head_dim 64.
            draft: ModelProfile::new("Qwen2.5-0.5B-Instruct", 494_000_000, 12_288.0),
            acceptance_rate: 0.701,
        },
    ]
}

/// Looks up a built-in pair by target name.
pub fn builtin_pair(target: &str) -> Option<SpecDecPair> {
    builtin_pairs().into_iter().find(|p| p.target.name == target)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_acceptance_rates() {
        let rates: Vec<f64> = builtin_pairs().iter().map(|p| p.acceptance_rate).collect();
        assert_eq!(rates, vec![0.831, 0.897, 0.781, 0.904, 0.701]);
        assert_eq!(builtin_pair("QwQ-32B").unwrap().acceptance_rate, 0.781);
        assert_eq!(builtin_pair("s1.1-3B").unwrap().acceptance_rate, 0.701);
        assert!(builtin_pair("GPT-5").is_none());
        for pair in builtin_pairs() {
            pair.validate().unwrap();
            assert!(pair.warnings().is_empty());
        }
    }

    #[test]
    fn weights_match_half_precision_accounting() {
        let target = builtin_pair("s1.1-32B").unwrap().target;
        assert_eq!(target.weights_bytes(), 64.0 * GB);
        assert_eq!(target.flops_per_token(), 64e9);
    }

    #[test]
    fn kv_anchor_division() {
        let kv = kv_bytes_from_anchor(0.25 * GB, 1024).unwrap();
        assert!((kv - 244_140.625).abs() < 1e-9);
        assert_eq!(kv_bytes_from_anchor(1024.0, 1024).unwrap(), 1.0);
        assert!(kv_bytes_from_anchor(0.0, 1024).is_err());
        assert!(kv_bytes_from_anchor(-1.0, 1024).is_err());
        assert!(kv_bytes_from_anchor(1.0, 0).is_err());
    }

    #[test]
    fn acceptance_rate_bounds() {
        let mut pair = builtin_pair("s1.1-32B").unwrap();
        pair.acceptance_rate = 0.0;
        pair.validate().unwrap();
        pair.acceptance_rate = 1.0;
        match pair.validate() {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "pair.acceptance_rate"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn oversized_draft_warns() {
        let mut pair = builtin_pair("s1.1-3B").unwrap();
        pair.draft.param_count = 10_000_000_000;
        pair.validate().unwrap();
        assert_eq!(pair.warnings().len(), 1);
    }

    #[test]
    fn config_bounds() {
        ConcurrencyConfig::new(1, 0).validate().unwrap();
        assert!(ConcurrencyConfig::new(0, 0).validate().is_err());
        assert!(ConcurrencyConfig::new(1, 0).with_requests(0).validate().is_err());
        assert_eq!(ConcurrencyConfig::new(16, 5).with_requests(4).sequences(), 64);
    }
}
