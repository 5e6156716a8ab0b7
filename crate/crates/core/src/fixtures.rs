//! Scenario files shipped with the crate, one per target/draft pair.
//!
//! The JSON sources live in `fixtures/` next to this crate and are embedded
//! at compile time so tests and benchmarks need no file access.

use std::path::Path;

use crate::profiles::Scenario;

pub const S1_32B: &str = include_str!("../fixtures/s1_32b.json");
pub const R1_DISTILL_32B: &str = include_str!("../fixtures/r1_distill_32b.json");
pub const QWQ_32B: &str = include_str!("../fixtures/qwq_32b.json");
pub const LLAMA31_8B: &str = include_str!("../fixtures/llama31_8b.json");
pub const S1_3B: &str = include_str!("../fixtures/s1_3b.json");

/// Sequential-scaling anchors for s1.1-32B, per-branch tokens.
pub const S1_32B_ANCHORS: &str = include_str!("../fixtures/s1_32b_anchors.csv");

/// `(file name, contents)` for every shipped scenario.
pub const ALL: [(&str, &str); 5] = [
    ("s1_32b.json", S1_32B),
    ("r1_distill_32b.json", R1_DISTILL_32B),
    ("qwq_32b.json", QWQ_32B),
    ("llama31_8b.json", LLAMA31_8B),
    ("s1_3b.json", S1_3B),
];

fn parse(name: &str, text: &str) -> Scenario {
    Scenario::parse(text, Path::new(name)).unwrap_or_else(|e| panic!("bundled fixture {name} is invalid: {e}"))
}

pub fn s1_32b() -> Scenario {
    parse("s1_32b.json", S1_32B)
}

pub fn r1_distill_32b() -> Scenario {
    parse("r1_distill_32b.json", R1_DISTILL_32B)
}

pub fn qwq_32b() -> Scenario {
    parse("qwq_32b.json", QWQ_32B)
}

pub fn llama31_8b() -> Scenario {
    parse("llama31_8b.json", LLAMA31_8B)
}

pub fn s1_3b() -> Scenario {
    parse("s1_3b.json", S1_3B)
}

pub fn all() -> Vec<(&'static str, Scenario)> {
    ALL.iter().map(|&(name, text)| (name, parse(name, text))).collect()
}

/// Absolute path of a shipped fixture file in the source tree.
pub fn path(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}
