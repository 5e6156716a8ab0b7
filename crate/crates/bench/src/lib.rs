//! Shared inputs for the criterion benchmarks in `benches/`.

use ttslat_core::fixtures;
use ttslat_core::Scenario;

/// The calibrated 32B scenario used by every benchmark.
pub fn reference_scenario() -> Scenario {
    fixtures::s1_32b()
}
