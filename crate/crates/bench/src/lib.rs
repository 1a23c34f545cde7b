//! Shared fixtures for the benchmarks.

use xtrem_core::gpd::GpdSample;
use xtrem_core::simulate::{generate_dataset, SimScenario};
use xtrem_core::xtrem::{observations, segment};
use xtrem_core::transforms::LogitObservation;
use xtrem_core::{Dataset, Threshold};

pub const THRESHOLD: f64 = 0.09;

/// Replication 0 of a built-in scenario.
pub fn scenario_dataset(name: &str) -> Dataset {
    let scenario = SimScenario::builtin(name).expect("built-in scenario");
    generate_dataset(&scenario, 0).expect("generation succeeds")
}

pub fn all_observations(dataset: &Dataset) -> Vec<LogitObservation> {
    observations(dataset, None, 0.5).expect("valid dataset")
}

/// Excesses over [`THRESHOLD`] pooled from the first `reps` s3 datasets.
pub fn pooled_excesses(reps: usize) -> GpdSample {
    let scenario = SimScenario::builtin("s3").expect("built-in scenario");
    let u = Threshold::fixed(THRESHOLD).expect("valid threshold");
    let mut excesses = Vec::new();
    for rep in 0..reps {
        let data = generate_dataset(&scenario, rep).expect("generation succeeds");
        excesses.extend_from_slice(segment(&data, u).excesses());
    }
    GpdSample::new(excesses, THRESHOLD).expect("positive excesses")
}

/// A scenario trimmed to `reps` replications.
pub fn small_scenario(name: &str, reps: usize) -> SimScenario {
    SimScenario::builtin(name).expect("built-in scenario").with_replications(reps)
}
