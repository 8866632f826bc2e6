#![allow(dead_code)]

use rbsched_core::scenario::PolicyKind;
use rbsched_core::{GainModel, Scenario, SplitMix64, UtilityFunction};

/// Random single-cell instance with `ues` UEs and `blocks` blocks, mixed
/// utility families sized to the cell's capacity, and gains in [0.5, 2].
pub fn random_instance(rng: &mut SplitMix64, ues: usize, blocks: usize, seed: u64) -> Scenario {
    let share = blocks as f64 / ues as f64;
    let utilities: Vec<UtilityFunction> = (0..ues)
        .map(|i| {
            // Alternate families so every instance with two or more UEs is mixed.
            if (i + rng.range_inclusive(0, 1)).is_multiple_of(2) {
                UtilityFunction::sigmoidal(rng.uniform(1.0, 4.0), rng.uniform(0.3, 1.0) * share).unwrap()
            } else {
                UtilityFunction::logarithmic(rng.uniform(0.5, 10.0), rng.uniform(0.5, 2.0) * share).unwrap()
            }
        })
        .collect();
    Scenario::single_cell(
        &utilities,
        blocks,
        GainModel::Random { low: 0.5, high: 2.0 },
        PolicyKind::Upf,
        seed,
    )
    .unwrap()
}
