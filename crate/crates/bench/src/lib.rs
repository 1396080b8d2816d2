//! Shared inputs for the benchmarks.

use psem::simgen::{generate_observed, Design, GeneratorConfig};
use psem::{fit_missingness, WeightModel, WeightedRecords};

/// Case-cohort dataset drawn from `design` with `b - a = 0.2`.
pub fn dataset(design: Design, n: usize, nu: f64) -> WeightedRecords {
    let cfg = GeneratorConfig::from_difference(design, n, 0.2, nu, 2024);
    let records = generate_observed(&cfg).expect("generator");
    fit_missingness(&records, &WeightModel::design_known(nu)).expect("weights")
}
