//! Principal stratification effect modification estimators.
//!
//! Every estimator stacks its estimating equations into one system so that a
//! single sandwich covariance covers all fitted quantities.

mod chiba;
mod contrast;
mod diagnostics;
mod gbh;
mod identified;
mod protect;
pub(crate) mod stack;
mod types;


pub use chiba::chiba_vdw;
pub use contrast::cep;
pub use diagnostics::{check_assumptions, fisher_exact, ArmDiagnostics, Diagnostics};
pub use gbh::{gbh_sace, scenario_a, Direction, SaceResult, Selection};
pub use identified::{estimate_identified, scenario_b, scenario_c_harm};
pub use protect::scenario_c_protect;
pub use types::{
    CepResult, Contrast, Estimate, Quantity, RiskEstimates, Scenario, SensitivityParam, SensitivityPoint, Stratum,
};

use crate::error::Result;
use crate::missingness::WeightedRecords;

use stack::{aggregate, Cell};

/// Observation cells prepared once and reused across many sensitivity points.
#[derive(Debug, Clone)]
pub struct Prepared {
    cells: Vec<Cell>,
}

impl Prepared {
    pub fn new(weighted: &WeightedRecords) -> Self {
        Self {
            cells: aggregate(weighted),
        }
    }

    /// Number of distinct cells after collapsing identical records.
    pub fn cells(&self) -> usize {
        self.cells.len()
    }

    pub fn estimate(&self, scenario: Scenario, point: &SensitivityPoint) -> Result<RiskEstimates> {
        point.validate(scenario)?;
        match scenario {
            Scenario::A => gbh::scenario_a_cells(&self.cells, point),
            Scenario::B => identified::scenario_b_cells(&self.cells, point),
            Scenario::CProtect => protect::scenario_c_protect_cells(&self.cells, point),
            Scenario::CHarm => identified::scenario_c_harm_cells(&self.cells, point),
        }
    }
}

/// Fits `scenario` at one sensitivity point.
pub fn estimate(weighted: &WeightedRecords, scenario: Scenario, point: &SensitivityPoint) -> Result<RiskEstimates> {
    Prepared::new(weighted).estimate(scenario, point)
}
