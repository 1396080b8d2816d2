//! Principal stratification effect modification (PSEM) analysis of randomized
//! trials whose biomarker is only defined for participants without an early
//! clinical event.
//!
//! The crate covers data ingestion ([`trial_data`]), two-phase sampling
//! weights ([`missingness`]), a stacked M-estimation engine ([`estimating`]),
//! scenario-specific estimators ([`estimators`]), sensitivity analysis with
//! ignorance intervals and estimated uncertainty intervals ([`sensitivity`]),
//! and simulation studies ([`simgen`]).

pub mod error;
pub mod estimating;
pub mod estimators;
pub mod fixtures;
pub mod missingness;
pub mod normal;
pub mod sensitivity;
pub mod simgen;
pub mod trial_data;

pub use error::{ErrorKind, PsemError, Result};
pub use estimators::{
    cep, check_assumptions, chiba_vdw, estimate, estimate_identified, fisher_exact, gbh_sace, scenario_a, scenario_b,
    scenario_c_harm, scenario_c_protect, CepResult, Contrast, Diagnostics, Direction, Estimate, Prepared, Quantity,
    RiskEstimates, SaceResult, Scenario, Selection, SensitivityParam, SensitivityPoint, Stratum,
};
pub use missingness::{fit_missingness, Term, WeightModel, WeightModelKind, WeightedRecords};
pub use sensitivity::{
    eui, eui_asymptotic, ignorance_interval, sweep, test_effect_modification, Eui, Ignorance, IntervalResult,
    SensitivityConfig, Sweep, Target,
};
pub use simgen::{
    apply_case_cohort, gen_scenario_b, gen_scenario_c, oracle_estimands, run_study, Design, GeneratorConfig, Oracle,
    PotentialRecord, StudyCell, StudyConfig, StudyResult,
};
pub use trial_data::{load_csv, read_csv, summarize, write_csv, DatasetSummary, Marker, ObservedRecord, Schema};
