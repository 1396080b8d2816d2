//! Small deterministic datasets used by tests, benchmarks and the command line.

use crate::trial_data::{Marker, ObservedRecord};

/// Builds records block by block with sequential ids.
#[derive(Debug, Default, Clone)]
pub struct FixtureBuilder {
    records: Vec<ObservedRecord>,
}

impl FixtureBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, count: usize, z: u8, y_tau: bool, marker: Marker, measured: bool, y: bool) -> &mut Self {
        for _ in 0..count {
            let id = format!("p{:05}", self.records.len() + 1);
            self.records.push(ObservedRecord {
                id,
                z,
                w: Vec::new(),
                y_tau,
                marker,
                measured,
                y,
            });
        }
        self
    }

    /// `count` early-event records in arm `z`.
    pub fn early(&mut self, z: u8, count: usize) -> &mut Self {
        self.push(count, z, true, Marker::Undefined, false, true)
    }

    /// `count` measured early survivors with marker `positive`, of whom `events` have the outcome.
    pub fn measured(&mut self, z: u8, positive: bool, count: usize, events: usize) -> &mut Self {
        assert!(events <= count);
        let m = if positive { Marker::Positive } else { Marker::Negative };
        self.push(events, z, false, m, true, true);
        self.push(count - events, z, false, m, true, false)
    }

    /// `count` unmeasured early survivors, of whom `events` have the outcome.
    pub fn unmeasured(&mut self, z: u8, count: usize, events: usize) -> &mut Self {
        assert!(events <= count);
        self.push(events, z, false, Marker::Missing, false, true);
        self.push(count - events, z, false, Marker::Missing, false, false)
    }

    pub fn build(&self) -> Vec<ObservedRecord> {
        self.records.clone()
    }
}

/// Full-cohort Case CB example.
///
/// Vaccine-arm survivors: 40 marker-negative with 20 events and 60
/// marker-positive with 6 events. Control-arm survivors: 100, all
/// marker-negative, with 30 events. Five early events per arm.
pub fn scenario_b_example() -> Vec<ObservedRecord> {
    FixtureBuilder::new()
        .early(1, 5)
        .measured(1, false, 40, 20)
        .measured(1, true, 60, 6)
        .early(0, 5)
        .measured(0, false, 100, 30)
        .build()
}

/// Sampling fraction of vaccine-arm surviving non-cases in [`hvtn_reconstruction`].
pub const HVTN_NU: f64 = 125.0 / 1212.0;

/// Synthetic two-phase dataset matching published counts of a vaccine efficacy trial.
///
/// * Vaccine arm: 1251 participants, 14 early events. Among the 1237 early
///   survivors, 25 later became cases and all were measured (5 marker-positive);
///   125 of the 1212 non-cases were measured (70 marker-positive).
/// * Placebo arm: 1245 participants, 10 early events. Among the 1235 early
///   survivors 39 became cases (about 3.15%), all measured and marker-negative;
///   123 of the 1196 non-cases were measured, all marker-negative, which keeps
///   the non-case sampling fraction equal to the vaccine arm's to three decimals.
pub fn hvtn_reconstruction() -> Vec<ObservedRecord> {
    FixtureBuilder::new()
        .early(1, 14)
        .measured(1, true, 5, 5)
        .measured(1, false, 20, 20)
        .measured(1, true, 70, 0)
        .measured(1, false, 55, 0)
        .unmeasured(1, 1087, 0)
        .early(0, 10)
        .measured(0, false, 39, 39)
        .measured(0, false, 123, 0)
        .unmeasured(0, 1073, 0)
        .build()
}
