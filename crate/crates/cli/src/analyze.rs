//! `psem analyze`: sensitivity analysis of one dataset over one or more regions.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use psem::sensitivity::{interval, sweep_serial, Sweep};
use psem::{
    check_assumptions, fit_missingness, load_csv, summarize, CepResult, Diagnostics, IntervalResult, ObservedRecord,
    Prepared, Result, RiskEstimates, Scenario, SensitivityPoint, Target, WeightModel, WeightedRecords,
};

use crate::config::{region_label, AnalysisConfig, Region};
use crate::output::{create_dir, fmt_f64, write_json};

pub const RESULTS_FILE: &str = "results.json";
pub const INTERVALS_FILE: &str = "intervals.csv";

pub const INTERVAL_COLUMNS: [&str; 16] = [
    "region",
    "scenario",
    "contrast",
    "target",
    "null_estimate",
    "null_se",
    "ignorance_lower",
    "ignorance_upper",
    "se_lower",
    "se_upper",
    "eui_lower",
    "eui_upper",
    "c_alpha",
    "degenerate",
    "failures",
    "cells",
];

/// One joint fit, flattened for output.
#[derive(Debug, Serialize)]
pub struct FitOutput {
    pub point: SensitivityPoint,
    pub quantities: Vec<String>,
    pub values: Vec<f64>,
    pub se: Vec<f64>,
    /// Row-major sandwich covariance over `values`.
    pub cov: Vec<Vec<f64>>,
    pub mixing_residual: Option<f64>,
}

impl From<&RiskEstimates> for FitOutput {
    fn from(est: &RiskEstimates) -> Self {
        let k = est.values.len();
        Self {
            point: est.point,
            quantities: est.quantities.iter().map(ToString::to_string).collect(),
            values: est.values.clone(),
            se: (0..k).map(|i| est.cov[(i, i)].max(0.0).sqrt()).collect(),
            cov: (0..k).map(|i| (0..k).map(|j| est.cov[(i, j)]).collect()).collect(),
            mixing_residual: est.mixing_residual(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct FailedCell {
    pub point: SensitivityPoint,
    pub kind: &'static str,
    pub error: String,
}

#[derive(Debug, Serialize)]
pub struct RegionOutput {
    pub label: String,
    pub ranges: Region,
    pub cells: usize,
    pub failures: Vec<FailedCell>,
    /// Fit with every sensitivity parameter zero, when that point is on the grid.
    pub null_fit: Option<FitOutput>,
    pub null_cep: Option<CepResult>,
    pub intervals: Vec<IntervalResult>,
    /// EUI for `mu` excludes zero. Absent when a corner of the region failed.
    pub reject_no_modification: Option<bool>,
}

#[derive(Debug, Serialize)]
pub struct WeightsOutput {
    pub model: Option<WeightModel>,
    pub coefficients: Option<Vec<f64>>,
}

#[derive(Debug, Serialize)]
pub struct AnalysisResults {
    pub version: &'static str,
    pub config: AnalysisConfig,
    pub records: usize,
    pub weights: WeightsOutput,
    pub diagnostics: Diagnostics,
    pub regions: Vec<RegionOutput>,
}

pub fn targets(scenario: Scenario) -> Vec<Target> {
    let mut t = vec![Target::Cep00, Target::Cep10];
    if scenario == Scenario::A {
        t.push(Target::Cep11);
    }
    t.push(Target::Mu);
    t
}

pub fn weigh(records: Vec<ObservedRecord>, model: Option<&WeightModel>) -> Result<WeightedRecords> {
    match model {
        Some(m) => fit_missingness(&records, m),
        None => Ok(WeightedRecords::unweighted(records)),
    }
}

fn region_output(region: &Region, sw: &Sweep) -> Result<RegionOutput> {
    let null = sw.null_fit();
    let intervals = targets(sw.config.scenario)
        .iter()
        .map(|t| interval(sw, t))
        .collect::<Result<Vec<_>>>()?;
    let corner_failed = sw.corner_failure().is_some();
    let reject = intervals
        .iter()
        .find(|i| i.target == Target::Mu.to_string())
        .filter(|_| !corner_failed)
        .map(|i| !i.contains(0.0));
    Ok(RegionOutput {
        label: region_label(region),
        ranges: region.clone(),
        cells: sw.cells.len(),
        failures: sw
            .cells
            .iter()
            .filter_map(|c| {
                c.fit.as_ref().err().map(|e| FailedCell {
                    point: c.point,
                    kind: e.name(),
                    error: e.to_string(),
                })
            })
            .collect(),
        null_fit: null.map(|f| FitOutput::from(&f.estimates)),
        null_cep: null.map(|f| f.cep.clone()),
        intervals,
        reject_no_modification: reject,
    })
}

/// Runs the analysis and returns the in-memory results without writing files.
pub fn run(config: &AnalysisConfig) -> Result<AnalysisResults> {
    config.validate()?;
    let records = load_csv(&config.input, &config.schema)?;
    summarize(&records)?;
    let model = config.weights.model(&records);
    let n = records.len();
    let weighted = weigh(records, model.as_ref())?;
    let diagnostics = check_assumptions(&weighted.records, Some(&weighted));
    let prepared = Prepared::new(&weighted);
    let regions = config
        .regions()
        .iter()
        .map(|r| {
            let sw = sweep_serial(&prepared, &config.sensitivity_config(r))?;
            region_output(r, &sw)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AnalysisResults {
        version: env!("CARGO_PKG_VERSION"),
        config: config.clone(),
        records: n,
        weights: WeightsOutput {
            model,
            coefficients: weighted.coefficients.clone(),
        },
        diagnostics,
        regions,
    })
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

pub fn write_intervals(path: &Path, results: &AnalysisResults) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| psem::PsemError::Io(e.into()))?;
    let io = |e: csv::Error| psem::PsemError::Io(e.into());
    w.write_record(INTERVAL_COLUMNS).map_err(io)?;
    let cfg = &results.config;
    for region in &results.regions {
        for iv in &region.intervals {
            let null = region.null_cep.as_ref().and_then(|c| {
                let e = match iv.target.as_str() {
                    "CEP(0,0)" => c.cep00,
                    "CEP(1,0)" => c.cep10,
                    "CEP(1,1)" => c.cep11?,
                    _ => c.mu,
                };
                Some(e)
            });
            let ig = &iv.ignorance;
            w.write_record([
                region.label.clone(),
                cfg.scenario.to_string(),
                cfg.contrast.tag().to_string(),
                iv.target.clone(),
                opt(null.map(|e| e.value)),
                opt(null.map(|e| e.se)),
                fmt_f64(ig.lower),
                fmt_f64(ig.upper),
                fmt_f64(ig.se_lower),
                fmt_f64(ig.se_upper),
                fmt_f64(iv.eui.lower),
                fmt_f64(iv.eui.upper),
                fmt_f64(iv.eui.c_alpha),
                iv.eui.degenerate.to_string(),
                region.failures.len().to_string(),
                region.cells.to_string(),
            ])
            .map_err(io)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Runs the analysis and writes `results.json` and `intervals.csv` under `out`.
pub fn execute(config: &AnalysisConfig, out: &Path) -> Result<AnalysisResults> {
    let results = run(config)?;
    create_dir(out)?;
    write_json(&out.join(RESULTS_FILE), &results)?;
    write_intervals(&out.join(INTERVALS_FILE), &results)?;
    Ok(results)
}

/// Absolute form of `p` when it exists, so echoed configs work from any directory.
pub fn absolute(p: &Path) -> PathBuf {
    fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf())
}
