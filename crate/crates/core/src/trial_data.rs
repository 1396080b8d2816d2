//! Observed trial records: CSV ingestion, structural validation and summaries.
//!
//! Marker cells use two distinct missingness encodings. An empty cell means
//! the marker was not measured (two-phase sampling), while a literal `*`
//! means the marker is undefined because the participant had an early event.
//! Participants with an early event always carry [`Marker::Undefined`],
//! regardless of the sampling indicator.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{PsemError, Result};

/// Biomarker status at the marker time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Marker {
    Negative,
    Positive,
    /// Early event before the marker time; the marker does not exist.
    Undefined,
    /// Marker exists but was not sampled.
    Missing,
}

impl Marker {
    /// `Some(true)` for positive, `Some(false)` for negative, `None` otherwise.
    pub fn value(self) -> Option<bool> {
        match self {
            Marker::Negative => Some(false),
            Marker::Positive => Some(true),
            Marker::Undefined | Marker::Missing => None,
        }
    }

    fn encode(self) -> &'static str {
        match self {
            Marker::Negative => "0",
            Marker::Positive => "1",
            Marker::Undefined => "*",
            Marker::Missing => "",
        }
    }
}

/// One participant's observed data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedRecord {
    pub id: String,
    /// Randomized arm, 0 = control, 1 = active.
    pub z: u8,
    /// Baseline covariates (`w_*` columns), possibly empty.
    pub w: Vec<f64>,
    /// Clinical event by the marker time.
    pub y_tau: bool,
    pub marker: Marker,
    /// Two-phase sampling indicator.
    pub measured: bool,
    /// Final binary outcome.
    pub y: bool,
}

impl ObservedRecord {
    /// Checks the structural invariants, returning a description of the first violation.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.z > 1 {
            return Err(format!("arm indicator z={} not in {{0,1}}", self.z));
        }
        if self.y_tau {
            if !self.y {
                return Err("early event (y_tau=1) requires final outcome y=1".into());
            }
            if self.marker != Marker::Undefined {
                return Err("early event (y_tau=1) requires an undefined marker".into());
            }
            return Ok(());
        }
        match (self.measured, self.marker) {
            (true, Marker::Negative | Marker::Positive) => Ok(()),
            (true, m) => Err(format!("measured record without a marker value ({m:?})")),
            (false, Marker::Missing) => Ok(()),
            (false, m) => Err(format!("unmeasured record must carry the missing tag, found {m:?}")),
        }
    }
}

/// Column names bound to each record field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schema {
    pub id: String,
    pub z: String,
    pub y_tau: String,
    pub marker: String,
    pub y: String,
    pub measured: String,
    /// Prefix identifying covariate columns.
    pub covariate_prefix: String,
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            id: "id".into(),
            z: "z".into(),
            y_tau: "y_tau".into(),
            marker: "s_star".into(),
            y: "y".into(),
            measured: "r".into(),
            covariate_prefix: "w_".into(),
        }
    }
}

struct ColumnIndex {
    id: usize,
    z: usize,
    y_tau: usize,
    marker: usize,
    y: usize,
    measured: usize,
    covariates: Vec<usize>,
}

impl Schema {
    fn resolve(&self, header: &csv::StringRecord) -> Result<ColumnIndex> {
        let find = |name: &str| {
            header
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| PsemError::Schema(format!("required column `{name}` not found")))
        };
        let covariates = header
            .iter()
            .enumerate()
            .filter(|(_, h)| h.trim().starts_with(&self.covariate_prefix))
            .map(|(i, _)| i)
            .collect();
        Ok(ColumnIndex {
            id: find(&self.id)?,
            z: find(&self.z)?,
            y_tau: find(&self.y_tau)?,
            marker: find(&self.marker)?,
            y: find(&self.y)?,
            measured: find(&self.measured)?,
            covariates,
        })
    }
}

fn parse_indicator(cell: &str, column: &str, row: usize) -> Result<bool> {
    match cell.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(PsemError::row(
            row,
            format!("column `{column}` must be 0 or 1, found `{other}`"),
        )),
    }
}

/// Loads records from a CSV file with a header row.
pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<Vec<ObservedRecord>> {
    let file = std::fs::File::open(path)?;
    read_csv(file, schema)
}

/// Reads records from any CSV source. Row numbers in errors are 1-based data rows.
pub fn read_csv<R: Read>(source: R, schema: &Schema) -> Result<Vec<ObservedRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(source);
    let header = reader
        .headers()
        .map_err(|e| PsemError::Schema(format!("cannot read header: {e}")))?
        .clone();
    if header.is_empty() {
        return Err(PsemError::Schema("missing header row".into()));
    }
    let cols = schema.resolve(&header)?;

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 1;
        let row = row.map_err(|e| PsemError::row(row_no, format!("malformed row: {e}")))?;
        let cell = |idx: usize| row.get(idx).unwrap_or("");

        let z = match cell(cols.z).trim() {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(PsemError::Schema(format!(
                    "row {row_no}: arm column `{}` must be 0 or 1, found `{other}`",
                    schema.z
                )))
            }
        };
        let y_tau = parse_indicator(cell(cols.y_tau), &schema.y_tau, row_no)?;
        let y = parse_indicator(cell(cols.y), &schema.y, row_no)?;
        let measured = parse_indicator(cell(cols.measured), &schema.measured, row_no)?;
        let raw_marker = cell(cols.marker).trim();
        let marker = match (y_tau, raw_marker) {
            (true, "" | "*") => Marker::Undefined,
            (true, _) => {
                return Err(PsemError::row(
                    row_no,
                    format!("structural inconsistency: y_tau=1 with marker value `{raw_marker}`"),
                ))
            }
            (false, "") => Marker::Missing,
            (false, "0") => Marker::Negative,
            (false, "1") => Marker::Positive,
            (false, "*") => {
                return Err(PsemError::row(
                    row_no,
                    "structural inconsistency: undefined marker without an early event",
                ))
            }
            (false, other) => {
                return Err(PsemError::row(
                    row_no,
                    format!("marker must be 0, 1, `*` or empty, found `{other}`"),
                ))
            }
        };
        let w = cols
            .covariates
            .iter()
            .map(|&c| {
                cell(c)
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| PsemError::row(row_no, format!("covariate `{}` is not a number", &header[c])))
            })
            .collect::<Result<Vec<_>>>()?;

        let record = ObservedRecord {
            id: cell(cols.id).trim().to_string(),
            z,
            w,
            y_tau,
            marker,
            measured,
            y,
        };
        record.validate().map_err(|m| PsemError::row(row_no, m))?;
        if !seen.insert(record.id.clone()) {
            return Err(PsemError::row(row_no, format!("duplicate id `{}`", record.id)));
        }
        records.push(record);
    }
    Ok(records)
}

/// Writes records using the default schema column names.
pub fn write_csv<W: Write>(sink: W, records: &[ObservedRecord]) -> Result<()> {
    let schema = Schema::default();
    let n_cov = records.first().map_or(0, |r| r.w.len());
    let mut writer = csv::Writer::from_writer(sink);
    let mut header = vec![
        schema.id.clone(),
        schema.z.clone(),
        schema.y_tau.clone(),
        schema.marker.clone(),
        schema.y.clone(),
        schema.measured.clone(),
    ];
    header.extend((1..=n_cov).map(|k| format!("{}{k}", schema.covariate_prefix)));
    let io = |e: csv::Error| PsemError::Io(std::io::Error::other(e));
    writer.write_record(&header).map_err(io)?;
    for r in records {
        let mut row = vec![
            r.id.clone(),
            r.z.to_string(),
            u8::from(r.y_tau).to_string(),
            r.marker.encode().to_string(),
            u8::from(r.y).to_string(),
            u8::from(r.measured).to_string(),
        ];
        // `{:?}` is the shortest representation that parses back to the same bits
        row.extend(r.w.iter().map(|v| format!("{v:?}")));
        writer.write_record(&row).map_err(io)?;
    }
    writer.flush()?;
    Ok(())
}

/// Per-arm tallies.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub n: usize,
    pub early_events: usize,
    pub final_events: usize,
    /// Early survivors (y_tau = 0).
    pub survivors: usize,
    /// Survivors with a final event.
    pub survivor_cases: usize,
    pub measured_cases: usize,
    pub measured_controls: usize,
    pub positive_cases: usize,
    pub positive_controls: usize,
}

impl ArmSummary {
    pub fn measured(&self) -> usize {
        self.measured_cases + self.measured_controls
    }

    pub fn positive(&self) -> usize {
        self.positive_cases + self.positive_controls
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub control: ArmSummary,
    pub active: ArmSummary,
}

impl DatasetSummary {
    pub fn arm(&self, z: u8) -> &ArmSummary {
        if z == 1 {
            &self.active
        } else {
            &self.control
        }
    }
}

pub fn summarize(records: &[ObservedRecord]) -> Result<DatasetSummary> {
    if records.is_empty() {
        return Err(PsemError::Empty("no records to summarize".into()));
    }
    let mut summary = DatasetSummary::default();
    for r in records {
        let arm = if r.z == 1 {
            &mut summary.active
        } else {
            &mut summary.control
        };
        arm.n += 1;
        arm.early_events += usize::from(r.y_tau);
        arm.final_events += usize::from(r.y);
        if r.y_tau {
            continue;
        }
        arm.survivors += 1;
        arm.survivor_cases += usize::from(r.y);
        if let Some(positive) = r.marker.value() {
            if r.y {
                arm.measured_cases += 1;
                arm.positive_cases += usize::from(positive);
            } else {
                arm.measured_controls += 1;
                arm.positive_controls += usize::from(positive);
            }
        }
    }
    Ok(summary)
}
