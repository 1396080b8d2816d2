//! `psem diagnose`: early-event and marker summaries with assumption checks.

use std::fmt::Write;

use serde::Serialize;

use psem::{DatasetSummary, Diagnostics};

/// Contents of `diagnostics.json`.
#[derive(Debug, Serialize)]
pub struct Report {
    pub summary: DatasetSummary,
    pub diagnostics: Diagnostics,
}

fn rate(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".into(), |r| format!("{r:.4}"))
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

/// Plain-text report printed to stdout.
pub fn report(d: &Diagnostics) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "arm        n  early  early_rate  survivors  measured  marker_pos_rate"
    );
    for a in [d.arm(0), d.arm(1)] {
        let _ = writeln!(
            s,
            "z={} {:>8} {:>6} {:>11.4} {:>10} {:>9} {:>16}",
            a.z,
            a.n,
            a.early_events,
            a.early_event_rate,
            a.survivors,
            a.measured_survivors,
            rate(a.marker_positive_rate)
        );
    }
    let _ = writeln!(s, "fisher_p {:.4}", d.fisher_p);
    let _ = writeln!(s, "equal early risk plausible (A4): {}", yes_no(d.a4_plausible));
    let _ = writeln!(s, "vaccine has fewer early events (A4''): {}", yes_no(d.a4pp));
    let a5 = d.a5p.map_or("NA", yes_no);
    let _ = writeln!(s, "vaccine marker-positive rate higher (A5'): {a5}");
    let _ = writeln!(s, "control marker constant (case CB): {}", yes_no(d.case_cb));
    let rec: Vec<_> = d.recommended.iter().map(ToString::to_string).collect();
    let _ = writeln!(s, "recommended scenarios: {}", rec.join(", "));
    for n in &d.notes {
        let _ = writeln!(s, "note: {n}");
    }
    s
}
