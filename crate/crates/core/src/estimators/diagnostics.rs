//! Data checks for the assumptions that distinguish the scenarios.

use serde::Serialize;

use crate::missingness::WeightedRecords;
use crate::trial_data::ObservedRecord;

use super::types::Scenario;

/// Two-sided Fisher exact test for the 2x2 table `[[a, b], [c, d]]`.
///
/// Sums the probabilities of every table with the same margins whose
/// hypergeometric probability does not exceed that of the observed table.
pub fn fisher_exact(a: u64, b: u64, c: u64, d: u64) -> f64 {
    let row1 = a + b;
    let col1 = a + c;
    let n = a + b + c + d;
    if n == 0 {
        return 1.0;
    }
    let mut ln_fact = vec![0.0f64; n as usize + 1];
    for k in 1..=n as usize {
        ln_fact[k] = ln_fact[k - 1] + (k as f64).ln();
    }
    let lf = |k: u64| ln_fact[k as usize];
    let ln_p = |x: u64| {
        lf(row1) + lf(n - row1) + lf(col1) + lf(n - col1)
            - lf(n)
            - lf(x)
            - lf(row1 - x)
            - lf(col1 - x)
            - lf(n - row1 - col1 + x)
    };
    let lo = col1.saturating_sub(n - row1);
    let hi = row1.min(col1);
    let observed = ln_p(a);
    // relative slack so tables tied with the observed one are not lost to rounding
    let cutoff = observed + 1e-7f64.ln_1p();
    let mut total = 0.0;
    for x in lo..=hi {
        let l = ln_p(x);
        if l <= cutoff {
            total += l.exp();
        }
    }
    total.min(1.0)
}

#[derive(Debug, Clone, Serialize)]
pub struct ArmDiagnostics {
    pub z: u8,
    pub n: usize,
    pub early_events: usize,
    pub early_event_rate: f64,
    pub survivors: usize,
    pub measured_survivors: usize,
    /// Weighted marker-positive proportion among measured early survivors.
    pub marker_positive_rate: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub arms: [ArmDiagnostics; 2],
    /// Two-sided Fisher exact p-value for equal early-event rates.
    pub fisher_p: f64,
    /// Equal early risk not rejected at the 5% level.
    pub a4_plausible: bool,
    /// Vaccine arm has strictly fewer early events (rate scale).
    pub a4pp: bool,
    /// Vaccine-arm survivors are marker-positive more often than control-arm survivors.
    pub a5p: Option<bool>,
    /// No marker-positive control-arm survivor was observed.
    pub case_cb: bool,
    pub recommended: Vec<Scenario>,
    pub notes: Vec<String>,
}

impl Diagnostics {
    pub fn arm(&self, z: u8) -> &ArmDiagnostics {
        &self.arms[usize::from(z)]
    }
}

fn arm_diagnostics(records: &[ObservedRecord], weighted: Option<&WeightedRecords>, z: u8) -> ArmDiagnostics {
    let (mut n, mut early, mut measured) = (0, 0, 0);
    let (mut pos_w, mut all_w) = (0.0, 0.0);
    for (i, r) in records.iter().enumerate().filter(|(_, r)| r.z == z) {
        n += 1;
        if r.y_tau {
            early += 1;
            continue;
        }
        if let Some(s) = r.marker.value() {
            measured += 1;
            let w = weighted.and_then(|w| w.weight(i)).unwrap_or(1.0);
            all_w += w;
            if s {
                pos_w += w;
            }
        }
    }
    ArmDiagnostics {
        z,
        n,
        early_events: early,
        early_event_rate: if n > 0 { early as f64 / n as f64 } else { f64::NAN },
        survivors: n - early,
        measured_survivors: measured,
        marker_positive_rate: (all_w > 0.0).then(|| pos_w / all_w),
    }
}

/// Early-event and marker summaries with the assumption checks each scenario relies on.
///
/// `weighted` must wrap the same records in the same order when given; its
/// weights are then used for the marker rates.
pub fn check_assumptions(records: &[ObservedRecord], weighted: Option<&WeightedRecords>) -> Diagnostics {
    let arms = [
        arm_diagnostics(records, weighted, 0),
        arm_diagnostics(records, weighted, 1),
    ];
    let mut notes = Vec::new();
    let (a0, a1) = (&arms[0], &arms[1]);
    let fisher_p = fisher_exact(
        a1.early_events as u64,
        (a1.n - a1.early_events) as u64,
        a0.early_events as u64,
        (a0.n - a0.early_events) as u64,
    );
    if a0.n == 0 || a1.n == 0 {
        notes.push("one arm has no records; early-event comparison is degenerate".to_string());
    }
    let a4_plausible = fisher_p > 0.05;
    let a4pp = a1.early_event_rate < a0.early_event_rate;
    let a5p = match (a1.marker_positive_rate, a0.marker_positive_rate) {
        (Some(r1), Some(r0)) => Some(r1 > r0),
        _ => {
            notes.push("marker not measured in some arm; marker ordering unavailable".to_string());
            None
        }
    };
    let case_cb = a0.marker_positive_rate.is_none_or(|r| r == 0.0);

    let mut recommended = Vec::new();
    if a4_plausible {
        recommended.push(if case_cb { Scenario::B } else { Scenario::A });
    } else {
        notes.push(format!("equal early risk rejected (Fisher p = {fisher_p:.4})"));
    }
    if case_cb {
        if a4pp {
            recommended.push(Scenario::CProtect);
        } else {
            recommended.push(Scenario::CHarm);
        }
    }
    if a5p == Some(false) {
        notes.push(
            "vaccine-arm marker-positive rate does not exceed control; marker monotonicity is doubtful".to_string(),
        );
    }
    Diagnostics {
        arms,
        fisher_p,
        a4_plausible,
        a4pp,
        a5p,
        case_cb,
        recommended,
        notes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force(a: u64, b: u64, c: u64, d: u64) -> f64 {
        // direct products of binomial coefficients
        fn choose(n: u64, k: u64) -> f64 {
            (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
        }
        let (r1, c1, n) = (a + b, a + c, a + b + c + d);
        let p = |x: u64| choose(r1, x) * choose(n - r1, c1 - x) / choose(n, c1);
        let obs = p(a);
        (c1.saturating_sub(n - r1)..=r1.min(c1))
            .map(p)
            .filter(|&q| q <= obs * (1.0 + 1e-7))
            .sum()
    }

    #[test]
    fn small_table_matches_enumeration() {
        let p = fisher_exact(3, 7, 7, 3);
        assert!((p - brute_force(3, 7, 7, 3)).abs() < 1e-12);
        assert!((p - 0.178_895_407_997_575_2).abs() < 1e-12);
    }

    #[test]
    fn early_event_counts() {
        let p = fisher_exact(14, 1237, 10, 1235);
        assert!((p - 0.5393).abs() < 5e-4, "{p}");
    }

    #[test]
    fn identical_margins() {
        assert!((fisher_exact(5, 95, 5, 95) - 1.0).abs() < 1e-12);
        assert_eq!(fisher_exact(0, 0, 0, 0), 1.0);
        assert!((fisher_exact(0, 10, 0, 10) - 1.0).abs() < 1e-12);
    }
}
