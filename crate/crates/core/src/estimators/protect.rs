//! Scenario C_protect: the vaccine may prevent but never cause early events.
//!
//! Arm-1 survivors then mix early always survivors with the early protected
//! stratum, so arm-1 quantities need three more sensitivity parameters:
//! `beta4` for the marker distribution of the mixture and `beta2`, `beta3`
//! for the outcome risk within each marker level.

use crate::error::{PsemError, Result};
use crate::missingness::WeightedRecords;

use super::stack::{aggregate, odds_ratio_eq, require_unit, solve_mixture_pair, Cell, Stack};
use super::types::{Quantity, RiskEstimates, Scenario, SensitivityParam, SensitivityPoint, Stratum};

fn survival_rate(cells: &[Cell], z: u8) -> f64 {
    let (mut alive, mut total) = (0.0, 0.0);
    for c in cells.iter().filter(|c| c.z == z) {
        total += c.count;
        if !c.y_tau {
            alive += c.count;
        }
    }
    alive / total
}

pub(crate) fn scenario_c_protect_cells(cells: &[Cell], point: &SensitivityPoint) -> Result<RiskEstimates> {
    use SensitivityParam::*;
    let (beta0, beta2, beta3, beta4) = (point.get(Beta0), point.get(Beta2), point.get(Beta3), point.get(Beta4));

    let (s1, s0) = (survival_rate(cells, 1), survival_rate(cells, 0));
    if s1 < s0 {
        return Err(PsemError::Assumption {
            assumption: "A4''",
            detail: format!(
                "requires P(Y_tau=1 | Z=1) <= P(Y_tau=1 | Z=0); estimated {:.6} vs {:.6}",
                1.0 - s1,
                1.0 - s0
            ),
        });
    }

    let mut stack = Stack::new();
    let survived = |c: &Cell| f64::from(u8::from(!c.y_tau));
    let e1 = stack.mean(
        cells,
        Quantity::aux("P(Y_tau=0|Z=1)"),
        |c: &Cell| f64::from(c.z),
        survived,
    )?;
    let e0 = stack.mean(
        cells,
        Quantity::aux("P(Y_tau=0|Z=0)"),
        |c: &Cell| f64::from(1 - c.z),
        survived,
    )?;
    let q_hat = stack.init[e0] / stack.init[e1];
    let q = stack.reserve(Quantity::aux("P(Y_tau(0)=0|Y_tau(1)=0)"), q_hat);
    stack.constraint(q, move |t| t[q] * t[e1] - t[e0]);

    // marker distribution of arm-1 survivors, split into the two strata
    let pos = stack.mean(
        cells,
        Quantity::aux("P(S*=1|Z=1,Y_tau=0)"),
        |c: &Cell| c.marker_weight(1),
        |c: &Cell| c.sf(),
    )?;
    let pos_hat = stack.init[pos];
    if pos_hat <= 0.0 || pos_hat >= 1.0 {
        return Err(PsemError::Degenerate(format!(
            "arm-1 survivor marker-positive rate is {pos_hat}; both marker levels are needed"
        )));
    }
    let (p10_hat, x_hat) = solve_mixture_pair(pos_hat, q_hat, beta4, "arm-1 marker mixture")?;
    let p10 = stack.reserve(Quantity::Mix(Stratum::S10), p10_hat);
    let x = stack.reserve(Quantity::aux("P(S*(1)=1|EP)"), x_hat);
    stack.constraint(p10, move |t| t[pos] - t[q] * t[p10] - (1.0 - t[q]) * t[x]);
    stack.constraint(x, move |t| odds_ratio_eq(t[p10], t[x], beta4));
    let p00 = stack.reserve(Quantity::Mix(Stratum::S00), 1.0 - p10_hat);
    stack.constraint(p00, move |t| t[p00] - (1.0 - t[p10]));
    if p10_hat <= 0.0 || p10_hat >= 1.0 {
        return Err(PsemError::Degenerate(format!(
            "p(1,0) = {p10_hat} must lie strictly inside (0, 1)"
        )));
    }

    // control arm: survivors are exactly the early always survivors
    let risk0 = stack.mean(cells, Quantity::Risk(0), |c: &Cell| c.survivor(0), |c: &Cell| c.yf())?;

    // vaccine arm: split each marker level into its early-always-survivor part
    let mut stratum = Vec::new();
    for (s, beta, name_star) in [(false, beta2, "risk_1(0,*)"), (true, beta3, "risk_1(1,*)")] {
        let m = stack.mean(
            cells,
            Quantity::aux(&format!("risk_1|S*={}", u8::from(s))),
            move |c: &Cell| c.stratum_weight(1, s),
            |c: &Cell| c.yf(),
        )?;
        let (p_s, marker_rate) = (if s { p10 } else { p00 }, pos);
        let share = move |t: &[f64]| if s { t[marker_rate] } else { 1.0 - t[marker_rate] };
        let h_hat = stack.init[q] * stack.init[p_s] / share(&stack.init);
        let h = stack.reserve(Quantity::aux(&format!("P(EAS|Z=1,Y_tau=0,S*={})", u8::from(s))), h_hat);
        stack.constraint(h, move |t| t[h] * share(t) - t[q] * t[p_s]);
        let (r_hat, star_hat) = solve_mixture_pair(stack.init[m], h_hat, beta, "arm-1 stratum risks")?;
        let st = if s { Stratum::S10 } else { Stratum::S00 };
        let r = stack.reserve(Quantity::StratumRisk(1, st), r_hat);
        let star = stack.reserve(Quantity::aux(name_star), star_hat);
        require_unit(r_hat, &Quantity::StratumRisk(1, st).to_string())?;
        stack.constraint(r, move |t| t[m] - t[h] * t[r] - (1.0 - t[h]) * t[star]);
        stack.constraint(star, move |t| odds_ratio_eq(t[r], t[star], beta));
        stratum.push(r);
    }
    let (r1_00, r1_10) = (stratum[0], stratum[1]);
    let risk1_hat = stack.init[p00] * stack.init[r1_00] + stack.init[p10] * stack.init[r1_10];
    let risk1 = stack.reserve(Quantity::Risk(1), risk1_hat);
    stack.constraint(risk1, move |t| t[risk1] - t[p00] * t[r1_00] - t[p10] * t[r1_10]);

    control_pair(&mut stack, beta0, risk0, p00, p10)?;
    let (quantities, values, cov) = stack.fit(cells)?;
    Ok(RiskEstimates {
        scenario: Scenario::CProtect,
        point: *point,
        quantities,
        values,
        cov,
    })
}

fn control_pair(stack: &mut Stack<'_>, beta0: f64, risk0: usize, p00: usize, p10: usize) -> Result<()> {
    let (a, b) = solve_mixture_pair(stack.init[risk0], stack.init[p00], beta0, "control-arm stratum risks")?;
    let r0_00 = stack.reserve(Quantity::StratumRisk(0, Stratum::S00), a);
    let r0_10 = stack.reserve(Quantity::StratumRisk(0, Stratum::S10), b);
    stack.constraint(r0_00, move |t| t[risk0] - t[p00] * t[r0_00] - t[p10] * t[r0_10]);
    stack.constraint(r0_10, move |t| odds_ratio_eq(t[r0_00], t[r0_10], beta0));
    Ok(())
}

/// Scenario C_protect estimator. All-zero sensitivity parameters assume no
/// selection bias anywhere; with no early protected stratum in the data the
/// fit reduces to [`super::scenario_b`].
pub fn scenario_c_protect(
    weighted: &WeightedRecords,
    beta0: f64,
    beta2: f64,
    beta3: f64,
    beta4: f64,
) -> Result<RiskEstimates> {
    let point = SensitivityPoint {
        beta0: Some(beta0),
        beta2: Some(beta2),
        beta3: Some(beta3),
        beta4: Some(beta4),
        ..SensitivityPoint::default()
    };
    point.validate(Scenario::CProtect)?;
    scenario_c_protect_cells(&aggregate(weighted), &point)
}
