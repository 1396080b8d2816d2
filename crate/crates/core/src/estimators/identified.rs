//! Identified quantities and the Scenario B and C_harm estimators.

use crate::error::{PsemError, Result};
use crate::missingness::WeightedRecords;

use super::stack::{aggregate, odds_ratio_eq, require_unit, solve_mixture_pair, Cell, Stack};
use super::types::{Quantity, RiskEstimates, Scenario, SensitivityParam, SensitivityPoint, Stratum};

pub(crate) struct Identified {
    pub risk1: usize,
    pub risk0: usize,
    pub p00: usize,
    pub p10: usize,
    pub p11: Option<usize>,
}

fn mix_check(p10: f64, p11: Option<f64>) -> Result<()> {
    if let Some(p11) = p11 {
        if p11 <= 0.0 {
            return Err(PsemError::Degenerate(
                "p(1,1) = 0: no marker-positive control-arm survivors, so the control-arm marker looks constant; use scenario B".into(),
            ));
        }
    }
    if p10 <= 0.0 {
        return Err(PsemError::Degenerate(format!(
            "p(1,0) = {p10:.6} but the (1,0) stratum must have positive probability"
        )));
    }
    Ok(())
}

/// Mixing proportions among arm-1 early survivors, `p(0,0)` and `p(1,0) = 1 - p(0,0) - p(1,1)`.
pub(crate) fn mixing_block(stack: &mut Stack<'_>, cells: &[Cell], p11: Option<usize>) -> Result<(usize, usize)> {
    let p00 = stack.mean(
        cells,
        Quantity::Mix(Stratum::S00),
        |c: &Cell| c.marker_weight(1),
        |c: &Cell| 1.0 - c.sf(),
    )?;
    let p11_hat = p11.map(|i| stack.init[i]);
    let p10_hat = 1.0 - stack.init[p00] - p11_hat.unwrap_or(0.0);
    mix_check(p10_hat, p11_hat)?;
    let p10 = stack.reserve(Quantity::Mix(Stratum::S10), p10_hat);
    match p11 {
        Some(p11) => stack.constraint(p10, move |t| t[p10] - (1.0 - t[p00] - t[p11])),
        None => stack.constraint(p10, move |t| t[p10] - (1.0 - t[p00])),
    }
    Ok((p00, p10))
}

pub(crate) fn identified_block(stack: &mut Stack<'_>, cells: &[Cell], scenario: Scenario) -> Result<Identified> {
    if !matches!(scenario, Scenario::A | Scenario::B) {
        return Err(PsemError::Config(format!(
            "marginal risks are identified only under equal early risk (scenarios A and B), not {scenario}"
        )));
    }
    let risk1 = stack.mean(cells, Quantity::Risk(1), |c: &Cell| c.survivor(1), |c: &Cell| c.yf())?;
    let risk0 = stack.mean(cells, Quantity::Risk(0), |c: &Cell| c.survivor(0), |c: &Cell| c.yf())?;
    let p11 = match scenario {
        Scenario::A => Some(stack.mean(
            cells,
            Quantity::Mix(Stratum::S11),
            |c: &Cell| c.marker_weight(0),
            |c: &Cell| c.sf(),
        )?),
        _ => None,
    };
    let (p00, p10) = mixing_block(stack, cells, p11)?;
    Ok(Identified {
        risk1,
        risk0,
        p00,
        p10,
        p11,
    })
}

/// Marginal early-always-survivor risks and mixing proportions.
///
/// Only scenarios A and B identify these directly; `p(1,1)` is estimated under A only.
pub fn estimate_identified(weighted: &WeightedRecords, scenario: Scenario) -> Result<RiskEstimates> {
    let cells = aggregate(weighted);
    let mut stack = Stack::new();
    identified_block(&mut stack, &cells, scenario)?;
    let (quantities, values, cov) = stack.fit(&cells)?;
    Ok(RiskEstimates {
        scenario,
        point: SensitivityPoint::null(),
        quantities,
        values,
        cov,
    })
}

/// Stratum risks under Case CB given indices of both marginal risks and the mixing proportions.
///
/// `risk_1(0,0)` is an IPW mean, `risk_1(1,0)` follows from the mixing identity,
/// and the control-arm pair solves the odds-ratio model jointly with the mixing identity.
pub(crate) fn case_cb_block(
    stack: &mut Stack<'_>,
    cells: &[Cell],
    beta0: f64,
    risk1: usize,
    risk0: usize,
    p00: usize,
    p10: usize,
) -> Result<()> {
    let r1_00 = stack.mean(
        cells,
        Quantity::StratumRisk(1, Stratum::S00),
        |c: &Cell| c.stratum_weight(1, false),
        |c: &Cell| c.yf(),
    )?;
    let init = &stack.init;
    let r1_10_hat = (init[risk1] - init[p00] * init[r1_00]) / init[p10];
    require_unit(r1_10_hat, "risk_1(1,0)")?;
    let r1_10 = stack.reserve(Quantity::StratumRisk(1, Stratum::S10), r1_10_hat);
    stack.constraint(r1_10, move |t| t[p10] * t[r1_10] - (t[risk1] - t[p00] * t[r1_00]));

    let (a, b) = solve_mixture_pair(stack.init[risk0], stack.init[p00], beta0, "control-arm stratum risks")?;
    let r0_00 = stack.reserve(Quantity::StratumRisk(0, Stratum::S00), a);
    let r0_10 = stack.reserve(Quantity::StratumRisk(0, Stratum::S10), b);
    stack.constraint(r0_00, move |t| t[risk0] - t[p00] * t[r0_00] - t[p10] * t[r0_10]);
    stack.constraint(r0_10, move |t| odds_ratio_eq(t[r0_00], t[r0_10], beta0));
    Ok(())
}

pub(crate) fn scenario_b_cells(cells: &[Cell], point: &SensitivityPoint) -> Result<RiskEstimates> {
    let mut stack = Stack::new();
    let id = identified_block(&mut stack, cells, Scenario::B)?;
    case_cb_block(
        &mut stack,
        cells,
        point.get(SensitivityParam::Beta0),
        id.risk1,
        id.risk0,
        id.p00,
        id.p10,
    )?;
    let (quantities, values, cov) = stack.fit(cells)?;
    Ok(RiskEstimates {
        scenario: Scenario::B,
        point: *point,
        quantities,
        values,
        cov,
    })
}

/// Scenario B: equal early risk and a constant control-arm marker.
///
/// `beta0` is the log odds ratio of control-arm risk between the (0,0) and
/// (1,0) strata; at zero both equal the control-arm survivor risk.
pub fn scenario_b(weighted: &WeightedRecords, beta0: f64) -> Result<RiskEstimates> {
    let point = SensitivityPoint::beta0(beta0);
    point.validate(Scenario::B)?;
    scenario_b_cells(&aggregate(weighted), &point)
}

pub(crate) fn scenario_c_harm_cells(cells: &[Cell], point: &SensitivityPoint) -> Result<RiskEstimates> {
    let beta1 = point.get(SensitivityParam::Beta1Marginal);
    let mut stack = Stack::new();
    let risk1 = stack.mean(cells, Quantity::Risk(1), |c: &Cell| c.survivor(1), |c: &Cell| c.yf())?;
    // every arm-1 survivor is an early always survivor; arm-0 survivors also
    // include those who would have had an early event under vaccine
    let m0 = stack.mean(
        cells,
        Quantity::aux("risk_0|Y_tau(0)=0"),
        |c: &Cell| c.survivor(0),
        |c: &Cell| c.yf(),
    )?;
    let e1 = stack.mean(
        cells,
        Quantity::aux("P(Y_tau=0|Z=1)"),
        |c: &Cell| f64::from(c.z),
        |c: &Cell| f64::from(u8::from(!c.y_tau)),
    )?;
    let e0 = stack.mean(
        cells,
        Quantity::aux("P(Y_tau=0|Z=0)"),
        |c: &Cell| f64::from(1 - c.z),
        |c: &Cell| f64::from(u8::from(!c.y_tau)),
    )?;
    let q_hat = stack.init[e1] / stack.init[e0];
    let q = stack.reserve(Quantity::aux("P(Y_tau(1)=0|Y_tau(0)=0)"), q_hat);
    stack.constraint(q, move |t| t[q] * t[e0] - t[e1]);

    let (risk0_hat, rho_hat) = solve_mixture_pair(stack.init[m0], q_hat, beta1, "control-arm survivor mixture")?;
    let risk0 = stack.reserve(Quantity::Risk(0), risk0_hat);
    let rho = stack.reserve(Quantity::aux("risk_0|Y_tau(1)=1,Y_tau(0)=0"), rho_hat);
    stack.constraint(risk0, move |t| t[m0] - t[q] * t[risk0] - (1.0 - t[q]) * t[rho]);
    stack.constraint(rho, move |t| odds_ratio_eq(t[risk0], t[rho], beta1));

    let (p00, p10) = mixing_block(&mut stack, cells, None)?;
    case_cb_block(
        &mut stack,
        cells,
        point.get(SensitivityParam::Beta0),
        risk1,
        risk0,
        p00,
        p10,
    )?;
    let (quantities, values, cov) = stack.fit(cells)?;
    Ok(RiskEstimates {
        scenario: Scenario::CHarm,
        point: *point,
        quantities,
        values,
        cov,
    })
}

/// Scenario C_harm: the vaccine may cause but never prevent early events.
///
/// `beta1_marginal` links the control-arm risk of early always survivors to
/// that of control survivors who would have had an early event under vaccine.
/// At zero the fit coincides with [`scenario_b`].
pub fn scenario_c_harm(weighted: &WeightedRecords, beta0: f64, beta1_marginal: f64) -> Result<RiskEstimates> {
    let point = SensitivityPoint {
        beta0: Some(beta0),
        beta1_marginal: Some(beta1_marginal),
        ..SensitivityPoint::default()
    };
    point.validate(Scenario::CHarm)?;
    scenario_c_harm_cells(&aggregate(weighted), &point)
}
