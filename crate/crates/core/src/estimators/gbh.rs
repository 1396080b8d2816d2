//! SACE solve under the odds-ratio selection model, in both monotonicity directions,
//! and the Scenario A assembly built from two such solves.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{PsemError, Result};
use crate::estimating::solve_scalar;
use crate::missingness::{expit, WeightedRecords};

use super::identified::{identified_block, Identified};
use super::stack::{aggregate, require_unit, weighted_mean, Cell, Stack};
use super::types::{Quantity, RiskEstimates, Scenario, SensitivityPoint, Stratum};

/// Which records count as "selected" (`S = 1`) in a SACE solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// `S = 1 - Y_tau`.
    Survival,
    /// `S = (1 - Y_tau)(1 - S*)`.
    SurvivalMarkerNegative,
    /// `S = (1 - Y_tau) S*`.
    SurvivalMarkerPositive,
}

impl Selection {
    /// Weight of a cell in arm-level means of `S`: marker-based selections need the IPW weight
    /// for survivors, whose selection indicator is only known when measured.
    fn weight(self, c: &Cell) -> f64 {
        match self {
            Selection::Survival => 1.0,
            _ if c.y_tau => 1.0,
            _ => c.ipw,
        }
    }

    fn value(self, c: &Cell) -> f64 {
        let v = match self {
            Selection::Survival => !c.y_tau,
            Selection::SurvivalMarkerNegative => !c.y_tau && c.s == Some(false),
            Selection::SurvivalMarkerPositive => !c.y_tau && c.s == Some(true),
        };
        f64::from(u8::from(v))
    }

    fn assumption(self) -> &'static str {
        match self {
            Selection::Survival => "A4''",
            _ => "A5'",
        }
    }
}

/// `StandardMonotone` assumes `S(1) <= S(0)`; `Reversed` assumes `S(0) <= S(1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    StandardMonotone,
    Reversed,
}

/// Always-selected stratum means from one SACE solve.
#[derive(Debug, Clone)]
pub struct SaceResult {
    /// `P(Y(1) = 1 | S(1) = S(0) = 1)`.
    pub p11_1: f64,
    /// `P(Y(0) = 1 | S(1) = S(0) = 1)`.
    pub p11_0: f64,
    /// Covariance of `(p11_1, p11_0)`.
    pub cov: DMatrix<f64>,
}

fn e_w(alpha: f64, beta: f64, mu: f64) -> f64 {
    // mean of the selection model w(Y) = expit(alpha + beta Y) over Y ~ Bernoulli(mu)
    expit(alpha + beta) * mu + expit(alpha) * (1.0 - mu)
}

/// Adds the selection-model SACE block to `stack`; returns the indices of
/// `(P11(1), P11(0))`, named `names.0` and `names.1`.
pub(crate) fn sace_block(
    stack: &mut Stack<'_>,
    cells: &[Cell],
    selection: Selection,
    beta: f64,
    direction: Direction,
    names: (Quantity, Quantity),
    prefix: &str,
) -> Result<(usize, usize)> {
    let aux = |s: &str| Quantity::aux(&format!("{prefix}{s}"));
    let arm_w = move |z: u8| move |c: &Cell| if c.z == z { selection.weight(c) } else { 0.0 };
    let sel_w = move |z: u8| {
        move |c: &Cell| {
            if c.z == z {
                selection.weight(c) * selection.value(c)
            } else {
                0.0
            }
        }
    };
    let value = move |c: &Cell| selection.value(c);

    let pi1_hat = weighted_mean(cells, arm_w(1), value, "selection rate, arm 1")?;
    let pi0_hat = weighted_mean(cells, arm_w(0), value, "selection rate, arm 0")?;
    let ordered = match direction {
        Direction::StandardMonotone => pi1_hat < pi0_hat,
        Direction::Reversed => pi0_hat < pi1_hat,
    };
    if !ordered {
        let (lhs, rhs) = match direction {
            Direction::StandardMonotone => ("P(S(1)=1)", "P(S(0)=1)"),
            Direction::Reversed => ("P(S(0)=1)", "P(S(1)=1)"),
        };
        return Err(PsemError::Assumption {
            assumption: selection.assumption(),
            detail: format!("requires {lhs} < {rhs}; estimated P(S(1)=1) = {pi1_hat:.6}, P(S(0)=1) = {pi0_hat:.6}"),
        });
    }

    let pi1 = stack.mean(cells, aux("pi_1"), arm_w(1), value)?;
    let pi0 = stack.mean(cells, aux("pi_0"), arm_w(0), value)?;
    let (mu1_name, mu0_name) = match direction {
        Direction::StandardMonotone => (names.0.clone(), aux("mu_0")),
        Direction::Reversed => (aux("mu_1"), names.1.clone()),
    };
    let mu1 = stack.mean(cells, mu1_name, sel_w(1), |c: &Cell| c.yf())?;
    let mu0 = stack.mean(cells, mu0_name, sel_w(0), |c: &Cell| c.yf())?;
    let (mu1_hat, mu0_hat) = (stack.init[mu1], stack.init[mu0]);

    // E[w(Y(base)) | S(base) = 1] = P(S(other)=1) / P(S(base)=1)
    let (ratio, mu_base) = match direction {
        Direction::StandardMonotone => (pi1_hat / pi0_hat, mu0_hat),
        Direction::Reversed => (pi0_hat / pi1_hat, mu1_hat),
    };
    let alpha_hat = solve_scalar(|a| e_w(a, beta, mu_base) - ratio, -20.0, 20.0, 1e-15).map_err(|_| {
        PsemError::Incompatible(format!(
            "selection intercept has no root in [-20, 20] for beta = {beta} (target ratio {ratio:.6})"
        ))
    })?;
    let alpha = stack.reserve(aux("alpha"), alpha_hat);
    match direction {
        Direction::StandardMonotone => stack.set(alpha, move |c, t| {
            let w = arm_w(1)(c);
            w * (selection.value(c) - t[pi0] * e_w(t[alpha], beta, t[mu0]))
        }),
        Direction::Reversed => stack.set(alpha, move |c, t| {
            let w = arm_w(0)(c);
            w * (selection.value(c) - t[pi1] * e_w(t[alpha], beta, t[mu1]))
        }),
    }

    match direction {
        Direction::StandardMonotone => {
            let p0 = pi0_hat / pi1_hat * expit(alpha_hat + beta) * mu0_hat;
            let idx = stack.reserve(names.1, p0);
            stack.constraint(idx, move |t| t[idx] * t[pi1] - t[pi0] * expit(t[alpha] + beta) * t[mu0]);
            Ok((mu1, idx))
        }
        Direction::Reversed => {
            let p1 = pi1_hat / pi0_hat * expit(alpha_hat + beta) * mu1_hat;
            let idx = stack.reserve(names.0, p1);
            stack.constraint(idx, move |t| t[idx] * t[pi0] - t[pi1] * expit(t[alpha] + beta) * t[mu1]);
            Ok((idx, mu0))
        }
    }
}

/// Survivor average causal effect solve under the selection model
/// `P(S(other)=1 | S(base)=1, Y(base)=y) = expit(alpha + beta y)`.
///
/// `beta = 0` means no selection bias: the always-selected mean equals the
/// selected mean of the larger arm.
pub fn gbh_sace(
    weighted: &WeightedRecords,
    selection: Selection,
    beta: f64,
    direction: Direction,
) -> Result<SaceResult> {
    if !beta.is_finite() {
        return Err(PsemError::Config("beta must be finite".into()));
    }
    let cells = aggregate(weighted);
    let mut stack = Stack::new();
    let (i1, i0) = sace_block(
        &mut stack,
        &cells,
        selection,
        beta,
        direction,
        (Quantity::aux("P11(1)"), Quantity::aux("P11(0)")),
        "",
    )?;
    let (_, theta, cov) = stack.fit(&cells)?;
    let idx = [i1, i0];
    Ok(SaceResult {
        p11_1: theta[i1],
        p11_0: theta[i0],
        cov: DMatrix::from_fn(2, 2, |r, c| cov[(idx[r], idx[c])]),
    })
}

pub(crate) fn scenario_a_cells(cells: &[Cell], point: &SensitivityPoint) -> Result<RiskEstimates> {
    use super::types::SensitivityParam::*;
    let (beta0, beta1) = (point.get(Beta0), point.get(Beta1Reversed));
    let mut stack = Stack::new();
    let Identified {
        risk1,
        risk0,
        p00,
        p10,
        p11,
    } = identified_block(&mut stack, cells, Scenario::A)?;
    let p11 = p11.expect("scenario A carries p(1,1)");

    let (r1_00, r0_00) = sace_block(
        &mut stack,
        cells,
        Selection::SurvivalMarkerNegative,
        beta0,
        Direction::StandardMonotone,
        (
            Quantity::StratumRisk(1, Stratum::S00),
            Quantity::StratumRisk(0, Stratum::S00),
        ),
        "neg:",
    )?;
    let (r1_11, r0_11) = sace_block(
        &mut stack,
        cells,
        Selection::SurvivalMarkerPositive,
        beta1,
        Direction::Reversed,
        (
            Quantity::StratumRisk(1, Stratum::S11),
            Quantity::StratumRisk(0, Stratum::S11),
        ),
        "pos:",
    )?;
    for (z, risk, r00, r11) in [(1u8, risk1, r1_00, r1_11), (0u8, risk0, r0_00, r0_11)] {
        let init = &stack.init;
        let v = (init[risk] - init[p00] * init[r00] - init[p11] * init[r11]) / init[p10];
        require_unit(v, &format!("risk_{z}(1,0)"))?;
        let idx = stack.reserve(Quantity::StratumRisk(z, Stratum::S10), v);
        stack.constraint(idx, move |t| {
            t[p10] * t[idx] - (t[risk] - t[p00] * t[r00] - t[p11] * t[r11])
        });
    }
    let (quantities, values, cov) = stack.fit(cells)?;
    Ok(RiskEstimates {
        scenario: Scenario::A,
        point: *point,
        quantities,
        values,
        cov,
    })
}

/// Scenario A: both the (0,0) and (1,1) strata pass through a SACE solve and
/// the (1,0) stratum risks follow from the mixing identity.
pub fn scenario_a(weighted: &WeightedRecords, beta0: f64, beta1_reversed: f64) -> Result<RiskEstimates> {
    let point = SensitivityPoint {
        beta0: Some(beta0),
        beta1_reversed: Some(beta1_reversed),
        ..SensitivityPoint::default()
    };
    point.validate(Scenario::A)?;
    scenario_a_cells(&aggregate(weighted), &point)
}
