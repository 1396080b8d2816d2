//! Mean-shift sensitivity analysis: within a marker-defined stratum the arm
//! difference in observed means is off by a fixed amount `alpha_k`.

use crate::error::{PsemError, Result};
use crate::estimating::delta_method;
use crate::missingness::WeightedRecords;

use super::identified::identified_block;
use super::stack::{aggregate, Cell, Stack};
use super::types::{CepResult, Contrast, Estimate, Quantity, Scenario};

/// Additive CEP values under the mean-shift model.
///
/// `CEP(k,k) = mu_1k - mu_0k - alpha_k`, where `mu_zk` is the IPW mean outcome among
/// arm-`z` survivors with marker `k`; `CEP(1,0)` follows from the mixing identity.
/// Scenario B has no (1,1) stratum, so `alpha1` must be zero there.
pub fn chiba_vdw(weighted: &WeightedRecords, alpha0: f64, alpha1: f64, scenario: Scenario) -> Result<CepResult> {
    match scenario {
        Scenario::A => {}
        Scenario::B if alpha1 == 0.0 => {}
        Scenario::B => {
            return Err(PsemError::Config(
                "alpha1 shifts the (1,1) stratum, which is empty under scenario B".into(),
            ))
        }
        other => {
            return Err(PsemError::Config(format!(
                "the mean-shift analysis needs equal early risk (scenario A or B), not {other}"
            )))
        }
    }
    if !alpha0.is_finite() || !alpha1.is_finite() {
        return Err(PsemError::Config("alpha shifts must be finite".into()));
    }
    let cells = aggregate(weighted);
    let mut stack = Stack::new();
    let id = identified_block(&mut stack, &cells, scenario)?;
    let mu = |stack: &mut Stack<'_>, z: u8, k: bool| {
        stack.mean(
            &cells,
            Quantity::aux(&format!("mu_{z}{}", u8::from(k))),
            move |c: &Cell| c.stratum_weight(z, k),
            |c: &Cell| c.yf(),
        )
    };
    let mu10 = mu(&mut stack, 1, false)?;
    let mu00 = mu(&mut stack, 0, false)?;
    let pos = match id.p11 {
        Some(p11) => Some((mu(&mut stack, 1, true)?, mu(&mut stack, 0, true)?, p11)),
        None => None,
    };
    let (_, theta, cov) = stack.fit(&cells)?;

    let cep00 = move |t: &[f64]| t[mu10] - t[mu00] - alpha0;
    let cep11 = move |t: &[f64]| pos.map_or(0.0, |(m1, m0, _)| t[m1] - t[m0] - alpha1);
    let (risk1, risk0, p00, p10) = (id.risk1, id.risk0, id.p00, id.p10);
    let cep10 = move |t: &[f64]| {
        let p11_term = pos.map_or(0.0, |(_, _, p11)| t[p11] * cep11(t));
        (t[risk1] - t[risk0] - t[p00] * cep00(t) - p11_term) / t[p10]
    };
    let est = |g: &dyn Fn(&[f64]) -> f64| -> Result<Estimate> {
        let (value, var) = delta_method(g, &theta, &cov)?;
        Ok(Estimate {
            value,
            se: var.max(0.0).sqrt(),
        })
    };
    Ok(CepResult {
        contrast: Contrast::Additive,
        cep00: est(&cep00)?,
        cep10: est(&cep10)?,
        cep11: if pos.is_some() { Some(est(&cep11)?) } else { None },
        mu: est(&|t: &[f64]| cep10(t) - cep00(t))?,
    })
}
