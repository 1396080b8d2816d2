use crate::error::{PsemError, Result};
use crate::estimating::delta_method;

use super::types::{CepResult, Contrast, Estimate, Quantity, RiskEstimates, Stratum};

fn estimate(g: impl Fn(&[f64]) -> f64, est: &RiskEstimates) -> Result<Estimate> {
    let (value, var) = delta_method(g, &est.values, &est.cov)?;
    Ok(Estimate {
        value,
        se: var.max(0.0).sqrt(),
    })
}

/// Contrasts `h(risk_1(s), risk_0(s))` per stratum with delta-method standard errors.
///
/// Ratio contrasts need positive control-arm risks, and `LogRR` also a
/// positive vaccine-arm risk.
pub fn cep(est: &RiskEstimates, contrast: Contrast) -> Result<CepResult> {
    let mut strata = vec![Stratum::S00, Stratum::S10];
    if est.get(&Quantity::Mix(Stratum::S11)).is_some() {
        strata.push(Stratum::S11);
    }
    let mut idx = Vec::new();
    for &s in &strata {
        let i1 = est
            .index(&Quantity::StratumRisk(1, s))
            .ok_or_else(|| PsemError::Degenerate(format!("risk_1{} not estimated", s.label())))?;
        let i0 = est
            .index(&Quantity::StratumRisk(0, s))
            .ok_or_else(|| PsemError::Degenerate(format!("risk_0{} not estimated", s.label())))?;
        let (x, y) = (est.values[i1], est.values[i0]);
        if contrast != Contrast::Additive && y <= 0.0 {
            return Err(PsemError::Degenerate(format!(
                "{} contrast undefined: risk_0{} = 0",
                contrast.tag(),
                s.label()
            )));
        }
        if contrast == Contrast::LogRr && x <= 0.0 {
            return Err(PsemError::Degenerate(format!(
                "LogRR contrast undefined: risk_1{} = 0",
                s.label()
            )));
        }
        idx.push((i1, i0));
    }
    let h = |k: usize| {
        let (i1, i0) = idx[k];
        move |t: &[f64]| contrast.apply(t[i1], t[i0])
    };
    let cep00 = estimate(h(0), est)?;
    let cep10 = estimate(h(1), est)?;
    let cep11 = if strata.len() == 3 {
        Some(estimate(h(2), est)?)
    } else {
        None
    };
    let (h1, h0) = (h(1), h(0));
    let mu = estimate(|t: &[f64]| h1(t) - h0(t), est)?;
    Ok(CepResult {
        contrast,
        cep00,
        cep10,
        cep11,
        mu,
    })
}
