//! Sampling probabilities and inverse-probability weights for the two-phase marker design.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{PsemError, Result};
use crate::estimating::checked_inverse;
use crate::trial_data::ObservedRecord;

pub const DEFAULT_EPSILON: f64 = 0.01;

/// Regressor in the logistic sampling model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Term {
    Intercept,
    Z,
    Y,
    ZY,
    /// Baseline covariate by position in `ObservedRecord::w`.
    Covariate(usize),
}

impl Term {
    fn value(self, r: &ObservedRecord) -> f64 {
        let z = f64::from(r.z);
        let y = f64::from(u8::from(r.y));
        match self {
            Term::Intercept => 1.0,
            Term::Z => z,
            Term::Y => y,
            Term::ZY => z * y,
            Term::Covariate(k) => r.w.get(k).copied().unwrap_or(f64::NAN),
        }
    }

    fn involves_outcome(self) -> bool {
        matches!(self, Term::Y | Term::ZY)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightModelKind {
    /// Case-cohort design: every case measured, controls sampled with probability `nu`.
    DesignKnown { nu: f64 },
    /// Logistic model for P(measured = 1) among early survivors.
    EstimatedLogistic { terms: Vec<Term> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightModel {
    pub kind: WeightModelKind,
    /// Lower bound every fitted sampling probability must respect.
    pub epsilon: f64,
}

impl WeightModel {
    pub fn design_known(nu: f64) -> Self {
        Self {
            kind: WeightModelKind::DesignKnown { nu },
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn logistic(terms: Vec<Term>) -> Self {
        Self {
            kind: WeightModelKind::EstimatedLogistic { terms },
            epsilon: DEFAULT_EPSILON,
        }
    }

    /// Design-known weights when a subcohort fraction is supplied, else a
    /// logistic model on `{intercept, y}`.
    pub fn default_for(nu: Option<f64>) -> Self {
        match nu {
            Some(nu) => Self::design_known(nu),
            None => Self::logistic(vec![Term::Intercept, Term::Y]),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(PsemError::Config(format!("epsilon {} not in (0, 0.5)", self.epsilon)));
        }
        match &self.kind {
            WeightModelKind::DesignKnown { nu } if !(*nu > 0.0 && *nu <= 1.0) => {
                Err(PsemError::Config(format!("subcohort fraction {nu} not in (0, 1]")))
            }
            WeightModelKind::EstimatedLogistic { terms } if terms.is_empty() => {
                Err(PsemError::Config("logistic sampling model has no terms".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Records with their fitted sampling probabilities.
///
/// `pi[i]` is the probability that record `i`'s marker was measured. It is
/// only meaningful for early survivors; early-event records carry 1.
#[derive(Debug, Clone)]
pub struct WeightedRecords {
    pub records: Vec<ObservedRecord>,
    pub pi: Vec<f64>,
    /// Logistic coefficients, in term order, when the model was estimated.
    pub coefficients: Option<Vec<f64>>,
}

impl WeightedRecords {
    /// Full-cohort weighting: every probability equal to one.
    pub fn unweighted(records: Vec<ObservedRecord>) -> Self {
        let pi = vec![1.0; records.len()];
        Self {
            records,
            pi,
            coefficients: None,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// `R_i / pi_i` for early survivors, 1 for early-event records.
    pub fn ipw(&self, i: usize) -> f64 {
        let r = &self.records[i];
        if r.y_tau {
            1.0
        } else if r.measured {
            1.0 / self.pi[i]
        } else {
            0.0
        }
    }

    /// Inverse-probability weight where the marker is relevant and observed.
    pub fn weight(&self, i: usize) -> Option<f64> {
        let r = &self.records[i];
        (!r.y_tau && r.measured).then(|| 1.0 / self.pi[i])
    }

    /// Weights of measured early survivors rescaled to mean one. Diagnostic only.
    pub fn normalized_weights(&self) -> Vec<f64> {
        let w: Vec<f64> = (0..self.len()).filter_map(|i| self.weight(i)).collect();
        let mean = w.iter().sum::<f64>() / w.len().max(1) as f64;
        w.into_iter().map(|x| x / mean).collect()
    }
}

/// Fits the sampling model and attaches probabilities to every record.
pub fn fit_missingness(records: &[ObservedRecord], model: &WeightModel) -> Result<WeightedRecords> {
    model.validate()?;
    if records.is_empty() {
        return Err(PsemError::Empty("no records for the sampling model".into()));
    }
    let (pi, coefficients) = match &model.kind {
        WeightModelKind::DesignKnown { nu } => {
            let pi = records.iter().map(|r| if r.y_tau || r.y { 1.0 } else { *nu }).collect();
            (pi, None)
        }
        WeightModelKind::EstimatedLogistic { terms } => fit_logistic_weights(records, terms)?,
    };

    let offenders: Vec<String> = records
        .iter()
        .zip(&pi)
        .filter(|(r, p)| !r.y_tau && **p < model.epsilon)
        .map(|(r, _)| r.id.clone())
        .collect();
    if !offenders.is_empty() {
        return Err(PsemError::Positivity {
            epsilon: model.epsilon,
            ids: offenders,
        });
    }
    Ok(WeightedRecords {
        records: records.to_vec(),
        pi,
        coefficients,
    })
}

fn fit_logistic_weights(records: &[ObservedRecord], terms: &[Term]) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
    let survivors: Vec<&ObservedRecord> = records.iter().filter(|r| !r.y_tau).collect();
    if survivors.is_empty() {
        return Err(PsemError::Empty("no early survivors for the sampling model".into()));
    }
    // all cases measured: certainty sampling, not modeled
    let certainty_cases = survivors.iter().any(|r| r.y) && survivors.iter().filter(|r| r.y).all(|r| r.measured);
    let terms: Vec<Term> = if certainty_cases {
        terms.iter().copied().filter(|t| !t.involves_outcome()).collect()
    } else {
        terms.to_vec()
    };
    if terms.is_empty() {
        return Err(PsemError::Config(
            "sampling model has no terms left after removing certainty-sampled cases".into(),
        ));
    }
    let fitted: Vec<&ObservedRecord> = survivors
        .iter()
        .copied()
        .filter(|r| !(certainty_cases && r.y))
        .collect();
    let measured = fitted.iter().filter(|r| r.measured).count();
    if measured == 0 || measured == fitted.len() {
        return Err(PsemError::Separation);
    }

    let x = DMatrix::from_fn(fitted.len(), terms.len(), |i, j| terms[j].value(fitted[i]));
    if x.iter().any(|v| !v.is_finite()) {
        return Err(PsemError::Config("covariate term refers to a missing covariate".into()));
    }
    let y = DVector::from_fn(fitted.len(), |i, _| f64::from(u8::from(fitted[i].measured)));
    let beta = logistic_mle(&x, &y)?;

    let pi = records
        .iter()
        .map(|r| {
            if r.y_tau || (certainty_cases && r.y) {
                1.0
            } else {
                let eta: f64 = terms.iter().zip(beta.iter()).map(|(t, b)| t.value(r) * b).sum();
                expit(eta)
            }
        })
        .collect();
    Ok((pi, Some(beta.iter().copied().collect())))
}

pub(crate) fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Logistic regression MLE by Newton-Raphson.
pub fn logistic_mle(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let k = x.ncols();
    let mut beta = DVector::zeros(k);
    for _ in 0..100 {
        let eta = x * &beta;
        let p = eta.map(expit);
        let w = p.map(|v| v * (1.0 - v));
        let grad = x.transpose() * (y - &p);
        let mut info = DMatrix::zeros(k, k);
        for (i, row) in x.row_iter().enumerate() {
            info += row.transpose() * row * w[i];
        }
        let inv = match checked_inverse(&info) {
            Ok(inv) => inv,
            Err(_) if beta.amax() > 15.0 => return Err(PsemError::Separation),
            Err(_) => {
                return Err(PsemError::Config(
                    "sampling model terms are collinear or constant among the fitted records".into(),
                ))
            }
        };
        let step = inv * grad;
        beta += &step;
        if beta.amax() > 30.0 {
            return Err(PsemError::Separation);
        }
        if step.amax() < 1e-11 {
            return Ok(beta);
        }
    }
    Err(PsemError::Separation)
}

/// Kish effective sample size `(sum w)^2 / sum w^2` of the measured survivors.
pub fn effective_sample(weighted: &WeightedRecords) -> Result<f64> {
    let w: Vec<f64> = (0..weighted.len()).filter_map(|i| weighted.weight(i)).collect();
    effective_sample_of(&w)
}

pub fn effective_sample_of(weights: &[f64]) -> Result<f64> {
    if weights.is_empty() {
        return Err(PsemError::Empty("no weights".into()));
    }
    let s: f64 = weights.iter().sum();
    let s2: f64 = weights.iter().map(|w| w * w).sum();
    Ok(s * s / s2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trial_data::Marker;
    use approx::assert_relative_eq;

    fn rec(id: usize, z: u8, y: bool, measured: bool) -> ObservedRecord {
        ObservedRecord {
            id: format!("r{id}"),
            z,
            w: vec![],
            y_tau: false,
            marker: if measured { Marker::Negative } else { Marker::Missing },
            measured,
            y,
        }
    }

    #[test]
    fn design_known_weights() {
        let recs = vec![rec(0, 1, false, true), rec(1, 1, true, true), rec(2, 0, false, false)];
        let w = fit_missingness(&recs, &WeightModel::design_known(0.25)).unwrap();
        assert_eq!(w.weight(0), Some(4.0));
        assert_eq!(w.weight(1), Some(1.0));
        assert_eq!(w.weight(2), None);
        assert_eq!(w.ipw(2), 0.0);
    }

    #[test]
    fn nu_one_gives_unit_weights() {
        let recs: Vec<_> = (0..10).map(|i| rec(i, (i % 2) as u8, i % 3 == 0, true)).collect();
        let w = fit_missingness(&recs, &WeightModel::design_known(1.0)).unwrap();
        assert!((0..10).all(|i| w.ipw(i) == 1.0));
    }

    #[test]
    fn intercept_only_mle_is_proportion() {
        let recs: Vec<_> = (0..120).map(|i| rec(i, (i % 2) as u8, false, i < 30)).collect();
        let w = fit_missingness(&recs, &WeightModel::logistic(vec![Term::Intercept])).unwrap();
        for p in &w.pi {
            assert_relative_eq!(*p, 0.25, epsilon = 1e-10);
        }
    }

    #[test]
    fn saturated_fit_reproduces_stratum_rates() {
        let mut recs = Vec::new();
        for i in 0..100 {
            recs.push(rec(i, 1, false, i < 20));
        }
        for i in 100..200 {
            recs.push(rec(i, 0, true, i < 199));
        }
        let w = fit_missingness(&recs, &WeightModel::logistic(vec![Term::Intercept, Term::Y])).unwrap();
        assert_relative_eq!(w.pi[0], 0.2, epsilon = 1e-9);
        assert_relative_eq!(w.pi[150], 0.99, epsilon = 1e-9);
    }

    #[test]
    fn certainty_sampled_cases_get_one() {
        let mut recs: Vec<_> = (0..50).map(|i| rec(i, 0, false, i % 5 == 0)).collect();
        recs.extend((50..60).map(|i| rec(i, 1, true, true)));
        let w = fit_missingness(&recs, &WeightModel::logistic(vec![Term::Intercept, Term::Y])).unwrap();
        assert_eq!(w.pi[55], 1.0);
        assert_relative_eq!(w.pi[0], 0.2, epsilon = 1e-9);
    }

    #[test]
    fn separation_detected() {
        // measurement perfectly predicted by arm
        let recs: Vec<_> = (0..40).map(|i| rec(i, (i % 2) as u8, false, i % 2 == 0)).collect();
        let err = fit_missingness(&recs, &WeightModel::logistic(vec![Term::Intercept, Term::Z])).unwrap_err();
        assert!(matches!(err, PsemError::Separation), "{err}");
    }

    #[test]
    fn positivity_violation_names_records() {
        let mut recs: Vec<_> = (0..400).map(|i| rec(i, 0, false, i == 0)).collect();
        recs.push(rec(400, 1, false, true));
        let err = fit_missingness(&recs, &WeightModel::logistic(vec![Term::Intercept])).unwrap_err();
        match err {
            PsemError::Positivity { ids, .. } => assert_eq!(ids.len(), 401),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn invalid_models_rejected() {
        let recs = vec![rec(0, 1, false, true)];
        assert!(fit_missingness(&recs, &WeightModel::design_known(0.0)).is_err());
        assert!(fit_missingness(&recs, &WeightModel::design_known(1.5)).is_err());
        let mut m = WeightModel::design_known(0.5);
        m.epsilon = 0.0;
        assert!(fit_missingness(&recs, &m).is_err());
    }

    #[test]
    fn effective_sample_examples() {
        assert_relative_eq!(effective_sample_of(&[2.0; 100]).unwrap(), 100.0, epsilon = 1e-12);
        assert_relative_eq!(
            effective_sample_of(&[1.0, 1.0, 4.0, 4.0]).unwrap(),
            100.0 / 34.0,
            epsilon = 1e-12
        );
        assert!(effective_sample_of(&[]).is_err());
    }
}
