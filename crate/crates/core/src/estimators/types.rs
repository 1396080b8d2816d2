use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{PsemError, Result};

/// Identification scenario, i.e. the set of assumptions the analyst is willing to make.
///
/// * `A`: equal early risk, monotone marker, control-arm marker varies.
/// * `B`: equal early risk, control-arm marker constant (Case CB).
/// * `CProtect`: vaccine never causes an early event, Case CB.
/// * `CHarm`: vaccine never prevents an early event, Case CB.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    A,
    B,
    #[serde(rename = "C_protect")]
    CProtect,
    #[serde(rename = "C_harm")]
    CHarm,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::A, Scenario::B, Scenario::CProtect, Scenario::CHarm];

    pub fn legal_params(self) -> &'static [SensitivityParam] {
        use SensitivityParam::*;
        match self {
            Scenario::A => &[Beta0, Beta1Reversed],
            Scenario::B => &[Beta0],
            Scenario::CProtect => &[Beta0, Beta2, Beta3, Beta4],
            Scenario::CHarm => &[Beta0, Beta1Marginal],
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Scenario::A => "A",
            Scenario::B => "B",
            Scenario::CProtect => "C_protect",
            Scenario::CHarm => "C_harm",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Scenario {
    type Err = PsemError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" => Ok(Scenario::A),
            "B" => Ok(Scenario::B),
            "C_protect" => Ok(Scenario::CProtect),
            "C_harm" => Ok(Scenario::CHarm),
            other => Err(PsemError::Config(format!("unknown scenario {other:?}"))),
        }
    }
}

/// Sensitivity parameters, all on the log odds ratio scale.
///
/// The symbol beta_1 is used for two different models. In Scenario A it is the
/// selection parameter of the reversed-direction SACE solve for the (1,1)
/// stratum (`Beta1Reversed`). In Scenario C_harm it links the control-arm risk
/// of early always survivors to that of survivors who would have had an early
/// event under vaccine (`Beta1Marginal`). They are kept as separate keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum SensitivityParam {
    Beta0,
    Beta1Reversed,
    Beta1Marginal,
    Beta2,
    Beta3,
    Beta4,
}

impl SensitivityParam {
    pub const ALL: [SensitivityParam; 6] = [
        SensitivityParam::Beta0,
        SensitivityParam::Beta1Reversed,
        SensitivityParam::Beta1Marginal,
        SensitivityParam::Beta2,
        SensitivityParam::Beta3,
        SensitivityParam::Beta4,
    ];

    pub fn key(self) -> &'static str {
        match self {
            SensitivityParam::Beta0 => "beta0",
            SensitivityParam::Beta1Reversed => "beta1_reversed",
            SensitivityParam::Beta1Marginal => "beta1_marginal",
            SensitivityParam::Beta2 => "beta2",
            SensitivityParam::Beta3 => "beta3",
            SensitivityParam::Beta4 => "beta4",
        }
    }
}

impl FromStr for SensitivityParam {
    type Err = PsemError;

    fn from_str(s: &str) -> Result<Self> {
        SensitivityParam::ALL
            .into_iter()
            .find(|p| p.key() == s)
            .ok_or_else(|| PsemError::Config(format!("unknown sensitivity parameter {s:?}")))
    }
}

/// One point of the sensitivity region. Absent entries are treated as zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitivityPoint {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta1_reversed: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta1_marginal: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta3: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta4: Option<f64>,
}

impl SensitivityPoint {
    pub fn null() -> Self {
        Self::default()
    }

    pub fn beta0(beta0: f64) -> Self {
        Self {
            beta0: Some(beta0),
            ..Self::default()
        }
    }

    pub fn with(mut self, param: SensitivityParam, value: f64) -> Self {
        *self.slot(param) = Some(value);
        self
    }

    fn slot(&mut self, param: SensitivityParam) -> &mut Option<f64> {
        match param {
            SensitivityParam::Beta0 => &mut self.beta0,
            SensitivityParam::Beta1Reversed => &mut self.beta1_reversed,
            SensitivityParam::Beta1Marginal => &mut self.beta1_marginal,
            SensitivityParam::Beta2 => &mut self.beta2,
            SensitivityParam::Beta3 => &mut self.beta3,
            SensitivityParam::Beta4 => &mut self.beta4,
        }
    }

    pub fn entry(&self, param: SensitivityParam) -> Option<f64> {
        match param {
            SensitivityParam::Beta0 => self.beta0,
            SensitivityParam::Beta1Reversed => self.beta1_reversed,
            SensitivityParam::Beta1Marginal => self.beta1_marginal,
            SensitivityParam::Beta2 => self.beta2,
            SensitivityParam::Beta3 => self.beta3,
            SensitivityParam::Beta4 => self.beta4,
        }
    }

    pub fn get(&self, param: SensitivityParam) -> f64 {
        self.entry(param).unwrap_or(0.0)
    }

    /// Rejects entries the scenario does not use and non-finite values.
    pub fn validate(&self, scenario: Scenario) -> Result<()> {
        for p in SensitivityParam::ALL {
            if let Some(v) = self.entry(p) {
                if !scenario.legal_params().contains(&p) {
                    return Err(PsemError::Config(format!(
                        "sensitivity parameter {} is not used by scenario {scenario}",
                        p.key()
                    )));
                }
                if !v.is_finite() {
                    return Err(PsemError::Config(format!("{} must be finite", p.key())));
                }
            }
        }
        Ok(())
    }
}

/// Principal stratum `(s1, s0)` of the early-always-survivor population.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stratum {
    S00,
    S10,
    S11,
}

impl Stratum {
    pub fn label(self) -> &'static str {
        match self {
            Stratum::S00 => "(0,0)",
            Stratum::S10 => "(1,0)",
            Stratum::S11 => "(1,1)",
        }
    }
}

/// Name of a fitted parameter.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Quantity {
    /// Marginal risk among early always survivors in arm `z`.
    Risk(u8),
    /// Mixing proportion of a stratum.
    Mix(Stratum),
    /// Risk in arm `z` within a stratum.
    StratumRisk(u8, Stratum),
    /// Scenario-specific nuisance or intermediate quantity.
    Aux(String),
}

impl Quantity {
    pub fn aux(name: &str) -> Self {
        Quantity::Aux(name.to_string())
    }

    pub fn is_reported(&self) -> bool {
        !matches!(self, Quantity::Aux(_))
    }
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Quantity::Risk(z) => write!(f, "risk_{z}"),
            Quantity::Mix(s) => write!(f, "p{}", s.label()),
            Quantity::StratumRisk(z, s) => write!(f, "risk_{z}{}", s.label()),
            Quantity::Aux(name) => f.write_str(name),
        }
    }
}

/// Joint fit of one scenario at one sensitivity point.
#[derive(Debug, Clone)]
pub struct RiskEstimates {
    pub scenario: Scenario,
    pub point: SensitivityPoint,
    pub quantities: Vec<Quantity>,
    pub values: Vec<f64>,
    /// Sandwich covariance over all entries of `values`.
    pub cov: DMatrix<f64>,
}

impl RiskEstimates {
    pub fn index(&self, q: &Quantity) -> Option<usize> {
        self.quantities.iter().position(|x| x == q)
    }

    pub fn get(&self, q: &Quantity) -> Option<f64> {
        self.index(q).map(|i| self.values[i])
    }

    pub fn value(&self, q: &Quantity) -> Result<f64> {
        self.get(q)
            .ok_or_else(|| PsemError::Degenerate(format!("{q} is not estimated in scenario {}", self.scenario)))
    }

    pub fn se(&self, q: &Quantity) -> Option<f64> {
        self.index(q).map(|i| self.cov[(i, i)].max(0.0).sqrt())
    }

    /// `(name, value, standard error)` for every non-auxiliary entry.
    pub fn reported(&self) -> Vec<(Quantity, f64, f64)> {
        self.quantities
            .iter()
            .enumerate()
            .filter(|(_, q)| q.is_reported())
            .map(|(i, q)| (q.clone(), self.values[i], self.cov[(i, i)].max(0.0).sqrt()))
            .collect()
    }

    fn mix(&self, s: Stratum) -> f64 {
        self.get(&Quantity::Mix(s)).unwrap_or(0.0)
    }

    /// Largest absolute violation of `risk_z = sum_s p(s) risk_z(s)` over both arms.
    ///
    /// Returns `None` for partial fits that do not carry stratum risks.
    pub fn mixing_residual(&self) -> Option<f64> {
        let mut worst: f64 = 0.0;
        for z in [0u8, 1] {
            let mut total = self.get(&Quantity::Risk(z))?;
            for s in [Stratum::S00, Stratum::S10, Stratum::S11] {
                let p = self.mix(s);
                if p != 0.0 || s != Stratum::S11 {
                    total -= p * self.get(&Quantity::StratumRisk(z, s))?;
                }
            }
            worst = worst.max(total.abs());
        }
        Some(worst)
    }
}

/// Contrast function `h(x, y)` comparing vaccine risk `x` with control risk `y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Contrast {
    Additive,
    #[serde(rename = "VE")]
    Ve,
    #[serde(rename = "LogRR")]
    LogRr,
}

impl Contrast {
    pub fn apply(self, x: f64, y: f64) -> f64 {
        match self {
            Contrast::Additive => x - y,
            Contrast::Ve => 1.0 - x / y,
            Contrast::LogRr => (x / y).ln(),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Contrast::Additive => "Additive",
            Contrast::Ve => "VE",
            Contrast::LogRr => "LogRR",
        }
    }
}

impl FromStr for Contrast {
    type Err = PsemError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Additive" | "additive" => Ok(Contrast::Additive),
            "VE" | "ve" => Ok(Contrast::Ve),
            "LogRR" | "logrr" | "log_rr" => Ok(Contrast::LogRr),
            other => Err(PsemError::Config(format!("unknown contrast {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

/// Causal effect predictiveness values for each stratum plus their difference `mu`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CepResult {
    pub contrast: Contrast,
    pub cep00: Estimate,
    pub cep10: Estimate,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cep11: Option<Estimate>,
    /// `CEP(1,0) - CEP(0,0)`.
    pub mu: Estimate,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legal_parameters() {
        let p = SensitivityPoint::beta0(0.5).with(SensitivityParam::Beta1Reversed, 0.1);
        assert!(p.validate(Scenario::A).is_ok());
        assert!(p.validate(Scenario::B).is_err());
        assert!(p.validate(Scenario::CHarm).is_err());
        let m = SensitivityPoint::beta0(0.5).with(SensitivityParam::Beta1Marginal, 0.1);
        assert!(m.validate(Scenario::CHarm).is_ok());
        assert!(m.validate(Scenario::A).is_err());
        assert!(SensitivityPoint::beta0(f64::NAN).validate(Scenario::B).is_err());
        assert_eq!(SensitivityPoint::null().get(SensitivityParam::Beta3), 0.0);
    }

    #[test]
    fn names() {
        assert_eq!(Quantity::StratumRisk(0, Stratum::S10).to_string(), "risk_0(1,0)");
        assert_eq!(Quantity::Mix(Stratum::S00).to_string(), "p(0,0)");
        assert_eq!(Quantity::Risk(1).to_string(), "risk_1");
        assert_eq!("C_harm".parse::<Scenario>().unwrap(), Scenario::CHarm);
        assert_eq!(
            "beta1_marginal".parse::<SensitivityParam>().unwrap(),
            SensitivityParam::Beta1Marginal
        );
        assert!("beta1".parse::<SensitivityParam>().is_err());
    }

    #[test]
    fn contrasts_vanish_on_the_diagonal() {
        for c in [Contrast::Additive, Contrast::Ve, Contrast::LogRr] {
            for x in [0.01, 0.3, 0.99] {
                assert_eq!(c.apply(x, x), 0.0);
            }
        }
        assert!((Contrast::Ve.apply(0.1, 0.3) - 2.0 / 3.0).abs() < 1e-15);
    }
}
