//! Aggregated observation cells and the stacked-equation builder shared by the estimators.
//!
//! Estimators only look at `(z, y_tau, marker, y)` and the inverse-probability
//! weight, so records with identical values collapse into one cell carrying a
//! frequency count. Solving and the sandwich are exact under this collapse.

use std::collections::HashMap;

use nalgebra::DMatrix;

use crate::error::{PsemError, Result};
use crate::estimating::{solve_system, EstimatingSystem, FnEstimating, SolverOptions};
use crate::missingness::{expit, WeightedRecords};

use super::types::Quantity;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Cell {
    pub z: u8,
    pub y_tau: bool,
    /// Observed marker value for measured early survivors.
    pub s: Option<bool>,
    pub y: bool,
    /// `R / pi` for early survivors, 1 for early events.
    pub ipw: f64,
    pub count: f64,
}

impl Cell {
    pub fn yf(&self) -> f64 {
        f64::from(u8::from(self.y))
    }

    /// Weight of this cell in an IPW mean over early survivors of arm `z` with marker `s`.
    pub fn stratum_weight(&self, z: u8, s: bool) -> f64 {
        if self.z == z && !self.y_tau && self.s == Some(s) {
            self.ipw
        } else {
            0.0
        }
    }

    /// Weight of this cell in an IPW marker proportion among early survivors of arm `z`.
    pub fn marker_weight(&self, z: u8) -> f64 {
        if self.z == z && !self.y_tau && self.s.is_some() {
            self.ipw
        } else {
            0.0
        }
    }

    pub fn sf(&self) -> f64 {
        f64::from(u8::from(self.s == Some(true)))
    }

    pub fn survivor(&self, z: u8) -> f64 {
        if self.z == z && !self.y_tau {
            1.0
        } else {
            0.0
        }
    }
}

pub(crate) fn aggregate(weighted: &WeightedRecords) -> Vec<Cell> {
    let mut index: HashMap<(u8, bool, Option<bool>, bool, bool, u64), usize> = HashMap::new();
    let mut cells: Vec<Cell> = Vec::new();
    for (i, r) in weighted.records.iter().enumerate() {
        let s = if r.y_tau { None } else { r.marker.value() };
        let ipw = weighted.ipw(i);
        let key = (r.z, r.y_tau, s, r.y, r.measured, ipw.to_bits());
        match index.get(&key) {
            Some(&k) => cells[k].count += 1.0,
            None => {
                index.insert(key, cells.len());
                cells.push(Cell {
                    z: r.z,
                    y_tau: r.y_tau,
                    s,
                    y: r.y,
                    ipw,
                    count: 1.0,
                });
            }
        }
    }
    cells
}

/// Weighted mean `sum c w v / sum c w`, erroring when the denominator is zero.
pub(crate) fn weighted_mean(
    cells: &[Cell],
    weight: impl Fn(&Cell) -> f64,
    value: impl Fn(&Cell) -> f64,
    what: &str,
) -> Result<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for c in cells {
        let w = c.count * weight(c);
        num += w * value(c);
        den += w;
    }
    if den <= 0.0 {
        return Err(PsemError::Degenerate(format!("empty stratum: {what}")));
    }
    Ok(num / den)
}

type Equation<'a> = Box<dyn Fn(&Cell, &[f64]) -> f64 + Send + Sync + 'a>;

/// Square system of named parameters, each paired with one estimating equation.
///
/// Data equations contribute per cell. Constraint equations depend on the
/// parameters only; they contribute the same value for every record, so
/// their summed form is `N g(theta)` and they carry no sampling variability
/// of their own.
pub(crate) struct Stack<'a> {
    pub names: Vec<Quantity>,
    pub init: Vec<f64>,
    equations: Vec<Option<Equation<'a>>>,
}

impl<'a> Stack<'a> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            init: Vec::new(),
            equations: Vec::new(),
        }
    }

    pub fn reserve(&mut self, name: Quantity, init: f64) -> usize {
        self.names.push(name);
        self.init.push(init);
        self.equations.push(None);
        self.names.len() - 1
    }

    pub fn set(&mut self, idx: usize, eq: impl Fn(&Cell, &[f64]) -> f64 + Send + Sync + 'a) {
        self.equations[idx] = Some(Box::new(eq));
    }

    /// Adds a parameter whose equation depends only on the parameters.
    pub fn constraint(&mut self, idx: usize, g: impl Fn(&[f64]) -> f64 + Send + Sync + 'a) {
        self.set(idx, move |_, t| g(t));
    }

    /// IPW mean `sum weight(c) (value(c) - theta) = 0` with a closed-form start.
    pub fn mean(
        &mut self,
        cells: &[Cell],
        name: Quantity,
        weight: impl Fn(&Cell) -> f64 + Copy + Send + Sync + 'a,
        value: impl Fn(&Cell) -> f64 + Copy + Send + Sync + 'a,
    ) -> Result<usize> {
        let init = weighted_mean(cells, weight, value, &name.to_string())?;
        let idx = self.reserve(name, init);
        self.set(idx, move |c, t| weight(c) * (value(c) - t[idx]));
        Ok(idx)
    }

    pub fn fit(self, cells: &[Cell]) -> Result<(Vec<Quantity>, Vec<f64>, DMatrix<f64>)> {
        let equations: Vec<Equation<'a>> = self
            .equations
            .into_iter()
            .enumerate()
            .map(|(k, e)| e.ok_or_else(|| PsemError::Config(format!("parameter {k} has no equation"))))
            .collect::<Result<_>>()?;
        let p = equations.len();
        let function = FnEstimating::new(p, move |c: &Cell, t: &[f64], out: &mut [f64]| {
            for (o, eq) in out.iter_mut().zip(&equations) {
                *o = eq(c, t);
            }
        });
        let counts = cells.iter().map(|c| c.count).collect();
        let system = EstimatingSystem::new(function, self.init).with_counts(counts);
        let fit = solve_system(&system, cells, SolverOptions::default())?;
        Ok((self.names, fit.theta, fit.cov))
    }
}

pub(crate) fn odds_shift(p: f64, log_or: f64) -> f64 {
    // probability whose odds are exp(log_or) times the odds of p
    if p <= 0.0 {
        0.0
    } else if p >= 1.0 {
        1.0
    } else {
        expit((p / (1.0 - p)).ln() + log_or)
    }
}

/// Polynomial form of `odds(a) / odds(b) = exp(log_or)`, finite at the boundary.
pub(crate) fn odds_ratio_eq(a: f64, b: f64, log_or: f64) -> f64 {
    a * (1.0 - b) - log_or.exp() * b * (1.0 - a)
}

/// Solves `odds(a)/odds(b) = exp(log_or)` together with `h a + (1-h) b = m` for `(a, b)`.
pub(crate) fn solve_mixture_pair(m: f64, h: f64, log_or: f64, what: &str) -> Result<(f64, f64)> {
    let f = |b: f64| h * odds_shift(b, log_or) + (1.0 - h) * b - m;
    let (f0, f1) = (f(0.0), f(1.0));
    if f0 == 0.0 {
        return Ok((0.0, 0.0));
    }
    if f1 == 0.0 {
        return Ok((1.0, 1.0));
    }
    if f0.signum() == f1.signum() {
        return Err(PsemError::Incompatible(format!(
            "{what}: no risk pair in [0,1] solves the mixture with log odds ratio {log_or}"
        )));
    }
    let b = crate::estimating::solve_scalar(f, 0.0, 1.0, 1e-15)?;
    Ok((odds_shift(b, log_or), b))
}

pub(crate) fn require_unit(value: f64, what: &str) -> Result<()> {
    if (-1e-12..=1.0 + 1e-12).contains(&value) {
        Ok(())
    } else {
        Err(PsemError::Incompatible(format!(
            "{what} = {value:.6} lies outside [0, 1]"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn mixture_pair_closed_form() {
        // 0.4 a + 0.6 b = 0.3 with odds ratio 1.8 has a = 0.375, b = 0.25
        let (a, b) = solve_mixture_pair(0.3, 0.4, 1.8f64.ln(), "t").unwrap();
        assert_relative_eq!(a, 0.375, epsilon = 1e-12);
        assert_relative_eq!(b, 0.25, epsilon = 1e-12);
        assert!(odds_ratio_eq(a, b, 1.8f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn mixture_pair_boundaries() {
        assert_eq!(solve_mixture_pair(0.0, 0.4, 1.0, "t").unwrap(), (0.0, 0.0));
        assert_eq!(solve_mixture_pair(1.0, 0.4, 1.0, "t").unwrap(), (1.0, 1.0));
        // a weight above one still brackets a root since f(0) = -m and f(1) = 1 - m
        let (a, b) = solve_mixture_pair(0.95, 1.5, 3.0, "t").unwrap();
        assert!((1.5 * a - 0.5 * b - 0.95).abs() < 1e-12);
        assert!(odds_ratio_eq(a, b, 3.0).abs() < 1e-12);
    }
}
