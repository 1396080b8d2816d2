//! Sensitivity regions, ignorance intervals and estimated uncertainty intervals (EUIs).
//!
//! Standard error convention: every function here takes standard errors of
//! the endpoint estimates, i.e. the asymptotic scale already divided by
//! `sqrt(n)`. The constant `c_alpha` solves
//! `Phi(c + gap / max(se_l, se_u)) - Phi(-c) = 1 - alpha`. Use
//! [`eui_asymptotic`] to pass asymptotic scales together with `n` instead.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PsemError, Result};
use crate::estimators::{
    cep, CepResult, Contrast, Prepared, Quantity, RiskEstimates, Scenario, SensitivityParam, SensitivityPoint,
};
use crate::missingness::WeightedRecords;
use crate::normal::{phi, quantile};

pub const DEFAULT_GRID: usize = 21;
pub const DEFAULT_ALPHA: f64 = 0.05;

/// Plausible region for the sensitivity parameters with the grid used to explore it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityConfig {
    pub scenario: Scenario,
    /// Closed interval per parameter; parameters left out are fixed at zero.
    pub ranges: BTreeMap<SensitivityParam, [f64; 2]>,
    /// Points per axis for axes with a nondegenerate range.
    pub grid: usize,
    pub alpha: f64,
    pub contrast: Contrast,
}

impl SensitivityConfig {
    pub fn new(scenario: Scenario, contrast: Contrast) -> Self {
        Self {
            scenario,
            ranges: BTreeMap::new(),
            grid: DEFAULT_GRID,
            alpha: DEFAULT_ALPHA,
            contrast,
        }
    }

    pub fn with_range(mut self, param: SensitivityParam, lower: f64, upper: f64) -> Self {
        self.ranges.insert(param, [lower, upper]);
        self
    }

    /// Every legal parameter of the scenario ranging over `[-half_width, half_width]`.
    pub fn symmetric(scenario: Scenario, contrast: Contrast, half_width: f64) -> Self {
        let mut cfg = Self::new(scenario, contrast);
        for &p in scenario.legal_params() {
            cfg.ranges.insert(p, [-half_width, half_width]);
        }
        cfg
    }

    pub fn with_grid(mut self, grid: usize) -> Self {
        self.grid = grid;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return Err(PsemError::Config(format!(
                "alpha = {} must lie in (0, 0.5)",
                self.alpha
            )));
        }
        for (&p, &[l, u]) in &self.ranges {
            if !self.scenario.legal_params().contains(&p) {
                return Err(PsemError::Config(format!(
                    "sensitivity parameter {} is not used by scenario {}",
                    p.key(),
                    self.scenario
                )));
            }
            if !(l.is_finite() && u.is_finite()) || l > u {
                return Err(PsemError::Config(format!(
                    "range for {} must satisfy lower <= upper, got [{l}, {u}]",
                    p.key()
                )));
            }
            if l < u && self.grid < 2 {
                return Err(PsemError::Config(
                    "grid needs at least 2 points per nondegenerate axis".into(),
                ));
            }
        }
        Ok(())
    }

    fn axis(&self, [l, u]: [f64; 2]) -> Vec<f64> {
        if l == u {
            return vec![l];
        }
        let g = self.grid;
        (0..g)
            .map(|k| {
                if k + 1 == g {
                    u
                } else {
                    l + (u - l) * k as f64 / (g - 1) as f64
                }
            })
            .collect()
    }

    /// Cartesian grid over the region; endpoints of every axis are included exactly.
    pub fn points(&self) -> Vec<SensitivityPoint> {
        let mut points = vec![SensitivityPoint::null()];
        for (&p, &range) in &self.ranges {
            let axis = self.axis(range);
            points = points
                .iter()
                .flat_map(|base| axis.iter().map(move |&v| base.with(p, v)))
                .collect();
        }
        points
    }

    /// Whether `point` sits at a corner of the region.
    pub fn is_corner(&self, point: &SensitivityPoint) -> bool {
        self.ranges
            .iter()
            .all(|(&p, &[l, u])| point.get(p) == l || point.get(p) == u)
    }
}

/// Quantity whose ignorance interval is wanted.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Target {
    Cep00,
    Cep10,
    Cep11,
    /// `CEP(1,0) - CEP(0,0)`.
    Mu,
    Quantity(Quantity),
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Cep00 => f.write_str("CEP(0,0)"),
            Target::Cep10 => f.write_str("CEP(1,0)"),
            Target::Cep11 => f.write_str("CEP(1,1)"),
            Target::Mu => f.write_str("mu"),
            Target::Quantity(q) => write!(f, "{q}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CellFit {
    pub estimates: RiskEstimates,
    pub cep: CepResult,
}

impl CellFit {
    /// `(value, standard error)` of `target`, if this fit carries it.
    pub fn target(&self, target: &Target) -> Option<(f64, f64)> {
        let e = match target {
            Target::Cep00 => self.cep.cep00,
            Target::Cep10 => self.cep.cep10,
            Target::Cep11 => self.cep.cep11?,
            Target::Mu => self.cep.mu,
            Target::Quantity(q) => return Some((self.estimates.get(q)?, self.estimates.se(q)?)),
        };
        Some((e.value, e.se))
    }
}

#[derive(Debug)]
pub struct GridCell {
    pub point: SensitivityPoint,
    pub fit: Result<CellFit>,
}

#[derive(Debug)]
pub struct Sweep {
    pub config: SensitivityConfig,
    pub cells: Vec<GridCell>,
}

impl Sweep {
    pub fn failures(&self) -> usize {
        self.cells.iter().filter(|c| c.fit.is_err()).count()
    }

    pub fn successes(&self) -> impl Iterator<Item = (&SensitivityPoint, &CellFit)> {
        self.cells
            .iter()
            .filter_map(|c| c.fit.as_ref().ok().map(|f| (&c.point, f)))
    }

    /// Fit at the point with all parameters zero, when it lies on the grid.
    pub fn null_fit(&self) -> Option<&CellFit> {
        self.successes()
            .find(|(p, _)| SensitivityParam::ALL.iter().all(|&k| p.get(k) == 0.0))
            .map(|(_, f)| f)
    }

    /// First failure among the corners of the region.
    pub fn corner_failure(&self) -> Option<&GridCell> {
        self.cells
            .iter()
            .find(|c| c.fit.is_err() && self.config.is_corner(&c.point))
    }
}

fn fit_cell(prepared: &Prepared, config: &SensitivityConfig, point: SensitivityPoint) -> GridCell {
    let fit = prepared.estimate(config.scenario, &point).and_then(|estimates| {
        let cep = cep(&estimates, config.contrast)?;
        Ok(CellFit { estimates, cep })
    });
    GridCell { point, fit }
}

/// Fits the scenario at every grid point. Individual failures are kept per cell.
pub fn sweep(weighted: &WeightedRecords, config: &SensitivityConfig) -> Result<Sweep> {
    sweep_prepared(&Prepared::new(weighted), config)
}

pub fn sweep_prepared(prepared: &Prepared, config: &SensitivityConfig) -> Result<Sweep> {
    config.validate()?;
    let cells: Vec<GridCell> = config
        .points()
        .into_par_iter()
        .map(|p| fit_cell(prepared, config, p))
        .collect();
    sweep_from_cells(config, cells)
}

/// Serial variant of [`sweep_prepared`] for callers that parallelize at a higher level.
pub fn sweep_serial(prepared: &Prepared, config: &SensitivityConfig) -> Result<Sweep> {
    config.validate()?;
    let cells = config
        .points()
        .into_iter()
        .map(|p| fit_cell(prepared, config, p))
        .collect();
    sweep_from_cells(config, cells)
}

fn sweep_from_cells(config: &SensitivityConfig, mut cells: Vec<GridCell>) -> Result<Sweep> {
    if cells.iter().all(|c| c.fit.is_err()) {
        let first = cells.swap_remove(0);
        return Err(first.fit.expect_err("every cell failed"));
    }
    Ok(Sweep {
        config: config.clone(),
        cells,
    })
}

/// Endpoints of an ignorance interval with the sensitivity points achieving them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ignorance {
    pub lower: f64,
    pub se_lower: f64,
    pub point_lower: SensitivityPoint,
    pub upper: f64,
    pub se_upper: f64,
    pub point_upper: SensitivityPoint,
}

/// Minimum and maximum of `target` over the successful grid cells.
pub fn ignorance_interval(sweep: &Sweep, target: &Target) -> Result<Ignorance> {
    let mut best: Option<Ignorance> = None;
    for (p, fit) in sweep.successes() {
        let Some((v, se)) = fit.target(target) else {
            continue;
        };
        match &mut best {
            None => {
                best = Some(Ignorance {
                    lower: v,
                    se_lower: se,
                    point_lower: *p,
                    upper: v,
                    se_upper: se,
                    point_upper: *p,
                })
            }
            Some(b) => {
                if v < b.lower {
                    (b.lower, b.se_lower, b.point_lower) = (v, se, *p);
                }
                if v > b.upper {
                    (b.upper, b.se_upper, b.point_upper) = (v, se, *p);
                }
            }
        }
    }
    best.ok_or_else(|| PsemError::Degenerate(format!("no grid cell produced {target}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Eui {
    pub lower: f64,
    pub upper: f64,
    pub c_alpha: f64,
    /// Both standard errors are zero, so the interval carries no sampling uncertainty.
    pub degenerate: bool,
}

/// Estimated uncertainty interval from endpoint estimates and their standard errors.
pub fn eui(est_l: f64, se_l: f64, est_u: f64, se_u: f64, alpha: f64) -> Result<Eui> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(PsemError::Config(format!("alpha = {alpha} must lie in (0, 0.5)")));
    }
    if !(se_l >= 0.0 && se_u >= 0.0) || !se_l.is_finite() || !se_u.is_finite() {
        return Err(PsemError::Config(
            "standard errors must be finite and nonnegative".into(),
        ));
    }
    if !(est_l <= est_u) {
        return Err(PsemError::Config(format!(
            "lower estimate {est_l} exceeds upper estimate {est_u}"
        )));
    }
    let (z_one, z_two) = (quantile(1.0 - alpha), quantile(1.0 - alpha / 2.0));
    let scale = se_l.max(se_u);
    if scale == 0.0 {
        let c = if est_l < est_u { z_one } else { z_two };
        return Ok(Eui {
            lower: est_l,
            upper: est_u,
            c_alpha: c,
            degenerate: true,
        });
    }
    let c = c_alpha((est_u - est_l) / scale, alpha);
    Ok(Eui {
        lower: est_l - c * se_l,
        upper: est_u + c * se_u,
        c_alpha: c,
        degenerate: false,
    })
}

/// As [`eui`], with asymptotic scales `sigma` so that the standard errors are `sigma / sqrt(n)`.
pub fn eui_asymptotic(est_l: f64, sigma_l: f64, est_u: f64, sigma_u: f64, n: usize, alpha: f64) -> Result<Eui> {
    if n == 0 {
        return Err(PsemError::Config("sample size must be positive".into()));
    }
    let root = (n as f64).sqrt();
    eui(est_l, sigma_l / root, est_u, sigma_u / root, alpha)
}

/// Solves `Phi(c + gap) - Phi(-c) = 1 - alpha` for `c` in `[z_{1-alpha}, z_{1-alpha/2}]`,
/// where `gap` is the distance between endpoints in units of the larger standard error.
pub fn c_alpha(gap: f64, alpha: f64) -> f64 {
    let (mut lo, mut hi) = (quantile(1.0 - alpha), quantile(1.0 - alpha / 2.0));
    let f = |c: f64| phi(c + gap) - phi(-c) - (1.0 - alpha);
    if f(lo) >= 0.0 {
        return lo;
    }
    if f(hi) <= 0.0 {
        return hi;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Ignorance interval and EUI for one target.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntervalResult {
    pub target: String,
    pub ignorance: Ignorance,
    pub eui: Eui,
}

impl IntervalResult {
    pub fn contains(&self, x: f64) -> bool {
        self.eui.lower <= x && x <= self.eui.upper
    }
}

pub fn interval(sweep: &Sweep, target: &Target) -> Result<IntervalResult> {
    let ig = ignorance_interval(sweep, target)?;
    let e = eui(ig.lower, ig.se_lower, ig.upper, ig.se_upper, sweep.config.alpha)?;
    Ok(IntervalResult {
        target: target.to_string(),
        ignorance: ig,
        eui: e,
    })
}

#[derive(Debug, Clone)]
pub struct EffectModificationTest {
    /// The EUI for `mu` excludes zero.
    pub reject: bool,
    pub interval: IntervalResult,
}

pub fn decide(interval: IntervalResult) -> EffectModificationTest {
    EffectModificationTest {
        reject: !interval.contains(0.0),
        interval,
    }
}

/// Tests `H0: CEP(1,0) = CEP(0,0)` by checking whether the EUI for `mu` excludes zero.
pub fn test_effect_modification(
    weighted: &WeightedRecords,
    config: &SensitivityConfig,
) -> Result<EffectModificationTest> {
    let sw = sweep(weighted, config)?;
    test_from_sweep(sw)
}

pub fn test_from_sweep(mut sw: Sweep) -> Result<EffectModificationTest> {
    if let Some(idx) = sw
        .cells
        .iter()
        .position(|c| c.fit.is_err() && sw.config.is_corner(&c.point))
    {
        let cell = sw.cells.swap_remove(idx);
        return Err(cell.fit.expect_err("corner failed"));
    }
    Ok(decide(interval(&sw, &Target::Mu)?))
}

/// Whether the extrema of `target` are attained at corners of the region.
pub fn extrema_at_corners(sweep: &Sweep, target: &Target) -> Result<bool> {
    let ig = ignorance_interval(sweep, target)?;
    let cfg = &sweep.config;
    let corner_value = |v: f64| {
        sweep.successes().filter(|(p, _)| cfg.is_corner(p)).any(|(_, f)| {
            f.target(target)
                .is_some_and(|(x, _)| (x - v).abs() <= 1e-12 * v.abs().max(1.0))
        })
    };
    Ok(corner_value(ig.lower) && corner_value(ig.upper))
}
