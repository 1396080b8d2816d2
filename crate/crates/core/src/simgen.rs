//! Simulation designs with known truths and replicated operating-characteristic studies.
//!
//! Random streams: every replicate owns a ChaCha8 key built from
//! `(study seed, cell index, replicate index)`. Within a replicate, stream 0
//! drives the potential outcomes and arm assignment and stream 1 the subcohort
//! draws, so results do not depend on thread count or scheduling.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PsemError, Result};
use crate::estimators::{Contrast, Prepared, Quantity, Scenario, SensitivityParam, Stratum};
use crate::missingness::{fit_missingness, WeightModel, WeightedRecords};
use crate::sensitivity::{sweep_serial, test_from_sweep, SensitivityConfig};
use crate::trial_data::{Marker, ObservedRecord};

const STREAM_POTENTIAL: u64 = 0;
const STREAM_COHORT: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Design {
    /// Equal early risk: `(Y_tau(1), Y_tau(0))` is (0,0) or (1,1) with probabilities 0.8, 0.2.
    B,
    /// Vaccine never causes an early event: (0,0), (0,1), (1,1) with probabilities 0.7, 0.2, 0.1.
    C,
}

impl Design {
    /// Scenario used to analyze data from this design.
    pub fn scenario(self) -> Scenario {
        match self {
            Design::B => Scenario::B,
            Design::C => Scenario::CProtect,
        }
    }

    /// Probabilities of the early-event strata (0,0), (0,1), (1,1).
    fn early_strata(self) -> [f64; 3] {
        match self {
            Design::B => [0.8, 0.0, 0.2],
            Design::C => [0.7, 0.2, 0.1],
        }
    }
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Design::B => "B",
            Design::C => "C",
        })
    }
}

impl FromStr for Design {
    type Err = PsemError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "B" | "b" => Ok(Design::B),
            "C" | "c" => Ok(Design::C),
            other => Err(PsemError::Config(format!("unknown design {other:?}"))),
        }
    }
}

/// Probability that a survivor's vaccine-arm marker is positive.
pub const MARKER_POSITIVE: f64 = 0.6;
/// Control-arm risk among early always survivors.
pub const CONTROL_RISK: f64 = 0.5;

/// Potential outcomes of one participant. `None` marks an undefined marker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PotentialRecord {
    pub y_tau_1: bool,
    pub y_tau_0: bool,
    pub s_star_1: Option<bool>,
    pub s_star_0: Option<bool>,
    pub y_1: bool,
    pub y_0: bool,
}

impl PotentialRecord {
    pub fn y_tau(&self, z: u8) -> bool {
        if z == 1 {
            self.y_tau_1
        } else {
            self.y_tau_0
        }
    }

    pub fn s_star(&self, z: u8) -> Option<bool> {
        if z == 1 {
            self.s_star_1
        } else {
            self.s_star_0
        }
    }

    pub fn y(&self, z: u8) -> bool {
        if z == 1 {
            self.y_1
        } else {
            self.y_0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub design: Design,
    pub n: usize,
    /// Vaccine-arm risk of early always survivors with marker 0.
    pub a: f64,
    /// Vaccine-arm risk of early always survivors with marker 1.
    pub b: f64,
    /// Subcohort sampling fraction.
    pub nu: f64,
    pub seed: u64,
}

impl GeneratorConfig {
    /// Parameterization with `a + b = 0.8` and `b - a = diff`.
    pub fn from_difference(design: Design, n: usize, diff: f64, nu: f64, seed: u64) -> Self {
        Self {
            design,
            n,
            a: 0.4 - diff / 2.0,
            b: 0.4 + diff / 2.0,
            nu,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.a) || !unit(self.b) {
            return Err(PsemError::Config(format!(
                "a = {} and b = {} must lie in [0, 1]",
                self.a, self.b
            )));
        }
        if !(self.nu > 0.0 && self.nu <= 1.0) {
            return Err(PsemError::Config(format!(
                "subcohort fraction {} not in (0, 1]",
                self.nu
            )));
        }
        if self.n == 0 {
            return Err(PsemError::Config("sample size must be positive".into()));
        }
        Ok(())
    }

    /// True `CEP(1,0) - CEP(0,0)` on the additive scale.
    pub fn true_mu(&self) -> f64 {
        self.b - self.a
    }
}

fn stream(seed: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose);
    rng
}

fn draw_potential(rng: &mut impl Rng, design: Design, a: f64, b: f64) -> PotentialRecord {
    let [p00, p01, _] = design.early_strata();
    let u: f64 = rng.gen();
    let (y_tau_1, y_tau_0) = if u < p00 {
        (false, false)
    } else if u < p00 + p01 {
        (false, true)
    } else {
        (true, true)
    };
    let s1 = (!y_tau_1).then(|| rng.gen_bool(MARKER_POSITIVE));
    // control-arm marker is constant (Case CB)
    let s0 = (!y_tau_0).then_some(false);
    let y_1 = match s1 {
        None => true,
        Some(false) => rng.gen_bool(a),
        Some(true) => rng.gen_bool(b),
    };
    let y_0 = if y_tau_0 { true } else { rng.gen_bool(CONTROL_RISK) };
    PotentialRecord {
        y_tau_1,
        y_tau_0,
        s_star_1: s1,
        s_star_0: s0,
        y_1,
        y_0,
    }
}

fn generate(config: &GeneratorConfig) -> Result<(Vec<PotentialRecord>, Vec<ObservedRecord>)> {
    config.validate()?;
    let mut rng = stream(config.seed, STREAM_POTENTIAL);
    let mut potential = Vec::with_capacity(config.n);
    let mut observed = Vec::with_capacity(config.n);
    for i in 0..config.n {
        let p = draw_potential(&mut rng, config.design, config.a, config.b);
        let z = u8::from(rng.gen_bool(0.5));
        let y_tau = p.y_tau(z);
        let marker = match p.s_star(z) {
            None => Marker::Undefined,
            Some(true) => Marker::Positive,
            Some(false) => Marker::Negative,
        };
        observed.push(ObservedRecord {
            id: format!("s{:07}", i + 1),
            z,
            w: Vec::new(),
            y_tau,
            marker,
            measured: !y_tau,
            y: p.y(z),
        });
        potential.push(p);
    }
    let observed = apply_case_cohort(observed, config.nu, config.seed)?;
    Ok((potential, observed))
}

/// Draws a design-B dataset: potential outcomes and the case-cohort observed records.
pub fn gen_scenario_b(config: &GeneratorConfig) -> Result<(Vec<PotentialRecord>, Vec<ObservedRecord>)> {
    if config.design != Design::B {
        return Err(PsemError::Config("gen_scenario_b needs design B".into()));
    }
    generate(config)
}

/// Draws a design-C dataset.
///
/// Participants protected from an early event by the vaccine have vaccine-arm
/// risk `a` or `b` by marker level, the same as the early always survivors.
pub fn gen_scenario_c(config: &GeneratorConfig) -> Result<(Vec<PotentialRecord>, Vec<ObservedRecord>)> {
    if config.design != Design::C {
        return Err(PsemError::Config("gen_scenario_c needs design C".into()));
    }
    generate(config)
}

pub fn generate_observed(config: &GeneratorConfig) -> Result<Vec<ObservedRecord>> {
    Ok(generate(config)?.1)
}

/// Masks markers outside the subcohort. Every early survivor joins the
/// subcohort with probability `nu`; markers are kept for subcohort members and cases.
pub fn apply_case_cohort(mut observed: Vec<ObservedRecord>, nu: f64, seed: u64) -> Result<Vec<ObservedRecord>> {
    if !(nu > 0.0 && nu <= 1.0) {
        return Err(PsemError::Config(format!("subcohort fraction {nu} not in (0, 1]")));
    }
    let mut rng = stream(seed, STREAM_COHORT);
    for r in observed.iter_mut().filter(|r| !r.y_tau) {
        // one draw per survivor regardless of outcome keeps the stream aligned across nu
        let u: f64 = rng.gen();
        let in_subcohort = u < nu;
        if !(in_subcohort || r.y) {
            r.measured = false;
            r.marker = Marker::Missing;
        }
    }
    Ok(observed)
}

/// Exact values of the estimands under a generator law.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Oracle {
    /// Named truths; names match the estimator output.
    pub values: Vec<(String, f64)>,
    pub cep00: f64,
    pub cep10: f64,
    pub mu: f64,
}

impl Oracle {
    pub fn get(&self, q: &Quantity) -> Option<f64> {
        let name = q.to_string();
        self.values.iter().find(|(k, _)| *k == name).map(|(_, v)| *v)
    }
}

/// Finite support of the generator: `(probability, potential outcomes)`.
pub fn generator_law(design: Design, a: f64, b: f64) -> Vec<(f64, PotentialRecord)> {
    let [p00, p01, p11] = design.early_strata();
    let bern = |p: f64| [(1.0 - p, false), (p, true)];
    let mut law = Vec::new();
    for (p_tau, y_tau_1, y_tau_0) in [(p00, false, false), (p01, false, true), (p11, true, true)] {
        if p_tau == 0.0 {
            continue;
        }
        let markers: Vec<(f64, Option<bool>)> = if y_tau_1 {
            vec![(1.0, None)]
        } else {
            vec![(1.0 - MARKER_POSITIVE, Some(false)), (MARKER_POSITIVE, Some(true))]
        };
        for (p_s, s1) in markers {
            let y1_law: Vec<(f64, bool)> = match s1 {
                None => vec![(1.0, true)],
                Some(false) => bern(a).to_vec(),
                Some(true) => bern(b).to_vec(),
            };
            let y0_law: Vec<(f64, bool)> = if y_tau_0 {
                vec![(1.0, true)]
            } else {
                bern(CONTROL_RISK).to_vec()
            };
            for &(p1, y_1) in &y1_law {
                for &(p0, y_0) in &y0_law {
                    let p = p_tau * p_s * p1 * p0;
                    if p > 0.0 {
                        law.push((
                            p,
                            PotentialRecord {
                                y_tau_1,
                                y_tau_0,
                                s_star_1: s1,
                                s_star_0: (!y_tau_0).then_some(false),
                                y_1,
                                y_0,
                            },
                        ));
                    }
                }
            }
        }
    }
    law
}

fn conditional(
    law: &[(f64, PotentialRecord)],
    given: impl Fn(&PotentialRecord) -> bool,
    value: impl Fn(&PotentialRecord) -> f64,
) -> Option<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for (p, r) in law.iter().filter(|(_, r)| given(r)) {
        num += p * value(r);
        den += p;
    }
    (den > 0.0).then(|| num / den)
}

/// True estimands by enumerating the generator law, with CEPs on `contrast`.
pub fn oracle_estimands(config: &GeneratorConfig, contrast: Contrast) -> Result<Oracle> {
    config.validate()?;
    let law = generator_law(config.design, config.a, config.b);
    let eas = |r: &PotentialRecord| !r.y_tau_1 && !r.y_tau_0;
    let ep = |r: &PotentialRecord| !r.y_tau_1 && r.y_tau_0;
    let in_stratum = |r: &PotentialRecord, s: Stratum| {
        eas(r)
            && match s {
                Stratum::S00 => r.s_star_1 == Some(false) && r.s_star_0 == Some(false),
                Stratum::S10 => r.s_star_1 == Some(true) && r.s_star_0 == Some(false),
                Stratum::S11 => r.s_star_1 == Some(true) && r.s_star_0 == Some(true),
            }
    };
    let y = |z: u8| move |r: &PotentialRecord| f64::from(u8::from(r.y(z)));
    let mut values = Vec::new();
    let mut push = |q: Quantity, v: Option<f64>| {
        if let Some(v) = v {
            values.push((q.to_string(), v));
        }
    };
    for z in [1u8, 0] {
        push(Quantity::Risk(z), conditional(&law, eas, y(z)));
    }
    let mut strata = BTreeMap::new();
    for s in [Stratum::S00, Stratum::S10] {
        push(
            Quantity::Mix(s),
            conditional(&law, eas, |r| f64::from(u8::from(in_stratum(r, s)))),
        );
        for z in [1u8, 0] {
            let v = conditional(&law, |r| in_stratum(r, s), y(z));
            strata.insert((z, s.label()), v);
            push(Quantity::StratumRisk(z, s), v);
        }
    }
    if config.design == Design::C {
        push(
            Quantity::aux("P(Y_tau(0)=0|Y_tau(1)=0)"),
            conditional(&law, |r| !r.y_tau_1, |r| f64::from(u8::from(!r.y_tau_0))),
        );
        push(
            Quantity::aux("P(S*(1)=1|EP)"),
            conditional(&law, ep, |r| f64::from(u8::from(r.s_star_1 == Some(true)))),
        );
        for (s, name) in [(false, "risk_1(0,*)"), (true, "risk_1(1,*)")] {
            push(
                Quantity::aux(name),
                conditional(&law, |r| ep(r) && r.s_star_1 == Some(s), y(1)),
            );
        }
    }
    let risk = |z: u8, s: Stratum| strata[&(z, s.label())].expect("stratum has positive probability");
    let cep00 = contrast.apply(risk(1, Stratum::S00), risk(0, Stratum::S00));
    let cep10 = contrast.apply(risk(1, Stratum::S10), risk(0, Stratum::S10));
    Ok(Oracle {
        values,
        cep00,
        cep10,
        mu: cep10 - cep00,
    })
}

/// One cell of a simulation study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudyCell {
    pub design: Design,
    pub n: usize,
    pub nu: f64,
    /// `b - a`, with `a + b = 0.8`.
    pub diff: f64,
    /// Every sensitivity parameter of the analysis scenario ranges over `[-gamma, gamma]`.
    pub gamma: f64,
}

impl StudyCell {
    pub fn generator(&self, seed: u64) -> GeneratorConfig {
        GeneratorConfig::from_difference(self.design, self.n, self.diff, self.nu, seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub cells: Vec<StudyCell>,
    pub replicates: usize,
    pub seed: u64,
    /// Grid points per sensitivity axis when `gamma > 0`.
    pub grid: usize,
    pub alpha: f64,
    pub contrast: Contrast,
}

impl StudyConfig {
    pub fn new(cells: Vec<StudyCell>, replicates: usize, seed: u64) -> Self {
        Self {
            cells,
            replicates,
            seed,
            grid: 5,
            alpha: 0.05,
            contrast: Contrast::Additive,
        }
    }

    /// Cartesian product of the listed factor levels.
    pub fn grid_of(design: Design, ns: &[usize], nus: &[f64], diffs: &[f64], gammas: &[f64]) -> Vec<StudyCell> {
        let mut cells = Vec::new();
        for &n in ns {
            for &nu in nus {
                for &diff in diffs {
                    for &gamma in gammas {
                        cells.push(StudyCell {
                            design,
                            n,
                            nu,
                            diff,
                            gamma,
                        });
                    }
                }
            }
        }
        cells
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(PsemError::Config("replicates must be at least 1".into()));
        }
        if self.cells.is_empty() {
            return Err(PsemError::Config("study has no cells".into()));
        }
        for c in &self.cells {
            c.generator(0).validate()?;
            if !(c.gamma >= 0.0 && c.gamma.is_finite()) {
                return Err(PsemError::Config(format!(
                    "gamma = {} must be finite and nonnegative",
                    c.gamma
                )));
            }
            self.sensitivity(c).validate()?;
        }
        Ok(())
    }

    pub fn sensitivity(&self, cell: &StudyCell) -> SensitivityConfig {
        let scenario = cell.design.scenario();
        let mut cfg = SensitivityConfig::new(scenario, self.contrast).with_grid(self.grid);
        cfg.alpha = self.alpha;
        for &p in scenario.legal_params() {
            cfg.ranges.insert(p, [-cell.gamma, cell.gamma]);
        }
        cfg
    }
}

/// Outcome of one analyzed replicate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReplicateOutcome {
    pub reject: bool,
    pub covers: bool,
    pub eui_lower: f64,
    pub eui_upper: f64,
    pub est_lower: f64,
    pub est_upper: f64,
    pub se_lower: f64,
    pub se_upper: f64,
    /// Largest mixing-identity residual over the grid fits.
    pub mixing_residual: f64,
}

/// Key material for replicate `replicate` of cell `cell`.
pub fn replicate_seed(seed: u64, cell: usize, replicate: usize) -> u64 {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(cell as u64).to_le_bytes());
    key[16..24].copy_from_slice(&(replicate as u64).to_le_bytes());
    ChaCha8Rng::from_seed(key).next_u64()
}

/// Generates and analyzes one replicate.
pub fn run_replicate(config: &StudyConfig, cell: &StudyCell, seed: u64, true_mu: f64) -> Result<ReplicateOutcome> {
    let records = generate_observed(&cell.generator(seed))?;
    let weighted: WeightedRecords = fit_missingness(&records, &WeightModel::design_known(cell.nu))?;
    let prepared = Prepared::new(&weighted);
    let sweep = sweep_serial(&prepared, &config.sensitivity(cell))?;
    let mixing_residual = sweep
        .successes()
        .filter_map(|(_, f)| f.estimates.mixing_residual())
        .fold(0.0, f64::max);
    let test = test_from_sweep(sweep)?;
    let iv = &test.interval;
    Ok(ReplicateOutcome {
        reject: test.reject,
        covers: iv.contains(true_mu),
        eui_lower: iv.eui.lower,
        eui_upper: iv.eui.upper,
        est_lower: iv.ignorance.lower,
        est_upper: iv.ignorance.upper,
        se_lower: iv.ignorance.se_lower,
        se_upper: iv.ignorance.se_upper,
        mixing_residual,
    })
}

/// Operating characteristics of one study cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellResult {
    pub cell: StudyCell,
    pub a: f64,
    pub b: f64,
    pub true_mu: f64,
    /// Replicates analyzed successfully.
    pub replicates: usize,
    pub failures: usize,
    /// Failure counts by error kind.
    pub failure_kinds: BTreeMap<String, usize>,
    pub power: f64,
    pub power_mcse: f64,
    pub mean_width: f64,
    pub width_mcse: f64,
    pub coverage: f64,
    pub coverage_mcse: f64,
    /// Mean lower ignorance endpoint minus the truth.
    pub bias_min: f64,
    pub bias_min_mcse: f64,
    pub bias_max: f64,
    pub bias_max_mcse: f64,
    pub mean_estimate: f64,
    pub mean_estimate_mcse: f64,
    pub ese_lower: f64,
    pub ase_lower: f64,
    pub ese_upper: f64,
    pub ase_upper: f64,
    pub max_mixing_residual: f64,
}

impl CellResult {
    pub fn ese_ase_lower(&self) -> f64 {
        self.ese_lower / self.ase_lower
    }

    pub fn ese_ase_upper(&self) -> f64 {
        self.ese_upper / self.ase_upper
    }
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let ss = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>();
    (mean, (ss / (n - 1.0)).sqrt())
}

fn summarize_cell(cell: StudyCell, config: &GeneratorConfig, outcomes: Vec<Result<ReplicateOutcome>>) -> CellResult {
    let mut ok = Vec::new();
    let mut failure_kinds = BTreeMap::new();
    for o in outcomes {
        match o {
            Ok(o) => ok.push(o),
            Err(e) => *failure_kinds.entry(e.name().to_string()).or_insert(0) += 1,
        }
    }
    let failures = failure_kinds.values().sum();
    let r = ok.len() as f64;
    let root = r.sqrt();
    let mu = config.true_mu();
    let rate = |f: &dyn Fn(&ReplicateOutcome) -> bool| {
        let p = ok.iter().filter(|o| f(o)).count() as f64 / r;
        (p, (p * (1.0 - p) / r).sqrt())
    };
    let col = |f: &dyn Fn(&ReplicateOutcome) -> f64| ok.iter().map(f).collect::<Vec<_>>();
    let (power, power_mcse) = rate(&|o| o.reject);
    let (coverage, coverage_mcse) = rate(&|o| o.covers);
    let (mean_width, sd_width) = mean_sd(&col(&|o| o.eui_upper - o.eui_lower));
    let (mean_lower, ese_lower) = mean_sd(&col(&|o| o.est_lower));
    let (mean_upper, ese_upper) = mean_sd(&col(&|o| o.est_upper));
    let (mean_mid, sd_mid) = mean_sd(&col(&|o| 0.5 * (o.est_lower + o.est_upper)));
    CellResult {
        cell,
        a: config.a,
        b: config.b,
        true_mu: mu,
        replicates: ok.len(),
        failures,
        failure_kinds,
        power,
        power_mcse,
        mean_width,
        width_mcse: sd_width / root,
        coverage,
        coverage_mcse,
        bias_min: mean_lower - mu,
        bias_min_mcse: ese_lower / root,
        bias_max: mean_upper - mu,
        bias_max_mcse: ese_upper / root,
        mean_estimate: mean_mid,
        mean_estimate_mcse: sd_mid / root,
        ese_lower,
        ase_lower: mean_sd(&col(&|o| o.se_lower)).0,
        ese_upper,
        ase_upper: mean_sd(&col(&|o| o.se_upper)).0,
        max_mixing_residual: ok.iter().map(|o| o.mixing_residual).fold(0.0, f64::max),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyResult {
    pub config: StudyConfig,
    pub cells: Vec<CellResult>,
}

/// Runs every cell of the study; replicates run in parallel and are aggregated by index.
pub fn run_study(config: &StudyConfig) -> Result<StudyResult> {
    config.validate()?;
    let mut cells = Vec::with_capacity(config.cells.len());
    for (ci, cell) in config.cells.iter().enumerate() {
        let truth = cell.generator(0);
        let mu = oracle_estimands(&truth, config.contrast)?.mu;
        let outcomes: Vec<Result<ReplicateOutcome>> = (0..config.replicates)
            .into_par_iter()
            .map(|r| run_replicate(config, cell, replicate_seed(config.seed, ci, r), mu))
            .collect();
        let mut summary = summarize_cell(*cell, &truth, outcomes);
        summary.true_mu = mu;
        cells.push(summary);
    }
    Ok(StudyResult {
        config: config.clone(),
        cells,
    })
}

/// 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

pub const STUDY_COLUMNS: [&str; 29] = [
    "design",
    "n",
    "nu",
    "a",
    "b",
    "mu",
    "gamma",
    "replicates",
    "failures",
    "power",
    "power_mcse",
    "mean_width",
    "width_mcse",
    "coverage",
    "coverage_mcse",
    "bias_min",
    "bias_min_mcse",
    "bias_max",
    "bias_max_mcse",
    "mean_estimate",
    "mean_estimate_mcse",
    "ese_lower",
    "ase_lower",
    "ese_ase_lower",
    "ese_upper",
    "ase_upper",
    "ese_ase_upper",
    "max_mixing_residual",
    "failure_kinds",
];

impl StudyResult {
    /// One row per cell, columns as in [`STUDY_COLUMNS`].
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| PsemError::Io(e.into());
        w.write_record(STUDY_COLUMNS).map_err(io)?;
        for c in &self.cells {
            let kinds = c
                .failure_kinds
                .iter()
                .map(|(k, v)| format!("{k}:{v}"))
                .collect::<Vec<_>>()
                .join(";");
            let mut row = vec![
                c.cell.design.to_string(),
                c.cell.n.to_string(),
                fmt_f64(c.cell.nu),
                fmt_f64(c.a),
                fmt_f64(c.b),
                fmt_f64(c.true_mu),
                fmt_f64(c.cell.gamma),
                c.replicates.to_string(),
                c.failures.to_string(),
            ];
            row.extend(
                [
                    c.power,
                    c.power_mcse,
                    c.mean_width,
                    c.width_mcse,
                    c.coverage,
                    c.coverage_mcse,
                    c.bias_min,
                    c.bias_min_mcse,
                    c.bias_max,
                    c.bias_max_mcse,
                    c.mean_estimate,
                    c.mean_estimate_mcse,
                    c.ese_lower,
                    c.ase_lower,
                    c.ese_ase_lower(),
                    c.ese_upper,
                    c.ase_upper,
                    c.ese_ase_upper(),
                    c.max_mixing_residual,
                ]
                .map(fmt_f64),
            );
            row.push(kinds);
            w.write_record(&row).map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Sensitivity parameters varied in the study analysis of `design`.
pub fn study_params(design: Design) -> &'static [SensitivityParam] {
    design.scenario().legal_params()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(design: Design, n: usize, nu: f64) -> GeneratorConfig {
        GeneratorConfig::from_difference(design, n, 0.2, nu, 11)
    }

    #[test]
    fn design_b_records_respect_invariants() {
        let (pot, obs) = gen_scenario_b(&config(Design::B, 2000, 0.25)).unwrap();
        for (p, o) in pot.iter().zip(&obs) {
            assert_eq!(p.y_tau_1, p.y_tau_0);
            if !p.y_tau_0 {
                assert_eq!(p.s_star_0, Some(false));
            } else {
                assert!(p.y_1 && p.y_0 && p.s_star_1.is_none());
            }
            o.validate().unwrap();
            if !o.y_tau && o.y {
                assert!(o.measured);
            }
        }
    }

    #[test]
    fn design_c_respects_monotonicity() {
        let (pot, obs) = gen_scenario_c(&config(Design::C, 5000, 1.0)).unwrap();
        assert!(pot.iter().all(|p| p.y_tau_1 <= p.y_tau_0));
        assert!(pot.iter().any(|p| !p.y_tau_1 && p.y_tau_0));
        assert!(obs.iter().all(|o| o.y_tau || o.measured));
    }

    #[test]
    fn wrong_design_is_rejected() {
        assert!(gen_scenario_b(&config(Design::C, 10, 1.0)).is_err());
        assert!(gen_scenario_c(&config(Design::B, 10, 1.0)).is_err());
        let mut bad = config(Design::B, 10, 1.0);
        bad.nu = 0.0;
        assert!(gen_scenario_b(&bad).is_err());
    }

    #[test]
    fn full_cohort_is_identity() {
        let (_, obs) = gen_scenario_b(&config(Design::B, 500, 1.0)).unwrap();
        let again = apply_case_cohort(obs.clone(), 1.0, 3).unwrap();
        assert_eq!(obs, again);
        assert!(obs.iter().all(|o| o.y_tau || o.marker.value().is_some()));
    }

    #[test]
    fn cases_are_always_measured() {
        let (_, obs) = gen_scenario_b(&GeneratorConfig::from_difference(Design::B, 500, 0.0, 0.1, 5)).unwrap();
        let cases: Vec<_> = obs.iter().filter(|o| !o.y_tau && o.y).cloned().collect();
        let masked = apply_case_cohort(cases.clone(), 0.01, 9).unwrap();
        assert_eq!(masked, cases);
    }

    #[test]
    fn seeds_are_reproducible() {
        let c = config(Design::C, 300, 0.25);
        assert_eq!(generate(&c).unwrap(), generate(&c).unwrap());
        let mut d = c;
        d.seed += 1;
        assert_ne!(generate(&c).unwrap().1, generate(&d).unwrap().1);
    }

    #[test]
    fn law_sums_to_one() {
        for design in [Design::B, Design::C] {
            let total: f64 = generator_law(design, 0.3, 0.55).iter().map(|(p, _)| p).sum();
            assert!((total - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn oracle_design_b() {
        let o = oracle_estimands(
            &GeneratorConfig::from_difference(Design::B, 1, -0.6, 1.0, 0),
            Contrast::Additive,
        )
        .unwrap();
        assert!((o.mu + 0.6).abs() < 1e-12);
        assert!((o.get(&Quantity::StratumRisk(0, Stratum::S00)).unwrap() - 0.5).abs() < 1e-12);
        assert!((o.get(&Quantity::StratumRisk(0, Stratum::S10)).unwrap() - 0.5).abs() < 1e-12);
        assert!((o.get(&Quantity::StratumRisk(1, Stratum::S00)).unwrap() - 0.7).abs() < 1e-12);
        assert!((o.get(&Quantity::StratumRisk(1, Stratum::S10)).unwrap() - 0.1).abs() < 1e-12);
        assert!((o.get(&Quantity::Mix(Stratum::S00)).unwrap() - 0.4).abs() < 1e-12);
        let null = oracle_estimands(
            &GeneratorConfig::from_difference(Design::B, 1, 0.0, 1.0, 0),
            Contrast::Additive,
        )
        .unwrap();
        assert!(null.mu.abs() < 1e-12);
        assert!((null.cep00 - (0.4 - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn oracle_design_c() {
        let cfg = GeneratorConfig {
            design: Design::C,
            n: 1,
            a: 0.2,
            b: 0.5,
            nu: 1.0,
            seed: 0,
        };
        let o = oracle_estimands(&cfg, Contrast::Additive).unwrap();
        let get = |q: Quantity| o.get(&q).unwrap();
        assert!((get(Quantity::Risk(1)) - (0.4 * 0.2 + 0.6 * 0.5)).abs() < 1e-12);
        assert!((get(Quantity::Risk(0)) - 0.5).abs() < 1e-12);
        assert!((get(Quantity::aux("P(Y_tau(0)=0|Y_tau(1)=0)")) - 0.7 / 0.9).abs() < 1e-12);
        assert!((get(Quantity::aux("P(S*(1)=1|EP)")) - 0.6).abs() < 1e-12);
        assert!((get(Quantity::aux("risk_1(1,*)")) - 0.5).abs() < 1e-12);
        assert!((o.mu - 0.3).abs() < 1e-12);
        let same = GeneratorConfig { a: 0.4, b: 0.4, ..cfg };
        assert!(oracle_estimands(&same, Contrast::Additive).unwrap().mu.abs() < 1e-12);
    }

    #[test]
    fn oracle_matches_large_sample_frequencies() {
        let cfg = GeneratorConfig {
            design: Design::C,
            n: 400_000,
            a: 0.2,
            b: 0.5,
            nu: 1.0,
            seed: 21,
        };
        let (pot, _) = gen_scenario_c(&cfg).unwrap();
        let o = oracle_estimands(&cfg, Contrast::Additive).unwrap();
        let eas: Vec<_> = pot.iter().filter(|p| !p.y_tau_1 && !p.y_tau_0).collect();
        let pos: Vec<_> = eas.iter().filter(|p| p.s_star_1 == Some(true)).collect();
        let freq = |xs: &[&&PotentialRecord], f: &dyn Fn(&PotentialRecord) -> bool| {
            xs.iter().filter(|p| f(p)).count() as f64 / xs.len() as f64
        };
        let p10 = pos.len() as f64 / eas.len() as f64;
        assert!((p10 - o.get(&Quantity::Mix(Stratum::S10)).unwrap()).abs() < 0.005);
        let r1 = freq(&pos, &|p| p.y_1);
        assert!((r1 - o.get(&Quantity::StratumRisk(1, Stratum::S10)).unwrap()).abs() < 0.006);
        let share_ep = pot.iter().filter(|p| !p.y_tau_1 && p.y_tau_0).count() as f64 / pot.len() as f64;
        assert!((share_ep - 0.2).abs() < 0.004);
    }

    #[test]
    fn replicate_seeds_differ() {
        let a = replicate_seed(1, 0, 0);
        assert_ne!(a, replicate_seed(1, 0, 1));
        assert_ne!(a, replicate_seed(1, 1, 0));
        assert_ne!(a, replicate_seed(2, 0, 0));
        assert_eq!(a, replicate_seed(1, 0, 0));
    }

    #[test]
    fn small_study_is_deterministic() {
        let cells = StudyConfig::grid_of(Design::B, &[400], &[1.0], &[0.0], &[0.0, 1.0]);
        let cfg = StudyConfig::new(cells, 20, 99);
        let a = run_study(&cfg).unwrap();
        let b = run_study(&cfg).unwrap();
        assert_eq!(a, b);
        for c in &a.cells {
            assert_eq!(c.replicates + c.failures, 20);
            assert!((0.0..=1.0).contains(&c.power) && (0.0..=1.0).contains(&c.coverage));
        }
        assert!(a.cells[1].mean_width > a.cells[0].mean_width);
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("design,n,nu"));
    }

    #[test]
    fn invalid_study() {
        let mut cfg = StudyConfig::new(StudyConfig::grid_of(Design::B, &[400], &[1.0], &[0.0], &[0.0]), 0, 1);
        assert!(run_study(&cfg).is_err());
        cfg.replicates = 1;
        cfg.cells[0].gamma = -1.0;
        assert!(run_study(&cfg).is_err());
    }
}
