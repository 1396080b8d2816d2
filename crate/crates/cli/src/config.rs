//! Configuration files for `analyze` and `simulate`, read as TOML or JSON.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use psem::missingness::{Term, DEFAULT_EPSILON};
use psem::sensitivity::{SensitivityConfig, DEFAULT_ALPHA, DEFAULT_GRID};
use psem::simgen::{Design, StudyCell, StudyConfig};
use psem::{Contrast, ObservedRecord, PsemError, Result, Scenario, Schema, SensitivityParam, WeightModel};

/// Parses `path` as JSON when it ends in `.json`, TOML otherwise.
pub fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| PsemError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        serde_json::from_str(&text).map_err(|e| PsemError::Config(format!("{}: {e}", path.display())))
    } else {
        toml::from_str(&text).map_err(|e| PsemError::Config(format!("{}: {e}", path.display())))
    }
}

/// Resolves `p` against the directory holding the config file.
pub fn resolve(config_path: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        return p.to_path_buf();
    }
    match config_path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => dir.join(p),
        _ => p.to_path_buf(),
    }
}

/// Sampling-weight model for the marker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightsConfig {
    /// Full cohort when every early survivor is measured, else logistic on `{intercept, y}`.
    #[default]
    Auto,
    /// Every early survivor measured; no weighting.
    Full,
    DesignKnown {
        nu: f64,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
    },
    Logistic {
        terms: Vec<Term>,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
    },
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

impl WeightsConfig {
    /// `None` means unweighted.
    pub fn model(&self, records: &[ObservedRecord]) -> Option<WeightModel> {
        match self {
            WeightsConfig::Auto => {
                let all = records.iter().all(|r| r.y_tau || r.measured);
                (!all).then(|| WeightModel::logistic(vec![Term::Intercept, Term::Y]))
            }
            WeightsConfig::Full => None,
            WeightsConfig::DesignKnown { nu, epsilon } => Some(WeightModel {
                epsilon: *epsilon,
                ..WeightModel::design_known(*nu)
            }),
            WeightsConfig::Logistic { terms, epsilon } => Some(WeightModel {
                epsilon: *epsilon,
                ..WeightModel::logistic(terms.clone())
            }),
        }
    }
}

/// Sensitivity parameter ranges, one map per region Γ.
pub type Region = BTreeMap<SensitivityParam, [f64; 2]>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitivitySection {
    #[serde(default = "default_grid")]
    pub grid: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Regions to analyze; empty means the single point with every parameter zero.
    #[serde(default)]
    pub regions: Vec<Region>,
}

impl Default for SensitivitySection {
    fn default() -> Self {
        Self {
            grid: DEFAULT_GRID,
            alpha: DEFAULT_ALPHA,
            regions: Vec::new(),
        }
    }
}

fn default_grid() -> usize {
    DEFAULT_GRID
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

fn default_contrast() -> Contrast {
    Contrast::Additive
}

/// Label such as `beta0=[-1,1];beta2=[0,0]`, or `null` for the all-zero point.
pub fn region_label(region: &Region) -> String {
    if region.is_empty() {
        return "null".into();
    }
    region
        .iter()
        .map(|(p, [l, u])| format!("{}=[{l},{u}]", p.key()))
        .collect::<Vec<_>>()
        .join(";")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    pub input: PathBuf,
    #[serde(default)]
    pub schema: Schema,
    pub scenario: Scenario,
    #[serde(default = "default_contrast")]
    pub contrast: Contrast,
    #[serde(default)]
    pub weights: WeightsConfig,
    #[serde(default)]
    pub sensitivity: SensitivitySection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl AnalysisConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: Self = read_config(path)?;
        cfg.input = resolve(path, &cfg.input);
        if let Some(out) = &cfg.output {
            cfg.output = Some(resolve(path, out));
        }
        Ok(cfg)
    }

    pub fn regions(&self) -> Vec<Region> {
        if self.sensitivity.regions.is_empty() {
            vec![Region::new()]
        } else {
            self.sensitivity.regions.clone()
        }
    }

    pub fn sensitivity_config(&self, region: &Region) -> SensitivityConfig {
        let mut cfg = SensitivityConfig::new(self.scenario, self.contrast).with_grid(self.sensitivity.grid);
        cfg.alpha = self.sensitivity.alpha;
        cfg.ranges = region.clone();
        cfg
    }

    /// Checks every region against the scenario before any data is read.
    pub fn validate(&self) -> Result<()> {
        for region in self.regions() {
            self.sensitivity_config(&region).validate()?;
        }
        if let WeightsConfig::DesignKnown { nu, .. } = self.weights {
            if !(nu > 0.0 && nu <= 1.0) {
                return Err(PsemError::Config(format!("subcohort fraction {nu} not in (0, 1]")));
            }
        }
        Ok(())
    }
}

/// Full factorial over the listed levels of one design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Factorial {
    pub design: Design,
    pub n: Vec<usize>,
    pub nu: Vec<f64>,
    pub diff: Vec<f64>,
    pub gamma: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyFile {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_study_grid")]
    pub grid: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_contrast")]
    pub contrast: Contrast,
    #[serde(default)]
    pub cells: Vec<StudyCell>,
    #[serde(default)]
    pub factorial: Vec<Factorial>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

fn default_seed() -> u64 {
    1
}

fn default_replicates() -> usize {
    1000
}

fn default_study_grid() -> usize {
    5
}

impl StudyFile {
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: Self = read_config(path)?;
        if let Some(out) = &cfg.output {
            cfg.output = Some(resolve(path, out));
        }
        Ok(cfg)
    }

    pub fn study(&self) -> StudyConfig {
        let mut cells = self.cells.clone();
        for f in &self.factorial {
            cells.extend(StudyConfig::grid_of(f.design, &f.n, &f.nu, &f.diff, &f.gamma));
        }
        StudyConfig {
            cells,
            replicates: self.replicates,
            seed: self.seed,
            grid: self.grid,
            alpha: self.alpha,
            contrast: self.contrast,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_analysis_config() {
        let text = r#"
            input = "trial.csv"
            scenario = "C_protect"
            contrast = "VE"

            [schema]
            z = "arm"

            [weights]
            model = "design_known"
            nu = 0.25

            [sensitivity]
            grid = 5
            regions = [{}, { beta0 = [-1.0, 1.0], beta4 = [0.0, 0.5] }]
        "#;
        let cfg: AnalysisConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.scenario, Scenario::CProtect);
        assert_eq!(cfg.contrast, Contrast::Ve);
        assert_eq!(cfg.schema.z, "arm");
        assert_eq!(cfg.schema.y, "y");
        assert_eq!(cfg.regions().len(), 2);
        assert_eq!(region_label(&cfg.regions()[1]), "beta0=[-1,1];beta4=[0,0.5]");
        assert_eq!(region_label(&cfg.regions()[0]), "null");
        cfg.validate().unwrap();
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<AnalysisConfig>(&json).unwrap(), cfg);
    }

    #[test]
    fn illegal_parameter_is_a_config_error() {
        let text = "input = \"x.csv\"\nscenario = \"B\"\n[sensitivity]\nregions = [{ beta2 = [0.0, 1.0] }]\n";
        let cfg: AnalysisConfig = toml::from_str(text).unwrap();
        assert!(matches!(cfg.validate(), Err(PsemError::Config(_))));
        assert!(toml::from_str::<AnalysisConfig>("input = \"x\"\nscenario = \"B\"\nextra = 1\n").is_err());
        assert!(toml::from_str::<AnalysisConfig>("input = \"x\"\nscenario = \"D\"\n").is_err());
    }

    #[test]
    fn study_file_expands_factorials() {
        let text = r#"
            seed = 7
            replicates = 10
            [[factorial]]
            design = "B"
            n = [400, 800]
            nu = [1.0]
            diff = [0.0, 0.2]
            gamma = [0.0]
            [[cells]]
            design = "C"
            n = 2000
            nu = 0.25
            diff = 0.4
            gamma = 0.5
        "#;
        let file: StudyFile = toml::from_str(text).unwrap();
        let study = file.study();
        assert_eq!(study.cells.len(), 5);
        assert_eq!(study.cells[0].design, Design::C);
        assert_eq!(study.seed, 7);
        assert_eq!(study.grid, 5);
    }

    #[test]
    fn relative_paths_follow_the_config() {
        assert_eq!(
            resolve(Path::new("/a/b/c.toml"), Path::new("d.csv")),
            PathBuf::from("/a/b/d.csv")
        );
        assert_eq!(resolve(Path::new("c.toml"), Path::new("d.csv")), PathBuf::from("d.csv"));
        assert_eq!(
            resolve(Path::new("/a/c.toml"), Path::new("/x.csv")),
            PathBuf::from("/x.csv")
        );
    }
}
