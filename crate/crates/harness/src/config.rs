//! Experiment configuration: a flat, typed TOML file with one section
//! per subsystem. Committed config files under `configs/` carry every
//! hyperparameter of the shipped experiments.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use cstrat_core::cost::ResponseDirection;
use cstrat_core::learners::{HypothesisSpec, Method, TrainParams};
use cstrat_core::{DensityConfig, StrategicParams};

use crate::HarnessError;

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub experiment: ExperimentSection,
    pub scenario: ScenarioSection,
    pub split: SplitSection,
    pub cost: CostSection,
    #[serde(default)]
    pub objective: ObjectiveSection,
    pub hypothesis: HypothesisSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub density: DensitySection,
    #[serde(default)]
    pub sweep: SweepSection,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: String,
    pub repetitions: usize,
    pub base_seed: u64,
    pub methods: Vec<String>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    /// synthetic_a | synthetic_b | synthetic_c | csv
    pub kind: String,
    /// CSV source; when the file is absent a synthetic stand-in with the
    /// same dimensionalities takes its place.
    pub path: Option<PathBuf>,
    pub label_column: Option<String>,
    pub positive_label: Option<String>,
    #[serde(default)]
    pub causal_columns: Vec<String>,
    #[serde(default)]
    pub u_columns: Vec<String>,
    pub xr_dim: Option<usize>,
    pub xr_map_seed: Option<u64>,
    /// mlp_noisy | linear_tricky
    pub oracle: Option<String>,
    /// Pool size for csv-backed and stand-in pipelines.
    #[serde(default = "default_pool_rows")]
    pub pool_rows: usize,
    /// Oversample the minority class by KDE sampling when a real CSV is
    /// imbalanced.
    #[serde(default = "default_true")]
    pub balance: bool,
    #[serde(default)]
    pub oracle_fit: OracleFitSection,
    /// Scenario-specific labeling parameters (committed calibrations).
    #[serde(default)]
    pub linear_oracle: LinearOracleSection,
    #[serde(default)]
    pub circle_oracle: CircleOracleSection,
    #[serde(default)]
    pub ellipse_oracle: EllipseOracleSection,
}

fn default_pool_rows() -> usize {
    5500
}

fn default_true() -> bool {
    true
}

/// Linear labeling with boundary-localized noise (first synthetic world).
/// The boundary offset and noise profile are calibrated values committed
/// with the config.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct LinearOracleSection {
    pub w: Vec<f64>,
    pub b: f64,
    pub noise_width: f64,
    pub flip_scale: f64,
}

impl Default for LinearOracleSection {
    fn default() -> Self {
        Self { w: vec![1.0, 1.0], b: 3.0, noise_width: 1.0, flip_scale: 0.35 }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct CircleOracleSection {
    pub center: [f64; 2],
    pub radius: f64,
}

impl Default for CircleOracleSection {
    fn default() -> Self {
        Self { center: [0.0, 0.0], radius: 2.5 }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct EllipseOracleSection {
    pub vertical_center_x: f64,
    pub vertical_semi_axes: [f64; 2],
    pub horizontal_semi_axes: [f64; 2],
}

impl Default for EllipseOracleSection {
    fn default() -> Self {
        Self {
            vertical_center_x: 2.0,
            vertical_semi_axes: [1.6, 2.2],
            horizontal_semi_axes: [2.2, 1.3],
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OracleFitSection {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub hidden_widths: Vec<usize>,
    pub noise_width: f64,
    pub flip_scale: f64,
    pub tricky_feature: usize,
    pub threshold: f64,
    pub slope: f64,
    pub calibrate_flip_rate: Option<f64>,
}

impl Default for OracleFitSection {
    fn default() -> Self {
        let d = cstrat_core::OracleFitParams::default();
        Self {
            lr: d.lr,
            epochs: d.epochs,
            batch: d.batch,
            hidden_widths: d.hidden_widths,
            noise_width: d.noise_width,
            flip_scale: d.flip_scale,
            tricky_feature: d.tricky_feature,
            threshold: d.threshold,
            slope: d.slope,
            calibrate_flip_rate: d.calibrate_flip_rate,
        }
    }
}

impl OracleFitSection {
    pub fn to_params(&self) -> cstrat_core::OracleFitParams {
        cstrat_core::OracleFitParams {
            lr: self.lr,
            epochs: self.epochs,
            batch: self.batch,
            hidden_widths: self.hidden_widths.clone(),
            noise_width: self.noise_width,
            flip_scale: self.flip_scale,
            tricky_feature: self.tricky_feature,
            threshold: self.threshold,
            slope: self.slope,
            calibrate_flip_rate: self.calibrate_flip_rate,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    pub train_clean: usize,
    pub dirty_inventory: usize,
    pub validation: usize,
    pub test: usize,
    pub rounds: usize,
}

impl SplitSection {
    pub fn to_spec(&self) -> Result<cstrat_core::SplitSpec, HarnessError> {
        Ok(cstrat_core::SplitSpec::new(
            self.train_clean,
            self.dirty_inventory,
            self.validation,
            self.test,
            self.rounds,
        )?)
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    pub alpha: f64,
    #[serde(default)]
    pub response_direction: ResponseDirection,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSection {
    pub tau: f64,
    pub lambda0: f64,
    pub lambda_decay: f64,
}

impl Default for ObjectiveSection {
    fn default() -> Self {
        Self { tau: 4.0, lambda0: 1.0, lambda_decay: 0.4 }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct HypothesisSection {
    pub kind: String,
    pub degree: Option<u32>,
    pub hidden_widths: Option<Vec<usize>>,
}

impl HypothesisSection {
    pub fn to_spec(&self) -> Result<HypothesisSpec, HarnessError> {
        match self.kind.as_str() {
            "polynomial" => Ok(HypothesisSpec::Polynomial {
                degree: self.degree.ok_or_else(|| {
                    HarnessError::Config("polynomial hypothesis needs a degree".into())
                })?,
            }),
            "mlp" => Ok(HypothesisSpec::Mlp {
                hidden_widths: self
                    .hidden_widths
                    .clone()
                    .unwrap_or_else(|| vec![10, 10, 10]),
            }),
            other => Err(HarnessError::Config(format!("unknown hypothesis kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub f_lr: f64,
    pub h_lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub patience: usize,
    pub l2_f: f64,
    pub l2_h: f64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let d = TrainParams::default();
        Self {
            f_lr: d.f_lr,
            h_lr: d.h_lr,
            batch: d.batch,
            epochs: d.epochs,
            patience: d.patience,
            l2_f: d.l2_f,
            l2_h: d.l2_h,
        }
    }
}

impl TrainingSection {
    pub fn to_params(&self) -> TrainParams {
        TrainParams {
            f_lr: self.f_lr,
            h_lr: self.h_lr,
            batch: self.batch,
            epochs: self.epochs,
            patience: self.patience,
            l2_f: self.l2_f,
            l2_h: self.l2_h,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DensitySection {
    pub bandwidth_min: f64,
    pub bandwidth_max: f64,
    pub bandwidth_count: usize,
    pub folds: usize,
    pub quad_points: usize,
}

impl Default for DensitySection {
    fn default() -> Self {
        Self { bandwidth_min: 1e-2, bandwidth_max: 10.0, bandwidth_count: 20, folds: 5, quad_points: 128 }
    }
}

impl DensitySection {
    pub fn to_config(&self) -> DensityConfig {
        DensityConfig {
            bandwidth_grid: cstrat_core::log_spaced_grid(
                self.bandwidth_min,
                self.bandwidth_max,
                self.bandwidth_count,
            ),
            folds: self.folds,
            quad_points: self.quad_points,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub cost_multipliers: Vec<f64>,
    pub clean_ratios: Vec<f64>,
    pub sensitivity_dprimes: Vec<usize>,
    pub sensitivity_max_subsets: usize,
    pub sensitivity_seeds: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            cost_multipliers: vec![0.5, 1.0, 2.0, 4.0],
            clean_ratios: vec![1.0 / 6.0, 1.0 / 3.0, 0.5, 2.0 / 3.0, 5.0 / 6.0],
            sensitivity_dprimes: vec![2, 4, 6],
            sensitivity_max_subsets: 30,
            sensitivity_seeds: 10,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            HarnessError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let cfg: Config = toml::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.experiment.methods.is_empty() {
            return Err(HarnessError::Config("methods list is empty".into()));
        }
        for m in &self.experiment.methods {
            self.parse_method(m)?;
        }
        if self.experiment.repetitions == 0 {
            return Err(HarnessError::Config("repetitions must be at least 1".into()));
        }
        if !(self.cost.alpha > 0.0) {
            return Err(HarnessError::Config("cost scale must be positive".into()));
        }
        if !(self.objective.tau > 0.0) {
            return Err(HarnessError::Config("sigmoid temperature must be positive".into()));
        }
        if self.objective.lambda0 < 0.0
            || self.objective.lambda_decay <= 0.0
            || self.objective.lambda_decay > 1.0
        {
            return Err(HarnessError::Config(
                "regularization needs lambda0 >= 0 and decay in (0, 1]".into(),
            ));
        }
        self.split.to_spec()?;
        self.hypothesis.to_spec()?;
        match self.scenario.kind.as_str() {
            "synthetic_a" | "synthetic_b" | "synthetic_c" => {}
            "csv" => {
                if self.scenario.causal_columns.is_empty() || self.scenario.u_columns.is_empty() {
                    return Err(HarnessError::Config(
                        "csv scenarios need causal_columns and u_columns".into(),
                    ));
                }
                let xr = self.scenario.xr_dim.unwrap_or(0);
                if xr == 0 || xr > self.scenario.u_columns.len() {
                    return Err(HarnessError::Config(
                        "xr_dim must be between 1 and the number of u columns".into(),
                    ));
                }
                match self.scenario.oracle.as_deref() {
                    Some("mlp_noisy") | Some("linear_tricky") => {}
                    other => {
                        return Err(HarnessError::Config(format!(
                            "csv scenarios need an oracle of mlp_noisy or linear_tricky, got {other:?}"
                        )))
                    }
                }
            }
            other => {
                return Err(HarnessError::Config(format!("unknown scenario kind '{other}'")))
            }
        }
        Ok(())
    }

    /// Maps a configured method string onto a training method.
    pub fn parse_method(&self, name: &str) -> Result<Method, HarnessError> {
        let decay = self.objective.lambda_decay;
        match name {
            "erm" => Ok(Method::Erm),
            "serm" => Ok(Method::Serm),
            "cserm" => Ok(Method::Cserm { lambda0: 0.0, decay }),
            "cserm_reg" => Ok(Method::Cserm { lambda0: self.objective.lambda0, decay }),
            "rrm" => Ok(Method::Rrm),
            "rrm_le_t" => Ok(Method::RrmLeT),
            "rrm_c" => Ok(Method::RrmC),
            "oracle" => Ok(Method::Oracle { lambda0: 0.0, decay }),
            "oracle_reg" => Ok(Method::Oracle { lambda0: self.objective.lambda0, decay }),
            "ns_bench" => Ok(Method::NsBench),
            other => Err(HarnessError::Config(format!("unknown method '{other}'"))),
        }
    }

    pub fn strategic_params(&self) -> StrategicParams {
        StrategicParams {
            tau: self.objective.tau,
            direction: self.cost.response_direction,
            boundary_tol: cstrat_core::DEFAULT_BOUNDARY_TOL,
        }
    }
}
