//! TOML experiment plans.
//!
//! Every section and key is optional; missing keys take the defaults below.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Deserialize;

use super::{LabError, DEFAULT_DK};
use crate::asymptotics::SkewSource;
use crate::mc::{CvMode, Estimator, McConfig};
use crate::model::{LocalVol, MarketSetup, ModelSpec};
use crate::paths::AveragingRule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    LevelSweep,
    SkewSweep,
    #[serde(alias = "skew_vs_T")]
    SkewVsT,
    ProxyErrorTable,
    FbmCheck,
}

impl FromStr for ExperimentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "level_sweep" => Ok(ExperimentKind::LevelSweep),
            "skew_sweep" => Ok(ExperimentKind::SkewSweep),
            "skew_vs_t" | "skew_vs_T" => Ok(ExperimentKind::SkewVsT),
            "proxy_error_table" => Ok(ExperimentKind::ProxyErrorTable),
            "fbm_check" => Ok(ExperimentKind::FbmCheck),
            other => Err(format!("unknown experiment kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
pub enum ModelFamily {
    #[serde(rename = "const")]
    Const,
    #[serde(rename = "sabr")]
    Sabr,
    #[serde(rename = "fbergomi")]
    FBergomi,
    #[serde(rename = "localvol-cev")]
    LocalVolCev,
}

impl FromStr for ModelFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "const" => Ok(ModelFamily::Const),
            "sabr" => Ok(ModelFamily::Sabr),
            "fbergomi" => Ok(ModelFamily::FBergomi),
            "localvol-cev" => Ok(ModelFamily::LocalVolCev),
            other => Err(format!(
                "unknown model `{other}` (expected const, sabr, fbergomi or localvol-cev)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    #[serde(rename = "model")]
    pub family: ModelFamily,
    /// Spot volatility; the constant level for `const`.
    pub sigma0: f64,
    pub alpha: f64,
    pub vov: f64,
    pub hurst: f64,
    #[serde(rename = "cev-nu", alias = "cev_nu")]
    pub cev_nu: f64,
    #[serde(rename = "cev-beta", alias = "cev_beta")]
    pub cev_beta: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            family: ModelFamily::Const,
            sigma0: 0.3,
            alpha: 0.5,
            vov: 0.5,
            hurst: 0.4,
            cev_nu: 0.3,
            cev_beta: 0.5,
        }
    }
}

impl ModelSection {
    pub fn spec(&self) -> ModelSpec {
        match self.family {
            ModelFamily::Const => ModelSpec::ConstantVol { sigma: self.sigma0 },
            ModelFamily::Sabr => ModelSpec::Sabr {
                sigma0: self.sigma0,
                alpha: self.alpha,
            },
            ModelFamily::FBergomi => ModelSpec::FractionalBergomi {
                sigma0: self.sigma0,
                vov: self.vov,
                hurst: self.hurst,
            },
            ModelFamily::LocalVolCev => ModelSpec::LocalVol(LocalVol::cev(self.cev_nu, self.cev_beta)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarketSection {
    pub s0: f64,
    /// Defaults to `s0`.
    pub strike: Option<f64>,
    pub maturity: f64,
    pub rho: f64,
}

impl Default for MarketSection {
    fn default() -> Self {
        Self {
            s0: 10.0,
            strike: None,
            maturity: 1.0 / 252.0,
            rho: -0.3,
        }
    }
}

impl MarketSection {
    pub fn setup(&self) -> Result<MarketSetup, LabError> {
        MarketSetup::new(self.s0, self.strike.unwrap_or(self.s0), self.maturity, self.rho)
            .map_err(|e| LabError::Plan(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McSection {
    #[serde(alias = "paths")]
    pub n_paths: usize,
    pub steps: usize,
    pub estimator: Estimator,
    pub cv_mode: CvMode,
    pub averaging: AveragingRule,
}

impl Default for McSection {
    fn default() -> Self {
        let d = McConfig::default();
        Self {
            n_paths: d.n_paths,
            steps: d.steps,
            estimator: d.estimator,
            cv_mode: d.cv_mode,
            averaging: d.averaging,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    /// Volatility levels of `level_sweep` and `skew_sweep`.
    pub sigma0: Vec<f64>,
    /// Maturities of `skew_vs_t`.
    pub maturities: Vec<f64>,
    pub dk: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            sigma0: (1..=14).map(|i| i as f64 / 10.0).collect(),
            maturities: (0..8).map(|i| 10f64.powf(-3.0 + i as f64 * 2.0 / 7.0)).collect(),
            dk: DEFAULT_DK,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProxySection {
    /// Parameter draws per cell.
    pub samples: usize,
    pub s0: f64,
    pub strikes: Vec<f64>,
    pub maturities: Vec<f64>,
    pub sigma0_range: [f64; 2],
    /// `alpha` for SABR, `vov` for fractional Bergomi.
    pub vol_of_vol_range: [f64; 2],
    pub rho_range: [f64; 2],
    #[serde(with = "skew_source")]
    pub skew_source: SkewSource,
    pub error_space: ErrorSpace,
}

/// Where the proxy and the Monte Carlo result are compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorSpace {
    /// Implied volatilities: the proxy smile against the inverted MC price.
    Iv,
    /// Call prices.
    Price,
}

impl FromStr for ErrorSpace {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "iv" => Ok(ErrorSpace::Iv),
            "price" => Ok(ErrorSpace::Price),
            other => Err(format!("unknown error_space `{other}` (expected iv or price)")),
        }
    }
}

impl Default for ProxySection {
    fn default() -> Self {
        Self {
            samples: 200,
            s0: 100.0,
            strikes: (0..8).map(|i| 90.0 + 5.0 * i as f64).collect(),
            maturities: vec![0.01, 0.1, 0.5, 1.0, 2.0],
            sigma0_range: [0.2, 0.8],
            vol_of_vol_range: [0.3, 1.5],
            rho_range: [-0.9, 0.9],
            skew_source: SkewSource::Closed,
            error_space: ErrorSpace::Iv,
        }
    }
}

mod skew_source {
    use serde::{Deserialize, Deserializer};

    use crate::asymptotics::SkewSource;

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<SkewSource, D::Error> {
        match String::deserialize(d)?.as_str() {
            "closed" => Ok(SkewSource::Closed),
            "general_at_t" | "general-at-T" => Ok(SkewSource::GeneralAtT),
            other => Err(serde::de::Error::custom(format!(
                "unknown skew_source `{other}` (expected closed or general_at_t)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FbmSection {
    pub hurst: Vec<f64>,
    pub steps: usize,
    pub maturity: f64,
    pub samples: usize,
}

impl Default for FbmSection {
    fn default() -> Self {
        Self {
            hurst: vec![0.4, 0.7],
            steps: 10,
            maturity: 1.0,
            samples: 100_000,
        }
    }
}

/// A complete experiment description.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub market: MarketSection,
    #[serde(default)]
    pub mc: McSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub proxy: ProxySection,
    #[serde(default)]
    pub fbm: FbmSection,
}

fn default_seed() -> u64 {
    1
}

impl ExperimentPlan {
    pub fn new(kind: ExperimentKind) -> Self {
        Self {
            kind,
            output: None,
            seed: default_seed(),
            model: ModelSection::default(),
            market: MarketSection::default(),
            mc: McSection::default(),
            sweep: SweepSection::default(),
            proxy: ProxySection::default(),
            fbm: FbmSection::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, LabError> {
        let plan: Self = toml::from_str(text).map_err(|e| LabError::Plan(e.to_string()))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn load(path: &Path) -> Result<Self, LabError> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::PlanRead {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_toml_str(&text)
    }

    pub fn mc_config(&self) -> McConfig {
        McConfig {
            n_paths: self.mc.n_paths,
            steps: self.mc.steps,
            seed: self.seed,
            estimator: self.mc.estimator,
            cv_mode: self.mc.cv_mode,
            averaging: self.mc.averaging,
        }
    }

    pub fn validate(&self) -> Result<(), LabError> {
        let bad = |msg: String| Err(LabError::Plan(msg));
        self.market.setup()?;
        self.model
            .spec()
            .validate(&self.market.setup()?)
            .map_err(|e| LabError::Plan(e.to_string()))?;
        let finite_positive = |name: &str, xs: &[f64]| -> Result<(), LabError> {
            if xs.is_empty() {
                return bad(format!("{name} must not be empty"));
            }
            match xs.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
                Some(x) => bad(format!("{name} entries must be finite and > 0, got {x}")),
                None => Ok(()),
            }
        };
        let range = |name: &str, r: [f64; 2]| -> Result<(), LabError> {
            if r[0].is_finite() && r[1].is_finite() && r[0] <= r[1] {
                Ok(())
            } else {
                bad(format!("{name} must be [low, high] with low <= high, got {r:?}"))
            }
        };
        match self.kind {
            ExperimentKind::LevelSweep | ExperimentKind::SkewSweep => {
                finite_positive("sweep.sigma0", &self.sweep.sigma0)?
            }
            ExperimentKind::SkewVsT => finite_positive("sweep.maturities", &self.sweep.maturities)?,
            ExperimentKind::ProxyErrorTable => {
                finite_positive("proxy.strikes", &self.proxy.strikes)?;
                finite_positive("proxy.maturities", &self.proxy.maturities)?;
                if self.proxy.samples == 0 {
                    return bad("proxy.samples must be > 0".into());
                }
                range("proxy.sigma0_range", self.proxy.sigma0_range)?;
                range("proxy.vol_of_vol_range", self.proxy.vol_of_vol_range)?;
                range("proxy.rho_range", self.proxy.rho_range)?;
                if self.proxy.sigma0_range[0] <= 0.0 || self.proxy.vol_of_vol_range[0] < 0.0 {
                    return bad("proxy.sigma0_range must be > 0 and proxy.vol_of_vol_range >= 0".into());
                }
                if self.proxy.rho_range[0] < -1.0 || self.proxy.rho_range[1] > 1.0 {
                    return bad("proxy.rho_range must lie in [-1, 1]".into());
                }
                if !matches!(self.model.family, ModelFamily::Sabr | ModelFamily::FBergomi) {
                    return bad("proxy_error_table samples sabr or fbergomi parameters only".into());
                }
            }
            ExperimentKind::FbmCheck => {
                finite_positive("fbm.hurst", &self.fbm.hurst)?;
                if self.fbm.steps == 0 || self.fbm.samples < 2 {
                    return bad("fbm.steps must be > 0 and fbm.samples >= 2".into());
                }
            }
        }
        if matches!(self.kind, ExperimentKind::SkewSweep | ExperimentKind::SkewVsT) && !(self.sweep.dk > 0.0) {
            return bad(format!("sweep.dk must be > 0, got {}", self.sweep.dk));
        }
        self.mc_config()
            .validate(&self.model.spec())
            .map_err(|e| LabError::Plan(e.to_string()))
    }
}
