//! Run configuration: a TOML document with one table per concern.
//!
//! ```toml
//! [model]
//! kind = "dlnm"
//! n_exposures = 3
//! n_lags = 16
//!
//! [chain]
//! n_iter = 2000
//! burn_in = 1000
//! seed = 7
//!
//! [data]
//! path = "data.csv"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::ColumnLayout;
use crate::model::{
    build_additive_spec, build_biomarker_spec, build_dlnm_spec, build_mim_spec, build_nonseparable_spec,
    ClusteringMode, HyperParams, ModelKind, ModelSpec, ThetaMethod,
};
use crate::simulate::{Estimator, StudyConfig};
use crate::simulate::{ScenarioKind, SimScenario};
use crate::splines::SplineConfig;

fn cfg_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Number of exposures P.
    pub n_exposures: usize,
    /// Lags L (dlnm and nonseparable kinds).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_lags: Option<usize>,
    /// Lag-basis dimension m; omitted means the full lag dimension.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reduction_dim: Option<usize>,
    /// Maximum index order J (mim kind).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_indices: Option<usize>,
    /// Biomarkers per exposure (biomarker kind).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_biomarkers: Option<usize>,
    /// Defaults to K * J.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation: Option<usize>,
    #[serde(default)]
    pub clustering: ClusteringMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_update_method: Option<ThetaMethod>,
    #[serde(default)]
    pub orthogonalize_random_effects: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lag_diff_order: Option<usize>,
    #[serde(default)]
    pub spline: SplineConfig,
}

impl ModelConfig {
    fn need(v: Option<usize>, what: &str, kind: ModelKind) -> Result<usize> {
        v.ok_or_else(|| Error::Config(format!("model kind {kind:?} requires '{what}'")))
    }

    pub fn layout(&self) -> Result<ColumnLayout> {
        Ok(match self.kind {
            ModelKind::Dlnm | ModelKind::NonseparableDlnm => {
                ColumnLayout::Lagged { p: self.n_exposures, l: Self::need(self.n_lags, "n_lags", self.kind)? }
            }
            ModelKind::Biomarker => ColumnLayout::Lagged {
                p: self.n_exposures,
                l: Self::need(self.n_biomarkers, "n_biomarkers", self.kind)?,
            },
            ModelKind::Mim | ModelKind::Additive => ColumnLayout::Plain { p: self.n_exposures },
        })
    }

    /// Model spec for K outcomes.
    pub fn build_spec(&self, n_outcomes: usize, hyper: &HyperParams) -> Result<ModelSpec> {
        let p = self.n_exposures;
        let mut spec = match self.kind {
            ModelKind::Dlnm => build_dlnm_spec(p, Self::need(self.n_lags, "n_lags", self.kind)?, self.reduction_dim)?,
            ModelKind::NonseparableDlnm => {
                build_nonseparable_spec(p, Self::need(self.n_lags, "n_lags", self.kind)?, self.reduction_dim)?
            }
            ModelKind::Mim => build_mim_spec(p, Self::need(self.n_indices, "n_indices", self.kind)?)?,
            ModelKind::Additive => build_additive_spec(p)?,
            ModelKind::Biomarker => {
                build_biomarker_spec(p, Self::need(self.n_biomarkers, "n_biomarkers", self.kind)?)?
            }
        }
        .with_outcomes(n_outcomes)
        .with_clustering(self.clustering);
        if let Some(c) = self.truncation {
            spec.truncation = c;
        }
        if let Some(m) = self.theta_update_method {
            spec.theta_update_method = m;
        }
        if let Some(d) = self.lag_diff_order {
            spec.lag_diff_order = d;
        }
        spec.orthogonalize_random_effects = self.orthogonalize_random_effects;
        spec.spline = self.spline.clone();
        spec.hyper = hyper.clone();
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainConfig {
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub n_chains: usize,
    pub seed: u64,
    /// Write the random-effect vector into the chain dump.
    pub include_u: bool,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig { n_iter: 2000, burn_in: 1000, thin: 1, n_chains: 1, seed: 1, include_u: false }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_iter == 0 || self.thin == 0 || self.n_chains == 0 {
            return cfg_err("n_iter, thin and n_chains must be positive");
        }
        if self.burn_in >= self.n_iter {
            return cfg_err(format!("burn_in ({}) must be below n_iter ({})", self.burn_in, self.n_iter));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// sim_a, sim_b1, sim_b2, sim_b3, nonsep or identifiability
    pub scenario: String,
    pub n: usize,
    /// Exposures and lags of lagged scenarios (defaults: the full design).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_sd: Option<Vec<f64>>,
}

impl ScenarioConfig {
    pub fn scenario(&self, seed: u64) -> Result<SimScenario> {
        let kind = ScenarioKind::parse(&self.scenario)?;
        let std = SimScenario::standard(kind, self.n, seed);
        let mut s = SimScenario::reduced(kind, self.n, self.p.unwrap_or(std.p), self.l.unwrap_or(std.l), seed);
        if let Some(sd) = &self.noise_sd {
            s.noise_sd = sd.clone();
        }
        s.validate()?;
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyBlock {
    #[serde(flatten)]
    pub scenario: ScenarioConfig,
    pub estimators: Vec<String>,
    pub n_reps: usize,
    #[serde(default = "default_reduction_dim")]
    pub reduction_dim: usize,
    #[serde(default = "default_mim_indices")]
    pub mim_indices: usize,
    #[serde(default = "default_surface_points")]
    pub surface_points: usize,
}

fn default_reduction_dim() -> usize {
    6
}
fn default_mim_indices() -> usize {
    2
}
fn default_surface_points() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SummarizeConfig {
    /// Chain dump directory.
    pub chain: PathBuf,
    /// Any of erf, weights, overall, contrast, heatmap, waic.
    pub requests: Vec<String>,
    /// Dataset used for exposure quantiles (overall effect).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
}

fn default_grid_points() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImportanceGroup {
    pub label: String,
    /// Exposure names (`x<p>`); for lagged data every lag of the exposure.
    pub exposures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImportanceConfig {
    pub chain: PathBuf,
    pub data: PathBuf,
    /// Defaults to one group per exposure.
    #[serde(default)]
    pub groups: Vec<ImportanceGroup>,
    /// Fixed kernel bandwidth; omitted means Silverman's rule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
    /// Use at most this many draws (evenly spaced).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_draws: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub hyper: HyperParams,
    #[serde(default)]
    pub chain: ChainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<ScenarioConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub study: Option<StudyBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summarize: Option<SummarizeConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub importance: Option<ImportanceConfig>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Read a config file; relative paths inside it are resolved against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(d) = &mut self.data {
            fix(&mut d.path);
        }
        if let Some(s) = &mut self.summarize {
            fix(&mut s.chain);
            if let Some(d) = &mut s.data {
                fix(d);
            }
        }
        if let Some(i) = &mut self.importance {
            fix(&mut i.chain);
            fix(&mut i.data);
        }
    }

    pub fn model(&self) -> Result<&ModelConfig> {
        self.model.as_ref().ok_or_else(|| Error::Config("missing [model] table".into()))
    }

    pub fn data_path(&self) -> Result<&Path> {
        let p = &self.data.as_ref().ok_or_else(|| Error::Config("missing [data] table".into()))?.path;
        if !p.exists() {
            return cfg_err(format!("data file {} does not exist", p.display()));
        }
        Ok(p)
    }

    pub fn validate_fit(&self) -> Result<()> {
        self.chain.validate()?;
        self.model()?;
        self.data_path()?;
        Ok(())
    }

    pub fn scenario(&self) -> Result<SimScenario> {
        self.simulate
            .as_ref()
            .ok_or_else(|| Error::Config("missing [simulate] table".into()))?
            .scenario(self.chain.seed)
    }

    pub fn study_config(&self) -> Result<StudyConfig> {
        self.chain.validate()?;
        let b = self.study.as_ref().ok_or_else(|| Error::Config("missing [study] table".into()))?;
        let scenario = b.scenario.scenario(self.chain.seed)?;
        let estimators = b.estimators.iter().map(|e| Estimator::parse(e)).collect::<Result<Vec<_>>>()?;
        let mut cfg = StudyConfig::new(scenario, estimators, b.n_reps);
        cfg.n_iter = self.chain.n_iter;
        cfg.burn_in = self.chain.burn_in;
        cfg.thin = self.chain.thin;
        cfg.reduction_dim = b.reduction_dim;
        cfg.mim_indices = b.mim_indices;
        cfg.surface_points = b.surface_points;
        cfg.hyper = self.hyper.clone();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn summarize_config(&self) -> Result<&SummarizeConfig> {
        let s = self.summarize.as_ref().ok_or_else(|| Error::Config("missing [summarize] table".into()))?;
        if !s.chain.is_dir() {
            return cfg_err(format!("chain directory {} does not exist", s.chain.display()));
        }
        if let Some(d) = &s.data {
            if !d.exists() {
                return cfg_err(format!("data file {} does not exist", d.display()));
            }
        }
        Ok(s)
    }

    pub fn importance_config(&self) -> Result<&ImportanceConfig> {
        let s = self.importance.as_ref().ok_or_else(|| Error::Config("missing [importance] table".into()))?;
        if !s.chain.is_dir() {
            return cfg_err(format!("chain directory {} does not exist", s.chain.display()));
        }
        if !s.data.exists() {
            return cfg_err(format!("data file {} does not exist", s.data.display()));
        }
        if let Some(h) = s.bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                return cfg_err("bandwidth must be positive");
            }
        }
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_round_trips() {
        let text = r#"
[model]
kind = "dlnm"
n_exposures = 3
n_lags = 16
reduction_dim = 6

[hyper]
rw_sd = 0.5

[chain]
n_iter = 100
burn_in = 50
seed = 9
"#;
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.chain.seed, 9);
        assert_eq!(cfg.hyper.rw_sd, 0.5);
        let spec = cfg.model().unwrap().build_spec(4, &cfg.hyper).unwrap();
        assert_eq!(spec.theta_dim(), 6);
        assert_eq!(spec.truncation, 12);
        let back = RunConfig::parse(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::parse("[chain]\nn_itr = 5\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
