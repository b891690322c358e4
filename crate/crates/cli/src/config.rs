//! Run configuration: a strict JSON document.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use vinerisk_core::copulas::Family;
use vinerisk_core::margins::Innovation;
use vinerisk_core::risk::RiskMeasure;
use vinerisk_core::rolling::{RollingSpec, Strategy, WindowPlan};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataMode {
    #[default]
    Returns,
    Prices,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Windows {
    /// Marginal fitting-window length.
    #[serde(rename = "Gamma")]
    pub fit_margin: usize,
    /// Marginal usage-window length.
    #[serde(rename = "gamma")]
    pub use_margin: usize,
    /// Vine fitting-window length.
    #[serde(rename = "Psi")]
    pub fit_vine: usize,
    /// Vine usage-window length.
    #[serde(rename = "kappa")]
    pub use_vine: usize,
}

fn default_alpha() -> Vec<f64> {
    vec![0.01, 0.05]
}

fn default_measures() -> Vec<String> {
    vec!["VaR".into(), "ES_mean".into()]
}

fn default_strategies() -> Vec<String> {
    vec!["unconditional".into()]
}

fn default_families() -> Vec<String> {
    vec!["all".into()]
}

fn default_samples() -> usize {
    10_000
}

fn default_n_mc() -> usize {
    1000
}

fn default_n_boot() -> usize {
    vinerisk_core::backtest::DEFAULT_BOOT
}

fn default_eta() -> f64 {
    0.05
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// CSV file, relative to the config file's directory unless absolute.
    pub data: PathBuf,
    #[serde(default)]
    pub mode: DataMode,
    pub assets: Vec<String>,
    pub weights: Vec<f64>,
    #[serde(default)]
    pub conditioning: Vec<String>,
    pub windows: Windows,
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    #[serde(default = "default_alpha")]
    pub alpha: Vec<f64>,
    #[serde(default, rename = "alpha_I")]
    pub alpha_i: Vec<f64>,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<String>,
    #[serde(default = "default_measures")]
    pub measures: Vec<String>,
    #[serde(default = "default_families")]
    pub families: Vec<String>,
    #[serde(default)]
    pub cutoff_depth: Option<usize>,
    #[serde(default = "default_innovation")]
    pub innovation: Innovation,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub workers: Option<String>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub raw_weights: bool,
    #[serde(default = "default_n_mc")]
    pub n_mc: usize,
    #[serde(default = "default_n_boot")]
    pub n_boot: usize,
    /// Confidence of the three-zone comparative classification.
    #[serde(default = "default_eta")]
    pub eta: f64,
}

fn default_innovation() -> Innovation {
    Innovation::StudentT
}

/// Worker counts for the window level and the day level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Workers {
    pub level1: usize,
    pub level2: usize,
}

impl FromStr for Workers {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        let bad = || CliError::Config(format!("workers must look like L1xL2 with positive integers, got '{s}'"));
        let (a, b) = s.trim().split_once(['x', 'X']).ok_or_else(bad)?;
        let level1: usize = a.trim().parse().map_err(|_| bad())?;
        let level2: usize = b.trim().parse().map_err(|_| bad())?;
        if level1 == 0 || level2 == 0 {
            return Err(bad());
        }
        Ok(Workers { level1, level2 })
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if cfg.data.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.data = dir.join(&cfg.data);
            }
        }
        Ok(cfg)
    }

    pub fn families(&self) -> CliResult<Vec<Family>> {
        let mut out = Vec::new();
        for name in &self.families {
            if name.eq_ignore_ascii_case("all") {
                out.extend(Family::ALL);
                continue;
            }
            let f = Family::from_str(name).map_err(|e| CliError::Config(e.to_string()))?;
            out.push(f);
        }
        let mut dedup = Vec::new();
        for f in out {
            if !dedup.contains(&f) {
                dedup.push(f);
            }
        }
        Ok(dedup)
    }

    pub fn strategy_list(&self) -> CliResult<Vec<Strategy>> {
        let mut out = Vec::new();
        for s in &self.strategies {
            let k = Strategy::parse(s).ok_or_else(|| {
                CliError::Config(format!(
                    "unknown strategy '{s}' (expected unconditional, quantile, prior_residual or realized_residual)"
                ))
            })?;
            if out.contains(&k) {
                return Err(CliError::Config(format!("strategy '{s}' listed twice")));
            }
            out.push(k);
        }
        Ok(out)
    }

    pub fn measure_list(&self) -> CliResult<Vec<RiskMeasure>> {
        let mut out = Vec::new();
        for s in &self.measures {
            let m = RiskMeasure::parse(s).ok_or_else(|| {
                CliError::Config(format!("unknown measure '{s}' (expected VaR, ES_mean, ES_median or ES_mc)"))
            })?;
            if !out.contains(&m) {
                out.push(m);
            }
        }
        Ok(out)
    }

    /// Checks that do not need the data.
    pub fn check_static(&self) -> CliResult<()> {
        if self.assets.is_empty() {
            return Err(CliError::Config("no assets listed".into()));
        }
        let mut names: Vec<&String> = self.assets.iter().chain(&self.conditioning).collect();
        names.sort();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(CliError::Config(format!("column '{}' is listed twice", w[0])));
        }
        if self.conditioning.len() > 2 {
            return Err(CliError::Config("at most two conditioning columns are supported".into()));
        }
        if self.weights.len() != self.assets.len() {
            return Err(CliError::Config(format!(
                "{} weights for {} assets",
                self.weights.len(),
                self.assets.len()
            )));
        }
        if !(self.eta > 0.0 && self.eta < 0.5) {
            return Err(CliError::Config(format!("eta = {} outside (0, 0.5)", self.eta)));
        }
        if self.n_boot == 0 {
            return Err(CliError::Config("n_boot must be positive".into()));
        }
        self.families()?;
        self.strategy_list()?;
        self.measure_list()?;
        if let Some(w) = &self.workers {
            w.parse::<Workers>()?;
        }
        Ok(())
    }

    /// Build the engine specification for a panel of `total` observations.
    pub fn rolling_spec(&self, total: usize) -> CliResult<RollingSpec> {
        self.check_static()?;
        let w = &self.windows;
        let plan = WindowPlan::new(total, w.fit_margin, w.use_margin, w.fit_vine, w.use_vine)?;
        Ok(RollingSpec {
            plan,
            weights: self.weights.clone(),
            raw_weights: self.raw_weights,
            families: self.families()?,
            n_samples: self.n_samples,
            alphas: self.alpha.clone(),
            measures: self.measure_list()?,
            strategies: self.strategy_list()?,
            alpha_i: self.alpha_i.clone(),
            cutoff_depth: self.cutoff_depth,
            innovation: self.innovation,
            n_mc: self.n_mc,
            seed: self.seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn workers_parse() {
        assert_eq!("2x4".parse::<Workers>().unwrap(), Workers { level1: 2, level2: 4 });
        assert!("0x4".parse::<Workers>().is_err());
        assert!("4".parse::<Workers>().is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = r#"{"data":"x.csv","assets":["A"],"weights":[1],
            "windows":{"Gamma":300,"gamma":50,"Psi":300,"kappa":50},"bogus":1}"#;
        let e = serde_json::from_str::<RunConfig>(text).unwrap_err();
        assert!(e.to_string().contains("bogus"));
    }
}
