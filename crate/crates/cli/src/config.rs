use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mbt::dataset::{CsvSchema, FeaturePipeline};
use mbt::reconcile::{build_summation_matrix, hierarchy_from_json, Hierarchy};
use mbt::{BoostConfig, LossResponseSpec, TreeConfig};
use serde::{Deserialize, Serialize};

/// The training configuration document.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub data: CsvSchema,
    pub features: FeatureSection,
    pub model: ModelSection,
    pub boost: BoostSection,
    pub tree: TreeConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSection {
    /// Lag steps of the target series; absent means CSV columns are used as features.
    pub lags: Option<Vec<usize>>,
    pub horizon: usize,
    pub calendar: bool,
    pub step_ahead: bool,
}

impl Default for FeatureSection {
    fn default() -> Self {
        Self {
            lags: None,
            horizon: 1,
            calendar: false,
            step_ahead: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HierarchySource {
    File(PathBuf),
    Inline(BTreeMap<String, Vec<String>>),
}

/// Loss/response choice. Matrices are derived from the data, so only their
/// parameters appear here.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSection {
    L2Constant {
        lambda: f64,
    },
    L2Smooth {
        lambda: f64,
    },
    L2Fourier {
        lambda: f64,
        wavenumbers: Vec<usize>,
    },
    L2Hierarchical {
        lambda: f64,
        hierarchy: HierarchySource,
    },
    L2Linear {
        lambda: f64,
    },
    QuantileSmoothed {
        lambda: f64,
        taus: Vec<f64>,
        refit: bool,
    },
    QuantileLinquad {
        lambda: f64,
        taus: Vec<f64>,
        k: f64,
        refit: bool,
    },
}

impl Default for ModelSection {
    fn default() -> Self {
        Self::L2Constant { lambda: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoostSection {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub leaf_penalty: f64,
    pub seed: u64,
    /// Hold out this trailing fraction of rows and stop when its loss stops
    /// improving. Off by default.
    pub validation_fraction: Option<f64>,
}

impl Default for BoostSection {
    fn default() -> Self {
        let d = BoostConfig::<f64>::default();
        Self {
            n_rounds: d.n_rounds,
            learning_rate: d.learning_rate,
            leaf_penalty: d.leaf_penalty,
            seed: d.seed,
            validation_fraction: None,
        }
    }
}

pub fn load_config(path: &Path) -> Result<Config> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    parse_config(&text).with_context(|| format!("config {}", path.display()))
}

pub fn parse_config(text: &str) -> Result<Config> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: Config = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        anyhow::anyhow!("schema violation at `{path}`: {}", e.into_inner())
    })?;
    Ok(cfg)
}

impl Config {
    pub fn pipeline(&self) -> FeaturePipeline {
        FeaturePipeline {
            csv: self.data.clone(),
            lags: self.features.lags.clone(),
            horizon: self.features.horizon,
            calendar: self.features.calendar,
            step_ahead: self.features.step_ahead,
        }
    }

    /// Hierarchy of a hierarchical model, resolving file paths against `base`.
    pub fn hierarchy(&self, base: &Path) -> Result<Option<Hierarchy<f64>>> {
        match &self.model {
            ModelSection::L2Hierarchical { hierarchy, .. } => Ok(Some(match hierarchy {
                HierarchySource::Inline(map) => build_summation_matrix(map)?,
                HierarchySource::File(p) => {
                    let p = if p.is_absolute() { p.clone() } else { base.join(p) };
                    let text = std::fs::read_to_string(&p)
                        .with_context(|| format!("reading hierarchy {}", p.display()))?;
                    hierarchy_from_json(&text)?
                }
            })),
            _ => Ok(None),
        }
    }

    /// Fills target names from the hierarchy when none are given.
    pub fn resolve_targets(&mut self, base: &Path) -> Result<()> {
        if let Some(h) = self.hierarchy(base)? {
            if self.data.targets.is_empty() {
                self.data.targets = h.names.clone();
            } else if self.data.targets != h.names {
                bail!(
                    "data.targets must list the hierarchy series in summation-matrix order: {}",
                    h.names.join(", ")
                );
            }
        }
        if self.data.targets.is_empty() {
            bail!("data.targets must name at least one target column");
        }
        Ok(())
    }

    /// Boosting configuration for a dataset with `n_t` targets.
    pub fn boost_config(&self, n_t: usize, base: &Path) -> Result<BoostConfig<f64>> {
        let spec = match &self.model {
            ModelSection::L2Constant { lambda } => LossResponseSpec::l2_constant(*lambda),
            ModelSection::L2Smooth { lambda } => LossResponseSpec::l2_smooth(n_t, *lambda)?,
            ModelSection::L2Fourier { lambda, wavenumbers } => LossResponseSpec::l2_fourier(n_t, wavenumbers, *lambda)?,
            ModelSection::L2Hierarchical { lambda, .. } => {
                let h = self.hierarchy(base)?.expect("hierarchical section");
                LossResponseSpec::l2_hierarchical(h.s, *lambda)
            }
            ModelSection::L2Linear { lambda } => LossResponseSpec::l2_linear(*lambda),
            ModelSection::QuantileSmoothed { lambda, taus, refit } => {
                LossResponseSpec::quantile_smoothed(taus.clone(), *lambda, *refit)
            }
            ModelSection::QuantileLinquad { lambda, taus, k, refit } => {
                LossResponseSpec::quantile_linquad(taus.clone(), *k, *lambda, *refit)
            }
        };
        let cfg = BoostConfig {
            n_rounds: self.boost.n_rounds,
            learning_rate: self.boost.learning_rate,
            leaf_penalty: self.boost.leaf_penalty,
            tree: self.tree,
            spec,
            seed: self.boost.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses `1,2,5-8` into a sorted, deduplicated list.
pub fn parse_lags(s: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (usize, usize) = (a.trim().parse()?, b.trim().parse()?);
                if a > b {
                    bail!("empty lag range `{part}`");
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().with_context(|| format!("bad lag `{part}`"))?),
        }
    }
    out.sort_unstable();
    out.dedup();
    if out.is_empty() {
        bail!("no lags given");
    }
    Ok(out)
}
