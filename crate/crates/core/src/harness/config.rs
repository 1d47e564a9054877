//! Experiment configuration (TOML).
//!
//! ```toml
//! [dataset]
//! manifest = "manifest.jsonl"          # file mode
//!
//! [[dataset.models]]
//! name = "PAT"
//! base = "pat_base.vec"
//! refinements = { A = "pat_A.vec", B = "pat_B.vec", C = "pat_C.vec" }
//! text = "sb_text.vec"                 # optional
//!
//! [[runs]]
//! label = "baseline"
//! base = "PAT"
//! fusion = { method = "none", sources = ["base"] }
//! rerank = { k1 = 20, k2 = 6, lambda = 0.3 }
//! ```
//!
//! In simulator mode `[dataset.sim]` replaces `manifest` and every model
//! carries a `sim` table instead of vector paths. See `configs/` for complete
//! examples.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data_io::Condition;
use crate::error::{Error, Result};
use crate::eval::{NoPositivePolicy, Protocol};
use crate::expansion::ExpansionParams;
use crate::fusion::{FusionSpec, SourceTag};
use crate::rerank::RerankParams;
use crate::simulator::SimSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub runs: Vec<RunSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimLayout>,
    pub models: Vec<ModelConfig>,
}

/// Item layout shared by every simulated model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimLayout {
    pub n_identities: usize,
    pub items_per_identity: usize,
    #[serde(default = "one")]
    pub queries_per_identity: usize,
}

fn one() -> usize {
    1
}

/// Per-model generator parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimModel {
    pub dim: usize,
    pub sigma_base: f64,
    pub rho: f64,
    pub shift_magnitude: f64,
    pub sigma_refinement: f64,
    pub seed: u64,
}

/// One embedding model: a named bundle of vector channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub refinements: BTreeMap<Condition, PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimModel>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Fuse,
    Expand,
    Rerank,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Fuse => "fuse",
            Stage::Expand => "expand",
            Stage::Rerank => "rerank",
        })
    }
}

pub fn default_pipeline() -> Vec<Stage> {
    vec![Stage::Fuse, Stage::Expand, Stage::Rerank]
}

fn default_fusion() -> FusionSpec {
    FusionSpec::none()
}

/// One row of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub label: String,
    /// Model supplying base vectors.
    pub base: String,
    /// Model supplying refinement vectors (conditions chosen by `fusion.sources`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refinements: Option<String>,
    /// Model supplying text vectors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default = "default_fusion")]
    pub fusion: FusionSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expansion: Option<ExpansionParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rerank: Option<RerankParams>,
    #[serde(default)]
    pub protocol: Protocol,
    #[serde(default)]
    pub no_positive: NoPositivePolicy,
    #[serde(default = "default_pipeline")]
    pub pipeline: Vec<Stage>,
}

impl RunSpec {
    /// Conditions whose refinements this run consumes.
    pub fn conditions(&self) -> Vec<Condition> {
        self.fusion
            .sources
            .iter()
            .filter_map(|s| match s {
                SourceTag::RefinementA => Some(Condition::A),
                SourceTag::RefinementB => Some(Condition::B),
                SourceTag::RefinementC => Some(Condition::C),
                _ => None,
            })
            .collect()
    }

    pub fn uses_text(&self) -> bool {
        self.fusion.sources.contains(&SourceTag::Text)
    }

    fn validate(&self, models: &HashSet<&str>) -> Result<()> {
        let ctx = |m: String| Error::Config(format!("run '{}': {m}", self.label));
        self.fusion.validate().map_err(|e| ctx(e.to_string()))?;
        let check_model = |name: &str| {
            if models.contains(name) {
                Ok(())
            } else {
                Err(ctx(format!("unknown model '{name}'")))
            }
        };
        check_model(&self.base)?;
        match (&self.refinements, self.conditions().is_empty()) {
            (Some(m), false) => check_model(m)?,
            (None, false) => {
                return Err(ctx("refinement sources need a `refinements` model".into()))
            }
            (Some(_), true) => {
                return Err(ctx(
                    "`refinements` model set but no refinement source fused".into(),
                ))
            }
            (None, true) => {}
        }
        match (&self.text, self.uses_text()) {
            (Some(m), true) => check_model(m)?,
            (None, true) => return Err(ctx("text source needs a `text` model".into())),
            (Some(_), false) => {
                return Err(ctx(
                    "`text` model set but text is not a fusion source".into()
                ))
            }
            (None, false) => {}
        }
        if let Some(p) = &self.rerank {
            p.validate().map_err(|e| ctx(e.to_string()))?;
        }
        if let Some(e) = &self.expansion {
            if e.k == 0 || !(0.0..=1.0).contains(&e.alpha) {
                return Err(ctx(format!(
                    "invalid expansion k={} alpha={}",
                    e.k, e.alpha
                )));
            }
        }
        let mut seen = HashSet::new();
        for s in &self.pipeline {
            if !seen.insert(*s) {
                return Err(ctx(format!("stage '{s}' listed twice")));
            }
        }
        if !seen.contains(&Stage::Fuse) {
            return Err(ctx("pipeline must contain 'fuse'".into()));
        }
        if self.expansion.is_some() && !seen.contains(&Stage::Expand) {
            return Err(ctx(
                "expansion configured but 'expand' is not in the pipeline".into(),
            ));
        }
        if self.rerank.is_some() && !seen.contains(&Stage::Rerank) {
            return Err(ctx(
                "rerank configured but 'rerank' is not in the pipeline".into()
            ));
        }
        if let Some(pos) = self.pipeline.iter().position(|s| *s == Stage::Rerank) {
            if pos + 1 != self.pipeline.len() {
                return Err(Error::Pipeline(format!(
                    "run '{}': rerank produces distances and must be the last stage",
                    self.label
                )));
            }
        }
        Ok(())
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].lines().count().max(1))
                .unwrap_or(0);
            Error::Parse {
                path: origin.to_path_buf(),
                line,
                message: e.message().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        match (&d.manifest, &d.sim) {
            (Some(_), Some(_)) => {
                return Err(Error::Config("dataset sets both manifest and sim".into()))
            }
            (None, None) => {
                return Err(Error::Config(
                    "dataset needs a manifest or a sim layout".into(),
                ))
            }
            _ => {}
        }
        let mut names = HashSet::new();
        for m in &d.models {
            if !names.insert(m.name.as_str()) {
                return Err(Error::Config(format!("model '{}' declared twice", m.name)));
            }
            let has_files = m.base.is_some() || !m.refinements.is_empty() || m.text.is_some();
            match (d.sim.is_some(), has_files, &m.sim) {
                (true, false, Some(_)) | (false, _, None) => {}
                (true, _, _) => {
                    return Err(Error::Config(format!(
                        "model '{}': simulated datasets need a sim table and no vector paths",
                        m.name
                    )))
                }
                (false, _, Some(_)) => {
                    return Err(Error::Config(format!(
                        "model '{}': sim table given for a file dataset",
                        m.name
                    )))
                }
            }
            if m.refinements.contains_key(&Condition::None) {
                return Err(Error::Config(format!(
                    "model '{}': refinement conditions are A, B or C",
                    m.name
                )));
            }
        }
        if self.runs.is_empty() {
            return Err(Error::Config("experiment has no runs".into()));
        }
        let mut labels = HashSet::new();
        for run in &self.runs {
            if !labels.insert(run.label.as_str()) {
                return Err(Error::Config(format!(
                    "run label '{}' is not unique",
                    run.label
                )));
            }
            run.validate(&names)?;
        }
        Ok(())
    }

    /// Replaces every simulated model's seed with `seed + model index`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        for (i, m) in self.dataset.models.iter_mut().enumerate() {
            if let Some(sim) = &mut m.sim {
                sim.seed = seed.wrapping_add(i as u64);
            }
        }
        self
    }

    pub fn model(&self, name: &str) -> Option<&ModelConfig> {
        self.dataset.models.iter().find(|m| m.name == name)
    }

    /// Full generator spec for a simulated model.
    pub fn sim_spec(&self, model: &ModelConfig) -> Option<SimSpec> {
        let layout = self.dataset.sim.as_ref()?;
        let sim = model.sim.as_ref()?;
        Some(SimSpec {
            n_identities: layout.n_identities,
            items_per_identity: layout.items_per_identity,
            queries_per_identity: layout.queries_per_identity,
            dim: sim.dim,
            sigma_base: sim.sigma_base,
            rho: sim.rho,
            shift_magnitude: sim.shift_magnitude,
            sigma_refinement: sim.sigma_refinement,
            seed: sim.seed,
        })
    }
}
