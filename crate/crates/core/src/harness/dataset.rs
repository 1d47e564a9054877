//! Loading model channels and aligning them to base items.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use crate::data_io::{
    load_manifest, load_vectors, Condition, EmbeddingSet, ItemRecord, Kind, Manifest, Split,
};
use crate::error::{Error, Result};
use crate::harness::config::{ExperimentConfig, ModelConfig};
use crate::simulator::{generate, sim_manifest};

/// Vectors of one model, every channel row-aligned to [`Dataset::base_records`].
#[derive(Debug, Clone)]
pub struct ModelChannels {
    pub base: Option<EmbeddingSet>,
    pub refinements: BTreeMap<Condition, EmbeddingSet>,
    pub text: Option<EmbeddingSet>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: Manifest,
    /// Base records of the query and gallery splits, in manifest order.
    pub base_records: Vec<ItemRecord>,
    pub models: HashMap<String, ModelChannels>,
}

impl Dataset {
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        self.base_records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn records(&self, indices: &[usize]) -> Vec<ItemRecord> {
        indices
            .iter()
            .map(|&i| self.base_records[i].clone())
            .collect()
    }

    pub fn model(&self, name: &str) -> Result<&ModelChannels> {
        self.models
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown model '{name}'")))
    }
}

fn eval_base_records(manifest: &Manifest) -> Vec<ItemRecord> {
    manifest
        .records()
        .iter()
        .filter(|r| r.kind == Kind::Base && r.split != Split::Train)
        .cloned()
        .collect()
}

/// Reorders a derived channel so row `i` belongs to `base[i]`. Rows keep
/// their own ids.
fn align_channel(
    set: &EmbeddingSet,
    manifest: &Manifest,
    base: &[ItemRecord],
    kind: Kind,
    condition: Condition,
    model: &str,
) -> Result<EmbeddingSet> {
    let row_of: HashMap<&str, usize> = set
        .item_order()
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let mut picks = Vec::with_capacity(base.len());
    for b in base {
        let mut derived = manifest.derived_from(&b.item_id, kind, condition);
        let what = if kind == Kind::Text {
            "text".to_string()
        } else {
            format!("refinement {condition}")
        };
        let rec = derived.next().ok_or_else(|| {
            Error::Pipeline(format!(
                "model '{model}': base item '{}' has no {what} record",
                b.item_id
            ))
        })?;
        if derived.next().is_some() {
            return Err(Error::Pipeline(format!(
                "model '{model}': base item '{}' has several {what} records",
                b.item_id
            )));
        }
        let row = row_of.get(rec.item_id.as_str()).ok_or_else(|| {
            Error::Pipeline(format!(
                "model '{model}': no vector row for '{}'",
                rec.item_id
            ))
        })?;
        picks.push(*row);
    }
    Ok(set.select(&picks))
}

fn base_subset(set: &EmbeddingSet, base: &[ItemRecord]) -> Result<EmbeddingSet> {
    let row_of: HashMap<&str, usize> = set
        .item_order()
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let picks = base
        .iter()
        .map(|b| {
            row_of
                .get(b.item_id.as_str())
                .copied()
                .ok_or_else(|| Error::Pipeline(format!("no base vector for '{}'", b.item_id)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(set.select(&picks))
}

fn resolve(dir: &Path, p: &Path) -> std::path::PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        dir.join(p)
    }
}

fn load_file_model(
    model: &ModelConfig,
    manifest: &Manifest,
    base: &[ItemRecord],
    dir: &Path,
) -> Result<ModelChannels> {
    let base_set = match &model.base {
        Some(p) => {
            let set = load_vectors(
                resolve(dir, p),
                &manifest.channel(Kind::Base, Condition::None),
            )?;
            Some(base_subset(&set, base)?)
        }
        None => None,
    };
    let mut refinements = BTreeMap::new();
    for (&cond, p) in &model.refinements {
        let set = load_vectors(resolve(dir, p), &manifest.channel(Kind::Refinement, cond))?;
        refinements.insert(
            cond,
            align_channel(&set, manifest, base, Kind::Refinement, cond, &model.name)?,
        );
    }
    let text = match &model.text {
        Some(p) => {
            let set = load_vectors(
                resolve(dir, p),
                &manifest.channel(Kind::Text, Condition::None),
            )?;
            Some(align_channel(
                &set,
                manifest,
                base,
                Kind::Text,
                Condition::None,
                &model.name,
            )?)
        }
        None => None,
    };
    Ok(ModelChannels {
        base: base_set,
        refinements,
        text,
    })
}

fn text_id(base_id: &str) -> String {
    format!("{base_id}_text")
}

/// Loads every model of the config. Relative paths resolve against `dir`.
pub fn load_dataset(config: &ExperimentConfig, dir: &Path) -> Result<Dataset> {
    if let Some(manifest_path) = &config.dataset.manifest {
        let manifest = load_manifest(resolve(dir, manifest_path))?;
        let base = eval_base_records(&manifest);
        let mut models = HashMap::new();
        for m in &config.dataset.models {
            models.insert(m.name.clone(), load_file_model(m, &manifest, &base, dir)?);
        }
        return Ok(Dataset {
            manifest,
            base_records: base,
            models,
        });
    }

    // Simulated: all models share one layout; a model's base vectors double as
    // its text channel (one description per base item).
    let first = config
        .dataset
        .models
        .first()
        .ok_or_else(|| Error::Config("simulated dataset declares no models".into()))?;
    let layout = config.sim_spec(first).expect("validated sim config");
    let sim = sim_manifest(&layout)?;
    let base = eval_base_records(&sim);
    let mut records = sim.into_records();
    let text_records: Vec<ItemRecord> = base
        .iter()
        .map(|b| ItemRecord::derived(text_id(&b.item_id), b, Kind::Text, Condition::None))
        .collect();
    records.extend(text_records);
    let manifest = Manifest::new(records)?;

    let mut models = HashMap::new();
    for m in &config.dataset.models {
        let spec = config.sim_spec(m).expect("validated sim config");
        let data = generate(&spec)?;
        let refinements = Condition::REFINEMENTS
            .iter()
            .zip(data.refinements.iter())
            .map(|(c, s)| (*c, s.clone()))
            .collect();
        let text_order = data
            .base
            .item_order()
            .iter()
            .map(|id| text_id(id))
            .collect();
        let text = data.base.clone().with_item_order(text_order)?;
        models.insert(
            m.name.clone(),
            ModelChannels {
                base: Some(data.base),
                refinements,
                text: Some(text),
            },
        );
    }
    Ok(Dataset {
        manifest,
        base_records: base,
        models,
    })
}
