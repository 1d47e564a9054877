//! Synthetic embedding datasets with controllable identity fidelity and
//! domain shift.
//!
//! Every identity gets a unit centroid drawn uniformly on the sphere. Base
//! vectors scatter around it with isotropic Gaussian noise. Refinements blend
//! the true centroid with a wrong identity's centroid (`rho` sets the mix),
//! then add a condition-wide shift direction and their own noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data_io::{ClassLabel, Condition, EmbeddingSet, ItemRecord, Kind, Manifest, Split};
use crate::error::{Error, Result};
use crate::ops::l2_normalize;

fn default_queries_per_identity() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    pub n_identities: usize,
    pub items_per_identity: usize,
    pub dim: usize,
    /// Intra-identity noise of base vectors.
    pub sigma_base: f64,
    /// Identity fidelity of refinements, in `[0, 1]`.
    pub rho: f64,
    /// Norm of the per-condition shift vector.
    pub shift_magnitude: f64,
    pub sigma_refinement: f64,
    pub seed: u64,
    /// Leading items of each identity that go to the query split; the rest form the gallery.
    #[serde(default = "default_queries_per_identity")]
    pub queries_per_identity: usize,
}

impl SimSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_identities == 0 || self.dim == 0 {
            return Err(Error::InvalidParam(
                "n_identities and dim must be positive".into(),
            ));
        }
        if self.items_per_identity < 2 {
            return Err(Error::InvalidParam(format!(
                "items_per_identity={} cannot be split into query and gallery",
                self.items_per_identity
            )));
        }
        if self.queries_per_identity == 0 || self.queries_per_identity >= self.items_per_identity {
            return Err(Error::InvalidParam(format!(
                "queries_per_identity={} must leave at least one gallery item out of {}",
                self.queries_per_identity, self.items_per_identity
            )));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::InvalidParam(format!(
                "rho {} outside [0, 1]",
                self.rho
            )));
        }
        for (name, v) in [
            ("sigma_base", self.sigma_base),
            ("shift_magnitude", self.shift_magnitude),
            ("sigma_refinement", self.sigma_refinement),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidParam(format!(
                    "{name}={v} must be finite and nonnegative"
                )));
            }
        }
        Ok(())
    }
}

/// Output of [`generate`]. Vector sets are aligned to the channel order of the manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct SimDataset {
    pub manifest: Manifest,
    pub base: EmbeddingSet,
    /// Refinements for conditions A, B and C.
    pub refinements: [EmbeddingSet; 3],
}

impl SimDataset {
    pub fn refinement(&self, condition: Condition) -> Option<&EmbeddingSet> {
        let i = Condition::REFINEMENTS
            .iter()
            .position(|c| *c == condition)?;
        Some(&self.refinements[i])
    }
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v = gaussian(rng, dim);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn base_item_id(identity: usize, item: usize) -> String {
    format!("id{identity:04}_{item:02}")
}

fn class_for(identity: usize) -> ClassLabel {
    [
        ClassLabel::TrashBin,
        ClassLabel::WasteContainer,
        ClassLabel::Crosswalk,
    ][identity % 3]
}

/// Manifest of a simulated dataset; depends on counts only, never on the seed.
pub fn sim_manifest(spec: &SimSpec) -> Result<Manifest> {
    spec.validate()?;
    let mut base = Vec::with_capacity(spec.n_identities * spec.items_per_identity);
    for i in 0..spec.n_identities {
        for j in 0..spec.items_per_identity {
            let split = if j < spec.queries_per_identity {
                Split::Query
            } else {
                Split::Gallery
            };
            let mut rec = ItemRecord::base(base_item_id(i, j), format!("{i}"), split);
            rec.camera_id = Some(format!("cam{j}"));
            rec.class_label = class_for(i);
            base.push(rec);
        }
    }
    let mut records = base.clone();
    for cond in Condition::REFINEMENTS {
        for b in &base {
            records.push(ItemRecord::derived(
                format!("{}_{cond}", b.item_id),
                b,
                Kind::Refinement,
                cond,
            ));
        }
    }
    Manifest::new(records)
}

/// Draws a dataset. Fully determined by `spec` (including its seed).
pub fn generate(spec: &SimSpec) -> Result<SimDataset> {
    let manifest = sim_manifest(spec)?;
    let dim = spec.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let centroids: Vec<Vec<f64>> = (0..spec.n_identities)
        .map(|_| unit_vector(&mut rng, dim))
        .collect();
    let shifts: Vec<Vec<f64>> = (0..3).map(|_| unit_vector(&mut rng, dim)).collect();

    let n_items = spec.n_identities * spec.items_per_identity;
    let mut base = Vec::with_capacity(n_items * dim);
    for c in &centroids {
        for _ in 0..spec.items_per_identity {
            let noise = gaussian(&mut rng, dim);
            base.extend(
                c.iter()
                    .zip(&noise)
                    .map(|(m, z)| (m + spec.sigma_base * z) as f32),
            );
        }
    }

    let mut refinements = Vec::with_capacity(3);
    for shift in &shifts {
        let mut data = Vec::with_capacity(n_items * dim);
        for (identity, c) in centroids.iter().enumerate() {
            for _ in 0..spec.items_per_identity {
                let wrong = if spec.n_identities > 1 {
                    let mut k = rng.random_range(0..spec.n_identities - 1);
                    if k >= identity {
                        k += 1;
                    }
                    centroids[k].clone()
                } else {
                    unit_vector(&mut rng, dim)
                };
                let noise = gaussian(&mut rng, dim);
                data.extend((0..dim).map(|d| {
                    (spec.rho * c[d]
                        + (1.0 - spec.rho) * wrong[d]
                        + spec.shift_magnitude * shift[d]
                        + spec.sigma_refinement * noise[d]) as f32
                }));
            }
        }
        refinements.push(data);
    }

    let base_records = manifest.channel(Kind::Base, Condition::None);
    let base_ids: Vec<String> = base_records.iter().map(|r| r.item_id.clone()).collect();
    let base = l2_normalize(&EmbeddingSet::new(dim, base, base_ids)?)?;
    let mut sets = Vec::with_capacity(3);
    for (data, cond) in refinements.into_iter().zip(Condition::REFINEMENTS) {
        let ids = manifest
            .channel(Kind::Refinement, cond)
            .into_iter()
            .map(|r| r.item_id)
            .collect();
        sets.push(l2_normalize(&EmbeddingSet::new(dim, data, ids)?)?);
    }
    let refinements: [EmbeddingSet; 3] = sets.try_into().expect("three conditions");
    Ok(SimDataset {
        manifest,
        base,
        refinements,
    })
}
