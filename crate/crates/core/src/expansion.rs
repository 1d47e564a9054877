//! Neighbor-average query expansion.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_io::{row_norm, EmbeddingSet};
use crate::error::{Error, Result};
use crate::ops::{cosine_distance_matrix, rank_row};

pub const DEFAULT_K: usize = 5;
pub const DEFAULT_ALPHA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpansionParams {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_k() -> usize {
    DEFAULT_K
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

impl Default for ExpansionParams {
    fn default() -> Self {
        ExpansionParams {
            k: DEFAULT_K,
            alpha: DEFAULT_ALPHA,
        }
    }
}

/// `normalize(alpha * q + (1 - alpha) * mean(k nearest gallery rows))` per query.
pub fn expand_queries(
    queries: &EmbeddingSet,
    gallery: &EmbeddingSet,
    k: usize,
    alpha: f64,
) -> Result<EmbeddingSet> {
    expand_queries_excluding(queries, gallery, k, alpha, None)
}

/// As [`expand_queries`]; gallery rows flagged in `excluded` never enter the neighbor mean.
pub fn expand_queries_excluding(
    queries: &EmbeddingSet,
    gallery: &EmbeddingSet,
    k: usize,
    alpha: f64,
    excluded: Option<&[bool]>,
) -> Result<EmbeddingSet> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidParam(format!("alpha {alpha} outside [0, 1]")));
    }
    if let Some(ex) = excluded {
        if ex.len() != gallery.count() {
            return Err(Error::Shape(format!(
                "{} exclusion flags for {} gallery rows",
                ex.len(),
                gallery.count()
            )));
        }
    }
    let eligible = excluded.map_or(gallery.count(), |ex| ex.iter().filter(|e| !**e).count());
    if k == 0 || k > eligible {
        return Err(Error::InvalidParam(format!(
            "expansion k={k} outside 1..={eligible} eligible gallery rows"
        )));
    }
    let dist = cosine_distance_matrix(queries, gallery)?;
    if alpha == 1.0 {
        return Ok(queries.clone());
    }

    let dim = queries.dim();
    let rows: Vec<Result<Vec<f32>>> = (0..queries.count())
        .into_par_iter()
        .map(|q| {
            let neighbors = rank_row(dist.row(q))
                .into_iter()
                .filter(|&g| excluded.is_none_or(|ex| !ex[g]))
                .take(k);
            let mut mean = vec![0f64; dim];
            for g in neighbors {
                for (m, &v) in mean.iter_mut().zip(gallery.row(g)) {
                    *m += f64::from(v);
                }
            }
            let blended: Vec<f64> = queries
                .row(q)
                .iter()
                .zip(&mean)
                .map(|(&v, m)| alpha * f64::from(v) + (1.0 - alpha) * m / k as f64)
                .collect();
            let norm = blended.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm <= f64::EPSILON {
                return Err(Error::ZeroNorm {
                    row: q,
                    item_id: format!("{} (expansion cancelled out)", queries.item_order()[q]),
                });
            }
            Ok(blended.iter().map(|v| (v / norm) as f32).collect())
        })
        .collect();

    let mut data = Vec::with_capacity(queries.count() * dim);
    for row in rows {
        data.extend(row?);
    }
    debug_assert!(data
        .chunks_exact(dim)
        .all(|r| (row_norm(r) - 1.0).abs() < 1e-4));
    Ok(EmbeddingSet::from_parts_normalized(
        dim,
        data,
        queries.item_order().to_vec(),
    ))
}
