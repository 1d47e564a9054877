//! Normalization, distance kernels and ranking.
//!
//! Distances (not similarities) are passed between stages; for cosine the
//! conversion is `d = 1 - s`. Dot products accumulate in `f64` and are stored
//! as `f32`. Row-parallel kernels give the same bits regardless of thread count.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_io::{row_norm, EmbeddingSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    CosineDistance,
    Euclidean,
}

/// Slack allowed outside `[0, 2]` for cosine distances.
const COSINE_RANGE_SLACK: f32 = 1e-5;

/// Query x gallery dissimilarities, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n_query: usize,
    n_gallery: usize,
    values: Vec<f32>,
    metric: Metric,
}

impl DistanceMatrix {
    pub fn new(n_query: usize, n_gallery: usize, values: Vec<f32>, metric: Metric) -> Result<Self> {
        if values.len() != n_query * n_gallery {
            return Err(Error::Shape(format!(
                "{} values for a {n_query}x{n_gallery} matrix",
                values.len()
            )));
        }
        for (pos, &v) in values.iter().enumerate() {
            let bad = !v.is_finite()
                || (metric == Metric::CosineDistance
                    && !(-COSINE_RANGE_SLACK..=2.0 + COSINE_RANGE_SLACK).contains(&v))
                || (metric == Metric::Euclidean && v < 0.0);
            if bad {
                return Err(Error::InvalidParam(format!(
                    "distance {v} at ({}, {}) is invalid for {metric:?}",
                    pos / n_gallery.max(1),
                    pos % n_gallery.max(1)
                )));
            }
        }
        Ok(DistanceMatrix {
            n_query,
            n_gallery,
            values,
            metric,
        })
    }

    pub(crate) fn from_parts(
        n_query: usize,
        n_gallery: usize,
        values: Vec<f32>,
        metric: Metric,
    ) -> Self {
        debug_assert_eq!(values.len(), n_query * n_gallery);
        DistanceMatrix {
            n_query,
            n_gallery,
            values,
            metric,
        }
    }

    pub fn n_query(&self) -> usize {
        self.n_query
    }

    pub fn n_gallery(&self) -> usize {
        self.n_gallery
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, q: usize, g: usize) -> f32 {
        self.values[q * self.n_gallery + g]
    }

    pub fn row(&self, q: usize) -> &[f32] {
        &self.values[q * self.n_gallery..(q + 1) * self.n_gallery]
    }

    pub fn same_shape(&self, other: &DistanceMatrix) -> bool {
        self.n_query == other.n_query && self.n_gallery == other.n_gallery
    }

    pub fn transpose(&self) -> DistanceMatrix {
        let mut values = Vec::with_capacity(self.values.len());
        for g in 0..self.n_gallery {
            for q in 0..self.n_query {
                values.push(self.get(q, g));
            }
        }
        DistanceMatrix::from_parts(self.n_gallery, self.n_query, values, self.metric)
    }

    /// Applies `f` elementwise, keeping shape and metric.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<DistanceMatrix> {
        DistanceMatrix::new(
            self.n_query,
            self.n_gallery,
            self.values.iter().map(|&v| f(v)).collect(),
            self.metric,
        )
    }
}

/// Scales every row to unit L2 norm.
pub fn l2_normalize(set: &EmbeddingSet) -> Result<EmbeddingSet> {
    let dim = set.dim();
    let mut data = set.data().to_vec();
    for (i, row) in data.chunks_exact_mut(dim).enumerate() {
        let norm = row_norm(row);
        if norm == 0.0 {
            return Err(Error::ZeroNorm {
                row: i,
                item_id: set.item_order()[i].clone(),
            });
        }
        for v in row.iter_mut() {
            *v = (f64::from(*v) / norm) as f32;
        }
    }
    Ok(EmbeddingSet::from_parts_normalized(
        dim,
        data,
        set.item_order().to_vec(),
    ))
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

fn check_dims(queries: &EmbeddingSet, gallery: &EmbeddingSet) -> Result<()> {
    if queries.dim() != gallery.dim() {
        return Err(Error::Shape(format!(
            "query dim {} vs gallery dim {}",
            queries.dim(),
            gallery.dim()
        )));
    }
    Ok(())
}

/// `1 - dot(q_i, g_j)` for every pair; both inputs must be normalized.
pub fn cosine_distance_matrix(
    queries: &EmbeddingSet,
    gallery: &EmbeddingSet,
) -> Result<DistanceMatrix> {
    check_dims(queries, gallery)?;
    if !queries.is_normalized() || !gallery.is_normalized() {
        return Err(Error::InvalidParam(
            "cosine distance requires normalized inputs".into(),
        ));
    }
    let ng = gallery.count();
    let mut values = vec![0f32; queries.count() * ng];
    if ng > 0 {
        values
            .par_chunks_mut(ng)
            .zip(queries.data().par_chunks(queries.dim()))
            .for_each(|(out, q)| {
                for (o, g) in out.iter_mut().zip(gallery.rows()) {
                    // Clamped so rounding never leaves [0, 2].
                    *o = (1.0 - dot(q, g)).clamp(0.0, 2.0) as f32;
                }
            });
    }
    Ok(DistanceMatrix::from_parts(
        queries.count(),
        ng,
        values,
        Metric::CosineDistance,
    ))
}

pub fn euclidean_distance_matrix(
    queries: &EmbeddingSet,
    gallery: &EmbeddingSet,
) -> Result<DistanceMatrix> {
    check_dims(queries, gallery)?;
    let ng = gallery.count();
    let mut values = vec![0f32; queries.count() * ng];
    if ng > 0 {
        values
            .par_chunks_mut(ng)
            .zip(queries.data().par_chunks(queries.dim()))
            .for_each(|(out, q)| {
                for (o, g) in out.iter_mut().zip(gallery.rows()) {
                    let sq: f64 = q
                        .iter()
                        .zip(g)
                        .map(|(&a, &b)| {
                            let d = f64::from(a) - f64::from(b);
                            d * d
                        })
                        .sum();
                    *o = sq.sqrt() as f32;
                }
            });
    }
    Ok(DistanceMatrix::from_parts(
        queries.count(),
        ng,
        values,
        Metric::Euclidean,
    ))
}

/// Ascending distance, ties by ascending index.
pub(crate) fn cmp_dist(a: (usize, f32), b: (usize, f32)) -> Ordering {
    a.1.total_cmp(&b.1).then(a.0.cmp(&b.0))
}

/// Full stable ranking of one distance row.
pub fn rank_row(row: &[f32]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| cmp_dist((a, row[a]), (b, row[b])));
    idx
}

/// First `k` entries of [`rank_row`], computed with a partial selection.
pub fn top_k_row(row: &[f32], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    let key = |&a: &usize, &b: &usize| cmp_dist((a, row[a]), (b, row[b]));
    if k < idx.len() && k > 0 {
        idx.select_nth_unstable_by(k - 1, key);
        idx.truncate(k);
    }
    idx.sort_by(key);
    idx.truncate(k);
    idx
}

/// The `k` nearest gallery indices per query, nondecreasing distance.
pub fn top_k(dist: &DistanceMatrix, k: usize) -> Result<Vec<Vec<usize>>> {
    if k == 0 || k > dist.n_gallery() {
        return Err(Error::InvalidParam(format!(
            "k={k} outside 1..={}",
            dist.n_gallery()
        )));
    }
    Ok((0..dist.n_query())
        .into_par_iter()
        .map(|q| top_k_row(dist.row(q), k))
        .collect())
}
