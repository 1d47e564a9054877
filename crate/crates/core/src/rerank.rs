//! k-reciprocal encoding re-ranking.
//!
//! Reciprocal neighborhoods are built over the joint query+gallery population
//! from the three blocks `qg`, `qq` and `gg`. Each item is encoded as a sparse
//! vector of `exp(-d)` weights (normalized to unit sum) over its expanded
//! reciprocal set, encodings are averaged over the `k2` nearest items, and the
//! Jaccard distance between encodings is blended with the original distance.
//! Distances enter `exp(-d)` unscaled.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::{top_k_row, DistanceMatrix};

/// Tolerance for the zero-diagonal and symmetry checks on `qq`/`gg`.
pub const SQUARE_BLOCK_TOL: f32 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RerankParams {
    pub k1: usize,
    pub k2: usize,
    pub lambda: f64,
}

impl Default for RerankParams {
    fn default() -> Self {
        RerankParams {
            k1: 20,
            k2: 6,
            lambda: 0.3,
        }
    }
}

impl RerankParams {
    pub fn validate(&self) -> Result<()> {
        if self.k1 == 0 || self.k2 == 0 {
            return Err(Error::InvalidParam("k1 and k2 must be positive".into()));
        }
        if self.k2 > self.k1 {
            return Err(Error::InvalidParam(format!(
                "k2={} exceeds k1={}",
                self.k2, self.k1
            )));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidParam(format!(
                "lambda {} outside [0, 1]",
                self.lambda
            )));
        }
        Ok(())
    }

    /// Shrinks `k1` (and `k2` with it) to fit a population of `n` items.
    pub fn clamped(&self, n: usize) -> RerankParams {
        let mut p = *self;
        if n >= 1 && p.k1 > n - 1 {
            let k1 = (n - 1).max(1);
            warn!("re-ranking k1={} clamped to {k1} for {n} items", p.k1);
            p.k1 = k1;
            p.k2 = p.k2.min(k1);
        }
        p
    }
}

/// Sparse vector: strictly increasing indices with their weights.
pub type SparseVec = Vec<(usize, f64)>;

/// Joint `(nq + ng)` square distance view over the three blocks.
struct Joint<'a> {
    qg: &'a DistanceMatrix,
    qq: &'a DistanceMatrix,
    gg: &'a DistanceMatrix,
    nq: usize,
}

impl Joint<'_> {
    fn len(&self) -> usize {
        self.nq + self.gg.n_query()
    }

    fn get(&self, i: usize, j: usize) -> f32 {
        let nq = self.nq;
        match (i < nq, j < nq) {
            (true, true) => self.qq.get(i, j),
            (true, false) => self.qg.get(i, j - nq),
            (false, true) => self.qg.get(j, i - nq),
            (false, false) => self.gg.get(i - nq, j - nq),
        }
    }

    fn row(&self, i: usize) -> Vec<f32> {
        (0..self.len()).map(|j| self.get(i, j)).collect()
    }
}

fn check_inputs(qg: &DistanceMatrix, qq: &DistanceMatrix, gg: &DistanceMatrix) -> Result<()> {
    let (nq, ng) = (qg.n_query(), qg.n_gallery());
    if qq.n_query() != qq.n_gallery() || gg.n_query() != gg.n_gallery() {
        return Err(Error::Shape("qq and gg must be square".into()));
    }
    if qq.n_query() != nq || gg.n_query() != ng {
        return Err(Error::Shape(format!(
            "qg is {nq}x{ng} but qq is {0}x{0} and gg is {1}x{1}",
            qq.n_query(),
            gg.n_query()
        )));
    }
    if qq.metric() != qg.metric() || gg.metric() != qg.metric() {
        return Err(Error::Shape("qg, qq and gg must share one metric".into()));
    }
    for (name, m) in [("qq", qq), ("gg", gg)] {
        let n = m.n_query();
        for i in 0..n {
            if m.get(i, i).abs() > SQUARE_BLOCK_TOL {
                return Err(Error::InvalidParam(format!(
                    "{name} diagonal ({i},{i}) = {} is not zero",
                    m.get(i, i)
                )));
            }
            for j in i + 1..n {
                if (m.get(i, j) - m.get(j, i)).abs() > SQUARE_BLOCK_TOL {
                    return Err(Error::InvalidParam(format!(
                        "{name} is not symmetric at ({i},{j})"
                    )));
                }
            }
        }
    }
    Ok(())
}

/// `R(i, k)`: members of `i`'s `k+1` nearest that also hold `i` among their `k+1` nearest.
fn reciprocal_set(ranks: &[Vec<usize>], i: usize, k: usize) -> Vec<usize> {
    ranks[i]
        .iter()
        .take(k + 1)
        .copied()
        .filter(|&c| ranks[c].iter().take(k + 1).any(|&x| x == i))
        .collect()
}

/// `R*(i, k1)`: `R(i, k1)` plus every `R(c, ceil(k1/2))` of a member `c`
/// that shares at least two thirds of its items with `R(i, k1)`. Sorted.
fn expanded_reciprocal_set(ranks: &[Vec<usize>], i: usize, k1: usize) -> Vec<usize> {
    let base = reciprocal_set(ranks, i, k1);
    let half = k1.div_ceil(2);
    let mut out = base.clone();
    for &c in &base {
        let cand = reciprocal_set(ranks, c, half);
        let overlap = cand.iter().filter(|x| base.contains(x)).count();
        if 3 * overlap >= 2 * cand.len() {
            out.extend(cand);
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

struct Prepared {
    params: RerankParams,
    ranks: Vec<Vec<usize>>,
    encodings: Vec<SparseVec>,
}

fn prepare(
    qg: &DistanceMatrix,
    qq: &DistanceMatrix,
    gg: &DistanceMatrix,
    params: &RerankParams,
) -> Result<Prepared> {
    params.validate()?;
    check_inputs(qg, qq, gg)?;
    let joint = Joint {
        qg,
        qq,
        gg,
        nq: qg.n_query(),
    };
    let n = joint.len();
    if n < 2 {
        return Err(Error::InvalidParam(format!(
            "re-ranking needs at least 2 items, got {n}"
        )));
    }
    let params = params.clamped(n);
    let depth = (params.k1 + 1).max(params.k2).min(n);
    let ranks: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|i| top_k_row(&joint.row(i), depth))
        .collect();
    let encodings = (0..n)
        .map(|i| {
            let support = expanded_reciprocal_set(&ranks, i, params.k1);
            let weights: Vec<f64> = support
                .iter()
                .map(|&j| (-f64::from(joint.get(i, j))).exp())
                .collect();
            let total: f64 = weights.iter().sum();
            support
                .into_iter()
                .zip(weights)
                .map(|(j, w)| (j, w / total))
                .collect()
        })
        .collect();
    Ok(Prepared {
        params,
        ranks,
        encodings,
    })
}

/// Sparse `exp(-d)` encodings of all `nq + ng` items (queries first), before local expansion.
pub fn sparse_encodings(
    qg: &DistanceMatrix,
    qq: &DistanceMatrix,
    gg: &DistanceMatrix,
    params: &RerankParams,
) -> Result<Vec<SparseVec>> {
    Ok(prepare(qg, qq, gg, params)?.encodings)
}

fn average_sparse(vectors: &[&SparseVec]) -> SparseVec {
    let mut acc: std::collections::BTreeMap<usize, f64> = std::collections::BTreeMap::new();
    for v in vectors {
        for &(j, w) in v.iter() {
            *acc.entry(j).or_insert(0.0) += w;
        }
    }
    let n = vectors.len() as f64;
    acc.into_iter().map(|(j, w)| (j, w / n)).collect()
}

fn min_overlap(a: &SparseVec, b: &SparseVec) -> f64 {
    let (mut i, mut j, mut sum) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                sum += a[i].1.min(b[j].1);
                i += 1;
                j += 1;
            }
        }
    }
    sum
}

fn jaccard_rows(prepared: &Prepared, nq: usize, ng: usize) -> Vec<f64> {
    let Prepared {
        params,
        ranks,
        encodings,
    } = prepared;
    let encodings: Vec<SparseVec> = if params.k2 > 1 {
        (0..encodings.len())
            .map(|i| {
                let neighbors: Vec<&SparseVec> = ranks[i]
                    .iter()
                    .take(params.k2)
                    .map(|&r| &encodings[r])
                    .collect();
                average_sparse(&neighbors)
            })
            .collect()
    } else {
        encodings.clone()
    };
    (0..nq)
        .into_par_iter()
        .flat_map_iter(|q| {
            let enc = &encodings;
            (0..ng).map(move |g| {
                let m = min_overlap(&enc[q], &enc[nq + g]);
                (1.0 - m / (2.0 - m)).clamp(0.0, 1.0)
            })
        })
        .collect()
}

/// The Jaccard component alone, `nq x ng`, values in `[0, 1]`.
pub fn jaccard_distance(
    qg: &DistanceMatrix,
    qq: &DistanceMatrix,
    gg: &DistanceMatrix,
    params: &RerankParams,
) -> Result<Vec<f64>> {
    let prepared = prepare(qg, qq, gg, params)?;
    Ok(jaccard_rows(&prepared, qg.n_query(), qg.n_gallery()))
}

/// `(1 - lambda) * jaccard + lambda * qg`.
pub fn k_reciprocal_rerank(
    qg: &DistanceMatrix,
    qq: &DistanceMatrix,
    gg: &DistanceMatrix,
    params: &RerankParams,
) -> Result<DistanceMatrix> {
    params.validate()?;
    check_inputs(qg, qq, gg)?;
    if params.lambda == 1.0 {
        return Ok(qg.clone());
    }
    let prepared = prepare(qg, qq, gg, params)?;
    let jac = jaccard_rows(&prepared, qg.n_query(), qg.n_gallery());
    let lambda = params.lambda;
    let values = jac
        .iter()
        .zip(qg.values())
        .map(|(&j, &d)| ((1.0 - lambda) * j + lambda * f64::from(d)) as f32)
        .collect();
    Ok(DistanceMatrix::from_parts(
        qg.n_query(),
        qg.n_gallery(),
        values,
        qg.metric(),
    ))
}
