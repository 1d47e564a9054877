//! Independent reference implementations used as test oracles. None of these
//! call into the library paths they check.

#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reid_core::data_io::{ItemRecord, Split};
use reid_core::{EmbeddingSet, Protocol};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_rows(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f32>> {
    (0..n)
        .map(|_| loop {
            let r: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            if r.iter().map(|v| v * v).sum::<f32>() > 1e-3 {
                break r;
            }
        })
        .collect()
}

pub fn set_of(rows: &[Vec<f32>], prefix: &str) -> EmbeddingSet {
    let ids = (0..rows.len()).map(|i| format!("{prefix}{i}")).collect();
    EmbeddingSet::from_rows(rows, ids).unwrap()
}

/// Scalar normalization in f64.
pub fn unit_f64(row: &[f32]) -> Vec<f64> {
    let n: f64 = row
        .iter()
        .map(|&v| f64::from(v).powi(2))
        .sum::<f64>()
        .sqrt();
    row.iter().map(|&v| f64::from(v) / n).collect()
}

/// `1 - cos(a, b)` by an explicit per-pair loop.
pub fn naive_cosine_distance(a: &[f32], b: &[f32]) -> f64 {
    let (ua, ub) = (unit_f64(a), unit_f64(b));
    1.0 - ua.iter().zip(&ub).map(|(x, y)| x * y).sum::<f64>()
}

/// AP for one query by rank counting: the rank of gallery item `j` is one
/// plus the number of items strictly ahead of it (smaller distance, or equal
/// distance and smaller index). Junk items are dropped before ranking.
pub fn brute_force_ap(
    dist_row: &[f32],
    query: &ItemRecord,
    gallery: &[ItemRecord],
    protocol: Protocol,
) -> Option<f64> {
    let kept: Vec<usize> = (0..gallery.len())
        .filter(|&j| match protocol {
            Protocol::Plain => true,
            Protocol::CrossCamera => {
                !(gallery[j].identity_id == query.identity_id
                    && query.camera_id.is_some()
                    && gallery[j].camera_id == query.camera_id)
            }
        })
        .collect();
    let rank = |j: usize| -> usize {
        1 + kept
            .iter()
            .filter(|&&k| dist_row[k] < dist_row[j] || (dist_row[k] == dist_row[j] && k < j))
            .count()
    };
    let positives: Vec<usize> = kept
        .iter()
        .copied()
        .filter(|&j| gallery[j].identity_id == query.identity_id)
        .map(rank)
        .collect();
    if positives.is_empty() {
        return None;
    }
    let total: f64 = positives
        .iter()
        .map(|&r| positives.iter().filter(|&&o| o <= r).count() as f64 / r as f64)
        .sum();
    Some(total / positives.len() as f64)
}

pub fn brute_force_map(
    values: &[f32],
    n_gallery: usize,
    queries: &[ItemRecord],
    gallery: &[ItemRecord],
    protocol: Protocol,
) -> Option<f64> {
    let aps: Vec<f64> = queries
        .iter()
        .enumerate()
        .filter_map(|(q, rec)| {
            brute_force_ap(
                &values[q * n_gallery..(q + 1) * n_gallery],
                rec,
                gallery,
                protocol,
            )
        })
        .collect();
    (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64)
}

/// Random query/gallery records over `n_ids` identities and `n_cams` cameras.
pub fn random_records(
    rng: &mut ChaCha8Rng,
    n: usize,
    split: Split,
    n_ids: usize,
    n_cams: usize,
) -> Vec<ItemRecord> {
    (0..n)
        .map(|i| {
            let mut r = ItemRecord::base(
                format!("{split:?}{i}"),
                format!("{}", rng.random_range(0..n_ids)),
                split,
            );
            r.camera_id = Some(format!("c{}", rng.random_range(0..n_cams)));
            r
        })
        .collect()
}

/// Dense k-reciprocal re-ranking written straight from the algorithm definition.
///
/// `joint` is the full `(nq + ng)` square distance matrix, queries first.
/// Returns `nq x ng` re-ranked distances.
pub fn reference_rerank(
    joint: &[Vec<f64>],
    nq: usize,
    k1: usize,
    k2: usize,
    lambda: f64,
) -> Vec<Vec<f64>> {
    let n = joint.len();
    let k1 = k1.min(n - 1);
    let k2 = k2.min(k1);
    let ranking: Vec<Vec<usize>> = joint
        .iter()
        .map(|row| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap().then(a.cmp(&b)));
            idx
        })
        .collect();
    let neighbors =
        |i: usize, k: usize| -> BTreeSet<usize> { ranking[i][..=k].iter().copied().collect() };
    let reciprocal = |i: usize, k: usize| -> BTreeSet<usize> {
        neighbors(i, k)
            .into_iter()
            .filter(|&j| neighbors(j, k).contains(&i))
            .collect()
    };
    let half = (k1 as f64 / 2.0).ceil() as usize;

    let mut v = vec![vec![0.0f64; n]; n];
    for (i, vi) in v.iter_mut().enumerate() {
        let r = reciprocal(i, k1);
        let mut star = r.clone();
        for &c in &r {
            let rc = reciprocal(c, half);
            let inter = rc.intersection(&r).count() as f64;
            if inter >= 2.0 / 3.0 * rc.len() as f64 {
                star.extend(rc);
            }
        }
        let z: f64 = star.iter().map(|&j| (-joint[i][j]).exp()).sum();
        for &j in &star {
            vi[j] = (-joint[i][j]).exp() / z;
        }
    }
    if k2 > 1 {
        let mut qe = vec![vec![0.0f64; n]; n];
        for i in 0..n {
            for &t in &ranking[i][..k2] {
                for m in 0..n {
                    qe[i][m] += v[t][m] / k2 as f64;
                }
            }
        }
        v = qe;
    }
    (0..nq)
        .map(|q| {
            (0..n - nq)
                .map(|g| {
                    let (a, b) = (&v[q], &v[nq + g]);
                    let mins: f64 = a.iter().zip(b).map(|(x, y)| x.min(*y)).sum();
                    let maxs: f64 = a.iter().zip(b).map(|(x, y)| x.max(*y)).sum();
                    let jaccard = 1.0 - mins / maxs;
                    (1.0 - lambda) * jaccard + lambda * joint[q][nq + g]
                })
                .collect()
        })
        .collect()
}

/// Joint matrix from points, Euclidean, in f64.
pub fn joint_from_points(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    points
        .iter()
        .map(|a| {
            points
                .iter()
                .map(|b| {
                    a.iter()
                        .zip(b)
                        .map(|(x, y)| (x - y).powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .collect()
        })
        .collect()
}

pub fn base_record(id: &str, identity: &str, split: Split) -> ItemRecord {
    ItemRecord::base(id, identity, split)
}

/// Rounds a joint matrix to `f32` and splits it into `(qg, qq, gg)`. The
/// rounded joint (back in f64) is returned so the reference sees the same inputs.
pub fn blocks(
    joint: &[Vec<f64>],
    nq: usize,
    metric: reid_core::Metric,
) -> (
    reid_core::DistanceMatrix,
    reid_core::DistanceMatrix,
    reid_core::DistanceMatrix,
    Vec<Vec<f64>>,
) {
    use reid_core::DistanceMatrix;
    let n = joint.len();
    let rounded: Vec<Vec<f64>> = joint
        .iter()
        .map(|r| r.iter().map(|&v| f64::from(v as f32)).collect())
        .collect();
    let take = |rows: std::ops::Range<usize>, cols: std::ops::Range<usize>| {
        let (nr, nc) = (rows.len(), cols.len());
        let v: Vec<f32> = rows
            .flat_map(|i| cols.clone().map(move |j| (i, j)))
            .map(|(i, j)| rounded[i][j] as f32)
            .collect();
        DistanceMatrix::new(nr, nc, v, metric).unwrap()
    };
    (
        take(0..nq, nq..n),
        take(0..nq, 0..nq),
        take(nq..n, nq..n),
        rounded,
    )
}
