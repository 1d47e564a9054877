//! Retrieval evaluation: average precision, mAP, CMC and baseline deltas.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_io::ItemRecord;
use crate::error::{Error, Result};
use crate::ops::{rank_row, DistanceMatrix};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Every gallery item counts.
    #[default]
    Plain,
    /// Gallery items with the query's identity *and* camera are junk.
    CrossCamera,
}

impl std::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(Protocol::Plain),
            "cross_camera" => Ok(Protocol::CrossCamera),
            other => Err(Error::InvalidParam(format!("unknown protocol '{other}'"))),
        }
    }
}

/// Queries without any valid positive.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoPositivePolicy {
    /// Left out of the mAP mean and CMC (counted separately).
    #[default]
    Exclude,
    /// Scored as AP 0 and a CMC miss.
    ScoreZero,
}

fn is_junk(query: &ItemRecord, item: &ItemRecord, protocol: Protocol) -> bool {
    match protocol {
        Protocol::Plain => false,
        Protocol::CrossCamera => {
            item.identity_id == query.identity_id
                && query.camera_id.is_some()
                && item.camera_id == query.camera_id
        }
    }
}

/// Relevance flags after junk removal, in rank order.
fn relevance<'a>(
    ranked: impl IntoIterator<Item = &'a ItemRecord>,
    query: &ItemRecord,
    protocol: Protocol,
) -> Vec<bool> {
    ranked
        .into_iter()
        .filter(|item| !is_junk(query, item, protocol))
        .map(|item| item.identity_id == query.identity_id)
        .collect()
}

fn ap_from_relevance(rel: &[bool]) -> Option<f64> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (pos, &r) in rel.iter().enumerate() {
        if r {
            hits += 1;
            sum += hits as f64 / (pos + 1) as f64;
        }
    }
    (hits > 0).then(|| sum / hits as f64)
}

/// AP of one ranked gallery; `Ok(None)` when the query has no valid positive.
pub fn average_precision(
    ranked_gallery: &[&ItemRecord],
    query: &ItemRecord,
    protocol: Protocol,
) -> Result<Option<f64>> {
    if ranked_gallery.is_empty() {
        return Err(Error::Eval("empty gallery".into()));
    }
    Ok(ap_from_relevance(&relevance(
        ranked_gallery.iter().copied(),
        query,
        protocol,
    )))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub run_label: String,
    pub map: f64,
    /// `cmc[r]`: fraction of scored queries with a positive within the top `r + 1`.
    pub cmc: Vec<f64>,
    /// One entry per query; `None` marks a query without valid positives.
    pub per_query_ap: Vec<Option<f64>>,
    pub queries_without_positive: usize,
    /// Signed percentage change of `map` against the baseline run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_vs_baseline: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<RunMeta>,
}

/// Run description carried into reports and tables.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub embedding_base: String,
    pub embedding_refinements: String,
    pub fusion: String,
    pub pipeline: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl EvalReport {
    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.run_label = label.into();
        self
    }

    pub fn rank1(&self) -> f64 {
        self.cmc.first().copied().unwrap_or(0.0)
    }
}

/// Ranks every query's gallery by ascending distance (ties by index) and aggregates AP/CMC.
pub fn mean_ap(
    dist: &DistanceMatrix,
    queries: &[ItemRecord],
    gallery: &[ItemRecord],
    protocol: Protocol,
) -> Result<EvalReport> {
    mean_ap_with(dist, queries, gallery, protocol, NoPositivePolicy::Exclude)
}

pub fn mean_ap_with(
    dist: &DistanceMatrix,
    queries: &[ItemRecord],
    gallery: &[ItemRecord],
    protocol: Protocol,
    policy: NoPositivePolicy,
) -> Result<EvalReport> {
    if dist.n_query() != queries.len() || dist.n_gallery() != gallery.len() {
        return Err(Error::Shape(format!(
            "{}x{} distances for {} queries and {} gallery items",
            dist.n_query(),
            dist.n_gallery(),
            queries.len(),
            gallery.len()
        )));
    }
    if gallery.is_empty() {
        return Err(Error::Eval("empty gallery".into()));
    }
    let per_query: Vec<(Option<f64>, Option<usize>)> = queries
        .par_iter()
        .enumerate()
        .map(|(q, query)| {
            let order = rank_row(dist.row(q));
            let rel = relevance(order.iter().map(|&g| &gallery[g]), query, protocol);
            let first_hit = rel.iter().position(|&r| r);
            (ap_from_relevance(&rel), first_hit)
        })
        .collect();

    let mut cmc = vec![0f64; gallery.len()];
    let mut ap_sum = 0.0;
    let mut scored = 0usize;
    let mut missing = 0usize;
    let mut per_query_ap = Vec::with_capacity(per_query.len());
    for (ap, first_hit) in per_query {
        match (ap, policy) {
            (Some(ap), _) => {
                ap_sum += ap;
                scored += 1;
                if let Some(h) = first_hit {
                    for c in &mut cmc[h..] {
                        *c += 1.0;
                    }
                }
                per_query_ap.push(Some(ap));
            }
            (None, NoPositivePolicy::Exclude) => {
                missing += 1;
                per_query_ap.push(None);
            }
            (None, NoPositivePolicy::ScoreZero) => {
                missing += 1;
                scored += 1;
                per_query_ap.push(Some(0.0));
            }
        }
    }
    if missing == queries.len() {
        return Err(Error::Eval(
            "no query has a valid positive in the gallery".into(),
        ));
    }
    for c in &mut cmc {
        *c /= scored as f64;
    }
    Ok(EvalReport {
        run_label: String::new(),
        map: ap_sum / scored as f64,
        cmc,
        per_query_ap,
        queries_without_positive: missing,
        delta_vs_baseline: None,
        meta: None,
    })
}

/// `100 * (run - baseline) / baseline`.
pub fn relative_delta(run: &EvalReport, baseline: &EvalReport) -> Result<f64> {
    if baseline.map <= 0.0 {
        return Err(Error::Eval(format!(
            "baseline mAP {} is not positive",
            baseline.map
        )));
    }
    Ok(100.0 * (run.map - baseline.map) / baseline.map)
}

/// Signed percentage with three decimals. An exact zero prints as `-0.0%`,
/// the notation for a run identical to its baseline.
pub fn format_delta(percent: f64) -> String {
    if percent == 0.0 {
        "-0.0%".to_string()
    } else {
        format!("{percent:+.3}%")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::Split;
    use crate::ops::Metric;

    fn items(ids: &[&str], split: Split) -> Vec<ItemRecord> {
        ids.iter()
            .enumerate()
            .map(|(i, id)| ItemRecord::base(format!("{split:?}{i}"), *id, split))
            .collect()
    }

    fn ap(identities: &[&str], query_id: &str) -> Option<f64> {
        let g = items(identities, Split::Gallery);
        let q = ItemRecord::base("q", query_id, Split::Query);
        let refs: Vec<&ItemRecord> = g.iter().collect();
        average_precision(&refs, &q, Protocol::Plain).unwrap()
    }

    #[test]
    fn ap_hand_examples() {
        assert_eq!(ap(&["1", "2", "3", "4", "5"], "1"), Some(1.0));
        let v = ap(&["1", "2", "1", "3"], "1").unwrap();
        assert!((v - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert!((v - 0.8333).abs() < 1e-4);
        assert_eq!(ap(&["2", "1", "3", "1"], "1"), Some(0.5));
        assert_eq!(ap(&["2", "3"], "1"), None);
    }

    #[test]
    fn empty_gallery_is_an_error() {
        let q = ItemRecord::base("q", "1", Split::Query);
        assert!(average_precision(&[], &q, Protocol::Plain).is_err());
    }

    #[test]
    fn cross_camera_drops_same_camera_positives() {
        let mut g = items(&["1", "1", "2"], Split::Gallery);
        g[0].camera_id = Some("c0".into());
        g[1].camera_id = Some("c1".into());
        g[2].camera_id = Some("c0".into());
        let mut q = ItemRecord::base("q", "1", Split::Query);
        q.camera_id = Some("c0".into());
        let refs: Vec<&ItemRecord> = g.iter().collect();
        assert_eq!(
            average_precision(&refs, &q, Protocol::Plain).unwrap(),
            Some(1.0)
        );
        // Remaining list: [1@c1, 2@c0] -> positive at rank 1.
        assert_eq!(
            average_precision(&refs, &q, Protocol::CrossCamera).unwrap(),
            Some(1.0)
        );
        let refs_rev: Vec<&ItemRecord> = vec![&g[0], &g[2], &g[1]];
        assert_eq!(
            average_precision(&refs_rev, &q, Protocol::CrossCamera).unwrap(),
            Some(0.5)
        );
    }

    #[test]
    fn block_diagonal_is_perfect() {
        let q = items(&["a", "b"], Split::Query);
        let g = items(&["a", "a", "b", "b"], Split::Gallery);
        let v: Vec<f32> = (0..2)
            .flat_map(|i| (0..4).map(move |j| if j / 2 == i { 0.0 } else { 1.0 }))
            .collect();
        let d = DistanceMatrix::new(2, 4, v, Metric::CosineDistance).unwrap();
        let r = mean_ap(&d, &q, &g, Protocol::Plain).unwrap();
        assert_eq!(r.map, 1.0);
        assert_eq!(r.cmc, vec![1.0; 4]);
    }

    #[test]
    fn adversarial_single_positive_gives_one_over_g() {
        let g_ids = ["p", "x1", "x2", "x3", "x4"];
        let q = items(&["p"], Split::Query);
        let g = items(&g_ids, Split::Gallery);
        let d = DistanceMatrix::new(1, 5, vec![1.0, 0.1, 0.2, 0.3, 0.4], Metric::CosineDistance)
            .unwrap();
        let r = mean_ap(&d, &q, &g, Protocol::Plain).unwrap();
        assert!((r.map - 0.2).abs() < 1e-12);
        assert_eq!(r.cmc, vec![0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn no_positive_queries_are_excluded_or_zeroed() {
        let q = items(&["a", "z"], Split::Query);
        let g = items(&["a", "b"], Split::Gallery);
        let d =
            DistanceMatrix::new(2, 2, vec![0.5, 0.1, 0.2, 0.3], Metric::CosineDistance).unwrap();
        let r = mean_ap(&d, &q, &g, Protocol::Plain).unwrap();
        assert_eq!(r.per_query_ap, vec![Some(0.5), None]);
        assert_eq!(r.map, 0.5);
        assert_eq!(r.queries_without_positive, 1);
        let z = mean_ap_with(&d, &q, &g, Protocol::Plain, NoPositivePolicy::ScoreZero).unwrap();
        assert_eq!(z.map, 0.25);

        let none = items(&["z"], Split::Query);
        let d1 = DistanceMatrix::new(1, 2, vec![0.5, 0.1], Metric::CosineDistance).unwrap();
        assert_eq!(
            mean_ap(&d1, &none, &g, Protocol::Plain)
                .unwrap_err()
                .category(),
            "eval"
        );
    }

    #[test]
    fn deltas() {
        let mk = |map| EvalReport {
            run_label: String::new(),
            map,
            cmc: vec![],
            per_query_ap: vec![],
            queries_without_positive: 0,
            delta_vs_baseline: None,
            meta: None,
        };
        assert_eq!(
            format_delta(relative_delta(&mk(0.5), &mk(0.5)).unwrap()),
            "-0.0%"
        );
        assert_eq!(
            format_delta(relative_delta(&mk(0.485), &mk(0.5)).unwrap()),
            "-3.000%"
        );
        assert_eq!(
            format_delta(relative_delta(&mk(0.42), &mk(0.4)).unwrap()),
            "+5.000%"
        );
        assert!((relative_delta(&mk(0.485), &mk(0.5)).unwrap() + 3.0).abs() < 1e-9);
        assert!(relative_delta(&mk(0.5), &mk(0.0)).is_err());
        assert_eq!(format_delta(-2.9231), "-2.923%");
    }
}
