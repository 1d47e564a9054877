//! Multi-source fusion, at the vector level (average, concatenation) and at
//! the distance level (conditional percentile, dual channel).

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data_io::{row_norm, EmbeddingSet};
use crate::error::{Error, Result};
use crate::ops::DistanceMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMethod {
    None,
    Average,
    WeightedAverage,
    Concat,
    WeightedConcat,
    ConditionalPercentile,
    DualChannel,
}

impl FusionMethod {
    pub fn is_weighted(self) -> bool {
        matches!(
            self,
            FusionMethod::WeightedAverage | FusionMethod::WeightedConcat
        )
    }

    /// Human-readable name used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            FusionMethod::None => "None",
            FusionMethod::Average => "Average",
            FusionMethod::WeightedAverage => "Weighted Average",
            FusionMethod::Concat => "Concatenate",
            FusionMethod::WeightedConcat => "Weighted Concatenate",
            FusionMethod::ConditionalPercentile => "Conditional Percentile",
            FusionMethod::DualChannel => "Dual Channel",
        }
    }
}

impl fmt::Display for FusionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceTag {
    Base,
    #[serde(rename = "refinement_A")]
    RefinementA,
    #[serde(rename = "refinement_B")]
    RefinementB,
    #[serde(rename = "refinement_C")]
    RefinementC,
    Text,
}

impl SourceTag {
    pub fn is_refinement(self) -> bool {
        matches!(
            self,
            SourceTag::RefinementA | SourceTag::RefinementB | SourceTag::RefinementC
        )
    }
}

/// How the conditional-percentile threshold is computed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PercentileAxis {
    /// Percentile of the per-query top-1 base similarities.
    #[default]
    PerQueryTop1,
    /// Percentile of every query-gallery base similarity.
    AllPairs,
}

pub const DEFAULT_PERCENTILE: f64 = 20.0;
pub const DEFAULT_DUAL_MIX: f64 = 0.5;
pub const DEFAULT_BASE_WEIGHT: f64 = 0.7;

fn default_percentile() -> f64 {
    DEFAULT_PERCENTILE
}

fn default_mix() -> f64 {
    DEFAULT_DUAL_MIX
}

fn default_true() -> bool {
    true
}

/// One fusion strategy with its knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionSpec {
    pub method: FusionMethod,
    #[serde(default)]
    pub sources: Vec<SourceTag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default = "default_percentile")]
    pub percentile: f64,
    #[serde(default)]
    pub percentile_axis: PercentileAxis,
    /// Base weight for dual-channel matching.
    #[serde(default = "default_mix")]
    pub mix: f64,
    #[serde(default = "default_true")]
    pub normalize_before_fuse: bool,
}

impl FusionSpec {
    pub fn new(method: FusionMethod, sources: Vec<SourceTag>) -> Self {
        FusionSpec {
            method,
            sources,
            weights: None,
            percentile: DEFAULT_PERCENTILE,
            percentile_axis: PercentileAxis::default(),
            mix: DEFAULT_DUAL_MIX,
            normalize_before_fuse: true,
        }
    }

    pub fn none() -> Self {
        Self::new(FusionMethod::None, vec![SourceTag::Base])
    }

    /// Weights in effect: explicit ones, else defaults for weighted methods, else `None` (uniform).
    pub fn effective_weights(&self) -> Option<Vec<f64>> {
        match (&self.weights, self.method.is_weighted()) {
            (Some(w), _) => Some(w.clone()),
            (None, true) => Some(default_weights(&self.sources)),
            (None, false) => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sources.is_empty() {
            return Err(Error::Config("fusion needs at least one source".into()));
        }
        for (i, s) in self.sources.iter().enumerate() {
            if self.sources[..i].contains(s) {
                return Err(Error::Config(format!("fusion source {s:?} listed twice")));
            }
        }
        if self.sources[0] != SourceTag::Base {
            return Err(Error::Config("the first fusion source must be base".into()));
        }
        if let Some(w) = &self.weights {
            validate_weights(w, self.sources.len())?;
        }
        match self.method {
            FusionMethod::None if self.sources.len() != 1 => {
                return Err(Error::Config(
                    "fusion method none takes only the base source".into(),
                ));
            }
            FusionMethod::ConditionalPercentile | FusionMethod::DualChannel
                if self.sources.len() < 2 =>
            {
                return Err(Error::Config(format!(
                    "{} fusion needs base plus at least one other source",
                    self.method.label()
                )));
            }
            _ => {}
        }
        if !(0.0..=100.0).contains(&self.percentile) {
            return Err(Error::Config(format!(
                "percentile {} outside [0, 100]",
                self.percentile
            )));
        }
        if !(0.0..=1.0).contains(&self.mix) {
            return Err(Error::Config(format!("mix {} outside [0, 1]", self.mix)));
        }
        Ok(())
    }
}

/// Base gets 0.7; every other source an equal share of the rest.
pub fn default_weights(sources: &[SourceTag]) -> Vec<f64> {
    let others = sources.iter().filter(|s| **s != SourceTag::Base).count();
    sources
        .iter()
        .map(|s| match (s, others) {
            (SourceTag::Base, 0) => 1.0,
            (SourceTag::Base, _) => DEFAULT_BASE_WEIGHT,
            _ => (1.0 - DEFAULT_BASE_WEIGHT) / others as f64,
        })
        .collect()
}

fn validate_weights(weights: &[f64], n_sources: usize) -> Result<()> {
    if weights.len() != n_sources {
        return Err(Error::InvalidParam(format!(
            "{} weights for {n_sources} sources",
            weights.len()
        )));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidParam(
            "weights must be finite and nonnegative".into(),
        ));
    }
    if weights.iter().sum::<f64>() <= 0.0 {
        return Err(Error::InvalidParam(
            "weights must have a positive sum".into(),
        ));
    }
    Ok(())
}

fn check_counts(sources: &[&EmbeddingSet]) -> Result<usize> {
    let first = sources
        .first()
        .ok_or_else(|| Error::InvalidParam("fusion needs at least one source".into()))?;
    for (k, s) in sources.iter().enumerate().skip(1) {
        if s.count() != first.count() {
            return Err(Error::Shape(format!(
                "source {k} has {} rows, source 0 has {}",
                s.count(),
                first.count()
            )));
        }
    }
    Ok(first.count())
}

fn resolve_weights(weights: Option<&[f64]>, n: usize) -> Result<Vec<f64>> {
    match weights {
        Some(w) => {
            validate_weights(w, n)?;
            Ok(w.to_vec())
        }
        None => Ok(vec![1.0; n]),
    }
}

fn normalize_rows(dim: usize, mut data: Vec<f32>, order: &[String]) -> Result<EmbeddingSet> {
    for (i, row) in data.chunks_exact_mut(dim).enumerate() {
        let norm = row_norm(row);
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::ZeroNorm {
                row: i,
                item_id: order[i].clone(),
            });
        }
        for v in row.iter_mut() {
            *v = (f64::from(*v) / norm) as f32;
        }
    }
    Ok(EmbeddingSet::from_parts_normalized(
        dim,
        data,
        order.to_vec(),
    ))
}

/// Weighted mean of aligned rows, then L2-normalized. Rows are used as given;
/// callers normalize sources first when that is wanted. Output ids follow source 0.
pub fn fuse_average(sources: &[&EmbeddingSet], weights: Option<&[f64]>) -> Result<EmbeddingSet> {
    let count = check_counts(sources)?;
    let dim = sources[0].dim();
    if let Some(s) = sources.iter().find(|s| s.dim() != dim) {
        return Err(Error::Shape(format!(
            "average fusion needs equal dims, got {dim} and {}",
            s.dim()
        )));
    }
    let w = resolve_weights(weights, sources.len())?;
    let total: f64 = w.iter().sum();
    let mut data = vec![0f32; count * dim];
    let mut acc = vec![0f64; dim];
    for i in 0..count {
        acc.fill(0.0);
        for (src, &wk) in sources.iter().zip(&w) {
            for (a, &v) in acc.iter_mut().zip(src.row(i)) {
                *a += wk * f64::from(v);
            }
        }
        for (out, a) in data[i * dim..(i + 1) * dim].iter_mut().zip(&acc) {
            *out = (a / total) as f32;
        }
    }
    normalize_rows(dim, data, sources[0].item_order())
}

/// Concatenation of `w_k * normalize(src_k[i])`, L2-normalized. Dims may differ.
pub fn fuse_concat(sources: &[&EmbeddingSet], weights: Option<&[f64]>) -> Result<EmbeddingSet> {
    let count = check_counts(sources)?;
    let w = resolve_weights(weights, sources.len())?;
    let dim: usize = sources.iter().map(|s| s.dim()).sum();
    let mut data = Vec::with_capacity(count * dim);
    for i in 0..count {
        for (k, (src, &wk)) in sources.iter().zip(&w).enumerate() {
            let row = src.row(i);
            let norm = row_norm(row);
            if norm == 0.0 {
                return Err(Error::ZeroNorm {
                    row: i,
                    item_id: format!("{} (source {k})", src.item_order()[i]),
                });
            }
            data.extend(row.iter().map(|&v| (wk * f64::from(v) / norm) as f32));
        }
    }
    normalize_rows(dim, data, sources[0].item_order())
}

/// Linear-interpolated percentile (`p` in `[0, 100]`) of unsorted values.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidParam("percentile of an empty set".into()));
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::InvalidParam(format!(
            "percentile {p} outside [0, 100]"
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Ok(sorted[lo] + (sorted[hi] - sorted[lo]) * frac)
}

fn check_same_shape(a: &DistanceMatrix, b: &DistanceMatrix) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::Shape(format!(
            "{}x{} vs {}x{} distance matrices",
            a.n_query(),
            a.n_gallery(),
            b.n_query(),
            b.n_gallery()
        )));
    }
    if a.metric() != b.metric() {
        return Err(Error::Shape(format!(
            "metric {:?} vs {:?}",
            a.metric(),
            b.metric()
        )));
    }
    Ok(())
}

/// Per-query best base similarity `s_i = 1 - min_j base[i][j]`.
pub fn top1_similarities(base_dist: &DistanceMatrix) -> Vec<f64> {
    (0..base_dist.n_query())
        .map(|i| {
            let min = base_dist
                .row(i)
                .iter()
                .copied()
                .fold(f32::INFINITY, f32::min);
            1.0 - f64::from(min)
        })
        .collect()
}

/// Which queries switch to the fused rows: those whose best base similarity
/// falls strictly below the threshold.
pub fn conditional_selection(
    base_dist: &DistanceMatrix,
    pct: f64,
    axis: PercentileAxis,
) -> Result<Vec<bool>> {
    if base_dist.n_query() == 0 || base_dist.n_gallery() == 0 {
        return Err(Error::InvalidParam(
            "conditional fusion needs a non-empty matrix".into(),
        ));
    }
    let s = top1_similarities(base_dist);
    let threshold = match axis {
        PercentileAxis::PerQueryTop1 => percentile(&s, pct)?,
        PercentileAxis::AllPairs => {
            let all: Vec<f64> = base_dist
                .values()
                .iter()
                .map(|&d| 1.0 - f64::from(d))
                .collect();
            percentile(&all, pct)?
        }
    };
    Ok(s.iter().map(|&si| si < threshold).collect())
}

/// Uses the fused row for queries whose best base similarity is below the
/// `percentile`-th percentile of all queries' best base similarities.
pub fn fuse_conditional_percentile(
    base_dist: &DistanceMatrix,
    fused_dist: &DistanceMatrix,
    percentile: f64,
) -> Result<DistanceMatrix> {
    fuse_conditional_percentile_with(
        base_dist,
        fused_dist,
        percentile,
        PercentileAxis::PerQueryTop1,
    )
}

pub fn fuse_conditional_percentile_with(
    base_dist: &DistanceMatrix,
    fused_dist: &DistanceMatrix,
    percentile: f64,
    axis: PercentileAxis,
) -> Result<DistanceMatrix> {
    check_same_shape(base_dist, fused_dist)?;
    let use_fused = conditional_selection(base_dist, percentile, axis)?;
    let mut values = Vec::with_capacity(base_dist.values().len());
    for (i, &fused) in use_fused.iter().enumerate() {
        let src = if fused { fused_dist } else { base_dist };
        values.extend_from_slice(src.row(i));
    }
    Ok(DistanceMatrix::from_parts(
        base_dist.n_query(),
        base_dist.n_gallery(),
        values,
        base_dist.metric(),
    ))
}

/// `mix * base + (1 - mix) * refinement`, elementwise.
pub fn fuse_dual_channel(
    base_dist: &DistanceMatrix,
    refinement_dist: &DistanceMatrix,
    mix: f64,
) -> Result<DistanceMatrix> {
    check_same_shape(base_dist, refinement_dist)?;
    if !(0.0..=1.0).contains(&mix) {
        return Err(Error::InvalidParam(format!("mix {mix} outside [0, 1]")));
    }
    let values = if mix == 1.0 {
        base_dist.values().to_vec()
    } else if mix == 0.0 {
        refinement_dist.values().to_vec()
    } else {
        base_dist
            .values()
            .iter()
            .zip(refinement_dist.values())
            .map(|(&b, &r)| (mix * f64::from(b) + (1.0 - mix) * f64::from(r)) as f32)
            .collect()
    };
    Ok(DistanceMatrix::from_parts(
        base_dist.n_query(),
        base_dist.n_gallery(),
        values,
        base_dist.metric(),
    ))
}
