//! Executes one run: fuse, expand and re-rank in the declared order, then evaluate.

use crate::data_io::{EmbeddingSet, Split};
use crate::error::{Error, Result};
use crate::eval::{mean_ap_with, EvalReport, RunMeta};
use crate::expansion::expand_queries_excluding;
use crate::fusion::{
    fuse_average, fuse_concat, fuse_conditional_percentile_with, fuse_dual_channel, FusionMethod,
    FusionSpec, SourceTag,
};
use crate::harness::config::{RunSpec, Stage};
use crate::harness::dataset::Dataset;
use crate::ops::{cosine_distance_matrix, l2_normalize, DistanceMatrix};
use crate::rerank::k_reciprocal_rerank;

/// Query and gallery rows of one vector channel.
#[derive(Debug, Clone)]
struct Channel {
    tag: SourceTag,
    query: EmbeddingSet,
    gallery: EmbeddingSet,
}

enum State {
    /// Separate channels; `fused` marks a distance-level fusion already chosen.
    Channels {
        channels: Vec<Channel>,
        fused: bool,
    },
    Vectors {
        query: EmbeddingSet,
        gallery: EmbeddingSet,
    },
    Distances(Distances),
}

struct Distances {
    qg: DistanceMatrix,
    qq: DistanceMatrix,
    gg: DistanceMatrix,
}

fn distances(query: &EmbeddingSet, gallery: &EmbeddingSet) -> Result<Distances> {
    Ok(Distances {
        qg: cosine_distance_matrix(query, gallery)?,
        qq: cosine_distance_matrix(query, query)?,
        gg: cosine_distance_matrix(gallery, gallery)?,
    })
}

fn source_set(dataset: &Dataset, run: &RunSpec, tag: SourceTag) -> Result<EmbeddingSet> {
    let missing = |what: &str, model: &str| {
        Error::Pipeline(format!(
            "run '{}': model '{model}' has no {what} vectors",
            run.label
        ))
    };
    let set = match tag {
        SourceTag::Base => {
            let m = dataset.model(&run.base)?;
            m.base.clone().ok_or_else(|| missing("base", &run.base))?
        }
        SourceTag::Text => {
            let name = run.text.as_deref().unwrap_or_default();
            dataset
                .model(name)?
                .text
                .clone()
                .ok_or_else(|| missing("text", name))?
        }
        refinement => {
            let name = run.refinements.as_deref().unwrap_or_default();
            let cond = match refinement {
                SourceTag::RefinementA => crate::data_io::Condition::A,
                SourceTag::RefinementB => crate::data_io::Condition::B,
                _ => crate::data_io::Condition::C,
            };
            dataset
                .model(name)?
                .refinements
                .get(&cond)
                .cloned()
                .ok_or_else(|| missing(&format!("refinement {cond}"), name))?
        }
    };
    Ok(set)
}

fn average_family(method: FusionMethod) -> bool {
    matches!(
        method,
        FusionMethod::Average
            | FusionMethod::WeightedAverage
            | FusionMethod::ConditionalPercentile
            | FusionMethod::DualChannel
    )
}

fn load_channels(
    dataset: &Dataset,
    run: &RunSpec,
    qi: &[usize],
    gi: &[usize],
) -> Result<Vec<Channel>> {
    let spec = &run.fusion;
    // Distance-level methods match by cosine per channel, so they always normalize.
    let normalize = spec.normalize_before_fuse
        || matches!(
            spec.method,
            FusionMethod::None | FusionMethod::ConditionalPercentile | FusionMethod::DualChannel
        );
    let mut channels = Vec::with_capacity(spec.sources.len());
    for &tag in &spec.sources {
        let mut set = source_set(dataset, run, tag)?;
        if normalize {
            set = l2_normalize(&set)?;
        }
        channels.push(Channel {
            tag,
            query: set.select(qi),
            gallery: set.select(gi),
        });
    }
    if average_family(spec.method) {
        let dim = channels[0].query.dim();
        if let Some(c) = channels.iter().find(|c| c.query.dim() != dim) {
            return Err(Error::Pipeline(format!(
                "run '{}': {} fusion needs equal dims, but {:?} has dim {} and base has {dim}",
                run.label,
                spec.method.label(),
                c.tag,
                c.query.dim()
            )));
        }
    }
    Ok(channels)
}

fn fuse_vectors(
    channels: &[Channel],
    spec: &FusionSpec,
    pick: impl Fn(&Channel) -> &EmbeddingSet,
) -> Result<EmbeddingSet> {
    let sets: Vec<&EmbeddingSet> = channels.iter().map(&pick).collect();
    let weights = spec.effective_weights();
    match spec.method {
        FusionMethod::Concat | FusionMethod::WeightedConcat => {
            fuse_concat(&sets, weights.as_deref())
        }
        _ => fuse_average(&sets, weights.as_deref()),
    }
}

/// Average of the given channels, or the channel itself when there is one.
fn mean_channel(
    channels: &[Channel],
    weights: Option<&[f64]>,
) -> Result<(EmbeddingSet, EmbeddingSet)> {
    let qs: Vec<&EmbeddingSet> = channels.iter().map(|c| &c.query).collect();
    let gs: Vec<&EmbeddingSet> = channels.iter().map(|c| &c.gallery).collect();
    Ok((fuse_average(&qs, weights)?, fuse_average(&gs, weights)?))
}

fn combine_distance_level(channels: &[Channel], spec: &FusionSpec) -> Result<Distances> {
    let base = distances(&channels[0].query, &channels[0].gallery)?;
    match spec.method {
        FusionMethod::ConditionalPercentile => {
            let weights = spec.effective_weights();
            let (fq, fg) = mean_channel(channels, weights.as_deref())?;
            let fused_qg = cosine_distance_matrix(&fq, &fg)?;
            let qg = fuse_conditional_percentile_with(
                &base.qg,
                &fused_qg,
                spec.percentile,
                spec.percentile_axis,
            )?;
            Ok(Distances {
                qg,
                qq: base.qq,
                gg: base.gg,
            })
        }
        FusionMethod::DualChannel => {
            let (rq, rg) = mean_channel(&channels[1..], None)?;
            let other = distances(&rq, &rg)?;
            Ok(Distances {
                qg: fuse_dual_channel(&base.qg, &other.qg, spec.mix)?,
                qq: fuse_dual_channel(&base.qq, &other.qq, spec.mix)?,
                gg: fuse_dual_channel(&base.gg, &other.gg, spec.mix)?,
            })
        }
        other => unreachable!("{other:?} is not a distance-level method"),
    }
}

fn to_distances(state: State, spec: &FusionSpec) -> Result<Distances> {
    match state {
        State::Distances(d) => Ok(d),
        State::Vectors { query, gallery } => distances(&query, &gallery),
        State::Channels {
            channels,
            fused: true,
        } => combine_distance_level(&channels, spec),
        State::Channels { fused: false, .. } => {
            Err(Error::Pipeline("channels were never fused".into()))
        }
    }
}

/// Runs one configured row and evaluates it. `delta_vs_baseline` is left unset.
pub fn execute_run(dataset: &Dataset, run: &RunSpec) -> Result<EvalReport> {
    let qi = dataset.split_indices(Split::Query);
    let gi = dataset.split_indices(Split::Gallery);
    if qi.is_empty() || gi.is_empty() {
        return Err(Error::Pipeline(
            "dataset needs both query and gallery base items".into(),
        ));
    }
    let excluded: Vec<bool> = gi
        .iter()
        .map(|&i| dataset.base_records[i].excluded)
        .collect();
    let spec = &run.fusion;
    let mut state = State::Channels {
        channels: load_channels(dataset, run, &qi, &gi)?,
        fused: false,
    };
    let mut executed = Vec::new();

    for stage in &run.pipeline {
        state = match (stage, state) {
            (Stage::Fuse, State::Channels { channels, .. }) => {
                executed.push(Stage::Fuse);
                match spec.method {
                    FusionMethod::None => State::Vectors {
                        query: channels[0].query.clone(),
                        gallery: channels[0].gallery.clone(),
                    },
                    FusionMethod::ConditionalPercentile | FusionMethod::DualChannel => {
                        State::Channels {
                            channels,
                            fused: true,
                        }
                    }
                    _ => State::Vectors {
                        query: fuse_vectors(&channels, spec, |c| &c.query)?,
                        gallery: fuse_vectors(&channels, spec, |c| &c.gallery)?,
                    },
                }
            }
            (Stage::Expand, state) => match &run.expansion {
                None => state,
                Some(p) => {
                    executed.push(Stage::Expand);
                    let expand = |q: &EmbeddingSet, g: &EmbeddingSet| {
                        expand_queries_excluding(q, g, p.k, p.alpha, Some(&excluded))
                    };
                    match state {
                        State::Vectors { query, gallery } => State::Vectors {
                            query: expand(&query, &gallery)?,
                            gallery,
                        },
                        State::Channels { channels, fused } => State::Channels {
                            channels: channels
                                .into_iter()
                                .map(|c| {
                                    Ok(Channel {
                                        query: expand(&c.query, &c.gallery)?,
                                        ..c
                                    })
                                })
                                .collect::<Result<_>>()?,
                            fused,
                        },
                        State::Distances(_) => {
                            return Err(Error::Pipeline(format!(
                                "run '{}': expansion needs vectors but re-ranking already produced distances",
                                run.label
                            )))
                        }
                    }
                }
            },
            (Stage::Rerank, state) => match &run.rerank {
                None => state,
                Some(p) => {
                    executed.push(Stage::Rerank);
                    let d = to_distances(state, spec)?;
                    let qg = k_reciprocal_rerank(&d.qg, &d.qq, &d.gg, p)?;
                    State::Distances(Distances { qg, ..d })
                }
            },
            (Stage::Fuse, _) => {
                return Err(Error::Pipeline(format!(
                    "run '{}': fuse listed after fusion",
                    run.label
                )));
            }
        };
    }

    let final_qg = to_distances(state, spec)?.qg;
    let report = mean_ap_with(
        &final_qg,
        &dataset.records(&qi),
        &dataset.records(&gi),
        run.protocol,
        run.no_positive,
    )?;
    Ok(EvalReport {
        run_label: run.label.clone(),
        meta: Some(run_meta(run, &executed)),
        ..report
    })
}

fn run_meta(run: &RunSpec, executed: &[Stage]) -> RunMeta {
    let mut refinement_models = Vec::new();
    if let Some(m) = &run.refinements {
        refinement_models.push(m.clone());
    }
    if let Some(m) = &run.text {
        refinement_models.push(m.clone());
    }
    let embedding_refinements = if refinement_models.is_empty() {
        "None".to_string()
    } else {
        refinement_models.join(", ")
    };
    let mut notes = Vec::new();
    let spec = &run.fusion;
    if run.uses_text() && spec.weights.is_none() {
        notes.push(match spec.method {
            m if m.is_weighted() => {
                "text channel weight taken from default weights (assumed, not measured)".to_string()
            }
            _ => "text channel fused with uniform weight (assumed, not measured)".to_string(),
        });
    }
    if spec.method.is_weighted() && spec.weights.is_none() {
        notes.push("default weights: base 0.7, remainder split evenly".to_string());
    }
    if spec.method == FusionMethod::ConditionalPercentile {
        notes.push(format!(
            "percentile {} over {:?}",
            spec.percentile, spec.percentile_axis
        ));
    }
    if spec.method == FusionMethod::DualChannel {
        notes.push(format!("dual-channel mix {}", spec.mix));
    }
    if let Some(p) = &run.rerank {
        notes.push(format!(
            "rerank k1={} k2={} lambda={}",
            p.k1, p.k2, p.lambda
        ));
    }
    if let Some(p) = &run.expansion {
        notes.push(format!("expansion k={} alpha={}", p.k, p.alpha));
    }
    RunMeta {
        embedding_base: run.base.clone(),
        embedding_refinements,
        fusion: spec.method.label().to_string(),
        pipeline: executed.iter().map(|s| s.to_string()).collect(),
        notes,
    }
}
