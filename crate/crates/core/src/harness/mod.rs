//! Config-driven experiment runner and report formatting.

pub mod config;
pub mod dataset;
pub mod pipeline;

use std::path::Path;

use rayon::prelude::*;

use crate::error::Result;
use crate::eval::{format_delta, relative_delta, EvalReport};

pub use config::{ExperimentConfig, ModelConfig, RunSpec, SimLayout, SimModel, Stage};
pub use dataset::{load_dataset, Dataset};
pub use pipeline::execute_run;

/// Loads the config at `path` and runs it.
pub fn run_experiment(path: impl AsRef<Path>) -> Result<Vec<EvalReport>> {
    let path = path.as_ref();
    let config = ExperimentConfig::load(path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    run_config(&config, dir)
}

/// Runs every row of `config`; the first run is the baseline for all deltas.
/// Reports come back in config order.
pub fn run_config(config: &ExperimentConfig, dir: &Path) -> Result<Vec<EvalReport>> {
    config.validate()?;
    let dataset = load_dataset(config, dir)?;
    let mut reports = config
        .runs
        .par_iter()
        .map(|run| execute_run(&dataset, run))
        .collect::<Result<Vec<_>>>()?;
    let baseline = reports[0].clone();
    for r in &mut reports {
        r.delta_vs_baseline = Some(relative_delta(r, &baseline)?);
    }
    Ok(reports)
}

pub fn reports_to_json(reports: &[EvalReport]) -> String {
    let mut s = serde_json::to_string_pretty(reports).expect("reports serialize");
    s.push('\n');
    s
}

pub const TABLE_HEADERS: [&str; 4] = [
    "Embedding Base",
    "Embedding Refinements",
    "Fusion",
    "mAP vs. baseline",
];

/// Aligned plain-text table, one row per report in the given order.
pub fn print_table(reports: &[EvalReport]) -> String {
    let rows: Vec<[String; 4]> = reports
        .iter()
        .map(|r| {
            let meta = r.meta.clone().unwrap_or_default();
            let or_label = |s: String| if s.is_empty() { r.run_label.clone() } else { s };
            [
                or_label(meta.embedding_base),
                if meta.embedding_refinements.is_empty() {
                    "None".into()
                } else {
                    meta.embedding_refinements
                },
                if meta.fusion.is_empty() {
                    "None".into()
                } else {
                    meta.fusion
                },
                r.delta_vs_baseline
                    .map_or_else(|| "n/a".to_string(), format_delta),
            ]
        })
        .collect();
    let mut widths = TABLE_HEADERS.map(str::len);
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: [&str; 4]| {
        let mut s = String::from("|");
        for (cell, w) in cells.iter().zip(widths) {
            s.push_str(&format!(" {cell:<w$} |"));
        }
        s.push('\n');
        s
    };
    let mut out = line(TABLE_HEADERS);
    let mut rule = String::from("|");
    for w in widths {
        rule.push_str(&"-".repeat(w + 2));
        rule.push('|');
    }
    rule.push('\n');
    out.push_str(&rule);
    for row in &rows {
        out.push_str(&line([&row[0], &row[1], &row[2], &row[3]]));
    }
    out
}
