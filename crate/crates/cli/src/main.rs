use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use reid_core::data_io::{
    decode_matrix, load_manifest, manifest_to_string, save_vectors, Condition, Kind, Split,
};
use reid_core::eval::{mean_ap, Protocol};
use reid_core::harness::{print_table, reports_to_json, run_config, ExperimentConfig};
use reid_core::simulator::{generate, SimSpec};
use reid_core::{DistanceMatrix, Error, Metric};

#[derive(Parser)]
#[command(
    name = "reid",
    version,
    about = "Re-identification retrieval, fusion and evaluation engine"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProtocolArg {
    Plain,
    #[value(name = "cross_camera", alias = "cross-camera")]
    CrossCamera,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Cosine,
    Euclidean,
}

#[derive(Subcommand)]
enum Command {
    /// Run every row of an experiment config and report mAP deltas against the first row.
    Run {
        config: PathBuf,
        /// Directory for reports.json and table.txt.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
        /// Reseeds every simulated model (model i gets seed + i).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Generate a synthetic dataset (manifest + REIDVEC1 files) from a TOML SimSpec.
    Simulate {
        simspec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a query x gallery distance matrix stored as a REIDVEC1 file.
    Evaluate {
        dist_file: PathBuf,
        manifest: PathBuf,
        #[arg(long, value_enum, default_value = "plain")]
        protocol: ProtocolArg,
        #[arg(long, value_enum, default_value = "cosine")]
        metric: MetricArg,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Io { .. } => 3,
        Error::Parse { .. } | Error::Format { .. } => 4,
        Error::Constraint(_) | Error::Config(_) | Error::InvalidParam(_) => 5,
        Error::Shape(_) | Error::ZeroNorm { .. } | Error::Pipeline(_) | Error::Eval(_) => 6,
    }
}

fn write(path: &Path, contents: &str) -> Result<(), Error> {
    fs::write(path, contents).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn create_dir(dir: &Path) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run {
            config,
            out,
            format,
            seed,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(seed) = seed {
                cfg = cfg.with_seed(seed);
            }
            let dir = config.parent().unwrap_or(Path::new("."));
            let reports = run_config(&cfg, dir)?;
            let json = reports_to_json(&reports);
            let table = print_table(&reports);
            if let Some(out) = out {
                create_dir(&out)?;
                write(&out.join("reports.json"), &json)?;
                write(&out.join("table.txt"), &table)?;
            }
            match format {
                Format::Table => print!("{table}"),
                Format::Json => print!("{json}"),
            }
        }
        Command::Simulate { simspec, out } => {
            let text = fs::read_to_string(&simspec).map_err(|e| Error::Io {
                path: simspec.clone(),
                source: e,
            })?;
            let spec: SimSpec = toml::from_str(&text).map_err(|e| Error::Parse {
                path: simspec.clone(),
                line: 0,
                message: e.message().to_string(),
            })?;
            let data = generate(&spec)?;
            create_dir(&out)?;
            write(
                &out.join("manifest.jsonl"),
                &manifest_to_string(data.manifest.records()),
            )?;
            save_vectors(&data.base, out.join("base.vec"))?;
            for (set, cond) in data.refinements.iter().zip(Condition::REFINEMENTS) {
                save_vectors(set, out.join(format!("refinement_{cond}.vec")))?;
            }
            log::info!("wrote {} items to {}", data.manifest.len(), out.display());
        }
        Command::Evaluate {
            dist_file,
            manifest,
            protocol,
            metric,
        } => {
            let manifest = load_manifest(&manifest)?;
            let pick = |split| -> Vec<_> {
                manifest
                    .records()
                    .iter()
                    .filter(|r| r.kind == Kind::Base && r.split == split)
                    .cloned()
                    .collect()
            };
            let (queries, gallery) = (pick(Split::Query), pick(Split::Gallery));
            let bytes = fs::read(&dist_file).map_err(|e| Error::Io {
                path: dist_file.clone(),
                source: e,
            })?;
            let (rows, cols, values) = decode_matrix(&bytes, &dist_file)?;
            let metric = match metric {
                MetricArg::Cosine => Metric::CosineDistance,
                MetricArg::Euclidean => Metric::Euclidean,
            };
            let dist = DistanceMatrix::new(rows, cols, values, metric)?;
            let protocol = match protocol {
                ProtocolArg::Plain => Protocol::Plain,
                ProtocolArg::CrossCamera => Protocol::CrossCamera,
            };
            let report = mean_ap(&dist, &queries, &gallery, protocol)?
                .with_label(dist_file.display().to_string());
            println!(
                "{}",
                serde_json::to_string_pretty(&report).expect("report serializes")
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let payload = serde_json::json!({
                "error": { "category": err.category(), "message": err.to_string() }
            });
            eprintln!("{payload}");
            ExitCode::from(exit_code(&err))
        }
    }
}
